"""Neural-network operations built on the autodiff engine.

Convolution runs through the numba kernels in ``_kernels``; everything else
is vectorized numpy wired into the graph. Ops accept unbatched ([C, F, T],
[T, D]) or batched ([B, C, F, T], [T, B, D]) arguments and return the same
rank they were given.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from .errors import ContractError
from .tensor import Tensor, concat, matmul, sigmoid, stack, tanh

__all__ = [
    "conv2d",
    "avg_pool2d",
    "BatchNormState",
    "batch_norm2d",
    "dense",
    "context_gating",
    "GruParams",
    "gru_direction",
    "bigru",
    "dropout_rng",
]


def pad_input(x: np.ndarray, pf: int, pt: int) -> np.ndarray:
    if pf == 0 and pt == 0:
        return x
    b, c, f, t = x.shape
    xp = np.zeros((b, c, f + 2 * pf, t + 2 * pt), x.dtype)
    xp[:, :, pf:pf + f, pt:pt + t] = x
    return xp


def _as_batched(x: Tensor):
    """Promote [C, F, T] to [B=1, C, F, T]; returns (tensor, was_unbatched)."""
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise ContractError(f"expected a 3-D or 4-D activation, got shape {x.shape}")


def conv2d(x: Tensor, k: Tensor, bias: Optional[Tensor] = None, same: bool = True) -> Tensor:
    """2-D cross-correlation, optionally zero-padded to keep F and T.

    ``x``: [B, C_in, F, T] (or unbatched), ``k``: [C_out, C_in, kF, kT],
    ``bias``: [C_out] or None.
    """
    xb, squeeze = _as_batched(x)
    if k.ndim != 4:
        raise ContractError(f"kernel must be [C_out, C_in, kF, kT], got shape {k.shape}")
    B, C, F, T = xb.shape
    O, Ck, kF, kT = k.shape
    if Ck != C:
        raise ContractError(f"conv2d channel mismatch: input shape {xb.shape} vs kernel shape {k.shape}")
    if same:
        if kF % 2 == 0 or kT % 2 == 0:
            raise ContractError(f"same-padding requires odd kernel extents, got {kF}x{kT}")
        pf, pt = kF // 2, kT // 2
        Fo, To = F, T
    else:
        pf = pt = 0
        Fo, To = F - kF + 1, T - kT + 1
        if Fo < 1 or To < 1:
            raise ContractError(f"kernel {kF}x{kT} larger than input {F}x{T} without padding")

    xp = pad_input(xb.data, pf, pt)
    out = np.empty((B, O, Fo, To), xb.dtype)
    _kernels.conv2d_fwd(xp, k.data, out)
    if bias is not None:
        out += bias.data.reshape(1, O, 1, 1)

    def vjp(g):
        g = np.ascontiguousarray(g)
        gxp = np.zeros_like(xp)
        _kernels.conv2d_bwd_x(g, k.data, gxp)
        gx = gxp[:, :, pf:pf + F, pt:pt + T]
        gw = np.empty_like(k.data)
        _kernels.conv2d_bwd_w(xp, g, gw)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (xb, k) if bias is None else (xb, k, bias)
    res = Tensor._make(out, parents, vjp)
    return res.reshape(res.shape[1:]) if squeeze else res


def avg_pool2d(x: Tensor, pool_f: int, pool_t: int) -> Tensor:
    """Non-overlapping window means; trailing remainder rows/columns dropped."""
    if pool_f < 1 or pool_t < 1:
        raise ContractError(f"pool sizes must be >= 1, got ({pool_f}, {pool_t})")
    xb, squeeze = _as_batched(x)
    B, C, F, T = xb.shape
    if pool_f > F or pool_t > T:
        raise ContractError(f"pool size ({pool_f}, {pool_t}) exceeds input extents ({F}, {T})")
    Fo, To = F // pool_f, T // pool_t
    crop = xb.data[:, :, :Fo * pool_f, :To * pool_t]
    out = crop.reshape(B, C, Fo, pool_f, To, pool_t).mean(axis=(3, 5))
    inv = out.dtype.type(1.0 / (pool_f * pool_t))

    def vjp(g):
        gx = np.zeros_like(xb.data)
        spread = np.repeat(np.repeat(g * inv, pool_f, axis=2), pool_t, axis=3)
        gx[:, :, :Fo * pool_f, :To * pool_t] = spread
        return (gx,)

    res = Tensor._make(out, (xb,), vjp)
    return res.reshape(res.shape[1:]) if squeeze else res


class BatchNormState:
    """Per-channel running statistics for batch normalization."""

    def __init__(self, channels: int, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)
        self.batches_tracked = 0

    def update(self, mean: np.ndarray, var: np.ndarray, momentum: float) -> None:
        self.running_mean = (1 - momentum) * self.running_mean + momentum * mean
        self.running_var = (1 - momentum) * self.running_var + momentum * var
        self.batches_tracked += 1


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                 train: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (B, F, T).

    Train mode normalizes with population batch statistics and folds them into
    the running estimates; eval mode normalizes with the running estimates only.
    """
    xb, squeeze = _as_batched(x)
    B, C, F, T = xb.shape
    shape = (1, C, 1, 1)
    if train:
        if B * F * T < 2:
            raise ContractError("batch_norm2d train mode needs at least 2 values per channel")
        mu = xb.mean(axis=(0, 2, 3), keepdims=True)
        xc = xb - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        inv = (var + eps) ** -0.5
        y = xc * inv * gamma.reshape(shape) + beta.reshape(shape)
        state.update(mu.data.reshape(C).astype(state.running_mean.dtype),
                     var.data.reshape(C).astype(state.running_var.dtype), momentum)
    else:
        if state.batches_tracked == 0:
            raise ContractError("batch_norm2d eval mode called before any running statistics exist")
        rm = state.running_mean.astype(xb.dtype).reshape(shape)
        rv = state.running_var.astype(xb.dtype).reshape(shape)
        inv = 1.0 / np.sqrt(rv + eps)
        y = (xb - rm) * inv * gamma.reshape(shape) + beta.reshape(shape)
    return y.reshape(y.shape[1:]) if squeeze else y


def dense(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map on the last extent: x @ w (+ b)."""
    y = matmul(x, w)
    return y if b is None else y + b


def context_gating(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x * sigmoid(x @ w + b) along the last extent; ``w`` must be square."""
    d = x.shape[-1]
    if w.shape != (d, d):
        raise ContractError(f"context gating needs a {d}x{d} matrix, got {w.shape}")
    return x * sigmoid(matmul(x, w) + b)


class GruParams(NamedTuple):
    """One GRU direction. Gate order in wx/bx is (update z, reset r, candidate n)."""

    wx: Tensor      # [D, 3H]
    wh_zr: Tensor   # [H, 2H]
    wh_n: Tensor    # [H, H]
    bx: Tensor      # [3H]


def gru_direction(x: Tensor, p: GruParams, reverse: bool = False) -> Tensor:
    """Run one GRU direction over ``x`` [T, B, D] -> [T, B, H].

    Cho-style cell: z = sigma(xW_z + hU_z + b_z), r likewise,
    n = tanh(xW_n + (r*h)U_n + b_n), h' = (1-z)*n + z*h. Initial state is zero.
    """
    T, B, _ = x.shape
    H = p.wh_n.shape[0]
    if T < 1:
        raise ContractError("gru needs at least one time step")
    xa = matmul(x, p.wx) + p.bx                      # [T, B, 3H]
    h = Tensor(np.zeros((B, H), x.dtype), check=False)
    steps = range(T - 1, -1, -1) if reverse else range(T)
    outs: list = [None] * T
    for t in steps:
        xt = xa[t]
        zr = sigmoid(xt[:, :2 * H] + matmul(h, p.wh_zr))
        z = zr[:, :H]
        r = zr[:, H:]
        n = tanh(xt[:, 2 * H:] + matmul(r * h, p.wh_n))
        h = (1.0 - z) * n + z * h
        outs[t] = h
    return stack(outs, axis=0)


def bigru(x: Tensor, fwd: GruParams, bwd: GruParams) -> Tensor:
    """Bidirectional GRU: concat of forward and backward states per step.

    ``x`` may be [T, D] or [T, B, D]; output is [T, 2H] or [T, B, 2H].
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(x.shape[0], 1, x.shape[1])
    out = concat([gru_direction(x, fwd), gru_direction(x, bwd, reverse=True)], axis=2)
    return out.reshape(out.shape[0], out.shape[2]) if squeeze else out


def dropout_rng(seed: int, layer_index: int, step: int) -> np.random.Generator:
    """Counter-based dropout stream keyed by (global seed, layer, step)."""
    key = np.array([np.uint64(seed), np.uint64(layer_index) << np.uint64(32) | np.uint64(step)])
    return np.random.Generator(np.random.Philox(key=key))
