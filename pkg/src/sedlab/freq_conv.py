"""Frequency-dependent 2-D convolution variants.

Vanilla convolution applies one kernel everywhere and is therefore
translation-equivariant along frequency. The three variants here break that
equivariance in different ways:

* ``fk_conv``  - an independent trainable kernel per frequency bin.
* ``fw_conv``  - per-bin kernels formed as trainable fixed-weight sums of K
  shared basis kernels.
* ``fdy_conv`` - like ``fw_conv`` but the per-bin weights are inferred from
  the time-pooled input by a small attention network and softmax-normalized
  over the K basis kernels.

``fdy_conv``/``fw_conv`` evaluate K full convolutions and mix the stacked
outputs per bin; because convolution is linear in the kernel this equals
assembling the per-bin kernel first (the test suite checks both routes agree).
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from .errors import ContractError
from .ops import conv2d, pad_input, _as_batched
from .tensor import Tensor, relu, softmax

__all__ = [
    "BasisKernels",
    "FdyAttentionParams",
    "fdy_attention",
    "fdy_conv",
    "fw_conv",
    "fk_conv",
    "VanillaConv2d",
    "FdyConv2d",
    "FwConv2d",
    "FkConv2d",
    "make_conv_layer",
]

KERNEL_SIZE = 3


class BasisKernels(NamedTuple):
    """K trainable basis kernels with per-basis biases."""

    kernels: Tensor  # [K, C_out, C_in, 3, 3]
    bias: Tensor     # [K, C_out]


class FdyAttentionParams(NamedTuple):
    """Two 1-D convolutions over frequency that squeeze channels down to K."""

    w1: Tensor  # [C_hidden, C_in, 3]
    b1: Tensor  # [C_hidden]
    w2: Tensor  # [K, C_hidden, 3]
    b2: Tensor  # [K]


def _conv1d_freq(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Width-3 1-D convolution along frequency: [B, C, F] -> [B, C_out, F]."""
    x4 = x.reshape(x.shape + (1,))
    w4 = w.reshape(w.shape + (1,))
    return conv2d(x4, w4, b, same=True).reshape(x.shape[0], w.shape[0], x.shape[2])


def fdy_attention(x: Tensor, attn: FdyAttentionParams) -> Tensor:
    """Frequency-adaptive attention weights from the time-pooled input.

    Returns [F, K] for a [C, F, T] input or [B, F, K] for a batched input;
    each row is a softmax over the K basis kernels.
    """
    xb, squeeze = _as_batched(x)
    pooled = xb.mean(axis=3)                     # [B, C, F]
    h = relu(_conv1d_freq(pooled, attn.w1, attn.b1))
    logits = _conv1d_freq(h, attn.w2, attn.b2)   # [B, K, F]
    w = softmax(logits, axis=1).transpose(0, 2, 1)
    return w.reshape(w.shape[1:]) if squeeze else w


def _stacked_basis_conv(xb: Tensor, basis: BasisKernels) -> Tensor:
    """All K basis convolutions in one kernel launch: [B, K, C_out, F, T]."""
    K, O, C, kf, kt = basis.kernels.shape
    folded = basis.kernels.reshape(K * O, C, kf, kt)
    y = conv2d(xb, folded, bias=None, same=True)
    B, _, F, T = y.shape
    return y.reshape(B, K, O, F, T)


def _mix_per_bin(y: Tensor, wt: Tensor) -> Tensor:
    """out[b,o,f,t] = sum_k wt[b,k,f] * y[b,k,o,f,t] (numba fwd/bwd)."""
    out = np.empty((y.shape[0],) + y.shape[2:], y.dtype)
    _kernels.mix_fwd(y.data, wt.data, out)

    def vjp(g):
        g = np.ascontiguousarray(g)
        gy = np.empty_like(y.data)
        _kernels.mix_bwd_y(g, wt.data, gy)
        gwt = np.empty_like(wt.data)
        _kernels.mix_bwd_w(g, y.data, gwt)
        return gy, gwt

    return Tensor._make(out, (y, wt), vjp)


def _mixed_bias(wt: Tensor, bias: Tensor) -> Tensor:
    """Per-bin bias sum_k wt[b,k,f] * bias[k,o], shaped [B, C_out, F, 1]."""
    B, K, F = wt.shape
    O = bias.shape[1]
    mixed = wt.transpose(0, 2, 1).reshape(B * F, K) @ bias
    return mixed.reshape(B, F, O).transpose(0, 2, 1).reshape(B, O, F, 1)


def _mix_and_bias(xb: Tensor, basis: BasisKernels, weights_fk: Tensor) -> Tensor:
    # weights_fk: [B, F, K] rows of mixing weights
    y = _stacked_basis_conv(xb, basis)
    wt = weights_fk.transpose(0, 2, 1)           # [B, K, F]
    return _mix_per_bin(y, wt) + _mixed_bias(wt, basis.bias)


def fdy_conv(x: Tensor, basis: BasisKernels, attn: FdyAttentionParams) -> Tensor:
    """Frequency dynamic convolution: attention-weighted basis kernels per bin."""
    xb, squeeze = _as_batched(x)
    w = fdy_attention(xb, attn)                  # [B, F, K]
    if w.shape[2] != basis.kernels.shape[0]:
        raise ContractError(
            f"attention produces K={w.shape[2]} but basis holds K={basis.kernels.shape[0]}")
    out = _mix_and_bias(xb, basis, w)
    return out.reshape(out.shape[1:]) if squeeze else out


def fw_conv(x: Tensor, basis: BasisKernels, weights: Tensor) -> Tensor:
    """Frequency-wise weighted convolution: fixed trainable [F, K] mixing weights."""
    xb, squeeze = _as_batched(x)
    B = xb.shape[0]
    F = xb.shape[2]
    if weights.shape != (F, basis.kernels.shape[0]):
        raise ContractError(
            f"fw_conv weights must be [F={F}, K={basis.kernels.shape[0]}], got {weights.shape}")
    ones = Tensor(np.ones((B, 1, 1), xb.dtype), check=False)
    wb = weights.reshape((1,) + weights.shape) * ones   # broadcast to [B, F, K]
    out = _mix_and_bias(xb, basis, wb)
    return out.reshape(out.shape[1:]) if squeeze else out


def fk_conv(x: Tensor, kernels: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Frequency-wise kernel convolution: output row f uses kernel f only.

    ``kernels``: [F, C_out, C_in, 3, 3], ``bias``: [F, C_out] or None.
    Always zero-padded to keep F and T.
    """
    xb, squeeze = _as_batched(x)
    B, C, F, T = xb.shape
    if kernels.shape[0] != F:
        raise ContractError(
            f"fk_conv holds kernels for F={kernels.shape[0]} bins but input has F={F}")
    if kernels.shape[2] != C:
        raise ContractError(
            f"fk_conv channel mismatch: input shape {xb.shape} vs kernels shape {kernels.shape}")
    O = kernels.shape[1]
    kf, kt = kernels.shape[3], kernels.shape[4]
    xp = pad_input(xb.data, kf // 2, kt // 2)
    out = np.empty((B, O, F, T), xb.dtype)
    _kernels.fk_fwd(xp, kernels.data, out)
    if bias is not None:
        out += bias.data.T.reshape(1, O, F, 1)

    def vjp(g):
        g = np.ascontiguousarray(g)
        gxp = np.zeros_like(xp)
        _kernels.fk_bwd_x(g, kernels.data, gxp)
        gx = gxp[:, :, kf // 2:kf // 2 + F, kt // 2:kt // 2 + T]
        gw = np.empty_like(kernels.data)
        _kernels.fk_bwd_w(xp, g, gw)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 3)).T

    parents = (xb, kernels) if bias is None else (xb, kernels, bias)
    res = Tensor._make(out, parents, vjp)
    return res.reshape(res.shape[1:]) if squeeze else res


# -- layer containers ---------------------------------------------------------


def _kaiming(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


class VanillaConv2d:
    """Plain 3x3 same-padded convolution layer."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        fan = c_in * KERNEL_SIZE * KERNEL_SIZE
        self.weight = Tensor(_kaiming(rng, (c_out, c_in, KERNEL_SIZE, KERNEL_SIZE), fan),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, np.float32), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, same=True)

    def params(self) -> dict:
        return {"weight": self.weight, "bias": self.bias}


class FdyConv2d:
    """Frequency dynamic convolution layer with K basis kernels."""

    def __init__(self, c_in: int, c_out: int, k_basis: int, rng: np.random.Generator):
        fan = c_in * KERNEL_SIZE * KERNEL_SIZE
        self.basis = BasisKernels(
            kernels=Tensor(_kaiming(rng, (k_basis, c_out, c_in, KERNEL_SIZE, KERNEL_SIZE), fan),
                           requires_grad=True),
            bias=Tensor(np.zeros((k_basis, c_out), np.float32), requires_grad=True))
        c_hidden = max(c_in // 4, k_basis)
        self.attn = FdyAttentionParams(
            w1=Tensor(_kaiming(rng, (c_hidden, c_in, KERNEL_SIZE), c_in * KERNEL_SIZE),
                      requires_grad=True),
            b1=Tensor(np.zeros(c_hidden, np.float32), requires_grad=True),
            w2=Tensor(_kaiming(rng, (k_basis, c_hidden, KERNEL_SIZE), c_hidden * KERNEL_SIZE),
                      requires_grad=True),
            b2=Tensor(np.zeros(k_basis, np.float32), requires_grad=True))

    def forward(self, x: Tensor, return_attention: bool = False):
        xb, squeeze = _as_batched(x)
        w = fdy_attention(xb, self.attn)            # [B, F, K]
        out = _mix_and_bias(xb, self.basis, w)
        if squeeze:
            out = out.reshape(out.shape[1:])
        return (out, w) if return_attention else out

    def params(self) -> dict:
        return {"basis.kernels": self.basis.kernels, "basis.bias": self.basis.bias,
                "attn.w1": self.attn.w1, "attn.b1": self.attn.b1,
                "attn.w2": self.attn.w2, "attn.b2": self.attn.b2}


class FwConv2d:
    """Frequency-wise weighted convolution layer; weights start uniform 1/K."""

    def __init__(self, c_in: int, c_out: int, k_basis: int, freq_bins: int,
                 rng: np.random.Generator):
        fan = c_in * KERNEL_SIZE * KERNEL_SIZE
        self.basis = BasisKernels(
            kernels=Tensor(_kaiming(rng, (k_basis, c_out, c_in, KERNEL_SIZE, KERNEL_SIZE), fan),
                           requires_grad=True),
            bias=Tensor(np.zeros((k_basis, c_out), np.float32), requires_grad=True))
        self.weights = Tensor(np.full((freq_bins, k_basis), 1.0 / k_basis, np.float32),
                              requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return fw_conv(x, self.basis, self.weights)

    def params(self) -> dict:
        return {"basis.kernels": self.basis.kernels, "basis.bias": self.basis.bias,
                "weights": self.weights}


class FkConv2d:
    """Per-bin kernel convolution layer; all bins start from the same kernel."""

    def __init__(self, c_in: int, c_out: int, freq_bins: int, rng: np.random.Generator):
        fan = c_in * KERNEL_SIZE * KERNEL_SIZE
        seed_kernel = _kaiming(rng, (c_out, c_in, KERNEL_SIZE, KERNEL_SIZE), fan)
        self.kernels = Tensor(np.repeat(seed_kernel[None], freq_bins, axis=0),
                              requires_grad=True)
        self.bias = Tensor(np.zeros((freq_bins, c_out), np.float32), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return fk_conv(x, self.kernels, self.bias)

    def params(self) -> dict:
        return {"kernels": self.kernels, "bias": self.bias}


def make_conv_layer(kind: str, c_in: int, c_out: int, freq_bins: int, k_basis: int,
                    rng: np.random.Generator):
    if kind == "vanilla":
        return VanillaConv2d(c_in, c_out, rng)
    if kind == "fdy":
        return FdyConv2d(c_in, c_out, k_basis, rng)
    if kind == "fw":
        return FwConv2d(c_in, c_out, k_basis, freq_bins, rng)
    if kind == "fk":
        return FkConv2d(c_in, c_out, freq_bins, rng)
    raise ContractError(f"unknown conv kind {kind!r} (expected vanilla/fdy/fw/fk)")
