"""The CRNN: seven conv blocks, two biGRUs, strong and weak prediction heads.

Each conv block is conv -> batch norm -> activation -> dropout -> average
pool. Pooling halves frequency in every block (128 -> 1) and halves time in
the first two only, so the output frame rate is a quarter of the mel frame
rate. Frequency-dependent convolution kinds replace blocks 2-7; block 1 is
always vanilla.

The weak head pools the framewise strong probabilities with a softmax
attention over time computed by a parallel dense layer.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass
from types import SimpleNamespace
from typing import Dict, Optional, Tuple

import numpy as np

from . import ops
from .checkpoint import load_container, save_container
from .errors import CheckpointError, ConfigError, ContractError
from .freq_conv import FdyConv2d, make_conv_layer
from .frontend import N_MELS
from .tensor import Tensor, clip, relu, sigmoid, softmax

N_CONV_LAYERS = 7
DEFAULT_CHANNELS = (16, 32, 64, 128, 128, 128, 128)


@dataclass
class ModelConfig:
    conv_kind: str = "vanilla"               # vanilla | fdy | fw | fk
    k_basis: int = 4
    channels: Tuple[int, ...] = DEFAULT_CHANNELS
    activation: str = "context_gating"       # relu | context_gating
    n_classes: int = 5
    rnn_hidden: int = 128
    dropout_p: float = 0.5

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != N_CONV_LAYERS:
            raise ConfigError(f"channels must list {N_CONV_LAYERS} widths, got {self.channels}")
        if self.conv_kind not in ("vanilla", "fdy", "fw", "fk"):
            raise ConfigError(f"unknown conv_kind {self.conv_kind!r}")
        if self.activation not in ("relu", "context_gating"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.n_classes < 1:
            raise ConfigError("n_classes must be >= 1")
        if N_MELS % (2 ** N_CONV_LAYERS) != 0:
            raise ConfigError(f"{N_MELS} mel bins cannot be halved {N_CONV_LAYERS} times")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ModelConfig":
        return ModelConfig(**json.loads(text))


def output_frames(t_in: int) -> int:
    """Model output length for a mel input of t_in frames (two time halvings)."""
    return (t_in // 2) // 2


class _ConvBlock:
    def __init__(self, index: int, kind: str, c_in: int, c_out: int, freq_bins: int,
                 cfg: ModelConfig, rng: np.random.Generator):
        self.index = index
        self.conv = make_conv_layer(kind, c_in, c_out, freq_bins, cfg.k_basis, rng)
        self.gamma = Tensor(np.ones(c_out, np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(c_out, np.float32), requires_grad=True)
        self.bn_state = ops.BatchNormState(c_out)
        self.activation = cfg.activation
        if cfg.activation == "context_gating":
            self.cg_w = Tensor((rng.standard_normal((c_out, c_out)) / np.sqrt(c_out)
                                ).astype(np.float32), requires_grad=True)
            self.cg_b = Tensor(np.zeros(c_out, np.float32), requires_grad=True)
        self.dropout_p = cfg.dropout_p
        self.pool = (2, 2 if index < 2 else 1)

    def forward(self, x: Tensor, train: bool, seed: int, step: int,
                capture: Optional[SimpleNamespace] = None) -> Tensor:
        if isinstance(self.conv, FdyConv2d) and capture is not None:
            h, attn = self.conv.forward(x, return_attention=True)
            capture.attention[self.index] = attn
        else:
            h = self.conv.forward(x)
        h = ops.batch_norm2d(h, self.gamma, self.beta, self.bn_state, train=train)
        if self.activation == "relu":
            h = relu(h)
        else:
            hc = h.transpose(0, 2, 3, 1)
            hc = ops.context_gating(hc, self.cg_w, self.cg_b)
            h = hc.transpose(0, 3, 1, 2)
        if train and self.dropout_p > 0:
            h = ops.dropout(h, self.dropout_p, ops.dropout_rng(seed, self.index, step))
        return ops.avg_pool2d(h, *self.pool)

    def params(self) -> Dict[str, Tensor]:
        out = {f"conv.{k}": v for k, v in self.conv.params().items()}
        out["bn.gamma"] = self.gamma
        out["bn.beta"] = self.beta
        if self.activation == "context_gating":
            out["cg.w"] = self.cg_w
            out["cg.b"] = self.cg_b
        return out

    def buffers(self) -> Dict[str, np.ndarray]:
        return {"bn.running_mean": self.bn_state.running_mean,
                "bn.running_var": self.bn_state.running_var,
                "bn.batches_tracked": np.array(float(self.bn_state.batches_tracked),
                                               np.float32)}

    def load_buffers(self, vals: Dict[str, np.ndarray]) -> None:
        self.bn_state.running_mean = vals["bn.running_mean"].copy()
        self.bn_state.running_var = vals["bn.running_var"].copy()
        self.bn_state.batches_tracked = int(vals["bn.batches_tracked"])


def _gru_params(d_in: int, hidden: int, rng: np.random.Generator) -> ops.GruParams:
    k = 1.0 / np.sqrt(hidden)

    def u(shape):
        return Tensor(rng.uniform(-k, k, shape).astype(np.float32), requires_grad=True)

    return ops.GruParams(wx=u((d_in, 3 * hidden)), wh_zr=u((hidden, 2 * hidden)),
                         wh_n=u((hidden, hidden)), bx=u((3 * hidden,)))


class CRNN:
    """Sound event detection CRNN with pluggable frequency-dependent convs."""

    def __init__(self, cfg: ModelConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(np.random.SeedSequence(entropy=[int(seed), 0xC0]))
        self.blocks = []
        c_in, freq = 1, N_MELS
        for i, c_out in enumerate(cfg.channels):
            kind = cfg.conv_kind if i >= 1 else "vanilla"
            self.blocks.append(_ConvBlock(i, kind, c_in, c_out, freq, cfg, rng))
            c_in, freq = c_out, freq // 2
        h = cfg.rnn_hidden
        self.rnn = [
            (_gru_params(cfg.channels[-1], h, rng), _gru_params(cfg.channels[-1], h, rng)),
            (_gru_params(2 * h, h, rng), _gru_params(2 * h, h, rng)),
        ]
        k = 1.0 / np.sqrt(2 * h)
        self.strong_w = Tensor(rng.uniform(-k, k, (2 * h, cfg.n_classes)).astype(np.float32),
                               requires_grad=True)
        self.strong_b = Tensor(np.zeros(cfg.n_classes, np.float32), requires_grad=True)
        self.attn_w = Tensor(rng.uniform(-k, k, (2 * h, cfg.n_classes)).astype(np.float32),
                             requires_grad=True)
        self.attn_b = Tensor(np.zeros(cfg.n_classes, np.float32), requires_grad=True)

    # -- forward ---------------------------------------------------------------

    def forward_full(self, mel: Tensor, train: bool = False, seed: Optional[int] = None,
                     step: int = 0, capture_attention: bool = False) -> SimpleNamespace:
        """Full forward pass exposing intermediates.

        ``mel``: [B, 1, 128, T]. Returns strong [B, T', C], weak [B, C], the
        pre-sigmoid strong logits, the final CNN activation map (for Grad-CAM),
        and per-layer FDY attention weights when requested.
        """
        if mel.ndim != 4 or mel.shape[1] != 1 or mel.shape[2] != N_MELS:
            raise ContractError(f"expected mel input [B, 1, {N_MELS}, T], got {mel.shape}")
        seed = self.seed if seed is None else seed
        cap = SimpleNamespace(attention={}) if capture_attention else None
        h = mel
        for block in self.blocks:
            h = block.forward(h, train, seed, step, cap)
        cnn_out = h                                            # [B, C7, 1, T']
        b, c7, _, tp = cnn_out.shape
        seq = cnn_out.reshape(b, c7, tp).transpose(2, 0, 1)    # [T', B, C7]
        for li, (fwd, bwd) in enumerate(self.rnn):
            seq = ops.bigru(seq, fwd, bwd)
            if train and self.cfg.dropout_p > 0:
                seq = ops.dropout(seq, self.cfg.dropout_p,
                                  ops.dropout_rng(seed, N_CONV_LAYERS + li, step))
        strong_logits = ops.dense(seq, self.strong_w, self.strong_b)   # [T', B, C]
        strong = sigmoid(strong_logits)
        att = softmax(ops.dense(seq, self.attn_w, self.attn_b), axis=0)
        att = clip(att, 1e-7, 1.0)
        weak = (att * strong).sum(axis=0) / att.sum(axis=0)            # [B, C]
        return SimpleNamespace(
            strong=strong.transpose(1, 0, 2),
            weak=weak,
            strong_logits=strong_logits.transpose(1, 0, 2),
            cnn_out=cnn_out,
            attention=cap.attention if cap else {},
        )

    def forward(self, mel: Tensor, train: bool = False, seed: Optional[int] = None,
                step: int = 0) -> Tuple[Tensor, Tensor]:
        out = self.forward_full(mel, train=train, seed=seed, step=step)
        return out.strong, out.weak

    # -- parameter access --------------------------------------------------------

    def params(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        for i, blk in enumerate(self.blocks):
            out.update({f"cnn.{i}.{k}": v for k, v in blk.params().items()})
        for li, (fwd, bwd) in enumerate(self.rnn):
            for tag, p in (("fwd", fwd), ("bwd", bwd)):
                for fname, v in p._asdict().items():
                    out[f"rnn.{li}.{tag}.{fname}"] = v
        out["head.strong.w"] = self.strong_w
        out["head.strong.b"] = self.strong_b
        out["head.attn.w"] = self.attn_w
        out["head.attn.b"] = self.attn_b
        return out

    def buffers(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for i, blk in enumerate(self.blocks):
            out.update({f"cnn.{i}.{k}": v for k, v in blk.buffers().items()})
        return out

    def param_count(self) -> int:
        return sum(int(p.size) for p in self.params().values())

    def zero_grad(self) -> None:
        for p in self.params().values():
            p.zero_grad()

    def state_checksum(self) -> int:
        params = self.params()
        crc = 0
        for name in sorted(params):
            crc = zlib.crc32(params[name].data.tobytes(), crc)
        return crc


def build_model(cfg: ModelConfig, seed: int) -> CRNN:
    return CRNN(cfg, seed)


def save_checkpoint(model: CRNN, path, role: str = "student") -> None:
    if role not in ("student", "teacher"):
        raise ContractError(f"checkpoint role must be student or teacher, got {role!r}")
    tensors = {name: p.data for name, p in model.params().items()}
    for name, buf in model.buffers().items():
        tensors[f"buffer.{name}"] = buf
    save_container(path, role, model.cfg.to_json(), tensors)


def load_checkpoint(path, expect_config: Optional[ModelConfig] = None) -> Tuple[CRNN, str]:
    """Rebuild a model from a checkpoint; forward outputs match bit-exactly.

    If ``expect_config`` is given it must equal the stored configuration; this
    catches e.g. loading an fdy checkpoint where a vanilla model is wanted.
    """
    role, config_text, tensors = load_container(path)
    if role not in ("student", "teacher"):
        raise CheckpointError(f"{path}: role {role!r} is not a model checkpoint role")
    cfg = ModelConfig.from_json(config_text)
    if expect_config is not None and cfg != expect_config:
        raise CheckpointError(
            f"{path}: checkpoint config {cfg} does not match requested config {expect_config}")
    model = CRNN(cfg, seed=0)
    params = model.params()
    expected = set(params) | {f"buffer.{n}" for n in model.buffers()}
    stored = set(tensors)
    if stored - expected:
        raise CheckpointError(f"{path}: unknown tensor name(s) {sorted(stored - expected)}")
    if expected - stored:
        raise CheckpointError(f"{path}: missing tensor(s) {sorted(expected - stored)}")
    for name, p in params.items():
        if tensors[name].shape != p.data.shape:
            raise CheckpointError(f"{path}: tensor {name} has shape {tensors[name].shape}, "
                                  f"model expects {p.data.shape}")
        p.data = tensors[name].astype(np.float32)
    buffer_vals: Dict[str, Dict[str, np.ndarray]] = {}
    for i, blk in enumerate(model.blocks):
        blk.load_buffers({k.split(".", 2)[2]: tensors[f"buffer.cnn.{i}.{k.split('.', 2)[2]}"]
                          for k in (f"cnn.{i}.bn.running_mean", f"cnn.{i}.bn.running_var",
                                    f"cnn.{i}.bn.batches_tracked")})
    return model, role
