"""Training-time spectrogram augmentations with label co-transformation.

All functions are pure given an RNG stream and return new arrays. Strong
labels live at the pooled frame rate (mel time / 4); mel-frame indices are
converted with that fixed ratio. Masked cells are set to the log-mel floor,
i.e. "no energy", not zero.

FilterAugment weights are drawn in dB and applied additively in natural-log
mel space: the front end logs a power spectrum, so w dB corresponds to adding
w * ln(10) / 10.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ContractError
from .frontend import LOG_FLOOR, MelClip, N_MELS

MEL_FLOOR_LOG = float(np.log(LOG_FLOOR))
DB_TO_NAT = float(np.log(10.0) / 10.0)
POOL_RATIO = 4


@dataclass
class FilterAugmentConfig:
    kind: str = "step"                       # "step" | "linear"
    db_range: Tuple[float, float] = (-6.0, 6.0)
    band_count_range: Tuple[int, int] = (2, 5)
    min_bandwidth_bins: int = 4

    def __post_init__(self):
        if self.kind not in ("step", "linear"):
            raise ContractError(f"FilterAugment kind must be step or linear, got {self.kind!r}")
        lo, hi = self.db_range
        if not lo <= hi:
            raise ContractError(f"db_range must satisfy lo <= hi, got ({lo}, {hi})")
        n_min, n_max = self.band_count_range
        if not 1 <= n_min <= n_max:
            raise ContractError(f"band_count_range must satisfy 1 <= n_min <= n_max, "
                                f"got ({n_min}, {n_max})")
        if self.min_bandwidth_bins < 1:
            raise ContractError("min_bandwidth_bins must be >= 1")


@dataclass
class StrongLabel:
    """Framewise {0,1} activity at the pooled frame rate, shape [T', n_classes]."""

    frames: np.ndarray


def _sample_boundaries(n_bands: int, n_bins: int, min_bw: int,
                       rng: np.random.Generator) -> Optional[np.ndarray]:
    """Sorted interior boundary bins for n_bands bands, or None if unlucky."""
    if n_bands * min_bw > n_bins:
        return None
    if n_bands == 1:
        return np.array([], dtype=int)
    for _ in range(100):
        cand = np.sort(rng.choice(np.arange(1, n_bins), size=n_bands - 1, replace=False))
        widths = np.diff(np.concatenate(([0], cand, [n_bins])))
        if (widths >= min_bw).all():
            return cand
    return None


def sample_filter_profile(cfg: FilterAugmentConfig, rng: np.random.Generator,
                          n_bins: int = N_MELS) -> np.ndarray:
    """Per-bin dB weights for one FilterAugment draw.

    Step kind: constant weight per band. Linear kind: weights anchored at the
    band boundaries (edges included) and linearly interpolated per bin.
    """
    n_min, n_max = cfg.band_count_range
    lo, hi = cfg.db_range
    for _ in range(100):
        n = int(rng.integers(n_min, n_max + 1))
        bounds = _sample_boundaries(n, n_bins, cfg.min_bandwidth_bins, rng)
        if bounds is None:
            continue
        if cfg.kind == "step":
            weights = rng.uniform(lo, hi, size=n)
            profile = np.empty(n_bins)
            edges = np.concatenate(([0], bounds, [n_bins])).astype(int)
            for i in range(n):
                profile[edges[i]:edges[i + 1]] = weights[i]
            return profile
        anchors = np.concatenate(([0], bounds, [n_bins - 1])).astype(float)
        weights = rng.uniform(lo, hi, size=n + 1)
        return np.interp(np.arange(n_bins), anchors, weights)
    raise ContractError(
        f"could not satisfy band constraints (bands {cfg.band_count_range}, "
        f"min width {cfg.min_bandwidth_bins}, {n_bins} bins)")


def apply_filter_profile(mel: MelClip, db_profile: np.ndarray) -> MelClip:
    """Add a per-bin dB profile to a log-mel clip (invertible by negation)."""
    bins = mel.bins + (db_profile * DB_TO_NAT)[:, None].astype(mel.bins.dtype)
    return MelClip(bins.astype(mel.bins.dtype), mel.frame_hop_seconds)


def filter_augment(mel: MelClip, cfg: FilterAugmentConfig,
                   rng: np.random.Generator) -> MelClip:
    """Weight random frequency bands by random dB factors (step or linear)."""
    return apply_filter_profile(mel, sample_filter_profile(cfg, rng, mel.bins.shape[0]))


def frame_shift(mel: MelClip, label: Optional[np.ndarray], shift_frames: int,
                ) -> Tuple[MelClip, Optional[np.ndarray]]:
    """Circularly roll mel along time; strong labels roll at the pooled rate.

    The pooled shift is shift_frames / 4 rounded toward zero. Weak labels are
    unaffected and therefore not passed in.
    """
    t = mel.n_frames
    if abs(shift_frames) >= t and shift_frames % t != 0:
        raise ContractError(f"|shift_frames| must be < {t}, got {shift_frames}")
    rolled = MelClip(np.roll(mel.bins, shift_frames, axis=1), mel.frame_hop_seconds)
    if label is None:
        return rolled, None
    pooled_shift = int(shift_frames / POOL_RATIO)
    return rolled, np.roll(label, pooled_shift, axis=0)


def mixup(a: Tuple[MelClip, np.ndarray], b: Tuple[MelClip, np.ndarray], alpha: float,
          rng: np.random.Generator, lam: Optional[float] = None,
          ) -> Tuple[MelClip, np.ndarray]:
    """Convex combination of two clips and their (soft) labels, lam ~ Beta(alpha, alpha)."""
    mel_a, lab_a = a
    mel_b, lab_b = b
    if mel_a.bins.shape != mel_b.bins.shape:
        raise ContractError(f"mixup shape mismatch: {mel_a.bins.shape} vs {mel_b.bins.shape}")
    if lab_a.shape != lab_b.shape:
        raise ContractError(
            f"mixup cannot mix label kinds/shapes {lab_a.shape} vs {lab_b.shape}")
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    bins = lam * mel_a.bins + (1.0 - lam) * mel_b.bins
    label = lam * lab_a + (1.0 - lam) * lab_b
    return MelClip(bins.astype(mel_a.bins.dtype), mel_a.frame_hop_seconds), label


def _overhanging_span(length: int, extent: int, rng: np.random.Generator) -> Tuple[int, int]:
    """Span of ``length`` whose start may overhang either edge, clipped to the extent.

    Sampling the start from {-(length-1), ..., extent-1} gives every position the
    same marginal probability of being covered.
    """
    if length <= 0:
        return 0, 0
    start = int(rng.integers(-(length - 1), extent))
    return max(0, start), min(extent, start + length)


def time_masking(mel: MelClip, strong_label: Optional[np.ndarray],
                 rng: np.random.Generator, max_mask_frames: int,
                 span: Optional[Tuple[int, int]] = None,
                 ) -> Tuple[MelClip, Optional[np.ndarray]]:
    """Floor a random time span; zero the matching pooled span of the strong label."""
    t = mel.n_frames
    if max_mask_frames >= t:
        raise ContractError(f"max_mask_frames must be < {t}, got {max_mask_frames}")
    if span is None:
        length = int(rng.integers(0, max_mask_frames + 1))
        span = _overhanging_span(length, t, rng)
    lo, hi = span
    bins = mel.bins.copy()
    bins[:, lo:hi] = MEL_FLOOR_LOG
    out_label = strong_label
    if strong_label is not None:
        out_label = strong_label.copy()
        out_label[lo // POOL_RATIO:-(-hi // POOL_RATIO)] = 0.0
    return MelClip(bins, mel.frame_hop_seconds), out_label


def frequency_masking(mel: MelClip, rng: np.random.Generator, max_mask_bins: int,
                      width: Optional[int] = None) -> MelClip:
    """Floor one random contiguous frequency band; labels are untouched."""
    n_bins = mel.bins.shape[0]
    if max_mask_bins >= n_bins:
        raise ContractError(f"max_mask_bins must be < {n_bins}, got {max_mask_bins}")
    if width is None:
        width = int(rng.integers(0, max_mask_bins + 1))
    lo, hi = _overhanging_span(width, n_bins, rng)
    bins = mel.bins.copy()
    bins[lo:hi, :] = MEL_FLOOR_LOG
    return MelClip(bins, mel.frame_hop_seconds)
