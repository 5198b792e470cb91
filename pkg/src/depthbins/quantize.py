"""Log-space depth quantization and score-vector decoding.

Depth values are discretized into K sub-intervals of [alpha, beta] in
log10 space, giving K+1 class labels (both endpoints are reachable
through rounding). Decoding goes back from a per-pixel probability
vector over labels to continuous depth, either through the
soft-weighted sum of bin centers or through the arg-max bin center.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_ALPHA = 0.25
DEFAULT_BETA = 80.0
DEFAULT_K = 150

PROB_SUM_TOL = 1e-6


@dataclass(frozen=True)
class QuantizationSpec:
    """Depth range [alpha, beta] in meters split into K log10 bins.

    q is the bin width in log10 units and is always recomputed from
    (alpha, beta, K); it is never stored or deserialized.
    """

    alpha: float
    beta: float
    K: int

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > self.alpha):
            raise ValueError(
                f"invalid depth bounds: need 0 < alpha < beta, got [{self.alpha}, {self.beta}]"
            )
        if int(self.K) < 1 or self.K != int(self.K):
            raise ValueError(f"K must be a positive integer, got {self.K}")

    @property
    def q(self) -> float:
        return (math.log10(self.beta) - math.log10(self.alpha)) / self.K

    @property
    def num_classes(self) -> int:
        return self.K + 1

    def bin_weights(self) -> np.ndarray:
        """Bin centers in log10 meters: w[j] = log10(alpha) + q * j."""
        return math.log10(self.alpha) + self.q * np.arange(self.num_classes)

    def to_json(self) -> str:
        return json.dumps({"alpha": self.alpha, "beta": self.beta, "K": self.K})

    @classmethod
    def from_json(cls, text: str) -> "QuantizationSpec":
        obj = json.loads(text)
        return cls(alpha=float(obj["alpha"]), beta=float(obj["beta"]), K=int(obj["K"]))


def make_spec(alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA,
              K: int = DEFAULT_K) -> QuantizationSpec:
    """Build a quantization spec, validating bounds and bin count."""
    return QuantizationSpec(alpha=float(alpha), beta=float(beta), K=int(K))


def _round_half_up(x: np.ndarray) -> np.ndarray:
    # Half-away-from-zero for non-negative inputs; np.round would round
    # half to even, which is not what we want at bin boundaries.
    return np.floor(x + 0.5)


def depth_to_label(d, spec: QuantizationSpec):
    """Quantize metric depth (meters) to an integer label in [0, K].

    Depths are clamped to [alpha, beta] before quantization, so any
    positive depth gets a label. Scalar in, scalar out; array in,
    int64 array out.
    """
    arr = np.asarray(d, dtype=np.float64)
    if np.any(arr <= 0):
        raise ValueError("depth must be positive to quantize")
    clamped = np.clip(arr, spec.alpha, spec.beta)
    t = (np.log10(clamped) - math.log10(spec.alpha)) / spec.q
    labels = np.clip(_round_half_up(t), 0, spec.K).astype(np.int64)
    if np.isscalar(d) or arr.ndim == 0:
        return int(labels)
    return labels


def label_to_depth(l, spec: QuantizationSpec):
    """Bin center in meters for label l: 10 ** w[l]."""
    arr = np.asarray(l)
    if np.any(arr < 0) or np.any(arr > spec.K):
        raise ValueError(f"label out of range [0, {spec.K}]")
    w = math.log10(spec.alpha) + spec.q * arr.astype(np.float64)
    depth = np.power(10.0, w)
    if np.isscalar(l) or arr.ndim == 0:
        return float(depth)
    return depth


def _check_distribution(p: np.ndarray, spec: QuantizationSpec) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != spec.num_classes:
        raise ValueError(
            f"expected {spec.num_classes} class probabilities, got {p.shape[-1]}"
        )
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > PROB_SUM_TOL):
        raise ValueError("probabilities must sum to 1 within 1e-6")
    return p


def soft_weighted_depth(p, spec: QuantizationSpec):
    """Decode a label distribution to depth as 10 ** dot(w, p).

    The exponent is a convex combination of the bin centers, so the
    result lies in [alpha, beta]; it is clamped against accumulated
    rounding to keep that guarantee exact. Works on a single vector or
    on any array whose last axis is the class axis.
    """
    p = _check_distribution(p, spec)
    w = spec.bin_weights()
    z = np.clip(p @ w, w[0], w[-1])
    depth = np.power(10.0, z)
    if depth.ndim == 0:
        return float(depth)
    return depth


def hard_max_depth(p, spec: QuantizationSpec):
    """Decode via the arg-max bin center; ties break toward the smaller label."""
    p = _check_distribution(p, spec)
    labels = np.argmax(p, axis=-1)  # first maximum = smaller label
    return label_to_depth(labels if labels.ndim else int(labels), spec)


def validate_score_volume(probs: np.ndarray, spec: QuantizationSpec) -> None:
    """Check a (batch, num_classes, H, W) volume: entries in [0, 1], columns normalized."""
    probs = np.asarray(probs)
    if probs.ndim != 4 or probs.shape[1] != spec.num_classes:
        raise ValueError(
            f"expected (batch, {spec.num_classes}, H, W) score volume, got {probs.shape}"
        )
    if np.any(probs < 0) or np.any(probs > 1 + PROB_SUM_TOL):
        raise ValueError("score volume entries must lie in [0, 1]")
    sums = probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > PROB_SUM_TOL):
        raise ValueError("per-pixel probabilities must sum to 1 within 1e-6")


def decode_score_volume(probs: np.ndarray, spec: QuantizationSpec) -> np.ndarray:
    """Soft-weighted-sum decode of a (batch, num_classes, H, W) volume to (batch, H, W) meters."""
    validate_score_volume(probs, spec)
    w = spec.bin_weights()
    z = np.einsum("bchw,c->bhw", np.asarray(probs, dtype=np.float64), w)
    z = np.clip(z, w[0], w[-1])
    return np.power(10.0, z)
