"""Scalar activity metrics extracted from grid fields.

Two families live here. Enstrophy (half the integral of the squared field,
midpoint rule) is the physics signal that drives the windowed selector on
vorticity data. The saliency baselines (histogram JSD, residual differential
entropy, spectral entropy, normalized mutual information, momentum) are the
physics-agnostic alternatives used for retention comparisons; their exact
definitions are pinned here, including the 64-bin histogram convention,
because retention numbers are bin-sensitive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np

from .grid import ShapeMismatchError, Snapshot, Trajectory

HIST_BINS = 64
MOMENTUM_BETA = 0.9


class SaliencyKind(Enum):
    ENSTROPHY = "enstrophy"
    SURGE = "surge"
    JSD = "jsd"
    RESIDUAL_ENTROPY = "residual_entropy"
    SPECTRAL_ENTROPY = "spectral_entropy"
    MUTUAL_INFO = "mutual_info"
    MOMENTUM = "momentum"


#: Kinds accepted by :func:`baseline_saliency` (pairwise frame comparisons).
PAIRWISE_BASELINES = frozenset(
    {
        SaliencyKind.JSD,
        SaliencyKind.RESIDUAL_ENTROPY,
        SaliencyKind.SPECTRAL_ENTROPY,
        SaliencyKind.MUTUAL_INFO,
        SaliencyKind.MOMENTUM,
    }
)


@dataclass
class ActivitySeries:
    """Per-timestep scalar activity, e.g. enstrophy or surge magnitude."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size < 1:
            raise ValueError("activity series must have length >= 1")
        if not np.all(np.isfinite(v)):
            raise ValueError("activity series must be finite")
        self.values = v

    def __len__(self) -> int:
        return int(self.values.size)


def enstrophy(s: Snapshot) -> float:
    """Half the grid integral of the squared field, midpoint rule.

    E = 1/2 * sum(w_ij^2) * dx * dy with one sample per grid cell; this is
    spectrally accurate for periodic band-limited fields. Accumulation in
    float64.
    """
    w = np.asarray(s.values, dtype=np.float64)
    return 0.5 * float(np.sum(w * w)) * s.cell_area


def enstrophy_series(traj: Trajectory, label: str = "enstrophy") -> ActivitySeries:
    """Enstrophy of every snapshot in a trajectory (consumes the stream)."""
    return ActivitySeries(values=np.array([enstrophy(s) for s in traj]), label=label)


def enstrophy_diff(series: ActivitySeries, t: int) -> float:
    """Absolute step-to-step activity change |phi_t - phi_{t-1}|."""
    if t < 1 or t >= len(series):
        raise IndexError(f"enstrophy_diff needs 1 <= t < {len(series)}, got {t}")
    return float(abs(series.values[t] - series.values[t - 1]))


def rel_l2(pred: np.ndarray, truth: np.ndarray) -> float:
    """Relative l2 error ||pred - truth|| / ||truth|| over the full grid."""
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    num = float(np.sqrt(np.sum((p - t) ** 2)))
    den = float(np.sqrt(np.sum(t * t)))
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return num / den


def mae(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean absolute error over the full grid."""
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    return float(np.mean(np.abs(p - t)))


def _hist_probs(x: np.ndarray, lo: float, hi: float, bins: int = HIST_BINS) -> np.ndarray:
    counts, _ = np.histogram(x, bins=bins, range=(lo, hi))
    return counts.astype(np.float64) / counts.sum()


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def jsd_values(a: np.ndarray, b: np.ndarray) -> float:
    """Jensen-Shannon divergence between value histograms (natural log).

    Histograms share 64 bins over the pooled min/max of both fields, so the
    result is symmetric and bounded by ln 2. A degenerate pooled range (all
    values identical) scores 0.
    """
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    lo = min(float(x.min()), float(y.min()))
    hi = max(float(x.max()), float(y.max()))
    if hi == lo:
        return 0.0
    p = _hist_probs(x, lo, hi)
    q = _hist_probs(y, lo, hi)
    m = 0.5 * (p + q)

    def _kl(u: np.ndarray, v: np.ndarray) -> float:
        sel = u > 0
        return float(np.sum(u[sel] * np.log(u[sel] / v[sel])))

    return 0.5 * _kl(p, m) + 0.5 * _kl(q, m)


def residual_entropy_values(prev: np.ndarray, cur: np.ndarray) -> float:
    """Plug-in differential-entropy estimate of the frame difference.

    Histogram estimate over 64 bins of (cur - prev): -sum(p ln p) + ln(bin
    width). Single-occupied-bin histograms score 0.
    """
    r = np.asarray(cur, dtype=np.float64).ravel() - np.asarray(prev, dtype=np.float64).ravel()
    lo, hi = float(r.min()), float(r.max())
    if hi == lo:
        return 0.0
    p = _hist_probs(r, lo, hi)
    if int(np.count_nonzero(p)) <= 1:
        return 0.0
    width = (hi - lo) / HIST_BINS
    return _entropy(p) + float(np.log(width))


def spectral_entropy_values(cur: np.ndarray) -> float:
    """Shannon entropy of the normalized half-plane power spectrum.

    Power is |rfft2|^2 with the DC bin excluded (the mean carries no
    structure). A single pure Fourier mode occupies one spectral bin and
    scores 0.
    """
    f = np.fft.rfft2(np.asarray(cur, dtype=np.float64))
    power = np.abs(f) ** 2
    power[0, 0] = 0.0
    total = float(power.sum())
    if total <= 0.0:
        return 0.0
    return _entropy(power.ravel() / total)


def mutual_info_values(prev: np.ndarray, cur: np.ndarray) -> float:
    """Normalized mutual information of the joint 64x64 value histogram.

    NMI = I(X;Y) / sqrt(H(X) H(Y)), clipped to [0, 1]. Perfectly dependent
    inputs (e.g. identical frames) score 1; degenerate marginals score 0.
    """
    x = np.asarray(prev, dtype=np.float64).ravel()
    y = np.asarray(cur, dtype=np.float64).ravel()
    if float(x.min()) == float(x.max()) or float(y.min()) == float(y.max()):
        return 0.0
    joint, _, _ = np.histogram2d(x, y, bins=HIST_BINS)
    pxy = joint / joint.sum()
    px = pxy.sum(axis=1)
    py = pxy.sum(axis=0)
    hx = _entropy(px)
    hy = _entropy(py)
    if hx == 0.0 or hy == 0.0:
        return 0.0
    sel = pxy > 0
    mi = float(np.sum(pxy[sel] * np.log(pxy[sel] / np.outer(px, py)[sel])))
    return min(1.0, max(0.0, mi / float(np.sqrt(hx * hy))))


@dataclass
class MomentumState:
    """Exponentially weighted mean of frame-difference l2 norms.

    The state is owned by the caller (one per selector instance) and updated
    once per compared frame pair.
    """

    beta: float = MOMENTUM_BETA
    value: float = 0.0

    def update(self, prev: np.ndarray, cur: np.ndarray) -> float:
        d = np.asarray(cur, dtype=np.float64) - np.asarray(prev, dtype=np.float64)
        norm = float(np.sqrt(np.sum(d * d)))
        self.value = self.beta * self.value + (1.0 - self.beta) * norm
        return self.value


def baseline_saliency(
    kind: SaliencyKind,
    prev: Snapshot,
    cur: Snapshot,
    momentum: MomentumState | None = None,
) -> float:
    """Kind-specific pairwise saliency between two snapshots.

    Momentum requires a caller-owned :class:`MomentumState`; all other kinds
    are pure functions of the two frames.
    """
    if kind not in PAIRWISE_BASELINES:
        raise ValueError(f"{kind} is not a pairwise baseline saliency")
    if prev.shape != cur.shape:
        raise ShapeMismatchError(f"saliency inputs differ in shape: {prev.shape} vs {cur.shape}")
    if kind is SaliencyKind.JSD:
        return jsd_values(prev.values, cur.values)
    if kind is SaliencyKind.RESIDUAL_ENTROPY:
        return residual_entropy_values(prev.values, cur.values)
    if kind is SaliencyKind.SPECTRAL_ENTROPY:
        return spectral_entropy_values(cur.values)
    if kind is SaliencyKind.MUTUAL_INFO:
        return mutual_info_values(prev.values, cur.values)
    if momentum is None:
        raise ValueError("momentum saliency needs a caller-owned MomentumState")
    return momentum.update(prev.values, cur.values)
