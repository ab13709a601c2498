"""Adaptive temporal selectors deciding which snapshots to keep.

All selectors share the same architecture: a bounded queue of recent activity
values, a regulator that truncates the queue whenever a snapshot is selected
(the selected index becomes the new reference anchor), and a gate that decides
how far the stride may extend. Engines are incremental: they consume one
snapshot (or one activity value) at a time, keep at most ``window`` entries of
look-ahead, and emit selected indices as soon as decisions resolve, which is
what allows the compression pipeline to run in a single streaming pass.

Four concrete engines are provided:

* ``FlowSelectorEngine``: dual-gate windowed selector for field trajectories.
  A candidate stride extends through the queue while both the activity-ratio
  gate (divergence relative to the first post-anchor step, bounded by the
  stability factor) and the structural-correlation gate (Pearson against the
  anchor frame) hold, and breaks at the first violation.
* ``SurgeSelectorEngine``: median-baseline surge detector for scalar activity
  series, with warmup profiling, look-ahead clamping of jumps at surge
  boundaries, and patience-gated (hysteresis) history updates.
* ``BinarySelectorEngine``: bang-bang regulator emitting only strides 1 or W,
  driven by a window aggregate of activity deltas against a fixed threshold.
* ``BaselineSelectorEngine``: threshold rule over a pairwise saliency metric
  against the last retained frame.

Every selector retains index 0, and the final index is always force-retained
so reconstruction covers the full horizon.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

from .grid import DegenerateFieldError, Snapshot, Trajectory, pearson_values
from .metrics import (
    PAIRWISE_BASELINES,
    ActivitySeries,
    MomentumState,
    SaliencyKind,
    baseline_saliency,
)

logger = logging.getLogger(__name__)


class SelectorMode(Enum):
    DYNAMIC_FLOWS = "flows"
    SURGE_DETECTOR = "surge"
    BINARY_REGULATOR = "binary"
    BASELINE = "baseline"


#: Default thresholds for the baseline saliency selectors, calibrated once on
#: the default decaying-flow corpus (resolution 64, 100 steps, seed 0). These
#: are config values, not ground truth; override per dataset as needed.
DEFAULT_BASELINE_THRESHOLDS: dict[SaliencyKind, float] = {
    SaliencyKind.JSD: 0.3,
    SaliencyKind.RESIDUAL_ENTROPY: -2.0,
    SaliencyKind.SPECTRAL_ENTROPY: 1.5,
    SaliencyKind.MUTUAL_INFO: 0.9,
    SaliencyKind.MOMENTUM: 8.0,
}


@dataclass
class SelectorConfig:
    """Knobs shared by the selector engines.

    ``window`` is the queue size (the maximum stride). ``corr_threshold``,
    ``eps`` feed the flow selector; ``surge_factor``, ``patience``,
    ``history_maxlen`` and ``warmup`` feed the surge detector;
    ``baseline_kind``/``baseline_threshold`` configure the baseline mode.
    """

    mode: SelectorMode = SelectorMode.DYNAMIC_FLOWS
    window: int = 5
    corr_threshold: float = 0.65
    eps: float = 1e-8
    surge_factor: float = 3.0
    patience: int = 4
    history_maxlen: int = 32
    warmup: int = 8
    baseline_kind: SaliencyKind | None = None
    baseline_threshold: float | None = None

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not (-1.0 < self.corr_threshold <= 1.0):
            raise ValueError("corr_threshold must lie in (-1, 1]")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.surge_factor <= 1.0:
            raise ValueError("surge_factor must exceed 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.history_maxlen < 1:
            raise ValueError("history_maxlen must be >= 1")
        if not (1 <= self.warmup <= self.history_maxlen):
            raise ValueError("warmup must satisfy 1 <= warmup <= history_maxlen")
        if self.mode is SelectorMode.BASELINE:
            if self.baseline_kind not in PAIRWISE_BASELINES:
                raise ValueError("baseline mode needs baseline_kind set to a pairwise saliency")


@dataclass(frozen=True)
class SelectionResult:
    """Retained timestep indices plus the per-decision strides."""

    indices: tuple[int, ...]
    strides: tuple[int, ...]
    retention: float
    total: int

    def __post_init__(self) -> None:
        idx = self.indices
        if not idx or idx[0] != 0:
            raise ValueError("selection must start at index 0")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("selected indices must be strictly increasing")
        if self.strides != tuple(b - a for a, b in zip(idx, idx[1:])):
            raise ValueError("strides must equal consecutive index differences")
        if self.total < len(idx) or idx[-1] >= self.total:
            raise ValueError("indices exceed the trajectory length")
        if abs(self.retention - len(idx) / self.total) > 1e-12:
            raise ValueError("retention must equal len(indices)/total")

    @classmethod
    def from_indices(cls, indices: Sequence[int], total: int) -> "SelectionResult":
        idx = tuple(int(i) for i in indices)
        strides = tuple(b - a for a, b in zip(idx, idx[1:]))
        return cls(indices=idx, strides=strides, retention=len(idx) / total, total=total)


def stability_factor(deltas: Iterable[float], eps: float) -> float:
    """Gating factor sqrt(max(delta) / (mean(delta) + eps)).

    High when activity within the window is volatile relative to its mean,
    which widens the acceptance band during quasi-equilibrium stretches.
    Zero-activity windows score 0.
    """
    seq = [float(d) for d in deltas]
    if not seq:
        raise ValueError("stability_factor needs at least one delta")
    d_max = max(seq)
    if d_max == 0.0:
        return 0.0
    d_bar = sum(seq) / len(seq)
    return math.sqrt(d_max / (d_bar + eps))


def _safe_pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson with the pinned degenerate policy: 1 for identical constants, else 0."""
    try:
        return pearson_values(a, b)
    except DegenerateFieldError:
        rho = 1.0 if np.array_equal(a, b) else 0.0
        logger.debug("constant field in correlation gate, using rho=%s", rho)
        return rho


class FlowSelectorEngine:
    """Streaming dual-gate selector over a snapshot + activity stream.

    The queue always holds the (index, activity, delta, frame) entries for the
    up-to-``window`` stream positions immediately after the current anchor.
    When it fills (or the stream ends) the gate walks the queue: entry i stays
    accepted while |phi_i - phi_anchor| / (|phi_{s+1} - phi_s| + eps) <= eta
    and pearson(frame_i, frame_anchor) >= corr_threshold; the walk breaks at
    the first violation and the last accepted entry (or the anchor's immediate
    successor when the first entry already violates) becomes the new anchor.

    Memory stays O(window): at most ``window`` queued frames plus the anchor,
    tracked by ``max_queue_len`` / ``max_buffered_frames``.
    """

    def __init__(self, cfg: SelectorConfig):
        if cfg.mode is not SelectorMode.DYNAMIC_FLOWS:
            raise ValueError("FlowSelectorEngine needs mode=DYNAMIC_FLOWS")
        self.cfg = cfg
        self.selected: list[int] = []
        self._queue: deque[tuple[int, float, float, np.ndarray]] = deque()
        self._anchor: tuple[int, float, np.ndarray] | None = None
        self._prev_phi: float | None = None
        self._count = 0
        self.max_queue_len = 0
        self.max_buffered_frames = 0

    def push(self, snapshot: Snapshot, phi: float) -> list[int]:
        idx = self._count
        self._count += 1
        phi = float(phi)
        if idx == 0:
            self._anchor = (0, phi, snapshot.values)
            self._prev_phi = phi
            self.selected.append(0)
            return [0]
        delta = abs(phi - self._prev_phi)  # type: ignore[operator]
        self._prev_phi = phi
        self._queue.append((idx, phi, delta, snapshot.values))
        self.max_queue_len = max(self.max_queue_len, len(self._queue))
        self.max_buffered_frames = max(self.max_buffered_frames, len(self._queue) + 1)
        if len(self._queue) == self.cfg.window:
            return [self._select()]
        return []

    def finish(self) -> list[int]:
        out = []
        while self._anchor is not None and self._anchor[0] < self._count - 1:
            out.append(self._select())
        return out

    def _select(self) -> int:
        assert self._anchor is not None and self._queue
        _, anchor_phi, anchor_values = self._anchor
        entries = list(self._queue)
        eta = stability_factor([e[2] for e in entries], self.cfg.eps)
        # The anchor's immediate successor is the default candidate: it is
        # selected even when its own gates fail, because the stride must
        # advance by at least one.
        chosen = entries[0]
        delta_first = abs(entries[0][1] - anchor_phi)
        for entry in entries:
            ratio = abs(entry[1] - anchor_phi) / (delta_first + self.cfg.eps)
            rho = _safe_pearson(entry[3], anchor_values)
            if ratio <= eta and rho >= self.cfg.corr_threshold:
                chosen = entry
            else:
                break
        idx, phi, _, values = chosen
        while self._queue and self._queue[0][0] <= idx:
            self._queue.popleft()
        self._anchor = (idx, phi, values)
        self.selected.append(idx)
        return idx

    def result(self) -> SelectionResult:
        return SelectionResult.from_indices(self.selected, self._count)


class SurgeSelectorEngine:
    """Streaming surge detector over a scalar activity series.

    Warmup forces unit strides while the history fills to ``warmup`` entries.
    Afterwards a surge (next activity above surge_factor times the history
    median) forces a unit stride and increments the surge counter; otherwise
    the engine attempts a jump of ``window``, clamped at the first look-ahead
    position whose activity crosses the surge threshold. History only absorbs
    new values while the system is stable (counter 0) or after the counter
    exceeds ``patience`` (then it resets), so the baseline is not dragged up
    by the transient itself.
    """

    def __init__(self, cfg: SelectorConfig):
        if cfg.mode is not SelectorMode.SURGE_DETECTOR:
            raise ValueError("SurgeSelectorEngine needs mode=SURGE_DETECTOR")
        self.cfg = cfg
        self.selected: list[int] = []
        self._history: deque[float] = deque(maxlen=cfg.history_maxlen)
        self._surge_count = 0
        self._t = 0
        self._phis: dict[int, float] = {}
        self._count = 0
        self._eos = False

    def push(self, phi: float) -> list[int]:
        idx = self._count
        self._count += 1
        self._phis[idx] = float(phi)
        out = [0] if idx == 0 else []
        if idx == 0:
            self.selected.append(0)
        out.extend(self._resolve())
        return out

    def finish(self) -> list[int]:
        self._eos = True
        return self._resolve()

    def _resolve(self) -> list[int]:
        out: list[int] = []
        while self._t < self._count - 1:
            step = self._decide()
            if step is None:
                break
            self._t = step
            self.selected.append(step)
            out.append(step)
            if self._surge_count == 0 or self._surge_count > self.cfg.patience:
                self._history.append(self._phis[step])
                if self._surge_count > self.cfg.patience:
                    self._surge_count = 0
            for k in [k for k in self._phis if k < self._t]:
                del self._phis[k]
        return out

    def _decide(self) -> int | None:
        """Return the next selected index, or None if more stream is needed."""
        t = self._t
        if len(self._history) < self.cfg.warmup:
            self._surge_count = 0
            return t + 1
        median = float(np.median(np.asarray(self._history)))
        threshold = self.cfg.surge_factor * median
        if self._phis[t + 1] > threshold:
            self._surge_count += 1
            return t + 1
        # Baseline regime: jump, unless a surge inside the look-ahead clamps it.
        horizon = t + self.cfg.window
        if not self._eos and self._count - 1 < horizon:
            return None  # look-ahead not streamed yet
        self._surge_count = 0
        t_cand = min(horizon, self._count - 1)
        for k in range(t + 1, t_cand + 1):
            if self._phis[k] > threshold:
                return k
        return t_cand

    def result(self) -> SelectionResult:
        return SelectionResult.from_indices(self.selected, self._count)


class BinarySelectorEngine:
    """Bang-bang regulator: stride W while f(window deltas) <= threshold, else 1."""

    def __init__(
        self,
        cfg: SelectorConfig,
        aggregate: Callable[[Sequence[float]], float],
        threshold: float,
    ):
        if cfg.mode is not SelectorMode.BINARY_REGULATOR:
            raise ValueError("BinarySelectorEngine needs mode=BINARY_REGULATOR")
        self.cfg = cfg
        self.aggregate = aggregate
        self.threshold = float(threshold)
        self.selected: list[int] = []
        self._t = 0
        self._phis: dict[int, float] = {}
        self._count = 0
        self._eos = False

    def push(self, phi: float) -> list[int]:
        idx = self._count
        self._count += 1
        self._phis[idx] = float(phi)
        out = [0] if idx == 0 else []
        if idx == 0:
            self.selected.append(0)
        out.extend(self._resolve())
        return out

    def finish(self) -> list[int]:
        self._eos = True
        return self._resolve()

    def _resolve(self) -> list[int]:
        out: list[int] = []
        while self._t < self._count - 1:
            t = self._t
            horizon = t + self.cfg.window
            if not self._eos and self._count - 1 < horizon:
                break
            last = min(horizon, self._count - 1)
            deltas = [abs(self._phis[k] - self._phis[k - 1]) for k in range(t + 1, last + 1)]
            stride = self.cfg.window if self.aggregate(deltas) <= self.threshold else 1
            step = min(t + stride, self._count - 1)
            self._t = step
            self.selected.append(step)
            out.append(step)
            for k in [k for k in self._phis if k < self._t]:
                del self._phis[k]
        return out

    def result(self) -> SelectionResult:
        return SelectionResult.from_indices(self.selected, self._count)


class BaselineSelectorEngine:
    """Threshold selector over a pairwise saliency against the last retained frame."""

    def __init__(self, cfg: SelectorConfig):
        if cfg.mode is not SelectorMode.BASELINE:
            raise ValueError("BaselineSelectorEngine needs mode=BASELINE")
        assert cfg.baseline_kind is not None
        self.cfg = cfg
        self.kind = cfg.baseline_kind
        self.threshold = (
            cfg.baseline_threshold
            if cfg.baseline_threshold is not None
            else DEFAULT_BASELINE_THRESHOLDS[cfg.baseline_kind]
        )
        self.selected: list[int] = []
        self._momentum = MomentumState()
        self._anchor: Snapshot | None = None
        self._count = 0

    def push(self, snapshot: Snapshot) -> list[int]:
        idx = self._count
        self._count += 1
        if idx == 0:
            self._anchor = snapshot
            self.selected.append(0)
            return [0]
        score = baseline_saliency(self.kind, self._anchor, snapshot, momentum=self._momentum)
        if score > self.threshold:
            self._anchor = snapshot
            self.selected.append(idx)
            return [idx]
        return []

    def finish(self) -> list[int]:
        # Final index force-retained so reconstruction covers the horizon.
        last = self._count - 1
        if last > 0 and self.selected[-1] != last:
            self.selected.append(last)
            return [last]
        return []

    def result(self) -> SelectionResult:
        return SelectionResult.from_indices(self.selected, self._count)


def _run_paired(engine: FlowSelectorEngine, traj: Trajectory, activity: ActivitySeries) -> None:
    stream = iter(traj)
    mismatch = ValueError(
        f"trajectory and activity series must be aligned in length "
        f"(activity has {len(activity)} entries)"
    )
    for phi in activity.values:
        snap = next(stream, None)
        if snap is None:
            raise mismatch
        engine.push(snap, float(phi))
    if next(stream, None) is not None:
        raise mismatch
    engine.finish()


def select_flows(traj: Trajectory, activity: ActivitySeries, cfg: SelectorConfig) -> SelectionResult:
    """Run the dual-gate windowed selector over an aligned trajectory + activity series."""
    engine = FlowSelectorEngine(cfg)
    _run_paired(engine, traj, activity)
    return engine.result()


def select_surge(activity: ActivitySeries, cfg: SelectorConfig) -> SelectionResult:
    """Run the surge detector over a scalar activity series."""
    if len(activity) < 2:
        raise ValueError("surge selector needs an activity series of length >= 2")
    engine = SurgeSelectorEngine(cfg)
    for phi in activity.values:
        engine.push(float(phi))
    engine.finish()
    return engine.result()


def select_binary(
    activity: ActivitySeries,
    cfg: SelectorConfig,
    aggregate: Callable[[Sequence[float]], float] = max,
    gamma_thresh: float = 0.0,
) -> SelectionResult:
    """Run the binary (bang-bang) regulator over a scalar activity series.

    Emits only strides 1 or ``window`` (the final stride may be shorter when
    the horizon clamps it). ``aggregate`` defaults to the max of the absolute
    activity deltas over the look-ahead window.
    """
    engine = BinarySelectorEngine(cfg, aggregate=aggregate, threshold=gamma_thresh)
    for phi in activity.values:
        engine.push(float(phi))
    engine.finish()
    return engine.result()


def select_baseline(traj: Trajectory, cfg: SelectorConfig) -> SelectionResult:
    """Retain snapshot t iff saliency(kind, last_retained, t) exceeds the threshold."""
    engine = BaselineSelectorEngine(cfg)
    for snap in traj:
        engine.push(snap)
    engine.finish()
    return engine.result()
