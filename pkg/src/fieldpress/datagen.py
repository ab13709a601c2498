"""Desk-scale synthetic data generators.

``gen_decaying_flow`` produces a vorticity-like field as a superposition of
random-phase Fourier modes whose amplitudes decay as exp(-nu k^2 t) while the
phases drift at fixed per-mode rates: a high-activity early phase followed by
a quiescent tail, with a closed-form enstrophy series that serves as a free
analytic oracle. ``gen_chirp_activity`` produces a merger-like scalar
activity series: a quiet baseline, then a chirping burst under a Gaussian
envelope.

All randomness comes from numpy's PCG64 generator, so a seed reproduces the
exact same bytes on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .grid import Snapshot, Trajectory
from .metrics import ActivitySeries

#: Simulation-time units per generated step.
DT = 0.05

#: Drift-rate scales (rad per simulation-time unit). Primary components drift
#: slowly so nearby frames stay structurally correlated; each mode also
#: carries a low-amplitude secondary component at the same wavevector whose
#: drift differs by a band-limited offset, so every mode beats against its
#: primary on a 4-8 step period (inside the selector window scale). The beats modulate the enstrophy deltas
#: deeply at window scale (the intermittent, multi-rate texture real
#: turbulence diagnostics have) without breaking the smooth decay envelope.
PRIMARY_DRIFT_SCALE = 1.0
BEAT_DRIFT_MIN = 15.0
BEAT_DRIFT_MAX = 30.0

#: Secondary amplitude fraction range. Deep beats let the enstrophy
#: fluctuate around its decaying envelope (activity bursts and lulls, the way
#: real turbulence diagnostics behave) instead of decaying as a featureless
#: smooth curve; the envelope itself still dies as exp(-2 nu k^2 t).
BEAT_DEPTH_MIN = 0.35
BEAT_DEPTH_MAX = 0.6

#: Geometric amplitude ladder across modes. A dominant mode keeps the
#: aggregate enstrophy deltas intermittent (burst then near-plateau) instead
#: of averaging the per-mode beats away; the weaker modes still contribute
#: spatial structure.
AMPLITUDE_LADDER = 0.35

# Chirp phase: omega(t) = CHIRP_BASE_OMEGA * (1 + CHIRP_ACCEL * min(t, t_merger)/t_merger),
# so the instantaneous frequency rises toward the merger and then holds.
CHIRP_BASE_OMEGA = 0.2
CHIRP_ACCEL = 3.0


@dataclass(frozen=True)
class FlowGenConfig:
    """Configuration for the decaying-flow generator (N x N grid, T steps)."""

    resolution: int = 64
    n_steps: int = 100
    viscosity: float = 0.02
    n_modes: int = 8
    peak_wavenumber: int = 8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.resolution < 16:
            raise ValueError("resolution must be >= 16")
        if self.n_steps < 2:
            raise ValueError("n_steps must be >= 2")
        if self.viscosity <= 0:
            raise ValueError("viscosity must be positive")
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        if self.peak_wavenumber < 1:
            raise ValueError("peak_wavenumber must be >= 1")
        # Keeps every mode (and every pairwise sum of modes) unaliased on the
        # grid, which makes the analytic enstrophy exact.
        if self.peak_wavenumber + 2 >= self.resolution // 2:
            raise ValueError(
                f"peak_wavenumber {self.peak_wavenumber} too high for resolution "
                f"{self.resolution}: need peak_wavenumber + 2 < resolution/2"
            )


@dataclass(frozen=True)
class ChirpConfig:
    """Configuration for the merger-like chirp activity series."""

    n_steps: int = 600
    t_merger: int = 400
    baseline_level: float = 1.0
    peak_amplitude: float = 50.0
    envelope_width: float = 30.0
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0 < self.t_merger < self.n_steps):
            raise ValueError("t_merger must lie strictly inside the series")
        if self.baseline_level <= 0:
            raise ValueError("baseline_level must be positive")
        if self.peak_amplitude <= self.baseline_level:
            raise ValueError("peak_amplitude must exceed baseline_level")
        if self.envelope_width <= 0:
            raise ValueError("envelope_width must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


@dataclass(frozen=True)
class _ModeTable:
    """Fixed per-seed mode table: each wavevector carries two drifting components."""

    wavevectors: np.ndarray  # (M, 2) integer wavevectors, canonical half-plane
    amplitudes: np.ndarray  # (M,) primary component amplitudes
    phases: np.ndarray  # (M,)
    drifts: np.ndarray  # (M,) rad per time unit
    phases2: np.ndarray  # (M,) secondary component
    drifts2: np.ndarray  # (M,)
    betas: np.ndarray  # (M,) secondary amplitude fraction (monotonicity budget)


def _flow_modes(cfg: FlowGenConfig) -> _ModeTable:
    lo = max(1.0, cfg.peak_wavenumber - 2.0)
    hi = cfg.peak_wavenumber + 2.0
    kmax = int(hi)
    candidates = []
    # Canonical half-plane (ky > 0, or ky == 0 and kx > 0) so no two modes are
    # the +-k images of each other; distinct modes are then L2-orthogonal on
    # the periodic grid and only same-wavevector components interfere.
    for ky in range(0, kmax + 1):
        for kx in range(-kmax, kmax + 1):
            if ky == 0 and kx <= 0:
                continue
            mag = np.hypot(kx, ky)
            if lo <= mag <= hi:
                candidates.append((kx, ky))
    if len(candidates) < cfg.n_modes:
        raise ValueError(
            f"only {len(candidates)} distinct modes near wavenumber "
            f"{cfg.peak_wavenumber}, cannot draw {cfg.n_modes}"
        )
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    chosen = rng.choice(len(candidates), size=cfg.n_modes, replace=False)
    wavevectors = np.array([candidates[i] for i in chosen], dtype=np.float64)
    drifts = rng.uniform(-PRIMARY_DRIFT_SCALE, PRIMARY_DRIFT_SCALE, size=cfg.n_modes)
    offsets = rng.uniform(BEAT_DRIFT_MIN, BEAT_DRIFT_MAX, size=cfg.n_modes)
    drifts2 = drifts + offsets * rng.choice([-1.0, 1.0], size=cfg.n_modes)
    betas = rng.uniform(BEAT_DEPTH_MIN, BEAT_DEPTH_MAX, size=cfg.n_modes)
    return _ModeTable(
        wavevectors=wavevectors,
        amplitudes=rng.normal(0.0, 1.0, size=cfg.n_modes)
        * AMPLITUDE_LADDER ** np.arange(cfg.n_modes),
        phases=rng.uniform(0.0, 2.0 * np.pi, size=cfg.n_modes),
        drifts=drifts,
        phases2=rng.uniform(0.0, 2.0 * np.pi, size=cfg.n_modes),
        drifts2=drifts2,
        betas=betas,
    )


def analytic_enstrophy(cfg: FlowGenConfig) -> np.ndarray:
    """Closed-form enstrophy series of the generated flow.

    Distinct wavevectors are orthogonal on the grid; the two components of one
    wavevector interfere, so

        E(t) = pi^2 sum_m amp_m^2 exp(-2 nu |k_m|^2 t)
               * (1 + beta_m^2 + 2 beta_m cos(dphi_m + ddrift_m t)).
    """
    modes = _flow_modes(cfg)
    ksq = np.sum(modes.wavevectors**2, axis=1)
    t = np.arange(cfg.n_steps, dtype=np.float64) * DT
    decay = np.exp(-2.0 * cfg.viscosity * np.outer(t, ksq))
    beat = (
        1.0
        + modes.betas**2
        + 2.0
        * modes.betas
        * np.cos((modes.phases2 - modes.phases) + np.outer(t, modes.drifts2 - modes.drifts))
    )
    return np.pi**2 * (decay * beat) @ (modes.amplitudes**2)


class _FlowSource:
    """Re-iterable snapshot source evaluating the closed-form mode sum."""

    def __init__(self, cfg: FlowGenConfig):
        self.cfg = cfg
        self.modes = _flow_modes(cfg)
        n = cfg.resolution
        # Left-edge samples of the periodic [0, 2pi)^2 domain.
        axis = np.arange(n, dtype=np.float64) * (2.0 * np.pi / n)
        self.xx, self.yy = np.meshgrid(axis, axis)

    def __iter__(self) -> Iterator[Snapshot]:
        cfg = self.cfg
        modes = self.modes
        ksq = np.sum(modes.wavevectors**2, axis=1)
        for t in range(cfg.n_steps):
            time = t * DT
            field = np.zeros_like(self.xx)
            scale = modes.amplitudes * np.exp(-cfg.viscosity * ksq * time)
            for m in range(cfg.n_modes):
                spatial = modes.wavevectors[m, 0] * self.xx + modes.wavevectors[m, 1] * self.yy
                field += scale[m] * (
                    np.cos(spatial + modes.phases[m] + modes.drifts[m] * time)
                    + modes.betas[m]
                    * np.cos(spatial + modes.phases2[m] + modes.drifts2[m] * time)
                )
            yield Snapshot(
                values=field.astype(np.float32),
                domain=(0.0, 2.0 * np.pi, 0.0, 2.0 * np.pi),
                timestep_index=t,
                time=time,
            )


def gen_decaying_flow(cfg: FlowGenConfig) -> Trajectory:
    """Generate a decaying vorticity-like trajectory, deterministic per seed."""
    return Trajectory(source=_FlowSource(cfg), length_hint=cfg.n_steps)


def chirp_envelope(cfg: ChirpConfig) -> np.ndarray:
    """Gaussian envelope factor exp(-(t - t_merger)^2 / (2 sigma^2))."""
    t = np.arange(cfg.n_steps, dtype=np.float64)
    return np.exp(-((t - cfg.t_merger) ** 2) / (2.0 * cfg.envelope_width**2))


def gen_chirp_activity(cfg: ChirpConfig) -> ActivitySeries:
    """Merger-like activity: baseline plus an |sin|-modulated chirping burst."""
    t = np.arange(cfg.n_steps, dtype=np.float64)
    omega = CHIRP_BASE_OMEGA * (1.0 + CHIRP_ACCEL * np.minimum(t, cfg.t_merger) / cfg.t_merger)
    burst = (
        (cfg.peak_amplitude - cfg.baseline_level)
        * chirp_envelope(cfg)
        * np.abs(np.sin(omega * t))
    )
    values = cfg.baseline_level + burst
    if cfg.noise_std > 0:
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
        values = values + rng.normal(0.0, cfg.noise_std, size=cfg.n_steps)
    return ActivitySeries(values=values, label="surge")
