"""End-to-end streaming compression: select, fit, persist, evaluate.

``run`` makes a single pass over a trajectory. Each arriving snapshot is
scored (enstrophy by default), fed to the configured selector engine, and
buffered for at most ``window`` steps; snapshots the selector skips are
dropped without ever reaching the training module. The first retained
snapshot trains the base field from scratch; every later one continues from
the current weights, either by full fine-tuning (stored as a weight delta) or
through a fresh zero-initialized low-rank adapter that is merged into the
base weights after training and stored as a factor pair.

Fidelity is evaluated against the float32 weights actually stored, and the
published weight state advances through the exact same ``apply_update``
arithmetic that ``reconstruct_trajectory`` replays, so decoding a chain
reproduces the training-time reconstructions bit for bit.
"""

from __future__ import annotations

import json
import time as _time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .codec import CompressedUpdate, UpdateKind, compression_report, deserialize_update, serialize_update
from .codec import CompressionReport
from .grid import CoordinateLattice, Snapshot, Trajectory, make_lattice
from .metrics import ActivitySeries, enstrophy, mae, rel_l2
from .neural_field import (
    LoraAdapter,
    NeuralFieldParams,
    NfArchitecture,
    TrainConfig,
    TrainMode,
    TrainingDivergedError,
    init_params,
    map_params,
    reconstruct,
    train,
)
from .selector import (
    BaselineSelectorEngine,
    BinarySelectorEngine,
    FlowSelectorEngine,
    SelectionResult,
    SelectorConfig,
    SelectorMode,
    SurgeSelectorEngine,
)

CHAIN_MANIFEST = "chain.json"


class ChainGapError(RuntimeError):
    """A weight-update chain is missing a link needed for replay."""


@dataclass
class PipelineConfig:
    """Composed configuration for one compression run."""

    selector: SelectorConfig = field(default_factory=SelectorConfig)
    arch: NfArchitecture = field(default_factory=NfArchitecture)
    train: TrainConfig = field(default_factory=TrainConfig)
    base_train: TrainConfig | None = None  # index-0 scratch recipe; derived if None
    binary_threshold: float = 0.0  # gate for the binary regulator mode
    evaluate: bool = True

    def __post_init__(self) -> None:
        if self.base_train is None:
            # The base snapshot always trains from scratch at the standard
            # annealing schedule, whatever the per-snapshot mode uses.
            self.base_train = replace(
                self.train, mode=TrainMode.SCRATCH, lr_initial=1e-3, lr_final=1e-5
            )


@dataclass
class FidelityRow:
    """Per-retained-snapshot outcome."""

    timestep: int
    rel_l2: float | None
    mae: float | None
    final_mse: float | None
    epochs: int
    stored_bytes: int
    wall_clock_s: float
    failed: bool = False


@dataclass
class PipelineReport:
    """Everything one run produced, minus the weights themselves."""

    selection: SelectionResult
    fidelity: list[FidelityRow]
    compression: CompressionReport
    activity: ActivitySeries
    updates: list[CompressedUpdate]

    def to_dict(self) -> dict:
        return {
            "selection": {
                "indices": list(self.selection.indices),
                "strides": list(self.selection.strides),
                "retention": self.selection.retention,
                "total": self.selection.total,
            },
            "fidelity": [
                {
                    "timestep": r.timestep,
                    "rel_l2": r.rel_l2,
                    "mae": r.mae,
                    "final_mse": r.final_mse,
                    "epochs": r.epochs,
                    "stored_bytes": r.stored_bytes,
                    "wall_clock_s": r.wall_clock_s,
                    "failed": r.failed,
                }
                for r in self.fidelity
            ],
            "activity": [float(v) for v in self.activity.values],
            "compression": {
                "raw_bytes_per_snapshot": self.compression.raw_bytes_per_snapshot,
                "mean_stored_bytes": self.compression.mean_stored_bytes,
                "sc": self.compression.sc,
                "tr": self.compression.tr,
                "tc_naive": self.compression.tc_naive,
                "tc_amortized": self.compression.tc_amortized,
                "raw_total_bytes": self.compression.raw_total_bytes,
                "stored_total_bytes": self.compression.stored_total_bytes,
                "stored_delta_bytes": self.compression.stored_delta_bytes,
            },
        }


def apply_update(
    published: NeuralFieldParams | None,
    kind: UpdateKind,
    update: NeuralFieldParams | LoraAdapter,
) -> NeuralFieldParams:
    """Advance the float32 weight state by one stored update.

    The arithmetic is pinned (accumulate in float64, round back to float32,
    fixed order) and shared between the live pipeline and chain replay, so
    both paths produce bit-identical weights.
    """

    def _f32(a: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(a, dtype=np.float32)

    if kind is UpdateKind.BASE_FULL:
        return map_params(_f32, update)  # type: ignore[arg-type]
    if published is None:
        raise ChainGapError("update chain must start with a base record")
    if kind is UpdateKind.FULL_DELTA:
        return map_params(
            lambda p, d: (p.astype(np.float64) + d.astype(np.float64)).astype(np.float32),
            published,
            update,  # type: ignore[arg-type]
        )
    assert isinstance(update, LoraAdapter)
    merged = map_params(_f32, published)
    for l, lp in enumerate(merged.layers):
        delta = update.up[l].astype(np.float64) @ update.down[l].astype(np.float64)
        lp.weight = (lp.weight.astype(np.float64) + delta).astype(np.float32)
    return merged


def _update_filename(timestep: int) -> str:
    return f"update_{timestep:08d}.antw"


def run(traj: Trajectory, cfg: PipelineConfig, out_dir: str | Path | None = None) -> PipelineReport:
    """Compress a trajectory in one streaming pass.

    When ``out_dir`` is given, the update chain (.antw files plus a
    chain.json manifest), report.json and report.csv are written there.
    Training failures are flagged per snapshot and the pipeline continues
    from the last good weights.
    """
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    sel_cfg = cfg.selector
    mode = sel_cfg.mode
    if mode is SelectorMode.DYNAMIC_FLOWS:
        engine: object = FlowSelectorEngine(sel_cfg)
    elif mode is SelectorMode.SURGE_DETECTOR:
        engine = SurgeSelectorEngine(sel_cfg)
    elif mode is SelectorMode.BINARY_REGULATOR:
        engine = BinarySelectorEngine(sel_cfg, aggregate=max, threshold=cfg.binary_threshold)
    else:
        engine = BaselineSelectorEngine(sel_cfg)

    published: NeuralFieldParams | None = None
    lattice: CoordinateLattice | None = None
    buffer: dict[int, Snapshot] = {}
    phis: list[float] = []
    fidelity: list[FidelityRow] = []
    updates: list[CompressedUpdate] = []
    manifest_records: list[dict] = []

    def _train_one(snap: Snapshot) -> None:
        nonlocal published, lattice
        k = snap.timestep_index
        if lattice is None:
            lattice = make_lattice(snap.shape)
        is_base = published is None
        base_cfg = cfg.base_train if is_base else cfg.train
        step_cfg = replace(base_cfg, seed=base_cfg.seed + k)
        start = _time.perf_counter()
        try:
            if is_base:
                result = train(init_params(cfg.arch, step_cfg.seed), snap, step_cfg)
            else:
                result = train(published.astype(np.float64), snap, step_cfg)
        except TrainingDivergedError:
            fidelity.append(
                FidelityRow(
                    timestep=k,
                    rel_l2=None,
                    mae=None,
                    final_mse=None,
                    epochs=0,
                    stored_bytes=0,
                    wall_clock_s=_time.perf_counter() - start,
                    failed=True,
                )
            )
            return
        elapsed = _time.perf_counter() - start

        if is_base or step_cfg.mode is TrainMode.SCRATCH:
            new32 = result.params.astype(np.float32)
            update_obj: NeuralFieldParams | LoraAdapter = new32
            kind = UpdateKind.BASE_FULL
        elif step_cfg.mode is TrainMode.FULL_FT:
            new32 = result.params.astype(np.float32)
            update_obj = map_params(
                lambda a, b: (a.astype(np.float64) - b.astype(np.float64)).astype(np.float32),
                new32,
                published,
            )
            kind = UpdateKind.FULL_DELTA
        else:
            adapter32 = result.adapter.copy()
            adapter32.down = [a.astype(np.float32) for a in adapter32.down]
            adapter32.up = [b.astype(np.float32) for b in adapter32.up]
            update_obj = adapter32
            kind = UpdateKind.LORA_PAIR

        update = serialize_update(update_obj, kind, k)
        updates.append(update)
        published = apply_update(published, kind, update_obj)
        if out_path is not None:
            (out_path / _update_filename(k)).write_bytes(update.payload)
        manifest_records.append({"timestep": k, "file": _update_filename(k), "time": snap.time})

        row_rel = row_mae = None
        if cfg.evaluate:
            recon = reconstruct(
                published.astype(np.float64),
                lattice,
                snap.shape,
                domain=snap.domain,
                timestep_index=k,
                time=snap.time,
            )
            row_rel = rel_l2(recon.values, snap.values)
            row_mae = mae(recon.values, snap.values)
        fidelity.append(
            FidelityRow(
                timestep=k,
                rel_l2=row_rel,
                mae=row_mae,
                final_mse=result.history[-1] if result.history else None,
                epochs=result.epochs_run,
                stored_bytes=update.stored_bytes,
                wall_clock_s=elapsed,
            )
        )

    def _process(newly: list[int]) -> None:
        for k in newly:
            _train_one(buffer[k])
        frontier = _engine_frontier(engine)
        for k in [k for k in buffer if k <= frontier]:
            del buffer[k]

    total = 0
    raw_bytes = 0
    domain = None
    shape = None
    for snap in traj:
        total += 1
        buffer[snap.timestep_index] = snap
        if shape is None:
            shape, domain = snap.shape, snap.domain
            raw_bytes = snap.values.nbytes
        phi = enstrophy(snap)
        phis.append(phi)
        if mode is SelectorMode.DYNAMIC_FLOWS:
            newly = engine.push(snap, phi)
        elif mode is SelectorMode.BASELINE:
            newly = engine.push(snap)
        else:
            newly = engine.push(phi)
        _process(newly)
    if total == 0:
        raise ValueError("cannot compress an empty trajectory")
    _process(engine.finish())

    selection = engine.result()
    comp = compression_report(
        raw_bytes, updates, total_snapshots=total, retained=len(selection.indices)
    )
    report = PipelineReport(
        selection=selection,
        fidelity=fidelity,
        compression=comp,
        activity=ActivitySeries(values=np.array(phis), label="enstrophy"),
        updates=updates,
    )
    if out_path is not None:
        _write_outputs(out_path, report, manifest_records, shape, domain)
    return report


def _engine_frontier(engine) -> int:
    """Largest index below which no future selection can land."""
    if isinstance(engine, FlowSelectorEngine):
        return engine._anchor[0] if engine._anchor is not None else -1
    if isinstance(engine, (SurgeSelectorEngine, BinarySelectorEngine)):
        return engine._t
    # Baseline: finish() may still force-retain the newest index.
    return engine._count - 2


def _write_outputs(
    out_path: Path,
    report: PipelineReport,
    manifest_records: list[dict],
    shape: tuple[int, int],
    domain: tuple[float, float, float, float],
) -> None:
    manifest = {
        "shape": list(shape),
        "domain": list(domain),
        "records": manifest_records,
    }
    (out_path / CHAIN_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    (out_path / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    lines = ["timestep,rel_l2,mae,final_mse,epochs,stored_bytes,wall_clock_s,failed"]
    for r in report.fidelity:
        lines.append(
            f"{r.timestep},{'' if r.rel_l2 is None else repr(r.rel_l2)},"
            f"{'' if r.mae is None else repr(r.mae)},"
            f"{'' if r.final_mse is None else repr(r.final_mse)},"
            f"{r.epochs},{r.stored_bytes},{r.wall_clock_s!r},{r.failed}"
        )
    (out_path / "report.csv").write_text("\n".join(lines) + "\n")


def reconstruct_trajectory(chain_dir: str | Path, indices: list[int]) -> list[Snapshot]:
    """Replay a stored update chain and reconstruct the requested snapshots.

    Updates are applied in timestep order starting from the base record;
    replay arithmetic matches the pipeline's published-state arithmetic
    exactly. Raises ChainGapError naming the missing timestep when a chain
    file was deleted.
    """
    chain_path = Path(chain_dir)
    manifest_file = chain_path / CHAIN_MANIFEST
    if not manifest_file.exists():
        raise ChainGapError(f"no {CHAIN_MANIFEST} manifest in {chain_path}")
    manifest = json.loads(manifest_file.read_text())
    records = sorted(manifest["records"], key=lambda r: r["timestep"])
    available = {r["timestep"] for r in records}
    requested = sorted(set(int(i) for i in indices))
    unknown = [i for i in requested if i not in available]
    if unknown:
        raise ValueError(f"indices {unknown} were not retained in this chain")
    shape = tuple(manifest["shape"])
    domain = tuple(manifest["domain"])
    lattice = make_lattice(shape)
    published: NeuralFieldParams | None = None
    out: list[Snapshot] = []
    last_needed = requested[-1]
    for rec in records:
        ts = rec["timestep"]
        if ts > last_needed:
            break
        path = chain_path / rec["file"]
        if not path.exists():
            raise ChainGapError(f"missing update file for timestep {ts}")
        kind, ts_stored, obj = deserialize_update(path.read_bytes())
        if ts_stored != ts:
            raise ChainGapError(f"update file {rec['file']} carries timestep {ts_stored}, expected {ts}")
        published = apply_update(published, kind, obj)
        if ts in requested:
            out.append(
                reconstruct(
                    published.astype(np.float64),
                    lattice,
                    shape,
                    domain=domain,
                    timestep_index=ts,
                    time=float(rec.get("time", 0.0)),
                )
            )
    return out
