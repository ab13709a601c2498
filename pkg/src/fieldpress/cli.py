"""Command-line surface: generate, metrics, select, compress, reconstruct, report.

Exit codes: 0 success, 1 usage error, 2 runtime error. Errors go to stderr
as single-line JSON. Every subcommand writes only below its --out path, and
identical argv plus seeds reproduce identical artifacts (the per-snapshot
wall-clock fields in report.json are the one exception).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import report_plots
from .datagen import ChirpConfig, FlowGenConfig, analytic_enstrophy, gen_chirp_activity, gen_decaying_flow
from .grid import Snapshot, open_trajectory, write_snapshot, write_trajectory
from .metrics import (
    ActivitySeries,
    MomentumState,
    SaliencyKind,
    baseline_saliency,
    enstrophy,
    enstrophy_series,
)
from .neural_field import NfArchitecture, TrainConfig, TrainMode
from .pipeline import PipelineConfig, reconstruct_trajectory, run
from .selector import (
    SelectorConfig,
    SelectorMode,
    select_baseline,
    select_binary,
    select_flows,
    select_surge,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        raise UsageError(message)


_SALIENCY_NAMES = {
    "jsd": SaliencyKind.JSD,
    "residual-entropy": SaliencyKind.RESIDUAL_ENTROPY,
    "spectral-entropy": SaliencyKind.SPECTRAL_ENTROPY,
    "mutual-info": SaliencyKind.MUTUAL_INFO,
    "momentum": SaliencyKind.MOMENTUM,
}

_SELECTOR_NAMES = {
    "flows": SelectorMode.DYNAMIC_FLOWS,
    "surge": SelectorMode.SURGE_DETECTOR,
    "binary": SelectorMode.BINARY_REGULATOR,
    "baseline": SelectorMode.BASELINE,
}

_TRAIN_MODES = {
    "scratch": TrainMode.SCRATCH,
    "full": TrainMode.FULL_FT,
    "lora": TrainMode.LORA,
}


def _write_series_csv(path: Path, values, header: str = "t,value") -> None:
    lines = [header] + [f"{t},{float(v)!r}" for t, v in enumerate(values)]
    path.write_text("\n".join(lines) + "\n")


def _load_series_csv(path: Path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1]


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "flow":
        cfg = FlowGenConfig(
            resolution=args.resolution,
            n_steps=args.steps,
            viscosity=args.viscosity,
            n_modes=args.modes,
            peak_wavenumber=args.peak_wavenumber,
            seed=args.seed,
        )
        n = write_trajectory(out / "trajectory.antt", gen_decaying_flow(cfg))
        _write_series_csv(out / "enstrophy.csv", analytic_enstrophy(cfg))
        print(f"wrote {n} snapshots to {out / 'trajectory.antt'}")
    else:
        cfg = ChirpConfig(
            n_steps=args.steps,
            t_merger=args.t_merger,
            baseline_level=args.baseline_level,
            peak_amplitude=args.peak_amplitude,
            envelope_width=args.envelope_width,
            noise_std=args.noise_std,
            seed=args.seed,
        )
        series = gen_chirp_activity(cfg)
        _write_series_csv(out / "activity.csv", series.values)
        print(f"wrote {len(series)} activity values to {out / 'activity.csv'}")
    return 0


def cmd_metrics(args) -> int:
    traj = open_trajectory(args.input)
    rows: list[float] = []
    if args.metric == "enstrophy":
        rows = [enstrophy(s) for s in traj]
    else:
        kind = _SALIENCY_NAMES[args.metric]
        momentum = MomentumState()
        prev: Snapshot | None = None
        for snap in traj:
            if prev is None:
                rows.append(0.0)  # no predecessor at t=0
            else:
                rows.append(baseline_saliency(kind, prev, snap, momentum=momentum))
            prev = snap
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_series_csv(out, rows, header="t,metric_value")
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def _selector_config_from(args, mode: SelectorMode) -> SelectorConfig:
    kwargs = dict(
        mode=mode,
        window=args.window,
        corr_threshold=args.corr_threshold,
        eps=args.eps,
        surge_factor=args.gamma,
        patience=args.patience,
        history_maxlen=args.history,
        warmup=args.warmup,
    )
    if mode is SelectorMode.BASELINE:
        if args.metric in (None, "enstrophy"):
            raise UsageError("baseline mode needs --metric set to a saliency kind")
        kwargs["baseline_kind"] = _SALIENCY_NAMES[args.metric]
        kwargs["baseline_threshold"] = args.threshold
    return SelectorConfig(**kwargs)


def cmd_select(args) -> int:
    mode = _SELECTOR_NAMES[args.mode]
    cfg = _selector_config_from(args, mode)
    if mode in (SelectorMode.DYNAMIC_FLOWS, SelectorMode.BASELINE):
        if not args.input:
            raise UsageError(f"--mode {args.mode} needs --input (a trajectory file)")
        traj = open_trajectory(args.input)
        if mode is SelectorMode.DYNAMIC_FLOWS:
            activity = enstrophy_series(open_trajectory(args.input))
            result = select_flows(traj, activity, cfg)
        else:
            result = select_baseline(traj, cfg)
    else:
        if args.activity:
            activity = ActivitySeries(values=_load_series_csv(Path(args.activity)), label="activity")
        elif args.input:
            activity = enstrophy_series(open_trajectory(args.input))
        else:
            raise UsageError(f"--mode {args.mode} needs --activity or --input")
        if mode is SelectorMode.SURGE_DETECTOR:
            result = select_surge(activity, cfg)
        else:
            result = select_binary(activity, cfg, gamma_thresh=args.gamma_thresh)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "indices": list(result.indices),
        "strides": list(result.strides),
        "retention": result.retention,
        "total": result.total,
    }
    (out / "selection.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    lines = ["index,stride"] + [
        f"{idx},{0 if i == 0 else result.strides[i - 1]}" for i, idx in enumerate(result.indices)
    ]
    (out / "selection.csv").write_text("\n".join(lines) + "\n")
    print(f"retained {len(result.indices)}/{result.total} ({100 * result.retention:.1f}%)")
    return 0


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    text = p.read_text()
    if p.suffix == ".toml":
        import tomllib

        return tomllib.loads(text)
    return json.loads(text)


def cmd_compress(args) -> int:
    file_cfg = _load_config_file(args.config)

    def pick(name, default):
        v = getattr(args, name)
        if v is not None:
            return v
        return file_cfg.get(name, default)

    mode_name = pick("mode", "full")
    if mode_name not in _TRAIN_MODES:
        raise UsageError(f"unknown training mode {mode_name!r}")
    sel_name = pick("selector", "flows")
    if sel_name not in _SELECTOR_NAMES:
        raise UsageError(f"unknown selector {sel_name!r}")
    sel_mode = _SELECTOR_NAMES[sel_name]
    train_mode = _TRAIN_MODES[mode_name]
    lr_default = 1e-2 if train_mode is TrainMode.LORA else 1e-3

    sel_kwargs = dict(
        mode=sel_mode,
        window=int(pick("window", 5)),
        corr_threshold=float(pick("corr_threshold", 0.65)),
        eps=float(pick("eps", 1e-8)),
        surge_factor=float(pick("gamma", 3.0)),
        patience=int(pick("patience", 4)),
        history_maxlen=int(pick("history", 32)),
        warmup=int(pick("warmup", 8)),
    )
    if sel_mode is SelectorMode.BASELINE:
        kind_name = pick("baseline_kind", None)
        if kind_name not in _SALIENCY_NAMES:
            raise UsageError("baseline selector needs --baseline-kind")
        sel_kwargs["baseline_kind"] = _SALIENCY_NAMES[kind_name]
        thr = pick("baseline_threshold", None)
        sel_kwargs["baseline_threshold"] = None if thr is None else float(thr)

    cfg = PipelineConfig(
        selector=SelectorConfig(**sel_kwargs),
        arch=NfArchitecture(
            hidden_dim=int(pick("hidden", 64)),
            n_layers=int(pick("layers", 3)),
            ffm_dim=int(pick("ffm_dim", 64)),
            ffm_frequency=float(pick("ffm_frequency", 7.0)),
        ),
        train=TrainConfig(
            mode=train_mode,
            epochs=int(pick("epochs", 200)),
            batch_size=int(pick("batch_size", 4096)),
            lr_initial=float(pick("lr_initial", lr_default)),
            lr_final=float(pick("lr_final", 1e-5)),
            weight_decay=float(pick("weight_decay", 1e-6)),
            seed=int(pick("seed", 0)),
            lora_rank=int(pick("rank", 8)),
        ),
        binary_threshold=float(pick("binary_threshold", 0.0)),
        evaluate=not args.no_eval,
    )
    report = run(open_trajectory(args.input), cfg, out_dir=args.out)
    comp = report.compression
    print(
        f"retained {len(report.selection.indices)}/{report.selection.total} snapshots, "
        f"SC {comp.sc:.1f}x, TC {comp.tc_naive:.1f}x (amortized {comp.tc_amortized:.1f}x)"
    )
    return 0


def cmd_reconstruct(args) -> int:
    if args.indices.strip().lower() == "all":
        manifest = json.loads((Path(args.chain) / "chain.json").read_text())
        indices = [r["timestep"] for r in manifest["records"]]
    else:
        indices = [int(tok) for tok in args.indices.split(",") if tok.strip()]
    if not indices:
        raise UsageError("--indices must name at least one timestep")
    snapshots = reconstruct_trajectory(args.chain, indices)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for snap in snapshots:
        with open(out / f"snapshot_{snap.timestep_index:08d}.antc", "wb") as fh:
            write_snapshot(fh, snap)
    print(f"reconstructed {len(snapshots)} snapshots into {out}")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = args.labels.split(",") if args.labels else None
    if labels and len(labels) != len(args.inputs):
        raise UsageError("--labels must list one label per input report")
    points = []
    for i, path in enumerate(args.inputs):
        data = json.loads(Path(path).read_text())
        label = labels[i] if labels else Path(path).parent.name or f"run{i}"
        rows = data["fidelity"]
        ok = [r for r in rows if r.get("rel_l2") is not None]
        stored = [r["stored_bytes"] for r in rows if not r.get("failed")]
        comp = data["compression"]
        points.append(
            {
                "label": label,
                "mem_kib_per_snapshot": (sum(stored) / len(stored) / 1024.0) if stored else 0.0,
                "mean_rel_l2": float(np.mean([r["rel_l2"] for r in ok])) if ok else float("nan"),
                "mean_mae": float(np.mean([r["mae"] for r in ok])) if ok else float("nan"),
                "tr": comp["tr"],
                "sc": comp["sc"],
                "tc_naive": comp["tc_naive"],
                "tc_amortized": comp["tc_amortized"],
            }
        )
        if not args.no_figures:
            activity = data.get("activity")
            if activity:
                report_plots.plot_selection_timeline(
                    np.asarray(activity),
                    data["selection"]["indices"],
                    out / f"selection_{label}.png",
                )
            report_plots.plot_fidelity(rows, out / f"fidelity_{label}.png")
    header = "label,mem_kib_per_snapshot,mean_rel_l2,mean_mae,tr,sc,tc_naive,tc_amortized"
    lines = [header]
    for p in points:
        lines.append(
            f"{p['label']},{p['mem_kib_per_snapshot']!r},{p['mean_rel_l2']!r},"
            f"{p['mean_mae']!r},{p['tr']!r},{p['sc']!r},{p['tc_naive']!r},{p['tc_amortized']!r}"
        )
    (out / "pareto.csv").write_text("\n".join(lines) + "\n")
    if not args.no_figures:
        report_plots.plot_pareto(points, out / "pareto.png")
    print(f"merged {len(points)} reports into {out / 'pareto.csv'}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="fieldpress", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="generate synthetic trajectories / activity series")
    p.add_argument("--kind", choices=["flow", "chirp"], default="flow")
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--viscosity", type=float, default=0.02)
    p.add_argument("--modes", type=int, default=8)
    p.add_argument("--peak-wavenumber", type=int, default=8)
    p.add_argument("--t-merger", type=int, default=400)
    p.add_argument("--baseline-level", type=float, default=1.0)
    p.add_argument("--peak-amplitude", type=float, default=50.0)
    p.add_argument("--envelope-width", type=float, default=30.0)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("metrics", help="extract a per-timestep metric as CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--metric", choices=["enstrophy", *_SALIENCY_NAMES], default="enstrophy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("select", help="run a temporal selector")
    p.add_argument("--input", help="trajectory file (.antt)")
    p.add_argument("--activity", help="activity series CSV (surge/binary modes)")
    p.add_argument("--mode", choices=list(_SELECTOR_NAMES), default="flows")
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--corr-threshold", type=float, default=0.65)
    p.add_argument("--eps", type=float, default=1e-8)
    p.add_argument("--gamma", type=float, default=3.0, help="surge factor")
    p.add_argument("--patience", type=int, default=4)
    p.add_argument("--history", type=int, default=32)
    p.add_argument("--warmup", type=int, default=8)
    p.add_argument("--metric", choices=["enstrophy", *_SALIENCY_NAMES], default=None)
    p.add_argument("--threshold", type=float, default=None, help="baseline saliency threshold")
    p.add_argument("--gamma-thresh", type=float, default=0.0, help="binary regulator threshold")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("compress", help="run the full compression pipeline")
    p.add_argument("--input", required=True)
    p.add_argument("--config", help="TOML or JSON key/value config; flags win")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=list(_TRAIN_MODES))
    p.add_argument("--rank", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr-initial", type=float, dest="lr_initial")
    p.add_argument("--lr-final", type=float, dest="lr_final")
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--seed", type=int)
    p.add_argument("--selector", choices=list(_SELECTOR_NAMES))
    p.add_argument("--window", type=int)
    p.add_argument("--corr-threshold", type=float, dest="corr_threshold")
    p.add_argument("--eps", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--history", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--binary-threshold", type=float, dest="binary_threshold")
    p.add_argument("--baseline-kind", dest="baseline_kind", choices=list(_SALIENCY_NAMES))
    p.add_argument("--baseline-threshold", type=float, dest="baseline_threshold")
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--ffm-dim", type=int, dest="ffm_dim")
    p.add_argument("--ffm-frequency", type=float, dest="ffm_frequency")
    p.add_argument("--no-eval", action="store_true")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("reconstruct", help="decode snapshots from a stored update chain")
    p.add_argument("--chain", required=True)
    p.add_argument("--indices", required=True, help="comma-separated timesteps, or 'all'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("report", help="merge run reports into a Pareto CSV plus figures")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--labels", help="comma-separated labels, one per input")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(json.dumps({"error": str(exc), "kind": "usage"}), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(json.dumps({"error": str(exc), "kind": "usage"}), file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": str(exc), "kind": "runtime"}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
