import json

import numpy as np
import pytest

from fieldpress.cli import main
from fieldpress.grid import open_trajectory, read_snapshot


def run_cli(args):
    return main(args)


GEN_FLOW = [
    "generate", "--kind", "flow", "--resolution", "32", "--steps", "30",
    "--peak-wavenumber", "4", "--modes", "4", "--seed", "3",
]
COMPRESS_FAST = [
    "compress", "--mode", "full", "--epochs", "20", "--hidden", "16",
    "--layers", "2", "--ffm-dim", "16", "--window", "3",
]


@pytest.fixture(scope="module")
def flow_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("flow")
    assert run_cli(GEN_FLOW + ["--out", str(out)]) == 0
    return out


class TestExitCodes:
    def test_help_exits_zero(self, capsys):
        assert run_cli(["generate", "--help"]) == 0
        assert "usage" in capsys.readouterr().out

    def test_unknown_flag_is_usage_error(self, tmp_path, capsys):
        code = run_cli(["generate", "--no-such-flag", "--out", str(tmp_path / "x")])
        assert code == 1
        err = capsys.readouterr().err.strip()
        payload = json.loads(err)
        assert payload["kind"] == "usage"
        assert not (tmp_path / "x").exists()  # nothing written

    def test_runtime_error_is_code_two(self, tmp_path, capsys):
        code = run_cli([
            "metrics", "--input", str(tmp_path / "missing.antt"),
            "--out", str(tmp_path / "out.csv"),
        ])
        assert code == 2
        payload = json.loads(capsys.readouterr().err.strip())
        assert payload["kind"] == "runtime"


class TestGenerate:
    def test_flow_outputs(self, flow_dir):
        snaps = list(open_trajectory(flow_dir / "trajectory.antt"))
        assert len(snaps) == 30
        assert snaps[0].shape == (32, 32)
        sidecar = (flow_dir / "enstrophy.csv").read_text().splitlines()
        assert sidecar[0] == "t,value"
        assert len(sidecar) == 31

    def test_chirp_outputs(self, tmp_path):
        assert run_cli([
            "generate", "--kind", "chirp", "--steps", "200", "--t-merger", "120",
            "--out", str(tmp_path),
        ]) == 0
        lines = (tmp_path / "activity.csv").read_text().splitlines()
        assert lines[0] == "t,value" and len(lines) == 201

    def test_byte_identical_artifacts_for_same_argv(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli(GEN_FLOW + ["--out", str(a)]) == 0
        assert run_cli(GEN_FLOW + ["--out", str(b)]) == 0
        assert (a / "trajectory.antt").read_bytes() == (b / "trajectory.antt").read_bytes()
        assert (a / "enstrophy.csv").read_text() == (b / "enstrophy.csv").read_text()


class TestMetricsCommand:
    def test_enstrophy_csv(self, flow_dir, tmp_path):
        out = tmp_path / "enstrophy.csv"
        assert run_cli(["metrics", "--input", str(flow_dir / "trajectory.antt"),
                        "--metric", "enstrophy", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "t,metric_value" and len(lines) == 31
        # matches the analytic sidecar to float32 storage accuracy
        computed = np.array([float(l.split(",")[1]) for l in lines[1:]])
        sidecar = np.array([
            float(l.split(",")[1])
            for l in (flow_dir / "enstrophy.csv").read_text().splitlines()[1:]
        ])
        assert np.allclose(computed, sidecar, rtol=1e-5)

    def test_pairwise_metric_csv(self, flow_dir, tmp_path):
        out = tmp_path / "jsd.csv"
        assert run_cli(["metrics", "--input", str(flow_dir / "trajectory.antt"),
                        "--metric", "jsd", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 31
        assert float(lines[1].split(",")[1]) == 0.0  # no predecessor at t=0


class TestSelectCommand:
    def test_flows_selection_outputs(self, flow_dir, tmp_path):
        out = tmp_path / "sel"
        assert run_cli(["select", "--input", str(flow_dir / "trajectory.antt"),
                        "--mode", "flows", "--window", "4", "--out", str(out)]) == 0
        payload = json.loads((out / "selection.json").read_text())
        assert payload["indices"][0] == 0
        assert payload["indices"][-1] == 29
        assert 0 < payload["retention"] <= 1
        csv_lines = (out / "selection.csv").read_text().splitlines()
        assert csv_lines[0] == "index,stride"
        assert len(csv_lines) == len(payload["indices"]) + 1

    def test_surge_on_activity_csv(self, tmp_path):
        assert run_cli(["generate", "--kind", "chirp", "--steps", "300",
                        "--t-merger", "200", "--out", str(tmp_path)]) == 0
        out = tmp_path / "sel"
        assert run_cli(["select", "--mode", "surge",
                        "--activity", str(tmp_path / "activity.csv"),
                        "--out", str(out)]) == 0
        payload = json.loads((out / "selection.json").read_text())
        assert payload["total"] == 300

    def test_binary_needs_activity_or_input(self, tmp_path, capsys):
        assert run_cli(["select", "--mode", "binary", "--out", str(tmp_path / "x")]) == 1

    def test_baseline_requires_metric(self, flow_dir, tmp_path):
        code = run_cli(["select", "--input", str(flow_dir / "trajectory.antt"),
                        "--mode", "baseline", "--out", str(tmp_path / "x")])
        assert code == 1


class TestCompressReconstructReport:
    @pytest.fixture(scope="class")
    def compressed(self, flow_dir, tmp_path_factory):
        out = tmp_path_factory.mktemp("run")
        code = run_cli(
            COMPRESS_FAST
            + ["--input", str(flow_dir / "trajectory.antt"), "--out", str(out)]
        )
        assert code == 0
        return out

    def test_report_files_written(self, compressed):
        report = json.loads((compressed / "report.json").read_text())
        assert 0 < report["compression"]["tr"] <= 1
        assert report["compression"]["tc_naive"] > 0
        assert (compressed / "report.csv").exists()
        assert (compressed / "chain.json").exists()
        chain = json.loads((compressed / "chain.json").read_text())
        for rec in chain["records"]:
            assert (compressed / rec["file"]).exists()

    def test_reconstruct_roundtrip(self, compressed, flow_dir, tmp_path):
        report = json.loads((compressed / "report.json").read_text())
        indices = report["selection"]["indices"][:2]
        out = tmp_path / "recon"
        code = run_cli(["reconstruct", "--chain", str(compressed),
                        "--indices", ",".join(str(i) for i in indices),
                        "--out", str(out)])
        assert code == 0
        files = sorted(out.glob("snapshot_*.antc"))
        assert len(files) == len(indices)
        with open(files[0], "rb") as fh:
            snap = read_snapshot(fh)
        assert snap.timestep_index == indices[0]
        assert snap.shape == (32, 32)

    def test_report_merges_runs_and_renders_figures(self, compressed, tmp_path):
        out = tmp_path / "merged"
        code = run_cli(["report", "--inputs", str(compressed / "report.json"),
                        "--labels", "full-ft", "--out", str(out)])
        assert code == 0
        pareto = (out / "pareto.csv").read_text().splitlines()
        assert pareto[0].startswith("label,mem_kib_per_snapshot,mean_rel_l2")
        assert pareto[1].startswith("full-ft,")
        assert (out / "pareto.png").exists()
        assert (out / "selection_full-ft.png").exists()
        assert (out / "fidelity_full-ft.png").exists()

    def test_report_no_figures_flag(self, compressed, tmp_path):
        out = tmp_path / "nofigs"
        code = run_cli(["report", "--inputs", str(compressed / "report.json"),
                        "--no-figures", "--out", str(out)])
        assert code == 0
        assert (out / "pareto.csv").exists()
        assert not list(out.glob("*.png"))

    def test_config_file_with_flag_override(self, flow_dir, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({
            "mode": "full", "epochs": 4, "hidden": 16, "layers": 2,
            "ffm_dim": 16, "window": 3,
        }))
        out = tmp_path / "run"
        code = run_cli(["compress", "--input", str(flow_dir / "trajectory.antt"),
                        "--config", str(cfg_file), "--epochs", "2",
                        "--out", str(out)])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert all(row["epochs"] == 2 for row in report["fidelity"])  # flag wins

    def test_compress_deterministic_modulo_timing(self, flow_dir, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert run_cli(
                COMPRESS_FAST
                + ["--input", str(flow_dir / "trajectory.antt"), "--out", str(out)]
            ) == 0
            outs.append(out)
        a, b = outs
        for f in sorted(a.glob("*.antw")):
            assert f.read_bytes() == (b / f.name).read_bytes()
        ra = json.loads((a / "report.json").read_text())
        rb = json.loads((b / "report.json").read_text())
        for row in ra["fidelity"] + rb["fidelity"]:
            row.pop("wall_clock_s")
        assert ra == rb
