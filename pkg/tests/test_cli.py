import json

import numpy as np
import pytest

from allocshift import demo_cohort_path, write_cohort
from allocshift.cli import main
from allocshift.reporting import read_curve_csv, read_matrix_csv
from conftest import make_cohort, make_pool


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Tiny cohort + table predictor on disk, shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    pools = [make_pool("a", [1.0, 0.0]), make_pool("b", [0.0, 1.0])]
    cohort = make_cohort(pools)
    cohort_path = root / "cohort.json"
    write_cohort(cohort, str(cohort_path))
    predictor_path = root / "scores.csv"
    predictor_path.write_text("id,score\na-0,0.1\na-1,0.2\nb-0,0.3\nb-1,0.4\n")
    return root


def run(argv, capsys=None):
    code = main([str(a) for a in argv])
    if capsys is None:
        return code
    captured = capsys.readouterr()
    return code, captured.out, captured.err


FAST = ["--iters", "3", "--samples", "200", "--samples2", "200",
        "--draw-size", "1", "--workers", "1"]


def find_worst_args(workdir, out, extra=()):
    return ["find-worst", "--cohort", workdir / "cohort.json",
            "--predictor", workdir / "scores.csv",
            "--loss", '{"kind": "misclass_rate"}',
            "--rho-ind", "2.0", "--rho-xi", "1.0",
            *FAST, "--out", out, *extra]


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "allocshift" in capsys.readouterr().out


def test_train_demo_cohort(tmp_path, capsys):
    out = tmp_path / "model.json"
    code, stdout, _ = run(["train", "--cohort", demo_cohort_path("binary"),
                           "--epochs", "40", "--out", out], capsys)
    assert code == 0
    assert "trained logistic" in stdout
    assert out.exists()
    manifest = json.loads((tmp_path / "model.json.manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["config"]["epochs"] == 40
    assert str(out) in manifest["outputs"]


def test_find_worst_outputs_and_manifest(workdir, tmp_path, capsys):
    out = tmp_path / "report.json"
    code, stdout, _ = run(find_worst_args(workdir, out), capsys)
    assert code == 0
    assert "worst-case expected decision loss" in stdout
    report = json.loads(out.read_text())
    assert 0.0 <= report["value"] <= 1.0
    trace = tmp_path / "report_trace.csv"
    assert trace.exists()
    manifest = json.loads((tmp_path / "report.json.manifest.json").read_text())
    assert manifest["command"] == "find-worst"
    assert manifest["config"]["rho_ind"] == 2.0
    assert manifest["config"]["loss"] == {"kind": "misclass_rate", "threshold": 0.5}
    assert set(manifest["outputs"]) == {str(out), str(trace)}
    assert manifest["versions"]["allocshift"]


def test_manifest_rerun_is_byte_identical(workdir, tmp_path):
    out1 = tmp_path / "r1.json"
    assert run(find_worst_args(workdir, out1)) == 0
    manifest = tmp_path / "r1.json.manifest.json"
    out2 = tmp_path / "r2.json"
    assert run(["find-worst", "--config", manifest, "--out", out2]) == 0
    assert out2.read_bytes() == out1.read_bytes()
    assert (tmp_path / "r2_trace.csv").read_bytes() == (tmp_path / "r1_trace.csv").read_bytes()


def test_config_precedence(workdir, tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "cohort": str(workdir / "cohort.json"),
        "predictor": str(workdir / "scores.csv"),
        "loss": {"kind": "misclass_rate"},
        "rho_ind": 2.0, "rho_xi": 1.0, "iters": 3, "samples": 200,
        "samples2": 200, "draw_size": 1, "workers": 1, "seed": 0,
    }))
    out1 = tmp_path / "seed0.json"
    assert run(["find-worst", "--config", config, "--out", out1]) == 0
    # explicit flag overrides the config file value
    out2 = tmp_path / "seed9.json"
    assert run(["find-worst", "--config", config, "--seed", "9", "--out", out2]) == 0
    m2 = json.loads((tmp_path / "seed9.json.manifest.json").read_text())
    assert m2["seed"] == 9
    assert json.loads(out1.read_text())["params"]["seed"] == 0
    assert json.loads(out2.read_text())["params"]["seed"] == 9


def test_evaluate_and_heatmap(workdir, tmp_path, capsys):
    report = tmp_path / "report.json"
    assert run(find_worst_args(workdir, report)) == 0
    matrix = tmp_path / "matrix.csv"
    heat = tmp_path / "matrix.svg"
    code, stdout, _ = run(["evaluate", "--cohort", workdir / "cohort.json",
                           "--predictor", workdir / "scores.csv",
                           "--report", report,
                           "--metrics", '[{"kind": "misclass_rate"}, {"kind": "top_k", "k": 1}]',
                           "--eval-instances", "20", "--eval-problems", "30",
                           "--draw-size", "1", "--heatmap", heat,
                           "--out", matrix], capsys)
    assert code == 0
    mat = read_matrix_csv(str(matrix))
    assert mat.row_metrics == ["misclass_rate"]
    assert mat.col_metrics == ["misclass_rate", "top_k"]
    assert heat.read_text().startswith("<svg")
    assert "misclass_rate" in stdout
    manifest = json.loads((tmp_path / "matrix.csv.manifest.json").read_text())
    assert set(manifest["outputs"]) == {str(matrix), str(heat)}


def test_evaluate_default_metrics_are_report_losses(workdir, tmp_path):
    report = tmp_path / "report.json"
    assert run(find_worst_args(workdir, report)) == 0
    matrix = tmp_path / "matrix.csv"
    assert run(["evaluate", "--cohort", workdir / "cohort.json",
                "--predictor", workdir / "scores.csv", "--report", report,
                "--eval-instances", "10", "--eval-problems", "20",
                "--draw-size", "1", "--out", matrix]) == 0
    mat = read_matrix_csv(str(matrix))
    assert mat.col_metrics == ["misclass_rate"]


def test_oracle_subcommand(workdir, tmp_path, capsys):
    out = tmp_path / "oracle.json"
    code, stdout, _ = run(["oracle", "--cohort", workdir / "cohort.json",
                           "--predictor", workdir / "scores.csv",
                           "--loss", '{"kind": "misclass_rate"}',
                           "--rho-ind", "2.0", "--draw-size", "1",
                           "--restarts", "5", "--out", out], capsys)
    assert code == 0
    payload = json.loads(out.read_text())
    assert [inst["id"] for inst in payload["instances"]] == ["a", "b"]
    # each pool has one misclassified member reachable inside the ball
    for inst in payload["instances"]:
        assert inst["value"] == pytest.approx(1.0, abs=1e-6)
    assert "oracle expected decision loss" in stdout


def test_fig2_subcommand(workdir, tmp_path, capsys):
    out = tmp_path / "curve.csv"
    code, stdout, _ = run(["fig2", "--cohort", workdir / "cohort.json",
                           "--predictor", workdir / "scores.csv",
                           "--loss", '{"kind": "misclass_rate"}',
                           "--rho-ind", "2.0", "--grid", "20,80",
                           "--iters", "3", "--draw-size", "1",
                           "--restarts", "4", "--out", out], capsys)
    assert code == 0
    curve = read_curve_csv(str(out))
    assert curve.grid == [20, 80]
    assert (curve.ratios <= 1.0 + 1e-6).all()
    assert "num_samples 20" in stdout


def test_report_subcommand(workdir, tmp_path, capsys):
    report = tmp_path / "report.json"
    assert run(find_worst_args(workdir, report)) == 0
    matrix = tmp_path / "matrix.csv"
    assert run(["evaluate", "--cohort", workdir / "cohort.json",
                "--predictor", workdir / "scores.csv", "--report", report,
                "--metrics", '{"kind": "misclass_rate"}',
                "--eval-instances", "10", "--eval-problems", "20",
                "--draw-size", "1", "--out", matrix]) == 0
    heat = tmp_path / "again.svg"
    code, stdout, _ = run(["report", "--matrix", matrix, "--heatmap", heat], capsys)
    assert code == 0
    assert heat.exists()
    trace_out = tmp_path / "trace_again.csv"
    code, stdout, _ = run(["report", "--report", report, "--trace", trace_out], capsys)
    assert code == 0
    assert "worst-case expected decision loss" in stdout
    assert trace_out.read_bytes() == (tmp_path / "report_trace.csv").read_bytes()


def test_exit_code_config_errors(workdir, tmp_path, capsys):
    # missing required flag
    code, _, err = run(["find-worst", "--predictor", workdir / "scores.csv",
                        "--loss", '{"kind": "misclass_rate"}',
                        "--out", tmp_path / "x.json"], capsys)
    assert code == 2 and "--cohort" in err
    # negative radius names the offending knob
    code, _, err = run(find_worst_args(workdir, tmp_path / "y.json",
                                       extra=["--rho-ind", "-1.0"]), capsys)
    assert code == 2 and "rho_ind" in err
    # nonexistent cohort file
    code, _, err = run(["find-worst", "--cohort", tmp_path / "missing.json",
                        "--predictor", workdir / "scores.csv",
                        "--loss", '{"kind": "misclass_rate"}',
                        "--out", tmp_path / "z.json"], capsys)
    assert code == 2 and "not found" in err
    # unknown loss kind
    code, _, err = run(["find-worst", "--cohort", workdir / "cohort.json",
                        "--predictor", workdir / "scores.csv",
                        "--loss", '{"kind": "nope"}',
                        "--out", tmp_path / "w.json"], capsys)
    assert code == 2 and "nope" in err


def test_exit_code_data_error(workdir, tmp_path, capsys):
    bad = tmp_path / "dup.json"
    raw = json.loads((workdir / "cohort.json").read_text())
    raw["pools"][1]["instance_id"] = raw["pools"][0]["instance_id"]
    bad.write_text(json.dumps(raw))
    code, _, err = run(["find-worst", "--cohort", bad,
                        "--predictor", workdir / "scores.csv",
                        "--loss", '{"kind": "misclass_rate"}',
                        *FAST, "--out", tmp_path / "x.json"], capsys)
    assert code == 3 and "duplicate" in err


def test_exit_code_numerical_error(tmp_path, capsys):
    # 40 individuals drawn 40 at a time: the enumeration cap trips
    pool = make_pool("big", [0.0, 1.0] * 20)
    cohort = make_cohort([pool])
    cohort_path = tmp_path / "big.json"
    write_cohort(cohort, str(cohort_path))
    scores = tmp_path / "scores.csv"
    scores.write_text("id,score\n" + "".join(f"big-{i},0.5\n" for i in range(40)))
    code, _, err = run(["oracle", "--cohort", cohort_path, "--predictor", scores,
                        "--loss", '{"kind": "misclass_rate"}',
                        "--out", tmp_path / "o.json"], capsys)
    assert code == 4 and "enumeration" in err


def test_config_file_must_be_object(tmp_path, capsys):
    bad = tmp_path / "conf.json"
    bad.write_text("[1, 2]")
    code, _, err = run(["train", "--config", bad, "--cohort", demo_cohort_path(),
                        "--out", tmp_path / "m.json"], capsys)
    assert code == 2 and "top level" in err
