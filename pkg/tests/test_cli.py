import csv
import json
from pathlib import Path

import numpy as np
import pytest

from hotspot_tensor import cli, simlab
from hotspot_tensor.io import ingest_csv, load_config
from hotspot_tensor.states import STATES

GOLDEN = Path(__file__).parent / "golden"
SMALL = ["--n1", "6", "--n2", "8"]
# window 1 keeps the in-control statistic iid across years, and two grid
# pairs keep a year cheap enough for long in-control runs
SMALL_CFG = {
    "lambda1_factors": [0.05],
    "lambda2_factors": [0.5, 2.5],
    "window": 1,
    "target_arl0": 20,
    "bandwidth": 800.0,
    "weeks_kept": None,
    "reps": 1000,
    "calibration_reps": 5000,
    "seed": 5,
}


def _header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def _golden_header(name):
    return _header(GOLDEN / name)


def _golden_keys(name):
    return json.loads((GOLDEN / name).read_text())


def _read_values(path, shape):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = np.full(shape, np.nan)
    labels = [s[0] for s in STATES[: shape[0]]]
    for r in rows:
        out[labels.index(r["unit"]), int(r["week"]) - 1, int(r["year"]) - 1] = float(r["value"])
    return out


def _simulate(tmp, name, *flags):
    code = cli.main(["simulate", *flags, "--out-dir", str(tmp), "--out", name])
    assert code == 0
    return str(tmp / name)


@pytest.fixture(scope="module")
def small_calibration(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cal")
    cfg_path = tmp / "cfg.json"
    cfg_path.write_text(json.dumps(SMALL_CFG))
    # a long in-control record keeps the estimated background close to the truth
    data = _simulate(tmp, "ic.csv", *SMALL, "--T", "500", "--tau", "500", "--delta", "0",
                     "--hot-states", "AL", "--hot-weeks", "1", "--seed", "1")
    out = tmp / "out"
    assert cli.main(["calibrate", "--config", str(cfg_path), "--data", data, "--out-dir", str(out)]) == 0
    return cfg_path, out / "calibration.json"


# --- exit codes ---------------------------------------------------------------


@pytest.mark.parametrize(
    "argv",
    [[], ["nope"], ["fit", "--bogus"], ["fit"], ["simulate", "--n1", "x"], ["monitor", "--data", __file__]],
)
def test_usage_errors_exit_1(argv, tmp_path, capsys):
    assert cli.main(argv + (["--out-dir", str(tmp_path / "o")] if argv[:1] == ["fit"] else [])) == 1
    assert capsys.readouterr().err


def test_unknown_config_key_exits_1(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"lamda1": 1}')
    assert cli.main(["fit", "--config", str(cfg)]) == 1


def test_missing_input_exits_2_without_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["fit", "--data", str(tmp_path / "none.csv"), "--out-dir", str(out)]) == 2
    assert "does not exist" in capsys.readouterr().err
    assert not out.exists()


def test_malformed_input_exits_2(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("unit,year,week,count\nAL,1,1,1\nAL,1,1,2\n")
    assert cli.main(["fit", "--data", str(bad), "--out-dir", str(tmp_path)]) == 2


def test_numerical_failure_exits_3_and_cleans_up(tmp_path):
    data = _simulate(tmp_path, "ic.csv", *SMALL, "--T", "4", "--tau", "4", "--delta", "0",
                     "--hot-states", "AL", "--hot-weeks", "1")
    out = tmp_path / "out"
    # an allowance this large keeps the chart at zero, so no limit reaches any target
    argv = ["calibrate", "--data", data, "--weeks-kept", "all", "--bandwidth", "800", "--d", "1e6",
            "--target-arl0", "20", "--calibration-reps", "50", "--out-dir", str(out)]
    assert cli.main(argv) == 3
    assert not out.exists()


def test_partial_outputs_removed_on_failure(tmp_path, small_calibration, monkeypatch):
    cfg_path, cal = small_calibration
    data = _simulate(tmp_path, "s.csv", *SMALL, "--T", "2", "--tau", "1", "--delta", "0.5",
                     "--hot-states", "AL", "--hot-weeks", "1-3", "--seed", "3")

    def refuse(path, doc):
        raise OSError("disk full")

    monkeypatch.setattr(cli, "write_json", refuse)
    out = tmp_path / "out"
    argv = ["monitor", "--config", str(cfg_path), "--data", data, "--calibration", str(cal), "--out-dir", str(out)]
    assert cli.main(argv) == 2
    assert not out.exists()


# --- subcommands ----------------------------------------------------------------


def test_fit_total_shrinkage_writes_zero_hotspots(tmp_path):
    data = _simulate(tmp_path, "s.csv", *SMALL, "--T", "3", "--tau", "2", "--delta", "1",
                     "--hot-states", "AL", "--hot-weeks", "1-3")
    out = tmp_path / "fit"
    argv = ["fit", "--data", data, "--weeks-kept", "all", "--bandwidth", "800",
            "--lambda1", "1e6", "--lambda2", "0.1", "--out-dir", str(out)]
    assert cli.main(argv) == 0
    theta = _read_values(out / "theta_h.csv", (6, 8, 3))
    np.testing.assert_array_equal(theta, 0.0)
    resid = _read_values(out / "residual.csv", (6, 8, 3))
    y, *_ = ingest_csv(data, weeks_kept=None)
    assert np.linalg.norm(resid) <= np.linalg.norm(y)
    for name in ("theta_h.csv", "residual.csv"):
        assert _header(out / name) == _golden_header("fit_tensor.csv")
    doc = json.loads((out / "objective.json").read_text())
    assert list(doc) == _golden_keys("objective.json")
    assert doc["lambda1"] == 1e6 and doc["objective"] == pytest.approx(np.sum(resid**2), rel=1e-12)


def test_calibration_document_schema(small_calibration):
    cfg_path, cal = small_calibration
    doc = json.loads(cal.read_text())
    assert list(doc) == _golden_keys("calibration.json")
    assert doc["window"] == 1 and doc["target_arl0"] == 20 and len(doc["grid"]) == 2
    assert doc["L"] > 0 and doc["labels"] == [s[0] for s in STATES[:6]]


def test_simulate_then_monitor_matches_in_memory_run(tmp_path, small_calibration):
    cfg_path, cal = small_calibration
    flags = [*SMALL, "--T", "6", "--tau", "3", "--delta", "0.5", "--hot-states", "AL,AZ",
             "--hot-weeks", "1-3", "--seed", "8"]
    data = _simulate(tmp_path, "s.csv", *flags)
    out = tmp_path / "mon"
    argv = ["monitor", "--config", str(cfg_path), "--data", data, "--calibration", str(cal),
            "--chart-all", "--out-dir", str(out)]
    assert cli.main(argv) == 0

    sim = simlab.SimConfig(n1=6, n2=8, T=6, tau=3, delta=0.5, seed=8,
                           hot_cells=tuple((i, w) for i in (1, 3) for w in (1, 2, 3)))
    y = simlab.generate(sim)
    cfg = load_config(cfg_path, {"stop_at_signal": False})
    doc, stats, cusum = cli.load_calibration(str(cal))
    res = cli.run_monitor(y, [s[0] for s in STATES[:6]], cfg, doc, stats, cusum)

    assert _header(out / "cusum.csv") == _golden_header("cusum.csv")
    with open(out / "cusum.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(res.state.history) == 6
    for row, (t, p_tilde, _, w) in zip(rows, res.state.history):
        assert int(row["t"]) == t
        assert float(row["p_tilde"]) == p_tilde and float(row["W"]) == w
        assert float(row["limit"]) == cusum.L_limit

    det = json.loads((out / "detection.json").read_text())
    assert list(det) == _golden_keys("detection.json")
    assert res.t_star is not None and det["t_star"] == res.t_star
    assert det["t_star_label"] == res.t_star
    assert [det["winner_lambda1"], det["winner_lambda2"]] == list(res.winner)
    assert _header(det["cells_path"]) == _golden_header("hotspots.csv")
    hot = json.loads((out / "hotspots.json").read_text())
    assert list(hot) == _golden_keys("hotspots.json")
    assert hot["t_star"] == res.t_star
    mags = [c["magnitude"] for c in hot["cells"]]
    assert mags == sorted(mags, reverse=True) and all(m > hot["threshold"] for m in mags)


def test_calibrated_chart_holds_arl0_on_in_control_runs(small_calibration):
    cfg_path, cal = small_calibration
    cfg = load_config(cfg_path)
    doc, stats, cusum = cli.load_calibration(str(cal))
    sim = simlab.SimConfig(n1=6, n2=8, T=400, tau=400, delta=0.0, hot_cells=((1, 1),), seed=1)
    background = simlab._background(sim, simlab._streams(1)[0])
    labels = [s[0] for s in STATES[:6]]
    runs = []
    for child in np.random.SeedSequence(2024).spawn(100):
        # same in-control process as the calibration record, fresh noise
        y = background[:, :, None] + np.random.default_rng(child).normal(0.0, sim.sigma, (6, 8, 400))
        res = cli.run_monitor(y, labels, cfg, doc, stats, cusum)
        runs.append(400 if res.t_star is None else res.t_star)
    assert 18 <= np.mean(runs) <= 22, np.mean(runs)


def test_benchmark_command_writes_table(tmp_path):
    argv = ["benchmark", *SMALL, "--T", "10", "--tau", "5", "--deltas", "0.5", "1.0", "--reps", "2",
            "--methods", "t2", "--target-arl0", "20", "--draws", "500", "--hot-states", "AL",
            "--hot-weeks", "1-3", "--out-dir", str(tmp_path), "--out", "b.csv"]
    assert cli.main(argv) == 0
    assert _header(tmp_path / "b.csv") == _golden_header("benchmark.csv")
    with open(tmp_path / "b.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["method"], float(r["delta"])) for r in rows] == [("T2", 0.5), ("T2", 1.0)]


def test_benchmark_rejects_unknown_method(tmp_path):
    argv = ["benchmark", *SMALL, "--methods", "lasso", "--hot-states", "AL", "--hot-weeks", "1",
            "--out-dir", str(tmp_path / "b")]
    assert cli.main(argv) == 1
    assert not (tmp_path / "b").exists()


def test_monitor_detects_large_shift_at_full_scale(tmp_path):
    ic = _simulate(tmp_path, "ic.csv", "--T", "13", "--tau", "13", "--delta", "0", "--seed", "1")
    post = _simulate(tmp_path, "post.csv", "--T", "50", "--tau", "1", "--delta", "0.5", "--seed", "2")
    cal = tmp_path / "cal"
    bandwidth = simlab.SimConfig().kernel_bandwidth
    common = ["--weeks-kept", "all", "--bandwidth", repr(bandwidth), "--seed", "3"]
    assert cli.main(["calibrate", "--data", ic, *common, "--calibration-reps", "500", "--out-dir", str(cal)]) == 0
    out = tmp_path / "mon"
    argv = ["monitor", "--data", post, *common, "--calibration", str(cal / "calibration.json"), "--out-dir", str(out)]
    assert cli.main(argv) == 0
    det = json.loads((out / "detection.json").read_text())
    assert det["t_star"] == 1


def test_fit_accepts_distance_matrix_file(tmp_path):
    data = _simulate(tmp_path, "s.csv", "--n1", "3", "--n2", "4", "--T", "2", "--tau", "2", "--delta", "1",
                     "--hot-states", "AL", "--hot-weeks", "1")
    dist = tmp_path / "dist.csv"
    dist.write_text("AZ,AK,AL\n0,500,300\n500,0,400\n300,400,0\n")
    out = tmp_path / "fit"
    argv = ["fit", "--data", data, "--distances", str(dist), "--weeks-kept", "all", "--bandwidth", "400",
            "--out-dir", str(out)]
    assert cli.main(argv) == 0
    assert json.loads((out / "objective.json").read_text())["bandwidth"] == 400.0
    dist.write_text("AZ,AK\n0,5\n5,0\n")
    assert cli.main(argv) == 2
