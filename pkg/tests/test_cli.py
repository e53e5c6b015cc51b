import csv

import numpy as np
import pytest

from neuroddaf.cli import main, render_svg
from neuroddaf.dataio import read_forecast_csv

TINY = ["--set", "T=6", "--set", "tau=3", "--set", "hidden=6", "--set", "gat_dim=2",
        "--set", "latent_dim=2", "--set", "phi_hidden=4", "--set", "fusion_hidden=4",
        "--set", "modes=2", "--set", "train_stride=8", "--set", "batch_size=16"]


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    code = main(["simulate", "--out", str(out), "--stations", "4", "--steps", "300",
                 "--wind-pattern", "regimes", "--seed", "3"])
    assert code == 0
    return out


def data_args(sim):
    return ["--series", str(sim / "series.csv"), "--stations", str(sim / "stations.csv")]


@pytest.fixture(scope="module")
def trained(sim, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", *data_args(sim), *TINY, "--set", "max_epochs=1", "--seed", "2",
                 "--quiet", "--out", str(out)])
    assert code == 0
    return out


def test_simulate_outputs(sim):
    assert (sim / "series.csv").read_text().startswith(
        "station_id,timestamp,pm25,wind_speed,wind_direction\n")
    rows = list(csv.reader(open(sim / "regimes_truth.csv")))
    assert rows[0] == ["timestamp", "regime"] and len(rows) == 301


def test_simulate_reproducible(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--out", str(tmp_path / d), "--stations", "3", "--steps",
                     "50", "--seed", "9"]) == 0
    assert (tmp_path / "a/series.csv").read_bytes() == (tmp_path / "b/series.csv").read_bytes()


def test_ingest(sim, tmp_path, capsys):
    assert main(["ingest", *data_args(sim), "--out", str(tmp_path)]) == 0
    assert "stations=4 steps=300 imputed=0" in capsys.readouterr().out


def test_train_writes_artifacts(trained):
    assert (trained / "checkpoint.npz").is_file()
    hist = (trained / "history.csv").read_text().splitlines()
    assert hist[0] == "epoch,lr,train_loss,val_loss,val_mae,val_rmse"
    assert len(hist) == 2
    echo = (trained / "effective_config.txt").read_text()
    assert "seed = 2" in echo and "T = 6" in echo


def test_train_reproducible(sim, trained, tmp_path):
    assert main(["train", *data_args(sim), *TINY, "--set", "max_epochs=1", "--seed", "2",
                 "--quiet", "--out", str(tmp_path)]) == 0
    for name in ("history.csv", "checkpoint.npz"):
        assert (tmp_path / name).read_bytes() == (trained / name).read_bytes()


def test_seed_from_environment(sim, trained, tmp_path, monkeypatch):
    monkeypatch.setenv("NEURODDAF_SEED", "2")
    assert main(["train", *data_args(sim), *TINY, "--set", "max_epochs=1", "--quiet",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "checkpoint.npz").read_bytes() == \
        (trained / "checkpoint.npz").read_bytes()


def test_forecast_evaluate_plot(sim, trained, tmp_path, capsys):
    fc = tmp_path / "fc.csv"
    assert main(["forecast", *data_args(sim), *TINY, "--seed", "2", "--checkpoint",
                 str(trained / "checkpoint.npz"), "--out", str(fc)]) == 0
    ids, stamps, cols = read_forecast_csv(fc)
    assert len(ids) == 4
    assert np.all(cols["lower"] <= cols["mean"]) and np.all(cols["mean"] <= cols["upper"])
    capsys.readouterr()
    assert main(["evaluate", "--forecast", str(fc), "--series", str(sim / "series.csv"),
                 "--out", str(tmp_path / "m.csv")]) == 0
    text = capsys.readouterr().out
    assert "coverage" in text and "mae," in text
    assert (tmp_path / "m.csv").read_text().startswith("metric,value\nmae,")
    svg = tmp_path / "p.svg"
    assert main(["plot", "--forecast", str(fc), "--out", str(svg)]) == 0
    body = svg.read_text()
    assert body.startswith("<svg") and "href" not in body
    assert svg.with_suffix(".csv").is_file()


def test_zero_variance_forecast_collapses_interval(sim, trained, tmp_path):
    fc = tmp_path / "fc.csv"
    args = ["forecast", *data_args(sim), *TINY, "--set", "n_traj=1", "--set", "dropout=0",
            "--set", "aleatoric=false", "--checkpoint", str(trained / "checkpoint.npz"),
            "--out", str(fc)]
    assert main(args) == 0
    _, _, cols = read_forecast_csv(fc)
    assert np.array_equal(cols["lower"], cols["mean"])
    assert np.array_equal(cols["upper"], cols["mean"])


def test_evaluate_perfect_forecast(sim, tmp_path, capsys):
    rows = list(csv.reader(open(sim / "series.csv")))[1:]
    with open(tmp_path / "fc.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["station_id", "timestamp", "mean", "lower", "upper", "var_epistemic",
                    "var_aleatoric"])
        for sid, ts, pm, *_ in rows[:40]:
            w.writerow([sid, ts, pm, pm, pm, 0, 0])
    assert main(["evaluate", "--forecast", str(tmp_path / "fc.csv"), "--series",
                 str(sim / "series.csv")]) == 0
    out = capsys.readouterr().out
    assert "mae,0\n" in out and "rmse,0\n" in out


def test_classify_regimes(sim, tmp_path, capsys):
    out = tmp_path / "labels.csv"
    assert main(["classify-regimes", "--series", str(sim / "series.csv"), "--out",
                 str(out)]) == 0
    text = capsys.readouterr().out
    assert text.startswith("regime,count\n")
    counts = dict(line.split(",") for line in text.strip().splitlines()[1:])
    assert sum(int(v) for v in counts.values()) == 300
    assert set(counts) == {"diffusion", "advection", "other"}


def test_baselines(sim, capsys):
    assert main(["baselines", *data_args(sim), "--set", "T=6", "--set", "tau=3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "model,mae,rmse" and lines[1].startswith("persistence,")


def test_verify_theory_passes(capsys):
    assert main(["--threads", "1", "verify-theory"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS" in out


@pytest.mark.parametrize("argv, code, tag", [
    (["train", "--series", "nope.csv", "--stations", "nope.csv", "--out", "x"], 3, "DATA"),
    (["verify-theory", "--seed", "0"], 0, None),
])
def test_exit_codes(argv, code, tag, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == code
    if tag:
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and err[0].startswith(f"error[{tag}]:")


def test_config_error_exit(sim, tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("K = 0\n")
    assert main(["train", *data_args(sim), "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert capsys.readouterr().err.startswith("error[CONFIG]: line 1: key 'K'")


def test_bad_env_seed(sim, tmp_path, monkeypatch):
    monkeypatch.setenv("NEURODDAF_SEED", "abc")
    assert main(["train", *data_args(sim), "--out", str(tmp_path)]) == 2


def test_solver_failure_exit(sim, tmp_path, capsys):
    argv = ["train", *data_args(sim), *TINY, "--set", "max_steps=1", "--set", "rtol=1e-12",
            "--set", "atol=1e-12", "--set", "max_epochs=1", "--quiet", "--out", str(tmp_path)]
    assert main(argv) == 4
    assert capsys.readouterr().err.startswith("error[SOLVER]:")


def test_render_svg_degenerate_range():
    svg = render_svg(["a", "b"], {"mean": np.ones(2), "lower": np.ones(2),
                                  "upper": np.ones(2)}, "t")
    assert svg.count("<svg") == 1
