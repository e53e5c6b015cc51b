"""Command-line interface: ``neuroddaf <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 5 theory-suite failure. Failures print one line to stderr of the
form ``error[<CODE>]: <message>``.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import theory
from .baselines import StationLinearRegression, persistence
from .config import ConfigError, override, parse_config_text, serialize_config
from .dataio import (FLOAT_FMT, DataError, build_windows, classify_regimes, ensure_dir,
                     impute, ingest_csv, mae_rmse, read_forecast_csv, read_stations,
                     split_bounds, synth_generate, window_and_split, write_forecast_csv,
                     write_series_csv, write_stations)
from .fusion import normal_quantile
from .graphnet import build_graph
from .model import NeuroDDAF
from .odecore import SolverError
from .train import fit_variance_scale, load_checkpoint, save_checkpoint, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER, EXIT_THEORY = 0, 2, 3, 4, 5


class TheoryFailure(RuntimeError):
    pass


# ------------------------------------------------------------------ helpers

def resolve_seed(arg_seed, cfg_seed):
    if arg_seed is not None:
        return arg_seed
    env = os.environ.get("NEURODDAF_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"NEURODDAF_SEED must be an integer, got {env!r}") from None
    return cfg_seed


def load_config(args):
    """Config file, then ``--set`` overrides, then ``--seed`` / NEURODDAF_SEED."""
    text = ""
    if getattr(args, "config", None):
        cfg_path = Path(args.config)
        if not cfg_path.is_file():
            raise ConfigError(f"config file not found: {cfg_path}")
        text = cfg_path.read_text()
        parse_config_text(text)
    for item in getattr(args, "set", None) or []:
        text += f"\n{item}"
    cfg = parse_config_text(text)
    return override(cfg, seed=resolve_seed(getattr(args, "seed", None), cfg.seed))


def echo_config(cfg, out_dir):
    path = Path(out_dir) / "effective_config.txt"
    path.write_text(serialize_config(cfg))
    return path


def load_series(series_path, stations_path):
    stations = read_stations(stations_path)
    table = ingest_csv(series_path, stations)
    return impute(table), stations


def make_graph(stations, cfg):
    return build_graph(stations, cfg.length_scale, cfg.cutoff, speed_ref=cfg.speed_ref,
                       mixing_gain=cfg.mixing_gain)


def _out_parent(path):
    parent = Path(path).resolve().parent
    parent.mkdir(parents=True, exist_ok=True)
    return parent


# ----------------------------------------------------------------- commands

def cmd_ingest(args):
    table, stations = load_series(args.series, args.stations)
    out = ensure_dir(args.out)
    write_series_csv(out / "series.csv", table)
    write_stations(out / "stations.csv", stations)
    n_imp = int(table.extras.get("imputed", np.zeros(1, bool)).sum())
    print(f"stations={table.n_stations} steps={table.n_times} imputed={n_imp}")
    return EXIT_OK


def cmd_simulate(args):
    seed = resolve_seed(args.seed, 0)
    table = synth_generate(args.stations, args.steps, D=args.D, wind_pattern=args.wind_pattern,
                           noise_std=args.noise, seed=seed, advection_scale=args.advection,
                           relaxation=args.relaxation, source_scale=args.source_scale,
                           pulse_rate=args.pulse_rate, pulse_scale=args.pulse_scale,
                           wind_speed=args.wind_speed, substeps=args.substeps)
    out = ensure_dir(args.out)
    write_series_csv(out / "series.csv", table)
    write_stations(out / "stations.csv", table.stations)
    names = {0: "calm", 1: "windy", 2: "transition"}
    with open(out / "regimes_truth.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "regime"])
        for ts, lab in zip(table.timestamps, table.extras["regime"]):
            w.writerow([str(ts), names[int(lab)]])
    print(f"wrote {table.n_times} steps x {table.n_stations} stations to {out}")
    return EXIT_OK


def _datasets(table, cfg):
    return window_and_split(table, cfg.T, cfg.tau, cfg.fractions, cfg.train_stride)


def cmd_train(args):
    cfg = load_config(args)
    table, stations = load_series(args.series, args.stations)
    train_set, val_set, test_set = _datasets(table, cfg)
    model = NeuroDDAF(cfg.model_config(), make_graph(stations, cfg), seed=cfg.seed)
    out = ensure_dir(args.out)
    echo_config(cfg, out)
    log = None
    if not args.quiet:
        def log(row):
            print(f"epoch {row['epoch']:3d} lr {row['lr']:.2e} train {row['train_loss']:.5f} "
                  f"val {row['val_loss']:.5f} val_mae {row['val_mae']:.4f}", flush=True)
    model, hist = train(model, train_set, val_set, cfg.train_config(), log=log)
    if cfg.calibrate_intervals:
        model.var_scale = fit_variance_scale(model, val_set, cfg.interval_level, cfg.seed)
    save_checkpoint(out / "checkpoint.npz", model)
    hist.write_csv(out / "history.csv")
    print(f"best epoch {hist.best_epoch}, stopped at {hist.stop_epoch}; "
          f"variance scale {model.var_scale:.4g}; checkpoint {out / 'checkpoint.npz'}")
    return EXIT_OK


def forecast_arrays(model, table, cfg, split="test", seed=0):
    """Original-unit forecast arrays keyed like the forecast CSV columns.

    ``split='test'`` uses non-overlapping origins in the test segment;
    ``split='future'`` forecasts the ``tau`` steps after the series ends.
    """
    train_set, _, _ = _datasets(table, cfg)
    stats = train_set.stats
    if split == "test":
        a, b = split_bounds(table.n_times, cfg.fractions)[2]
        ds = build_windows(table, cfg.T, cfg.tau, a, b, stats, stride=cfg.tau)
        X = ds.X
        origins = ds.origins
    elif split == "future":
        feats = table.features()[-cfg.T:]
        X = feats[None].copy()
        X[..., 0] = stats.normalize(X[..., 0])
        origins = np.array([table.n_times - 1])
    else:
        raise ConfigError(f"unknown forecast split {split!r}")
    pred = model.predict(X, cfg.tau, seed=seed)
    q = normal_quantile(0.5 * (1.0 + cfg.interval_level))
    mean = stats.denormalize(pred["mean"])[..., 0]  # (n, tau, N)
    v_epi = stats.denormalize_var(pred["var_epistemic"])[..., 0]
    v_ale = stats.denormalize_var(pred["var_aleatoric"])[..., 0]
    half = q * np.sqrt(v_epi + v_ale)
    step = table.timestamps[1] - table.timestamps[0]
    stamps = np.concatenate([table.timestamps[0] + step * (o + 1 + np.arange(cfg.tau))
                             for o in origins])
    flat = lambda x: x.reshape(-1, x.shape[-1])  # noqa: E731
    return stamps, {"mean": flat(mean), "lower": flat(mean - half), "upper": flat(mean + half),
                    "var_epistemic": flat(v_epi), "var_aleatoric": flat(v_ale)}


def cmd_forecast(args):
    cfg = load_config(args)
    table, stations = load_series(args.series, args.stations)
    model = NeuroDDAF(cfg.model_config(), make_graph(stations, cfg), seed=cfg.seed)
    load_checkpoint(args.checkpoint, model)
    stamps, cols = forecast_arrays(model, table, cfg, args.split, seed=cfg.seed)
    parent = _out_parent(args.out)
    echo_config(cfg, parent)
    write_forecast_csv(args.out, table.station_ids, stamps, cols["mean"], cols["lower"],
                       cols["upper"], cols["var_epistemic"], cols["var_aleatoric"])
    print(f"wrote {len(stamps)} time steps x {table.n_stations} stations to {args.out}")
    return EXIT_OK


def evaluate_forecast(forecast_path, series_path):
    ids, stamps, cols = read_forecast_csv(forecast_path)
    truth = ingest_csv(series_path)
    t_index = {ts: i for i, ts in enumerate(truth.timestamps.tolist())}
    s_index = {s: j for j, s in enumerate(truth.station_ids)}
    missing = [s for s in ids if s not in s_index]
    if missing:
        raise DataError(f"forecast stations absent from series: {missing}")
    rows = []
    for ts in stamps.tolist():
        if ts not in t_index:
            raise DataError(f"forecast timestamp {ts} absent from series")
        rows.append(t_index[ts])
    y = truth.pm25[np.ix_(rows, [s_index[s] for s in ids])]
    ok = ~np.isnan(y)
    met = mae_rmse(cols["mean"][ok], y[ok])
    cov = float(np.mean((y[ok] >= cols["lower"][ok]) & (y[ok] <= cols["upper"][ok])))
    return met, cov, int(ok.sum())


def cmd_evaluate(args):
    met, cov, n = evaluate_forecast(args.forecast, args.series)
    print(f"{'metric':<10}{'value':>14}")
    print(f"{'mae':<10}{met.mae:>14.6g}")
    print(f"{'rmse':<10}{met.rmse:>14.6g}")
    print(f"{'coverage':<10}{cov:>14.6g}")
    print(f"{'n':<10}{n:>14d}")
    lines = ["metric,value", f"mae,{FLOAT_FMT % met.mae}", f"rmse,{FLOAT_FMT % met.rmse}",
             f"coverage,{FLOAT_FMT % cov}", f"n,{n}"]
    print()
    print("\n".join(lines))
    if args.out:
        _out_parent(args.out)
        Path(args.out).write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_baselines(args):
    cfg = load_config(args)
    table, _ = load_series(args.series, args.stations)
    train_set, _, test_set = _datasets(table, cfg)
    truth = test_set.stats.denormalize(test_set.Y)
    p = mae_rmse(test_set.stats.denormalize(persistence(test_set)), truth)
    lr = StationLinearRegression().fit(train_set)
    r = mae_rmse(test_set.stats.denormalize(lr.predict(test_set)), truth)
    print("model,mae,rmse")
    print(f"persistence,{FLOAT_FMT % p.mae},{FLOAT_FMT % p.rmse}")
    print(f"linear_regression,{FLOAT_FMT % r.mae},{FLOAT_FMT % r.rmse}")
    return EXIT_OK


def cmd_verify_theory(args):
    results = theory.run_all(seed=resolve_seed(args.seed, 0))
    print(theory.format_matrix(results))
    if not all(r.passed for r in results):
        raise TheoryFailure("one or more theory checks failed")
    return EXIT_OK


def cmd_classify_regimes(args):
    table = impute(ingest_csv(args.series))
    labels, counts = classify_regimes(table, args.wind_hi, args.wind_lo, args.grad_hi)
    _out_parent(args.out)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "mean_wind_speed", "pm25_spread", "regime"])
        for t, ts in enumerate(table.timestamps):
            w.writerow([str(ts), FLOAT_FMT % table.wind_speed[t].mean(),
                        FLOAT_FMT % table.pm25[t].std(), labels[t]])
    print("regime,count")
    for k, v in counts.items():
        print(f"{k},{v}")
    return EXIT_OK


def render_svg(stamps, series, title, width=800, height=360):
    """Self-contained line chart: mean line with a shaded interval band."""
    mean, lower, upper = series["mean"], series["lower"], series["upper"]
    pad_l, pad_r, pad_t, pad_b = 60, 20, 30, 40
    n = len(mean)
    lo = float(np.nanmin(lower))
    hi = float(np.nanmax(upper))
    if hi <= lo:
        hi = lo + 1.0
    xs = pad_l + (width - pad_l - pad_r) * (np.arange(n) / max(n - 1, 1))

    def ys(v):
        return pad_t + (height - pad_t - pad_b) * (1 - (np.asarray(v) - lo) / (hi - lo))

    def pts(x, y):
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))

    band = pts(np.concatenate([xs, xs[::-1]]), np.concatenate([ys(upper), ys(lower)[::-1]]))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{title}</text>',
        f'<polygon points="{band}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>',
        f'<polyline points="{pts(xs, ys(mean))}" fill="none" stroke="#08519c" '
        f'stroke-width="1.5"/>',
        f'<line x1="{pad_l}" y1="{height - pad_b}" x2="{width - pad_r}" y2="{height - pad_b}" '
        f'stroke="black"/>',
        f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{height - pad_b}" stroke="black"/>',
    ]
    for frac in (0.0, 0.5, 1.0):
        v = lo + frac * (hi - lo)
        parts.append(f'<text x="{pad_l - 6}" y="{ys(v):.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{v:.4g}</text>')
    for i in sorted({0, n - 1}):
        parts.append(f'<text x="{xs[i]:.1f}" y="{height - pad_b + 16}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{stamps[i]}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(args):
    ids, stamps, cols = read_forecast_csv(args.forecast)
    station = args.station or ids[0]
    if station not in ids:
        raise DataError(f"station {station!r} not in forecast")
    j = ids.index(station)
    sel = {k: cols[k][:, j] for k in ("mean", "lower", "upper")}
    out = Path(args.out)
    _out_parent(out)
    labels = [str(s) for s in stamps]
    out.write_text(render_svg(labels, sel, f"{station} forecast"))
    with open(out.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["station_id", "timestamp", "mean", "lower", "upper"])
        for t, ts in enumerate(labels):
            w.writerow([station, ts] + [FLOAT_FMT % sel[k][t] for k in ("mean", "lower", "upper")])
    print(f"wrote {out} and {out.with_suffix('.csv')}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser():
    p = argparse.ArgumentParser(prog="neuroddaf", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help="cap on BLAS/OpenMP worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key = value run configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
        sp.add_argument("--seed", type=int, default=None)

    def with_data(sp):
        sp.add_argument("--series", required=True)
        sp.add_argument("--stations", required=True)

    sp = sub.add_parser("ingest", help="validate, sort and impute input CSVs")
    with_data(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("simulate", help="generate a synthetic transport dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--stations", type=int, default=10)
    sp.add_argument("--steps", type=int, default=4000)
    sp.add_argument("--D", type=float, default=0.2)
    sp.add_argument("--wind-pattern", default="rotating",
                    choices=["constant", "rotating", "regimes"])
    sp.add_argument("--wind-speed", type=float, default=6.0)
    sp.add_argument("--advection", type=float, default=0.3)
    sp.add_argument("--noise", type=float, default=1.0)
    sp.add_argument("--relaxation", type=float, default=0.05)
    sp.add_argument("--source-scale", type=float, default=2.0)
    sp.add_argument("--pulse-rate", type=float, default=0.02)
    sp.add_argument("--pulse-scale", type=float, default=20.0)
    sp.add_argument("--substeps", type=int, default=1,
                    help="Euler substeps per observation interval")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train", help="fit the model; writes checkpoint and history")
    with_data(sp)
    with_config(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("forecast", help="write a forecast CSV with intervals")
    with_data(sp)
    with_config(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", default="test", choices=["test", "future"])
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_forecast)

    sp = sub.add_parser("evaluate", help="score a forecast CSV against observations")
    sp.add_argument("--forecast", required=True)
    sp.add_argument("--series", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("baselines", help="persistence and per-station regression scores")
    with_data(sp)
    with_config(sp)
    sp.set_defaults(func=cmd_baselines)

    sp = sub.add_parser("verify-theory", help="run the theory property suite")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_verify_theory)

    sp = sub.add_parser("classify-regimes", help="label time steps by transport regime")
    sp.add_argument("--series", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--wind-hi", type=float, default=None)
    sp.add_argument("--wind-lo", type=float, default=None)
    sp.add_argument("--grad-hi", type=float, default=None)
    sp.set_defaults(func=cmd_classify_regimes)

    sp = sub.add_parser("plot", help="line-chart SVG (plus CSV) for one station")
    sp.add_argument("--forecast", required=True)
    sp.add_argument("--station")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_plot)
    return p


def _fail(code, tag, exc):
    msg = " ".join(str(exc).split())
    print(f"error[{tag}]: {msg}", file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    limiter = contextlib.nullcontext()
    if args.threads is not None:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=max(1, args.threads))
    try:
        with limiter:
            return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "CONFIG", exc)
    except (DataError, FileNotFoundError) as exc:
        return _fail(EXIT_DATA, "DATA", exc)
    except (SolverError, FloatingPointError) as exc:
        return _fail(EXIT_SOLVER, "SOLVER", exc)
    except TheoryFailure as exc:
        return _fail(EXIT_THEORY, "THEORY", exc)


if __name__ == "__main__":
    sys.exit(main())
