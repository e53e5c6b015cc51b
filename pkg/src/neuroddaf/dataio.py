"""Station time series: ingestion, imputation, windowing, synthetic data,
metrics and transport-regime labels.

Wind direction uses the meteorological convention (degrees clockwise from
north, the direction the wind blows from).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .graphnet import (Station, advection_from_wind, build_graph, laplacian_from_weights)

SERIES_HEADER = ["station_id", "timestamp", "pm25", "wind_speed", "wind_direction"]
STATION_HEADER = ["station_id", "lat", "lon"]
FORECAST_HEADER = ["station_id", "timestamp", "mean", "lower", "upper",
                   "var_epistemic", "var_aleatoric"]
STEP = np.timedelta64(3, "h")
IMPUTE_HALF_WIDTH = 4  # +-12 h at 3-hour resolution
FLOAT_FMT = "%.9g"


class DataError(ValueError):
    pass


@dataclass
class SeriesTable:
    """Aligned per-station series; arrays are (n_times, n_stations).

    ``missing`` marks entries with no observation for that station/time
    (any channel). ``extras`` carries optional side information such as the
    generating ground truth of synthetic data.
    """

    station_ids: list
    timestamps: np.ndarray
    pm25: np.ndarray
    wind_speed: np.ndarray
    wind_direction: np.ndarray
    missing: np.ndarray
    stations: list | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.timestamps)
        if n > 1:
            diffs = np.diff(self.timestamps)
            if np.any(diffs <= np.timedelta64(0)) or np.any(diffs != diffs[0]):
                raise DataError("timestamps must be strictly increasing and uniformly spaced")
        for name in ("pm25", "wind_speed", "wind_direction", "missing"):
            arr = getattr(self, name)
            if arr.shape != (n, len(self.station_ids)):
                raise DataError(f"{name} has shape {arr.shape}, expected "
                                f"{(n, len(self.station_ids))}")

    @property
    def n_times(self):
        return len(self.timestamps)

    @property
    def n_stations(self):
        return len(self.station_ids)

    def features(self):
        """(n_times, N, 3): pm25, wind speed, wind direction."""
        return np.stack([self.pm25, self.wind_speed, self.wind_direction], axis=-1)


def _parse_float(text, lineno, col):
    if text.strip() == "":
        return np.nan
    try:
        return float(text)
    except ValueError:
        raise DataError(f"line {lineno}: column {col!r} is not a number: {text!r}") from None


def read_stations(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != STATION_HEADER:
        raise DataError(f"{path}: header must be {','.join(STATION_HEADER)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise DataError(f"line {lineno}: expected 3 fields, got {len(row)}")
        try:
            out.append(Station(row[0], float(row[1]), float(row[2])))
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
    ids = [s.id for s in out]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate station ids")
    return out


def write_stations(path, stations):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATION_HEADER)
        for s in stations:
            w.writerow([s.id, FLOAT_FMT % s.lat, FLOAT_FMT % s.lon])


def ingest_csv(path, stations=None):
    """Parse a series CSV into an aligned :class:`SeriesTable`.

    Rows are sorted by time, duplicates of (station, timestamp) keep the first
    occurrence, and grid points without a row are flagged missing. When
    ``stations`` is given, rows for unknown stations are rejected and the
    column order follows it.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SERIES_HEADER:
            raise DataError(f"{path}: header must be {','.join(SERIES_HEADER)}")
        records = {}
        known = None if stations is None else {s.id for s in stations}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise DataError(f"line {lineno}: expected 5 fields, got {len(row)}")
            sid = row[0]
            if known is not None and sid not in known:
                raise DataError(f"line {lineno}: unknown station {sid!r}")
            try:
                ts = np.datetime64(row[1], "s")
            except ValueError:
                raise DataError(f"line {lineno}: bad timestamp {row[1]!r}") from None
            vals = [_parse_float(row[i], lineno, SERIES_HEADER[i]) for i in (2, 3, 4)]
            if not np.isnan(vals[1]) and vals[1] < 0:
                raise DataError(f"line {lineno}: negative wind speed")
            records.setdefault((sid, ts), vals)

    ids = [s.id for s in stations] if stations is not None else \
        sorted({sid for sid, _ in records})
    if not records:
        empty = np.zeros((0, len(ids)))
        return SeriesTable(ids, np.array([], dtype="datetime64[s]"), empty, empty.copy(),
                           empty.copy(), np.zeros((0, len(ids)), dtype=bool), stations)
    stamps = np.array(sorted({ts for _, ts in records}), dtype="datetime64[s]")
    if len(stamps) > 1:
        step = np.diff(stamps).min()
        if np.all((stamps - stamps[0]) % STEP == np.timedelta64(0)):
            step = STEP
        offsets = (stamps - stamps[0]) / step
        if np.any(offsets != np.round(offsets)):
            raise DataError("timestamps do not lie on a uniform grid")
        grid = stamps[0] + step * np.arange(int(round(offsets[-1])) + 1)
    else:
        grid = stamps
    index = {ts: i for i, ts in enumerate(grid.tolist())}
    col = {sid: j for j, sid in enumerate(ids)}
    arr = np.full((3, len(grid), len(ids)), np.nan)
    for (sid, ts), vals in records.items():
        arr[:, index[ts.tolist()], col[sid]] = vals
    arr[2] = np.where(np.isnan(arr[2]), np.nan, arr[2] % 360.0)
    missing = np.isnan(arr).any(axis=0)
    return SeriesTable(ids, grid, arr[0], arr[1], arr[2], missing, stations)


def write_series_csv(path, table):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        for t, ts in enumerate(table.timestamps):
            stamp = str(np.datetime64(ts, "s"))
            for j, sid in enumerate(table.station_ids):
                vals = (table.pm25[t, j], table.wind_speed[t, j], table.wind_direction[t, j])
                w.writerow([sid, stamp] + ["" if np.isnan(v) else FLOAT_FMT % v for v in vals])


# ----------------------------------------------------------------- imputation

def _window_mean(values, observed, half):
    """Mean of observed values in a centered window, NaN when none."""
    n = len(values)
    v = np.where(observed, values, 0.0)
    cs = np.concatenate([[0.0], np.cumsum(v)])
    cnt = np.concatenate([[0], np.cumsum(observed)])
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) + half + 1, 0, n)
    total, count = cs[hi] - cs[lo], cnt[hi] - cnt[lo]
    return np.divide(total, count, out=np.full(n, np.nan), where=count > 0)


def impute(series, train_fraction=0.7, half_width=IMPUTE_HALF_WIDTH):
    """Fill gaps with a centered moving mean, then the station's training mean.

    Wind direction is averaged on the circle. The returned table has no
    missing entries; ``extras['imputed']`` records which ones were filled.
    """
    miss = series.missing | np.isnan(series.pm25) | np.isnan(series.wind_speed) | \
        np.isnan(series.wind_direction)
    if not miss.any():
        return series
    n_train = max(1, int(round(train_fraction * series.n_times)))
    out = {}
    for name in ("pm25", "wind_speed"):
        src = getattr(series, name)
        dst = src.copy()
        for j in range(series.n_stations):
            obs = ~np.isnan(src[:, j])
            if not obs.any():
                raise DataError(f"station {series.station_ids[j]!r} has no observed {name}")
            gap = ~obs
            wm = _window_mean(src[:, j], obs, half_width)
            dst[gap, j] = wm[gap]
            still = np.isnan(dst[:, j])
            if still.any():
                tr = obs[:n_train]
                fallback = src[:n_train, j][tr].mean() if tr.any() else src[obs, j].mean()
                dst[still, j] = fallback
        out[name] = dst
    src = series.wind_direction
    rad = np.radians(src)
    dst = src.copy()
    for j in range(series.n_stations):
        obs = ~np.isnan(src[:, j])
        if not obs.any():
            raise DataError(f"station {series.station_ids[j]!r} has no observed wind_direction")
        s = _window_mean(np.sin(rad[:, j]), obs, half_width)
        c = _window_mean(np.cos(rad[:, j]), obs, half_width)
        gap = ~obs
        fill = np.degrees(np.arctan2(s, c)) % 360.0
        dst[gap, j] = fill[gap]
        still = np.isnan(dst[:, j])
        if still.any():
            tr = obs[:n_train] if obs[:n_train].any() else obs
            ang = rad[:len(tr), j][tr]
            dst[still, j] = np.degrees(np.arctan2(np.sin(ang).mean(), np.cos(ang).mean())) % 360
        out["wind_direction"] = dst
    extras = dict(series.extras, imputed=miss)
    return replace(series, pm25=out["pm25"], wind_speed=out["wind_speed"],
                   wind_direction=out["wind_direction"],
                   missing=np.zeros_like(miss), extras=extras)


# ------------------------------------------------------------------ windowing

@dataclass
class NormStats:
    mean: np.ndarray  # (N,)
    std: np.ndarray

    def normalize(self, y):
        return (y - self.mean) / self.std

    def denormalize(self, y):
        """Map (..., N) or (..., N, 1) normalized targets back to original units."""
        y = np.asarray(y)
        if y.ndim >= 2 and y.shape[-1] == 1 and y.shape[-2] == len(self.mean):
            return y * self.std[:, None] + self.mean[:, None]
        return y * self.std + self.mean

    def denormalize_var(self, v):
        v = np.asarray(v)
        if v.ndim >= 2 and v.shape[-1] == 1 and v.shape[-2] == len(self.std):
            return v * (self.std ** 2)[:, None]
        return v * self.std ** 2


@dataclass
class WindowedDataset:
    """Input windows X (n, T, N, 3) and targets Y (n, tau, N, 1).

    Channel 0 of X and all of Y are z-scored per station; wind channels stay
    in physical units. ``origins`` are the row indices of the last input step.
    """

    X: np.ndarray
    Y: np.ndarray
    origins: np.ndarray
    timestamps: np.ndarray
    stats: NormStats
    station_ids: list

    def __len__(self):
        return len(self.X)

    @property
    def T(self):
        return self.X.shape[1]

    @property
    def tau(self):
        return self.Y.shape[1]

    def subset(self, idx):
        return replace(self, X=self.X[idx], Y=self.Y[idx], origins=self.origins[idx])

    def last_values(self):
        """Last observed normalized target of each window, (n, N)."""
        return self.X[:, -1, :, 0]


def count_windows(length, T, tau, stride=1):
    return max(0, (length - T - tau) // stride + 1)


def build_windows(series, T, tau, start, stop, stats, stride=1):
    """Windows whose inputs and targets lie within rows [start, stop)."""
    feats = series.features()
    miss = series.missing
    origins = []
    for s in range(start, stop - T - tau + 1, stride):
        if miss[s:s + T + tau].any():
            continue
        origins.append(s + T - 1)
    origins = np.array(origins, dtype=int)
    n = len(origins)
    N = series.n_stations
    X = np.empty((n, T, N, 3))
    Y = np.empty((n, tau, N, 1))
    for k, o in enumerate(origins):
        X[k] = feats[o - T + 1:o + 1]
        Y[k, :, :, 0] = stats.normalize(series.pm25[o + 1:o + 1 + tau])
    X[..., 0] = stats.normalize(X[..., 0])
    return WindowedDataset(X, Y, origins, series.timestamps, stats, list(series.station_ids))


def split_bounds(n, fractions=(0.7, 0.1, 0.2)):
    f = np.asarray(fractions, dtype=float)
    if f.shape != (3,) or np.any(f < 0) or not np.isclose(f.sum(), 1.0):
        raise DataError("split fractions must be three nonnegative numbers summing to 1")
    c1 = int(round(f[0] * n))
    c2 = int(round((f[0] + f[1]) * n))
    return (0, c1), (c1, c2), (c2, n)


def window_and_split(series, T=24, tau=24, fractions=(0.7, 0.1, 0.2), train_stride=1):
    """Chronological train/val/test windows with train-only normalization."""
    bounds = split_bounds(series.n_times, fractions)
    need = T + tau
    for name, (a, b) in zip(("train", "val", "test"), bounds):
        if b - a < need:
            f = np.asarray(fractions, dtype=float)
            minimum = int(np.ceil(need / max(f.min(), 1e-12)))
            raise DataError(f"{name} segment has {b - a} steps but T + tau = {need} are "
                            f"needed; series must have at least ~{minimum} steps")
    a, b = bounds[0]
    train_vals = series.pm25[a:b]
    obs = ~series.missing[a:b]
    mean = np.array([train_vals[obs[:, j], j].mean() for j in range(series.n_stations)])
    std = np.array([train_vals[obs[:, j], j].std() for j in range(series.n_stations)])
    std = np.where(std > 0, std, 1.0)
    stats = NormStats(mean, std)
    out = []
    for k, (a, b) in enumerate(bounds):
        ds = build_windows(series, T, tau, a, b, stats, train_stride if k == 0 else 1)
        if len(ds) == 0:
            raise DataError(f"split {k} has no complete window")
        out.append(ds)
    return tuple(out)


# -------------------------------------------------------------- synthetic data

WIND_PATTERNS = ("constant", "rotating", "regimes")
REGIME_CODES = {"calm": 0, "windy": 1, "transition": 2}


def _wind_series(pattern, n_steps, rng, base_speed, base_dir):
    labels = np.full(n_steps, REGIME_CODES["transition"])
    if pattern == "constant":
        speed = np.full(n_steps, base_speed)
        direction = np.full(n_steps, base_dir)
    elif pattern == "rotating":
        speed = base_speed * (1.0 + 0.3 * np.sin(2 * np.pi * np.arange(n_steps) / 160.0))
        direction = base_dir + 360.0 * np.arange(n_steps) / 400.0
    elif pattern == "regimes":
        speed = np.empty(n_steps)
        direction = np.empty(n_steps)
        t = 0
        kinds = ["calm", "windy"]
        k = int(rng.integers(2))
        while t < n_steps:
            kind = kinds[k % 2]
            seg = int(rng.integers(40, 90))
            ramp = 6
            hi = rng.uniform(8.0, 13.0)
            d0 = rng.uniform(0.0, 360.0)
            level = rng.uniform(0.0, 1.0) if kind == "calm" else hi
            stop = min(n_steps, t + seg)
            speed[t:stop] = level
            direction[t:stop] = d0 + rng.normal(0.0, 10.0, stop - t)
            labels[t:stop] = REGIME_CODES[kind]
            # ramps between segments are labeled as transitions
            r_stop = min(n_steps, stop + ramp)
            nxt = kinds[(k + 1) % 2]
            nxt_level = 0.5 if nxt == "calm" else 10.0
            speed[stop:r_stop] = np.linspace(level, nxt_level, r_stop - stop + 2)[1:-1]
            direction[stop:r_stop] = d0
            t = r_stop
            k += 1
    else:
        raise DataError(f"wind_pattern must be one of {WIND_PATTERNS}")
    return speed, direction % 360.0, labels


def synth_stations(n_stations, rng, extent_km=60.0, lat0=39.9, lon0=116.4):
    """Stations scattered uniformly over a square of side ``extent_km``."""
    dy = rng.uniform(-0.5, 0.5, n_stations) * extent_km
    dx = rng.uniform(-0.5, 0.5, n_stations) * extent_km
    lat = lat0 + dy / 111.195
    lon = lon0 + dx / (111.195 * np.cos(np.radians(lat0)))
    return [Station(f"S{i:02d}", float(a), float(b)) for i, (a, b) in enumerate(zip(lat, lon))]


def synth_generate(n_stations=10, n_steps=4000, D=0.2, wind_pattern="constant",
                   noise_std=1.0, seed=0, *, dt=1.0, advection_mode="upwind",
                   advection_scale=0.3, length_scale=25.0, cutoff=40.0,
                   wind_speed=6.0, wind_direction=270.0, background=30.0,
                   relaxation=0.0, source_scale=0.0, pulse_rate=0.0, pulse_scale=40.0,
                   station_noise_deg=5.0, speed_ref=10.0, stations=None, substeps=1,
                   ventilation=0.0):
    """Simulate forward-Euler graph transport with optional sources and pulses.

    Each step applies ``c += dt * (-D L c + M(v_t) c - relaxation (c - background)
    + sources + pulses)``; observations add Gaussian noise. ``advection_mode``
    selects the operator: ``learned`` or ``theory`` as in :mod:`graphnet`, or
    ``upwind`` (inflow minus outflow, which conserves mass). With ``substeps > 1``
    each observation interval is split into that many Euler steps with the wind
    held fixed; pulses enter once per interval. ``ventilation`` adds a
    wind-driven term to the relaxation rate, ``ventilation * speed / speed_ref``
    per station, so windy spells flush the field toward background. The ground
    truth, operators and regime labels are returned in ``extras``.
    """
    if n_stations < 1 or n_steps < 1:
        raise DataError("n_stations and n_steps must be positive")
    if D < 0 or dt <= 0 or noise_std < 0 or relaxation < 0 or ventilation < 0:
        raise DataError("D, noise_std, relaxation and ventilation must be nonnegative "
                        "and dt positive")
    if substeps < 1:
        raise DataError("substeps must be >= 1")
    h = dt / substeps
    rng = np.random.default_rng(seed)
    stations = synth_stations(n_stations, rng) if stations is None else stations
    graph = build_graph(stations, length_scale, cutoff, speed_ref=speed_ref)
    L = laplacian_from_weights(graph.base_weight)
    lam_max = float(np.linalg.eigvalsh(L)[-1]) if n_stations > 1 else 0.0
    if D > 0 and lam_max > 0 and h > 2.0 / (D * lam_max):
        raise DataError(f"unstable time step: dt/substeps={h} exceeds 2/(D*lambda_max)="
                        f"{2.0 / (D * lam_max):.4g}")
    speed1, dir1, labels = _wind_series(wind_pattern, n_steps, rng, wind_speed, wind_direction)
    speed = np.maximum(speed1[:, None] * (1 + 0.05 * rng.standard_normal((n_steps, n_stations))),
                       0.0)
    direction = (dir1[:, None] + station_noise_deg * rng.standard_normal((n_steps, n_stations)))
    direction %= 360.0
    if wind_pattern == "constant" and wind_speed == 0:
        speed[:] = 0.0

    src_mode = "learned" if advection_mode == "upwind" else advection_mode
    sources = source_scale * rng.uniform(0.0, 1.0, n_stations)
    c = np.full(n_stations, background, dtype=float) + rng.normal(0, 1.0, n_stations) * \
        (source_scale > 0)
    truth = np.empty((n_steps, n_stations))
    ops = np.empty((n_steps, n_stations, n_stations))
    for t in range(n_steps):
        truth[t] = c
        M = advection_scale * advection_from_wind(graph.base_weight, graph.bearing, speed[t],
                                                  direction[t], speed_ref, src_mode)
        if advection_mode == "upwind":
            M = M - np.diag(M.sum(axis=0))
        ops[t] = M
        relax = relaxation + ventilation * speed[t] / speed_ref
        kick = 0.0
        if pulse_rate > 0:
            hits = rng.random(n_stations) < pulse_rate
            kick = dt * hits * pulse_scale * rng.exponential(1.0, n_stations)
        for _ in range(substeps):
            c = c + h * (-D * (L @ c) + M @ c + sources - relax * (c - background)) + kick
            kick = 0.0
    obs = truth + noise_std * rng.standard_normal(truth.shape)
    stamps = np.datetime64("2020-01-01T00:00:00", "s") + STEP * np.arange(n_steps)
    extras = {"truth": truth, "L": L, "M": ops, "D": D, "dt": dt, "graph": graph,
              "regime": labels, "sources": sources, "relaxation": relaxation,
              "background": background, "pulse_mean": pulse_rate * pulse_scale,
              "substeps": substeps, "ventilation": ventilation}
    return SeriesTable([s.id for s in stations], stamps, obs, speed, direction,
                       np.zeros(obs.shape, dtype=bool), list(stations), extras)


# -------------------------------------------------------------------- metrics

@dataclass
class Metrics:
    mae: float
    rmse: float
    coverage: float | None = None
    level: float | None = None


def mae_rmse(Yhat, Y):
    Yhat, Y = np.asarray(Yhat, dtype=float), np.asarray(Y, dtype=float)
    if Yhat.shape != Y.shape:
        raise ValueError(f"shape mismatch {Yhat.shape} vs {Y.shape}")
    err = Yhat - Y
    return Metrics(float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err ** 2))))


def coverage(lower, upper, Y):
    Y = np.asarray(Y)
    return float(np.mean((Y >= lower) & (Y <= upper)))


# -------------------------------------------------------------------- regimes

REGIMES = ("diffusion", "advection", "other")


def default_thresholds(series):
    """Wind 33rd/67th percentiles and the median cross-station spread."""
    mean_wind = series.wind_speed.mean(axis=1)
    spread = series.pm25.std(axis=1)
    lo, hi = np.percentile(mean_wind, [33.0, 67.0])
    return float(hi), float(lo), float(np.median(spread))


def classify_regime(series, t, wind_hi, wind_lo, grad_hi):
    if not wind_lo < wind_hi:
        raise ValueError("wind_lo must be below wind_hi")
    wind = float(np.mean(series.wind_speed[t]))
    if wind >= wind_hi:
        return "advection"
    if wind <= wind_lo and float(np.std(series.pm25[t])) >= grad_hi:
        return "diffusion"
    return "other"


def classify_regimes(series, wind_hi=None, wind_lo=None, grad_hi=None):
    """Labels for every time step plus per-regime counts."""
    d_hi, d_lo, d_g = default_thresholds(series)
    wind_hi = d_hi if wind_hi is None else wind_hi
    wind_lo = d_lo if wind_lo is None else wind_lo
    grad_hi = d_g if grad_hi is None else grad_hi
    if not wind_lo < wind_hi:
        raise ValueError("wind_lo must be below wind_hi")
    wind = series.wind_speed.mean(axis=1)
    spread = series.pm25.std(axis=1)
    labels = np.where(wind >= wind_hi, "advection",
                      np.where((wind <= wind_lo) & (spread >= grad_hi), "diffusion", "other"))
    counts = {r: int(np.sum(labels == r)) for r in REGIMES}
    return labels.astype(object), counts


# ----------------------------------------------------------------- forecasts

def write_forecast_csv(path, station_ids, timestamps, mean, lower, upper, var_epi, var_ale):
    """Rows per (time, station); array arguments are (n_times, N)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORECAST_HEADER)
        for t, ts in enumerate(timestamps):
            stamp = str(np.datetime64(ts, "s"))
            for j, sid in enumerate(station_ids):
                w.writerow([sid, stamp] + [FLOAT_FMT % float(a[t, j])
                                           for a in (mean, lower, upper, var_epi, var_ale)])


def read_forecast_csv(path):
    """Return (station_ids, timestamps, {column: (n_times, N) array})."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != FORECAST_HEADER:
        raise DataError(f"{path}: header must be {','.join(FORECAST_HEADER)}")
    ids, stamps = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(FORECAST_HEADER):
            raise DataError(f"line {lineno}: expected {len(FORECAST_HEADER)} fields")
        if row[0] not in ids:
            ids.append(row[0])
        if not stamps or stamps[-1] != row[1]:
            if row[1] in stamps:
                raise DataError(f"line {lineno}: timestamps not grouped")
            stamps.append(row[1])
    cols = {name: np.full((len(stamps), len(ids)), np.nan) for name in FORECAST_HEADER[2:]}
    t_idx = {s: i for i, s in enumerate(stamps)}
    s_idx = {s: j for j, s in enumerate(ids)}
    for lineno, row in enumerate(rows[1:], start=2):
        for k, name in enumerate(FORECAST_HEADER[2:], start=2):
            cols[name][t_idx[row[1]], s_idx[row[0]]] = _parse_float(row[k], lineno, name)
    return ids, np.array(stamps, dtype="datetime64[s]"), cols


def ensure_dir(path):
    Path(path).mkdir(parents=True, exist_ok=True)
    return Path(path)
