"""Losses, Adam with clipping and step decay, the training loop, checkpoints."""
from __future__ import annotations

import csv
import io
import time
import zipfile
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dataio import FLOAT_FMT, mae_rmse
from .fusion import evidential_loss, gaussian_nll, normal_quantile

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    lr_decay: float = 0.5
    decay_every: int = 20
    grad_clip_norm: float = 5.0
    max_epochs: int = 50
    patience: int = 10
    lambda_phys: float = 1e-2
    lambda_unc: float = 1e-3
    lambda_reg: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        for name in ("lr", "eps", "batch_size", "lr_decay", "decay_every",
                     "grad_clip_norm", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        for name in ("lambda_phys", "lambda_unc", "lambda_reg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


# --------------------------------------------------------------------- losses

def pde_residual(Y, L, M, D, dt):
    """P_h[Y]_t = (Y_{t+1} - Y_t)/dt + D L Y_t - M Y_t for Y of shape (..., tau, N, d)."""
    tau = ad.value(Y).shape[-3]
    if tau < 2:
        raise ValueError("need at least two time steps (tau >= 2)")
    if dt <= 0:
        raise ValueError("dt must be positive")
    cur = ad.index(Y, (Ellipsis, slice(0, tau - 1), slice(None), slice(None)))
    nxt = ad.index(Y, (Ellipsis, slice(1, tau), slice(None), slice(None)))
    r = ad.mul(ad.sub(nxt, cur), 1.0 / dt)
    if L is not None:
        r = ad.add(r, ad.mul(ad.matmul(L, cur), D))
    if M is not None:
        r = ad.sub(r, ad.matmul(M, cur))
    return r


def pde_residual_loss(Ybar, L, M, D, dt):
    """Mean squared discrete transport residual of the trajectory ``Ybar``.

    ``L`` and ``M`` must broadcast against (..., tau - 1, N, N).
    """
    r = pde_residual(Ybar, L, M, D, dt)
    return ad.mean(ad.mul(r, r))


@dataclass
class LossBreakdown:
    total: object
    forecast: float
    pde: float
    unc: float


def total_loss(Ybar, Y_true, pde_term, evid_term, cfg):
    """MAE + lambda_phys * pde + lambda_unc * uncertainty term (when given)."""
    if ad.value(Ybar).shape != np.shape(Y_true):
        raise ValueError("prediction and target shapes differ")
    forecast = ad.mean(ad.absolute(ad.sub(Ybar, Y_true)))
    total = forecast
    pde_v = unc_v = 0.0
    if pde_term is not None:
        total = ad.add(total, ad.mul(pde_term, cfg.lambda_phys))
        pde_v = float(ad.value(pde_term))
    if evid_term is not None:
        total = ad.add(total, ad.mul(evid_term, cfg.lambda_unc))
        unc_v = float(ad.value(evid_term))
    return LossBreakdown(total, float(ad.value(forecast)), pde_v, unc_v)


def model_loss(model, X, Y, stats, rng, cfg):
    """Run the forward pass and assemble the training objective."""
    tau = Y.shape[1]
    res = model.forward(X, tau, rng)
    pde = None
    if cfg.lambda_phys > 0 and tau >= 2:
        scale = float(np.mean(stats.std))
        mean_phys = ad.add(ad.mul(res.mean, stats.std[:, None] / scale),
                           stats.mean[:, None] / scale)
        L, M = model.operators(res.extras["speed"], res.extras["direction"])
        if L.ndim == 3:
            L = L[:, None]
        pde = pde_residual_loss(mean_phys, L, M[:, None], res.D, model.cfg.dt)
    unc = None
    if model.cfg.aleatoric:
        unc = gaussian_nll(Y, res.mean, res.var_total)
    if model.cfg.evidential and res.nig is not None:
        y = np.swapaxes(Y, 0, 1)[:, :, None, :, 0]  # (tau, B, 1, N)
        ev = evidential_loss(res.nig, y, cfg.lambda_reg)
        unc = ev if unc is None else ad.add(unc, ev)
    return total_loss(res.mean, Y, pde, unc, cfg), res


# ------------------------------------------------------------------ optimizer

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def clip_by_global_norm(grads, max_norm):
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > max_norm:
        s = max_norm / norm
        return [g * s for g in grads], norm
    return list(grads), norm


def adam_step(params, grads, state, cfg, lr=None):
    """In-place Adam update of ``params`` (list of (name, Tensor)).

    Gradients are clipped to ``cfg.grad_clip_norm`` in global norm first.
    Returns the pre-clipping gradient norm.
    """
    for (name, _), g in zip(params, grads):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    grads, norm = clip_by_global_norm(grads, cfg.grad_clip_norm)
    lr = cfg.lr if lr is None else lr
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for (name, p), g in zip(params, grads):
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return norm


# --------------------------------------------------------------------- loop

HISTORY_FIELDS = ["epoch", "lr", "train_loss", "val_loss", "val_mae", "val_rmse"]


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    stop_epoch: int = 0
    best_epoch: int = 0

    def __len__(self):
        return len(self.rows)

    def write_csv(self, path):
        """Per-epoch metrics; wall time is kept out so reruns compare bytewise."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_FIELDS)
            for row in self.rows:
                w.writerow([row["epoch"]] + [FLOAT_FMT % row[k] for k in HISTORY_FIELDS[1:]])


def lr_at(epoch, cfg):
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.decay_every)


def evaluate_dataset(model, dataset, cfg, seed):
    """Loss and original-unit MAE/RMSE of the ensemble mean on ``dataset``."""
    rng = np.random.default_rng(seed)
    losses, means = [], []
    for start in range(0, len(dataset), cfg.batch_size):
        X = dataset.X[start:start + cfg.batch_size]
        Y = dataset.Y[start:start + cfg.batch_size]
        br, res = model_loss(model, X, Y, dataset.stats, rng, cfg)
        losses.append(float(ad.value(br.total)) * len(X))
        means.append(ad.value(res.mean))
    pred = dataset.stats.denormalize(np.concatenate(means))
    met = mae_rmse(pred, dataset.stats.denormalize(dataset.Y))
    return sum(losses) / len(dataset), met


def train(model, train_set, val_set, cfg, log=None):
    """Fit ``model`` in place; returns ``(model, TrainHistory)``.

    Early stopping tracks validation MAE and the best parameters are restored.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation splits must be nonempty")
    history = TrainHistory()
    params = model.parameters()
    state = AdamState()
    best = (np.inf, [p.data.copy() for _, p in params])
    stale = 0
    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        lr = lr_at(epoch, cfg)
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(train_set))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            X, Y = train_set.X[idx], train_set.Y[idx]
            with ad.Tape() as tape:
                br, _ = model_loss(model, X, Y, train_set.stats, rng, cfg)
            grads = tape.gradient(br.total, [p for _, p in params])
            adam_step(params, grads, state, cfg, lr)
            total += float(ad.value(br.total)) * len(idx)
            count += len(idx)
        val_loss, met = evaluate_dataset(model, val_set, cfg, seed=[cfg.seed, 10**6])
        history.rows.append({"epoch": epoch, "lr": lr, "train_loss": total / count,
                             "val_loss": val_loss, "val_mae": met.mae, "val_rmse": met.rmse})
        history.wall_time.append(time.perf_counter() - t0)
        if log is not None:
            log(history.rows[-1])
        if met.mae < best[0]:
            best = (met.mae, [p.data.copy() for _, p in params])
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
        history.stop_epoch = epoch
        if stale >= cfg.patience:
            break
    if history.rows:
        for (_, p), data in zip(params, best[1]):
            p.data = data
    return model, history


def fit_variance_scale(model, dataset, level=0.9, seed=0):
    """Scalar variance inflation making ``level`` intervals cover ``dataset``.

    Returns ``c`` such that the empirical ``level`` quantile of
    ``|y - mean| / sqrt(c * V_tot)`` equals the Gaussian quantile. This is a
    split-conformal recalibration: fit it on data not used for training.
    Entries with zero predicted variance are ignored; returns 1 when none remain.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    pred = model.predict(dataset.X, dataset.tau, seed=seed, calibrated=False)
    var = pred["var_total"]
    ok = var > 0
    if not ok.any():
        return 1.0
    z = np.abs(dataset.Y - pred["mean"])[ok] / np.sqrt(var[ok])
    q_emp = float(np.quantile(z, level))
    if q_emp == 0.0:
        return 1.0
    return (q_emp / normal_quantile(0.5 * (1.0 + level))) ** 2


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, model):
    """Write an ``.npz`` archive readable by ``np.load``.

    Entries carry a fixed timestamp so identical parameters give identical bytes.
    """
    arrays = {"__version__": np.array(CHECKPOINT_VERSION),
              "meta/var_scale": np.array(float(getattr(model, "var_scale", 1.0)))}
    arrays.update({f"param/{name}": p.data for name, p in model.parameters()})
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for key, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.array(arr, order="C"), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(key + ".npy", date_time=(1980, 1, 1, 0, 0, 0)),
                        buf.getvalue())


def load_checkpoint(path, model):
    """Load parameters saved by :func:`save_checkpoint` into ``model``."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["__version__"][()]) if "__version__" in data else None
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        for name, p in model.parameters():
            key = f"param/{name}"
            if key not in data:
                raise KeyError(f"checkpoint lacks parameter {name!r}")
            arr = data[key]
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {arr.shape} vs {p.data.shape}")
            p.data = arr.astype(np.float64)
        if "meta/var_scale" in data:
            model.var_scale = float(data["meta/var_scale"][()])
    return model
