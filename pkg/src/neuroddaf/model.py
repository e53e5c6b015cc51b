"""End-to-end forecaster: encode, integrate latent trajectories, fuse with the
spectral branch, decode, and summarize the ensemble."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .encoder import DEFAULT_CHANNELS, encode_sequence, init_encoder_params, sample_z0
from .fusion import (decode, decode_logvar, ensemble_stats, evidential_gate, fuse,
                     init_fusion_params, init_nig_params, nig_head)
from .graphnet import (advection_from_wind, edge_weights, init_gate_params,
                       laplacian_from_weights, wind_features)
from .odecore import (FILTER_TO_MODE, OdeConfig, VectorFieldSpec, dropout_mask,
                      init_residual_params, odeint, vector_field)
from .spectral import fourier_pde_step, init_spectral_weights


@dataclass
class ModelConfig:
    hidden: int = 64
    gat_dim: int = 4
    latent_dim: int = 4
    K: int = 2
    modes: int = 8
    n_traj: int = 3
    phi_hidden: int = 32
    fusion_hidden: int = 16
    dropout: float = 0.1
    filter_type: str = "diff_adv"
    advection_mode: str = "learned"
    field_spectral: bool = True
    aleatoric: bool = True
    evidential: bool = False
    decoder_skip: bool = True
    D_init: float = 0.1
    rtol: float = 1e-5
    atol: float = 1e-5
    max_steps: int = 2000
    dt: float = 1.0

    def __post_init__(self):
        if self.filter_type not in FILTER_TO_MODE:
            raise ValueError(f"filter_type must be one of {sorted(FILTER_TO_MODE)}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class ModelParams:
    encoder: object
    gate: object
    residual: object
    field_spectral: object
    fusion_spectral: object
    fusion: object
    nig: object
    D_raw: ad.Tensor


def _inv_softplus(y):
    return float(np.log(np.expm1(y)))


def init_params(cfg, seed=0):
    rng = np.random.default_rng(seed)
    d = cfg.latent_dim
    enc = init_encoder_params(rng, 1, cfg.hidden, cfg.gat_dim, d)
    d_e = cfg.hidden + cfg.gat_dim
    return ModelParams(
        encoder=enc,
        gate=init_gate_params(rng, d, K=cfg.K),
        residual=init_residual_params(rng, d, d_e, cfg.phi_hidden),
        field_spectral=(init_spectral_weights(rng, d, cfg.modes, mode_scale=0.0,
                                              residual_scale=0.01)
                        if cfg.field_spectral else None),
        fusion_spectral=init_spectral_weights(rng, d, cfg.modes),
        fusion=init_fusion_params(rng, d, cfg.fusion_hidden),
        nig=init_nig_params(rng, d) if cfg.evidential else None,
        D_raw=ad.Tensor(np.array(_inv_softplus(cfg.D_init)), requires_grad=True),
    )


def named_parameters(obj, prefix=""):
    """Flatten nested parameter containers into ``[(dotted_name, Tensor), ...]``."""
    out = []
    if isinstance(obj, ad.Tensor):
        if obj.requires_grad:
            out.append((prefix, obj))
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            out.extend(named_parameters(getattr(obj, f.name), name))
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            out.extend(named_parameters(item, f"{prefix}.{i}"))
    return out


@dataclass
class ForwardResult:
    mean: object  # (B, tau, N, 1)
    var_epistemic: object
    var_aleatoric: object
    var_total: object
    members: object  # (tau, B, S, N, 1)
    nig: object = None
    D: object = None
    n_steps: int = 0
    extras: dict = field(default_factory=dict)


class NeuroDDAF:
    """The forecaster bound to a station graph.

    Inputs ``X`` have shape (B, T, N, 3) with channels (normalized target,
    wind speed in m/s, wind direction in degrees); outputs are in the
    normalized target units. ``var_scale`` multiplies the predicted variances
    in :meth:`predict`; it is 1 until fitted on held-out data.
    """

    def __init__(self, cfg, graph, seed=0, params=None):
        self.cfg = cfg
        self.graph = graph
        self.params = init_params(cfg, seed) if params is None else params
        self.var_scale = 1.0

    def parameters(self):
        return named_parameters(self.params)

    def D(self):
        return ad.softplus(self.params.D_raw)

    def operators(self, speed, direction):
        """Laplacian (..., N, N) and advection operator for origin-time wind (B, N)."""
        g = self.graph
        if g.mixing_gain == 0.0:
            L = laplacian_from_weights(g.base_weight)
        else:
            L = laplacian_from_weights(edge_weights(g.base_weight, speed, g.speed_ref,
                                                    g.mixing_gain))
        M = advection_from_wind(g.base_weight, g.bearing, speed, direction, g.speed_ref,
                                self.cfg.advection_mode)
        return L, M

    def field_spec(self, enc, speed, direction):
        cfg, p = self.cfg, self.params
        L, M = self.operators(speed, direction)
        if L.ndim == 3:
            L = L[:, None]
        return VectorFieldSpec(
            mode=FILTER_TO_MODE[cfg.filter_type], D=self.D(), L=L, M=M[:, None],
            gate=p.gate, spectral=p.field_spectral, residual=p.residual,
            E=ad.reshape(enc.E, (enc.E.shape[0], 1) + enc.E.shape[1:]),
            wind_feat=wind_features(speed, direction, self.graph.speed_ref)[:, None],
            wind_speed=(speed / self.graph.speed_ref)[:, None],
        )

    def forward(self, X, tau, rng, channels=None):
        cfg, p, g = self.cfg, self.params, self.graph
        ch = DEFAULT_CHANNELS if channels is None else channels
        X = np.asarray(X, dtype=float)
        B = X.shape[0]
        enc = encode_sequence(X, g.adjacency, g.bearing, p.encoder, ch, g.speed_ref)
        z0 = sample_z0(enc, cfg.n_traj, rng=rng)  # (B, S, N, d)
        speed = X[:, -1, :, ch["wind_speed"]]
        direction = X[:, -1, :, ch["wind_direction"]]
        spec = self.field_spec(enc, speed, direction)
        mask_shape = (B, cfg.n_traj, g.n_nodes, p.residual.hidden)
        spec.dropout_mask = dropout_mask(rng, mask_shape, cfg.dropout)

        times = np.arange(tau + 1) * cfg.dt
        ode_cfg = OdeConfig(rtol=cfg.rtol, atol=cfg.atol, max_steps=cfg.max_steps)
        traj = odeint(lambda t, z: vector_field(z, t, spec), z0, times, ode_cfg)
        Z = ad.stack(traj.states[1:], axis=0)  # (tau, B, S, N, d)

        D = spec.D
        Z_spec = fourier_pde_step(Z, p.fusion_spectral, D, spec.wind_speed, dt=cfg.dt,
                                  modes=None)
        gamma = rng.random(Z.shape)
        gate = evidential_gate(Z_spec, Z, gamma, p.fusion)
        Z_final = fuse(Z_spec, Z, gate)
        Y_hat = decode(Z_final, p.fusion)  # (tau, B, S, N, 1)
        if cfg.decoder_skip:
            last = X[:, -1, :, ch["target"]]
            Y_hat = ad.add(Y_hat, last[None, :, None, :, None])

        members = [ad.index(Y_hat, (slice(None), slice(None), s)) for s in range(cfg.n_traj)]
        ale = None
        if cfg.aleatoric:
            var = ad.exp(decode_logvar(Z_final, p.fusion))
            ale = [ad.index(var, (slice(None), slice(None), s)) for s in range(cfg.n_traj)]
        ens = ensemble_stats(members, ale)
        nig = nig_head(Z_final, p.nig) if cfg.evidential and p.nig is not None else None

        def bt(x):
            return ad.swapaxes(x, 0, 1)

        return ForwardResult(
            mean=bt(ens.mean), var_epistemic=bt(ens.var_epistemic),
            var_aleatoric=bt(ens.var_aleatoric), var_total=bt(ens.var_total),
            members=Y_hat, nig=nig, D=D, n_steps=traj.n_accepted + traj.n_rejected,
            extras={"gate_fusion": gate, "speed": speed, "direction": direction},
        )

    def predict(self, X, tau, seed=0, batch_size=64, calibrated=True):
        """Forecast without recording gradients; returns numpy arrays (B, tau, N, 1).

        Variances are multiplied by ``var_scale`` unless ``calibrated`` is False.
        """
        rng = np.random.default_rng(seed)
        keys = ("mean", "var_epistemic", "var_aleatoric", "var_total")
        parts = {k: [] for k in keys}
        for start in range(0, len(X), batch_size):
            res = self.forward(X[start:start + batch_size], tau, rng)
            for k in keys:
                parts[k].append(ad.value(getattr(res, k)))
        out = {k: np.concatenate(v, axis=0) for k, v in parts.items()}
        if calibrated and self.var_scale != 1.0:
            for k in keys[1:]:
                out[k] = out[k] * self.var_scale
        return out
