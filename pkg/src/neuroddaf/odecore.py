"""Dormand-Prince (5,4) integration and the latent transport vector field.

States may be numpy arrays or :class:`~neuroddaf.autodiff.Tensor`; on an
active tape the accepted steps are recorded so gradients flow through the
unrolled solver. Step sizes are chosen from plain values and therefore act
as constants for differentiation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .graphnet import k_hop_propagate, transport_gate
from .spectral import fourier_pde_step

MODES = ("full", "linear_theory", "diffusion_only", "advection_only")
FILTER_TO_MODE = {"diff_adv": "full", "diff": "diffusion_only", "adv": "advection_only"}

# Dormand-Prince tableau
C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
E = tuple(b5 - b4 for b5, b4 in zip(B5, B4))
# fourth-order midpoint used by the quartic dense-output interpolant
C_MID = (
    6025192743 / 30085553152 / 2, 0.0, 51252292925 / 65400821598 / 2,
    -2691868925 / 45128329728 / 2, 187940372067 / 1594534317072 / 2,
    -1776094331 / 19743644256 / 2, 11237099 / 235043384 / 2,
)


class SolverError(RuntimeError):
    pass


@dataclass
class OdeConfig:
    rtol: float = 1e-5
    atol: float = 1e-5
    max_steps: int = 10_000
    initial_dt: float = 0.1
    safety: float = 0.9
    min_dt: float = 1e-10

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not 0 < self.safety < 1:
            raise ValueError("safety must lie in (0, 1)")


@dataclass
class Trajectory:
    times: np.ndarray
    states: list
    n_accepted: int = 0
    n_rejected: int = 0
    steps: list = field(default_factory=list)

    def stacked(self):
        """States as one array/tensor with time on axis 0."""
        if any(isinstance(s, ad.Tensor) for s in self.states):
            return ad.stack(self.states, axis=0)
        return np.stack(self.states, axis=0)


def _finite(x):
    return bool(np.all(np.isfinite(ad.value(x))))


def _stages(f, t, z, dt, k1):
    ks = [k1]
    for i in range(1, 7):
        if i < 6:
            zi = ad.lincomb((1.0,) + tuple(dt * a for a in A[i]), [z] + ks)
        else:
            # z + dt * (k1 + sum b_i (k_i - k1)): exact when all slopes agree
            diffs = [ad.sub(ks[j], ks[0]) for j in (2, 3, 4, 5)]
            zi = ad.lincomb((1.0, dt) + tuple(dt * B5[j] for j in (2, 3, 4, 5)),
                            [z, ks[0]] + diffs)
            z_new = zi
        ks.append(f(t + C[i] * dt, zi))
    return z_new, ks


def _error_norm(z, z_new, ks, dt, rtol, atol):
    # sum(E) = 0, so differencing against k1 is exact for constant slopes
    k1 = ad.value(ks[0])
    err = dt * sum(e * (ad.value(k) - k1) for e, k in zip(E, ks) if e != 0.0)
    scale = atol + rtol * np.maximum(np.abs(ad.value(z)), np.abs(ad.value(z_new)))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def dopri5_step(f, z, t, dt, rtol=1e-5, atol=1e-5, k1=None):
    """One Dormand-Prince step of ``dz/dt = f(t, z)``.

    Returns ``(z_next, error)`` where ``z_next`` is the fifth-order solution
    and ``error`` the RMS of the embedded difference scaled by
    ``atol + rtol * max(|z|, |z_next|)``; ``inf`` flags a non-finite stage.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = f(t, z) if k1 is None else k1
    z_new, ks = _stages(f, t, z, dt, k1)
    if not all(_finite(k) for k in ks) or not _finite(z_new):
        return z_new, float("inf")
    return z_new, _error_norm(z, z_new, ks, dt, rtol, atol)


def _interpolate(z, z_new, ks, dt, x):
    x2, x3, x4 = x * x, x ** 3, x ** 4
    c_y0 = 1 - 11 * x2 + 18 * x3 - 8 * x4
    c_y1 = -5 * x2 + 14 * x3 - 8 * x4
    c_ym = 16 * x2 - 32 * x3 + 16 * x4
    c_f0 = dt * (x - 4 * x2 + 5 * x3 - 2 * x4)
    c_f1 = dt * (x2 - 3 * x3 + 2 * x4)
    # the endpoint weights sum to one, so write them as z + c_y1 (z_new - z)
    coeffs = [1.0, c_y1]
    for i, k in enumerate(ks):
        c = c_ym * dt * C_MID[i]
        if i == 0:
            c += c_f0
        if i == 6:
            c += c_f1
        coeffs.append(c)
    return ad.lincomb(coeffs, [z, ad.sub(z_new, z)] + ks)


def odeint(f, z0, times, cfg=None):
    """Adaptive integration of ``dz/dt = f(t, z)`` reporting states at ``times``.

    ``times[0]`` is the initial time; the returned trajectory's first state is
    ``z0``. Intermediate outputs use a quartic interpolant within each
    accepted step.
    """
    cfg = OdeConfig() if cfg is None else cfg
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be a strictly increasing 1-D sequence")
    if not _finite(z0):
        raise ValueError("initial state is not finite")
    states = [z0]
    traj = Trajectory(times=times, states=states)
    if times.size == 1:
        return traj
    t, z, t_end = float(times[0]), z0, float(times[-1])
    k1 = f(t, z)
    dt = min(cfg.initial_dt, t_end - t)
    idx = 1
    while idx < times.size:
        if traj.n_accepted + traj.n_rejected >= cfg.max_steps:
            raise SolverError(f"max_steps={cfg.max_steps} exceeded at t={t:.6g} (dt={dt:.3g})")
        dt = min(dt, t_end - t)
        z_new, ks = _stages(f, t, z, dt, k1)
        if all(_finite(k) for k in ks):
            err = _error_norm(z, z_new, ks, dt, cfg.rtol, cfg.atol)
        else:
            err = float("inf")
        if err <= 1.0:
            t_next = t + dt if t_end - (t + dt) > 1e-12 * max(1.0, abs(t_end)) else t_end
            while idx < times.size and times[idx] <= t_next:
                if times[idx] == t_next:
                    states.append(z_new)
                else:
                    states.append(_interpolate(z, z_new, ks, dt, (times[idx] - t) / dt))
                idx += 1
            traj.steps.append(dt)
            traj.n_accepted += 1
            t, z, k1 = t_next, z_new, ks[6]
        else:
            traj.n_rejected += 1
        if err == 0.0:
            factor = 5.0
        elif np.isfinite(err):
            factor = min(5.0, max(0.2, cfg.safety * err ** -0.2))
        else:
            factor = 0.2
        dt *= factor
        if dt < cfg.min_dt and idx < times.size:
            raise SolverError(f"step size {dt:.3g} fell below min_dt={cfg.min_dt} at t={t:.6g}")
    return traj


def fixed_step_integrate(f, z0, t_end, n_steps, t0=0.0):
    """``n_steps`` equal Dormand-Prince steps from ``t0`` to ``t_end``."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    dt = (t_end - t0) / n_steps
    z, t = z0, t0
    k1 = f(t, z)
    for _ in range(n_steps):
        z, ks = _stages(f, t, z, dt, k1)
        t += dt
        k1 = ks[6]
    return z


# ------------------------------------------------------------- vector field

@dataclass
class ResidualParams:
    W_z: ad.Tensor  # (d, h)
    W_e: ad.Tensor  # (d_e, h)
    b1: ad.Tensor
    W2: ad.Tensor  # (h, d)
    b2: ad.Tensor

    @property
    def hidden(self):
        return self.W2.shape[0]


def init_residual_params(rng, latent_dim, enc_dim, hidden=32, out_scale=0.1):
    def p(x):
        return ad.Tensor(x, requires_grad=True)

    return ResidualParams(
        W_z=p(rng.normal(0, 1 / np.sqrt(latent_dim), (latent_dim, hidden))),
        W_e=p(rng.normal(0, 1 / np.sqrt(enc_dim), (enc_dim, hidden))),
        b1=p(np.zeros(hidden)),
        W2=p(rng.normal(0, out_scale / np.sqrt(hidden), (hidden, latent_dim))),
        b2=p(np.zeros(latent_dim)),
    )


@dataclass
class VectorFieldSpec:
    """Everything the latent vector field needs for one batch of windows.

    ``L`` and ``M`` are (..., N, N) operators broadcastable against the state
    (..., N, d). ``E`` holds encoder features (..., N, d_e); ``wind_feat``
    (..., N, 2) feeds the transport gate and ``wind_speed`` (..., N) the
    spectral multiplier. ``dropout_mask`` multiplies the residual network's
    hidden layer.
    """

    mode: str = "full"
    D: object = 0.0
    L: np.ndarray | None = None
    M: np.ndarray | None = None
    gate: object = None
    spectral: object = None
    residual: ResidualParams | None = None
    E: object = None
    wind_feat: np.ndarray | None = None
    wind_speed: np.ndarray | None = None
    dropout_mask: np.ndarray | None = None
    activation: str = "tanh"
    _e_proj: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown vector-field mode {self.mode!r}")

    def encoder_projection(self):
        if self._e_proj is None:
            self._e_proj = ad.add(ad.matmul(self.E, self.residual.W_e), self.residual.b1)
        return self._e_proj


def residual_field(z, spec):
    r = spec.residual
    pre = ad.matmul(z, r.W_z)
    if spec.E is not None:
        pre = ad.add(pre, spec.encoder_projection())
    else:
        pre = ad.add(pre, r.b1)
    hidden = ad.tanh(pre)
    if spec.dropout_mask is not None:
        hidden = ad.mul(hidden, spec.dropout_mask)
    return ad.add(ad.matmul(hidden, r.W2), r.b2)


def vector_field(z, t, spec):
    """dz/dt for the latent state ``z`` (..., N, d) at time ``t``."""
    if not _finite(z):
        raise ValueError(f"non-finite latent state at t={t}")
    flat = ad.value(z).ndim == 1
    if flat:
        z = ad.reshape(z, (-1, 1))
    if spec.mode == "linear_theory":
        out = ad.mul(ad.matmul(spec.L, z), ad.neg(spec.D) if isinstance(spec.D, ad.Tensor)
                     else -spec.D) if spec.L is not None else None
        if spec.M is not None:
            adv = ad.matmul(spec.M, z)
            out = adv if out is None else ad.add(out, adv)
        if out is None:
            out = ad.mul(z, 0.0)
        return ad.reshape(out, (-1,)) if flat else out

    g = spec.gate
    if spec.mode == "diffusion_only":
        out = k_hop_propagate(spec.L, z, g.theta_diff, spec.activation)
    elif spec.mode == "advection_only":
        out = k_hop_propagate(spec.M, z, g.theta_adv, spec.activation)
    else:
        h_diff = k_hop_propagate(spec.L, z, g.theta_diff, spec.activation)
        h_adv = k_hop_propagate(spec.M, z, g.theta_adv, spec.activation)
        out, _ = transport_gate(h_diff, h_adv, spec.wind_feat, g)
    if spec.spectral is not None:
        seq = ad.reshape(z, (1,) + ad.value(z).shape)
        spec_term = fourier_pde_step(seq, spec.spectral, spec.D, spec.wind_speed, dt=1.0, t=t)
        out = ad.add(out, ad.reshape(spec_term, ad.value(z).shape))
    if spec.residual is not None:
        out = ad.add(out, residual_field(z, spec))
    return ad.reshape(out, (-1,)) if flat else out


def dropout_mask(rng, shape, rate):
    """Inverted-dropout mask: zeros with probability ``rate``, else 1/(1-rate)."""
    if rate <= 0.0:
        return None
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    return (rng.random(shape) >= rate) / (1.0 - rate)


def mc_trajectories(spec, z0_samples, times, cfg=None, dropout_rate=0.1, seed=0):
    """Integrate each initial state with its own fixed dropout mask.

    Masks for sample ``s`` come from ``default_rng([seed, s])`` so the ensemble
    is reproducible and independent of evaluation order.
    """
    if len(z0_samples) < 1:
        raise ValueError("need at least one initial state")
    out = []
    for s, z0 in enumerate(z0_samples):
        mask = None
        if spec.residual is not None:
            shape = ad.value(z0).shape[:-1] + (spec.residual.hidden,)
            mask = dropout_mask(np.random.default_rng([seed, s]), shape, dropout_rate)
        member = replace(spec, dropout_mask=mask, _e_proj=None)
        out.append(odeint(lambda t, z, m=member: vector_field(z, t, m), z0, times, cfg))
    return out
