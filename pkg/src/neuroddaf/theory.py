"""Numerical checks of the well-posedness, stability and uncertainty results.

Each top-level check corresponds to one standing assumption of the theory
(well-posedness, transport core, spectral prior, residual size, integrator,
fusion and UQ) and is made of named sub-checks.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .fusion import ensemble_stats
from .graphnet import (Station, advection_from_wind, build_graph, init_gate_params,
                       laplacian_from_weights, smallest_positive_eigenvalue)
from .odecore import (OdeConfig, VectorFieldSpec, fixed_step_integrate, init_residual_params,
                      odeint, vector_field)
from .spectral import init_spectral_weights, spectral_multiplier


@dataclass
class SubCheck:
    name: str
    passed: bool
    detail: str


@dataclass
class CheckResult:
    name: str
    subchecks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(s.passed for s in self.subchecks)

    def add(self, name, passed, detail):
        self.subchecks.append(SubCheck(name, bool(passed), detail))


def _random_laplacian(rng, n, density=0.6, connected=False):
    w = rng.uniform(0.1, 1.0, (n, n)) * (rng.random((n, n)) < density)
    w = np.triu(w, 1)
    if connected:
        idx = np.arange(n - 1)
        w[idx, idx + 1] = np.maximum(w[idx, idx + 1], 0.2)
    w = w + w.T
    return laplacian_from_weights(w)


def _random_skew(rng, n):
    lat = 40.0 + rng.uniform(-0.3, 0.3, n)
    lon = 116.0 + rng.uniform(-0.3, 0.3, n)
    g = build_graph([Station(str(i), a, b) for i, (a, b) in enumerate(zip(lat, lon))], 25.0, 60.0)
    speed = rng.uniform(1.0, 10.0, n)
    direction = rng.uniform(0.0, 360.0, n)
    return advection_from_wind(g.base_weight, g.bearing, speed, direction, 10.0, "theory")


def _norms(traj):
    return np.array([np.linalg.norm(ad.value(s)) for s in traj.states])


def _linear_field(D, L, M):
    spec = VectorFieldSpec(mode="linear_theory", D=D, L=L, M=M)
    return lambda t, z: vector_field(z, t, spec)


# ------------------------------------------------------------------ checks

def check_well_posedness(seed=0, n_pairs=1000):
    """Finite Lipschitz estimate, linear growth and bounded solutions."""
    res = CheckResult("well_posedness")
    rng = np.random.default_rng(seed)
    N, d = 6, 4
    L = _random_laplacian(rng, N, connected=True)
    M = _random_skew(rng, N)
    E = rng.normal(size=(N, 8))
    spec = VectorFieldSpec(
        mode="full", D=0.2, L=L, M=M, gate=init_gate_params(rng, d),
        spectral=init_spectral_weights(rng, d, mode_scale=0.5, residual_scale=0.1),
        residual=init_residual_params(rng, d, 8), E=E,
        wind_feat=rng.normal(size=(N, 2)), wind_speed=rng.uniform(0, 1, N))
    f = lambda z: ad.value(vector_field(z, 0.0, spec))  # noqa: E731
    z1 = rng.normal(size=(n_pairs, N, d))
    z2 = z1 + rng.normal(scale=0.1, size=z1.shape)
    num = np.linalg.norm((f(z1) - f(z2)).reshape(n_pairs, -1), axis=1)
    den = np.linalg.norm((z1 - z2).reshape(n_pairs, -1), axis=1)
    lip = float(np.max(num / den))
    res.add("lipschitz_estimate", np.isfinite(lip), f"max ratio {lip:.4g} over {n_pairs} pairs")
    growth = []
    for scale in (1.0, 10.0, 100.0, 1000.0):
        z = scale * rng.normal(size=(200, N, d))
        fz = np.linalg.norm(f(z).reshape(200, -1), axis=1)
        growth.append(float(np.max(fz / (1.0 + np.linalg.norm(z.reshape(200, -1), axis=1)))))
    ok = np.all(np.isfinite(growth)) and growth[-1] <= 2.0 * max(growth[:-1])
    res.add("linear_growth", ok, "sup |f|/(1+|z|) by scale: " +
            ", ".join(f"{g:.3g}" for g in growth))
    traj = odeint(lambda t, z: vector_field(z, t, spec), rng.normal(size=(N, d)),
                  np.linspace(0, 5, 11), OdeConfig(rtol=1e-6, atol=1e-6))
    norms = _norms(traj)
    res.add("finite_solution", np.all(np.isfinite(norms)),
            f"|z(5)| = {norms[-1]:.4g}, {traj.n_accepted} steps")
    return res


def check_transport_core(seed=0, n_graphs=50, slack=1e-6):
    """Diffusion contracts, skew advection preserves norm, heat kernel, dissipativity."""
    res = CheckResult("transport_core")
    rng = np.random.default_rng(seed)
    cfg = OdeConfig(rtol=1e-8, atol=1e-10)
    times = np.linspace(0.0, 3.0, 31)
    worst, psd_min = 0.0, np.inf
    for _ in range(n_graphs):
        n = int(rng.integers(3, 13))
        L = _random_laplacian(rng, n)
        psd_min = min(psd_min, float(np.linalg.eigvalsh(L)[0]))
        D = float(rng.uniform(0.1, 2.0))
        traj = odeint(_linear_field(D, L, None), rng.normal(size=n), times, cfg)
        worst = max(worst, float(np.max(np.diff(_norms(traj)))))
    res.add("laplacian_psd", psd_min > -1e-10, f"min eigenvalue {psd_min:.3g}")
    res.add("diffusion_contractive", worst <= slack,
            f"largest norm increase {worst:.3g} over {n_graphs} graphs")

    ratios = []
    for _ in range(10):
        n = int(rng.integers(3, 10))
        M = _random_skew(rng, n)
        traj = odeint(_linear_field(0.0, None, M), rng.normal(size=n), [0.0, 1.0], cfg)
        nz = _norms(traj)
        ratios.append(nz[-1] / nz[0])
    dev = float(np.max(np.abs(np.array(ratios) - 1.0)))
    res.add("advection_norm_preserving", dev <= 1e-4, f"max | |z(1)|/|z(0)| - 1 | = {dev:.3g}")

    L2 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    tk = np.array([0.0, 0.1, 0.5, 1.0])
    traj = odeint(_linear_field(1.0, L2, None), np.array([1.0, 0.0]), tk,
                  OdeConfig(rtol=1e-5, atol=1e-5))
    got = np.array([ad.value(s) for s in traj.states])
    e = np.exp(-2.0 * tk)
    exact = np.stack([(1 + e) / 2, (1 - e) / 2], axis=1)
    err = float(np.max(np.abs(got - exact)))
    res.add("heat_kernel", err < 1e-5, f"max error {err:.3g} at t in (0.1, 0.5, 1.0)")

    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(3, 10))
        L = _random_laplacian(rng, n)
        M = _random_skew(rng, n)
        traj = odeint(_linear_field(float(rng.uniform(0.1, 1.0)), L, M), rng.normal(size=n),
                      times, cfg)
        worst = max(worst, float(np.max(np.diff(_norms(traj)))))
    res.add("dissipative_core", worst <= slack, f"largest norm increase {worst:.3g}")
    return res


def check_spectral_prior(seed=0, n_points=1000):
    """|H| <= 1 on a random grid, with equality exactly when D |k|^2 dt = 0."""
    res = CheckResult("spectral_prior")
    rng = np.random.default_rng(seed)
    D = rng.uniform(0.0, 2.0, n_points)
    k2 = rng.uniform(0.0, np.pi ** 2, n_points)
    vk = rng.uniform(-5.0, 5.0, n_points)
    dt = rng.uniform(0.0, 2.0, n_points)
    # force some exact zeros of each factor
    D[:50], k2[50:100], dt[100:150] = 0.0, 0.0, 0.0
    mod = np.abs(spectral_multiplier(k2, vk, D, dt))
    res.add("modulus_bounded", np.all(mod <= 1.0 + 1e-15), f"max |H| = {mod.max():.17g}")
    zero = D * k2 * dt == 0
    eq_ok = np.all(np.abs(mod[zero] - 1.0) < 1e-14) and np.all(mod[~zero] < 1.0)
    res.add("equality_iff_zero_decay", eq_ok,
            f"{int(zero.sum())} zero-decay points at |H| = 1, others below 1")
    return res


def check_residual_size(seed=0):
    """Mean-free decay under a residual with L_phi = 0.1 D lambda_min+."""
    res = CheckResult("residual_size")
    rng = np.random.default_rng(seed)
    n = 8
    L = _random_laplacian(rng, n, connected=True)
    lam = smallest_positive_eigenvalue(L)
    D = 0.5
    eps = 0.1 * D * lam

    def f(t, z):
        return -D * (L @ ad.value(z)) + eps * np.tanh(ad.value(z))

    rate = D * lam - eps
    times = np.linspace(0.0, 6.0 / rate, 60)
    traj = odeint(f, rng.normal(size=n) + 2.0, times, OdeConfig(rtol=1e-10, atol=1e-12))
    z = np.array([ad.value(s) for s in traj.states])
    perp = np.linalg.norm(z - z.mean(axis=1, keepdims=True), axis=1)
    sel = times >= 1.0 / rate
    slope, icept = np.polyfit(times[sel], np.log(perp[sel]), 1)
    pred = slope * times[sel] + icept
    y = np.log(perp[sel])
    r2 = 1.0 - np.sum((y - pred) ** 2) / np.sum((y - y.mean()) ** 2)
    rho = -float(slope)
    res.add("lipschitz_margin", eps < D * lam, f"L_phi = {eps:.4g} < D lambda+ = {D * lam:.4g}")
    res.add("mean_free_decay", rho > 0 and r2 >= 0.99,
            f"fitted rho = {rho:.4g} (bound {rate:.4g}), R^2 = {r2:.5f}")
    return res


def convergence_order(steps=(16, 32, 64, 128, 256, 512), t_end=10.0):
    """Least-squares slope of log2(error) against log2(1/h) for z' = -z."""
    errs = []
    for n in steps:
        z = ad.value(fixed_step_integrate(lambda t, z: ad.neg(z), np.array([1.0]), t_end, n))
        errs.append(abs(float(z[0]) - np.exp(-t_end)) / np.exp(-t_end))
    slope = -np.polyfit(np.log2(steps), np.log2(errs), 1)[0]
    return float(slope), errs


def check_integrator():
    res = CheckResult("integrator")
    order, errs = convergence_order()
    res.add("fixed_step_order", order >= 4.0,
            f"observed order {order:.3f}; errors {errs[0]:.2e} .. {errs[-1]:.2e}")
    traj = odeint(lambda t, z: ad.neg(z), np.array([1.0]), [0.0, 1.0],
                  OdeConfig(rtol=1e-5, atol=1e-5))
    err = abs(float(ad.value(traj.states[-1])[0]) - np.exp(-1.0))
    res.add("adaptive_accuracy", err <= 1e-5,
            f"|z(1) - e^-1| = {err:.3g} with {traj.n_accepted} accepted steps")
    return res


def check_fusion_uq(seed=0, n=10_000):
    """Convex-fusion MSE identity and bounds, oracle gate, total variance."""
    res = CheckResult("fusion_uq")
    rng = np.random.default_rng(seed)
    y, a, b = rng.normal(size=(3, n)) * rng.uniform(0.1, 10.0, (3, 1))
    g = rng.uniform(0.0, 1.0, n)
    yhat = g * a + (1 - g) * b
    ea, eb = y - a, y - b
    lhs = (y - yhat) ** 2
    rhs = g * ea ** 2 + (1 - g) * eb ** 2 - g * (1 - g) * (a - b) ** 2
    scale = np.maximum(g * ea ** 2 + (1 - g) * eb ** 2, 1e-300)
    rel = float(np.max(np.abs(lhs - rhs) / scale))
    res.add("mse_identity", rel <= 1e-12, f"max relative deviation {rel:.3g}")
    res.add("mse_bound", np.all(lhs <= g * ea ** 2 + (1 - g) * eb ** 2 + 1e-12 * scale),
            "squared error below convex combination of branch errors")
    res.add("mae_bound", np.all(np.abs(y - yhat) <= g * np.abs(ea) + (1 - g) * np.abs(eb)
                                + 1e-12 * np.sqrt(scale)), "absolute error convexity")
    gstar = (ea ** 2 < eb ** 2).astype(float)
    oracle = (y - (gstar * a + (1 - gstar) * b)) ** 2
    res.add("oracle_gate", np.array_equal(oracle, np.minimum(ea ** 2, eb ** 2)),
            "indicator gate attains min branch error")

    worst = 0.0
    for S in (1, 2, 3, 7, 20):
        means = [rng.normal(size=(5, 4)) * 3 for _ in range(S)]
        variances = [rng.uniform(0.1, 2.0, (5, 4)) for _ in range(S)]
        ens = ensemble_stats(means, variances)
        # mixture moments: Var = E[y^2] - E[y]^2 with E[y^2] = mean(v_s + m_s^2)
        m1 = np.mean(means, axis=0)
        m2 = np.mean([v + m ** 2 for m, v in zip(means, variances)], axis=0)
        worst = max(worst, float(np.max(np.abs(ad.value(ens.var_total) - (m2 - m1 ** 2))
                                        / (m2 - m1 ** 2))))
        worst = max(worst, float(np.max(np.abs(ad.value(ens.var_total) -
                                               ad.value(ens.var_aleatoric) -
                                               ad.value(ens.var_epistemic)))))
    res.add("total_variance", worst <= 1e-12, f"max deviation {worst:.3g}")
    return res


CHECKS = {
    "well_posedness": check_well_posedness,
    "transport_core": check_transport_core,
    "spectral_prior": check_spectral_prior,
    "residual_size": check_residual_size,
    "integrator": check_integrator,
    "fusion_uq": check_fusion_uq,
}


def run_all(seed=0):
    out = []
    for name, fn in CHECKS.items():
        out.append(fn() if name == "integrator" else fn(seed=seed))
    return out


def format_matrix(results):
    lines = [f"{'check':<16} {'subcheck':<28} result  detail"]
    for r in results:
        for s in r.subchecks:
            lines.append(f"{r.name:<16} {s.name:<28} {'PASS' if s.passed else 'FAIL':<7} "
                         f"{s.detail}")
    lines.append(f"overall: {'PASS' if all(r.passed for r in results) else 'FAIL'}")
    return "\n".join(lines)
