import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neuroddaf import autodiff as ad
from neuroddaf.graphnet import init_gate_params, laplacian_from_weights
from neuroddaf.odecore import (
    OdeConfig, SolverError, VectorFieldSpec, dopri5_step, dropout_mask,
    fixed_step_integrate, init_residual_params, mc_trajectories, odeint, residual_field,
    vector_field,
)
from neuroddaf.fusion import ensemble_stats
from neuroddaf.spectral import init_spectral_weights
from gradcheck import directional_errors

TWO_NODE_L = np.array([[1.0, -1.0], [-1.0, 1.0]])


def decay(t, z):
    return -z


def random_laplacian(rng, n):
    w = np.triu(rng.uniform(0.1, 1.0, (n, n)), 1)
    return laplacian_from_weights(w + w.T)


def skew(rng, n, scale=0.5):
    a = rng.normal(0, scale, (n, n))
    return 0.5 * (a - a.T)


# ------------------------------------------------------------------- config

def test_config_validation():
    with pytest.raises(ValueError):
        OdeConfig(rtol=0)
    with pytest.raises(ValueError):
        OdeConfig(max_steps=0)
    with pytest.raises(ValueError):
        OdeConfig(safety=1.0)


# --------------------------------------------------------------- single step

def test_step_zero_field():
    z = np.array([1.0, -2.0])
    z1, err = dopri5_step(lambda t, z: np.zeros_like(z), z, 0.0, 0.3)
    assert np.array_equal(ad.value(z1), z) and err == 0.0


def test_step_constant_field_exact():
    z = np.array([1.0, -2.0, 0.25])
    z1, err = dopri5_step(lambda t, z: np.ones_like(z), z, 0.0, 0.5)
    np.testing.assert_allclose(ad.value(z1), z + 0.5, rtol=0, atol=1e-15)
    assert err < 1e-15


def test_step_exponential():
    z1, _ = dopri5_step(decay, np.array([1.0]), 0.0, 0.1)
    z1 = ad.value(z1)[0]
    assert z1 == pytest.approx(math.exp(-0.1), abs=1e-9)
    assert z1 == pytest.approx(0.904837, abs=1e-6)


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_step_nonfinite_stage_flags_failure():
    def blowup(t, z):
        return np.full_like(z, np.inf) if t > 0 else z
    _, err = dopri5_step(blowup, np.ones(2), 0.0, 0.1)
    assert err == float("inf")


def test_step_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        dopri5_step(decay, np.ones(1), 0.0, 0.0)


# ------------------------------------------------------------------- odeint

def test_odeint_exponential():
    traj = odeint(decay, np.array([1.0]), [0.0, 1.0], OdeConfig(rtol=1e-5, atol=1e-5))
    assert abs(ad.value(traj.states[-1])[0] - math.exp(-1)) < 1e-5


def test_odeint_zero_field_constant():
    z0 = np.array([3.0, -1.0])
    traj = odeint(lambda t, z: np.zeros_like(z), z0, np.linspace(0, 2, 7))
    for s in traj.states:
        assert np.array_equal(ad.value(s), z0)


def test_odeint_rotation():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    traj = odeint(lambda t, z: A @ z, np.array([1.0, 0.0]), [0.0, np.pi])
    np.testing.assert_allclose(ad.value(traj.states[-1]), [-1.0, 0.0], atol=1e-4)


def test_dense_output_accuracy():
    times = np.linspace(0, 3, 31)
    traj = odeint(decay, np.array([1.0]), times, OdeConfig(rtol=1e-8, atol=1e-8))
    got = traj.stacked()[:, 0]
    np.testing.assert_allclose(got, np.exp(-times), atol=1e-7)
    # far fewer accepted steps than output times
    assert traj.n_accepted < len(times)


def test_odeint_errors():
    with pytest.raises(ValueError):
        odeint(decay, np.ones(1), [0.0, 0.0])
    with pytest.raises(ValueError):
        odeint(decay, np.array([np.nan]), [0.0, 1.0])
    with pytest.raises(SolverError, match="max_steps"):
        odeint(decay, np.ones(1), [0.0, 100.0], OdeConfig(max_steps=3, initial_dt=1e-3))
    with pytest.raises(SolverError, match="min_dt"):
        # singular right-hand side at t = 1
        odeint(lambda t, z: np.array([1.0 / (1.0 - t) ** 3]), np.zeros(1), [0.0, 2.0],
               OdeConfig(min_dt=1e-6, max_steps=100_000))


def test_tolerance_monotone_on_exponential():
    errs = []
    for tol in (1e-3, 5e-4, 2.5e-4, 1.25e-4, 6.25e-5, 3.125e-5):
        traj = odeint(decay, np.array([1.0]), [0.0, 2.0], OdeConfig(rtol=tol, atol=tol))
        errs.append(abs(ad.value(traj.states[-1])[0] - math.exp(-2.0)))
    assert all(b <= a for a, b in zip(errs, errs[1:]))


def test_heat_kernel_two_nodes():
    spec = VectorFieldSpec(mode="linear_theory", D=1.0, L=TWO_NODE_L)
    times = [0.0, 0.1, 0.5, 1.0]
    traj = odeint(lambda t, z: vector_field(z, t, spec), np.array([1.0, 0.0]), times)
    for t, z in zip(times, traj.states):
        e = math.exp(-2 * t)
        np.testing.assert_allclose(ad.value(z), [(1 + e) / 2, (1 - e) / 2], atol=1e-5)


# ------------------------------------------------------------- fixed step

def test_fixed_step_single_step_constant_field():
    out = fixed_step_integrate(lambda t, z: np.ones_like(z), np.array([2.0]), 3.0, 1)
    assert ad.value(out)[0] == 5.0


def test_fixed_step_convergence_order():
    ns = [16, 32, 64, 128, 256, 512]
    errs = [abs(ad.value(fixed_step_integrate(decay, np.array([1.0]), 1.0, n))[0] - math.exp(-1))
            for n in ns]
    slopes = [math.log2(a / b) for a, b in zip(errs[:3], errs[1:4])]
    # beyond n = 128 the error reaches round-off, so the slope is read early
    assert min(slopes) >= 4.5
    runs = [ad.value(fixed_step_integrate(decay, np.array([1.0]), 1.0, 37)) for _ in range(2)]
    assert runs[0].tobytes() == runs[1].tobytes()


# ------------------------------------------------------------- vector field

def test_linear_theory_constant_is_fixed_point():
    rng = np.random.default_rng(0)
    spec = VectorFieldSpec(mode="linear_theory", D=0.7, L=random_laplacian(rng, 5))
    np.testing.assert_allclose(ad.value(vector_field(np.full(5, 2.0), 0.0, spec)), 0.0,
                               atol=1e-14)


def test_linear_theory_two_node_by_hand():
    spec = VectorFieldSpec(mode="linear_theory", D=1.0, L=TWO_NODE_L)
    np.testing.assert_allclose(ad.value(vector_field(np.array([1.0, 0.0]), 0.0, spec)),
                               [-1.0, 1.0])


def zeroed(tensors):
    for t in tensors:
        t.data[:] = 0.0


def test_full_mode_zero_params_zero_field():
    rng = np.random.default_rng(1)
    d = 3
    gate = init_gate_params(rng, d)
    spectral = init_spectral_weights(rng, d, 8)
    res = init_residual_params(rng, d, 6)
    zeroed([gate.W_alpha, gate.b_alpha, gate.W_phi, gate.b_phi, *gate.theta_diff,
            *gate.theta_adv, spectral.mode_re, spectral.mode_im, spectral.W1, spectral.b1,
            spectral.W2, spectral.b2, res.W_z, res.W_e, res.b1, res.W2, res.b2])
    spec = VectorFieldSpec(mode="full", D=0.5, L=random_laplacian(rng, 4),
                           M=rng.uniform(0, .3, (4, 4)), gate=gate, spectral=spectral,
                           residual=res, E=rng.standard_normal((4, 6)),
                           wind_feat=rng.standard_normal((4, 2)),
                           wind_speed=rng.uniform(0, 1, 4))
    out = ad.value(vector_field(rng.standard_normal((4, d)), 0.3, spec))
    assert np.all(out == 0.0)


def test_vector_field_rejects_nonfinite():
    spec = VectorFieldSpec(mode="linear_theory", D=1.0, L=TWO_NODE_L)
    with pytest.raises(ValueError):
        vector_field(np.array([np.nan, 0.0]), 0.0, spec)
    with pytest.raises(ValueError):
        VectorFieldSpec(mode="bogus")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 2.0))
def test_dissipative_linear_core(seed, D):
    rng = np.random.default_rng(seed)
    n = 6
    spec = VectorFieldSpec(mode="linear_theory", D=D, L=random_laplacian(rng, n),
                           M=skew(rng, n))
    traj = odeint(lambda t, z: vector_field(z, t, spec), rng.standard_normal(n),
                  np.linspace(0, 3, 16))
    norms = [np.linalg.norm(s) for s in traj.states]
    assert all(b <= a + 1e-6 for a, b in zip(norms, norms[1:]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_advection_preserves_norm(seed):
    rng = np.random.default_rng(seed)
    spec = VectorFieldSpec(mode="linear_theory", D=0.0, L=None, M=skew(rng, 5, 1.0))
    z0 = rng.standard_normal(5)
    traj = odeint(lambda t, z: vector_field(z, t, spec), z0, [0.0, 1.0])
    ratio = np.linalg.norm(traj.states[-1]) / np.linalg.norm(z0)
    assert 1 - 1e-4 <= ratio <= 1 + 1e-4


# ------------------------------------------------------------- MC ensemble

def small_spec(rng, n=4, d=2):
    return VectorFieldSpec(mode="full", D=0.3, L=random_laplacian(rng, n),
                           M=rng.uniform(0, .2, (n, n)), gate=init_gate_params(rng, d),
                           residual=init_residual_params(rng, d, 3, hidden=8, out_scale=1.0),
                           E=rng.standard_normal((n, 3)), wind_feat=rng.standard_normal((n, 2)))


def test_mc_single_member_matches_odeint():
    rng = np.random.default_rng(3)
    spec = small_spec(rng)
    z0 = rng.standard_normal((4, 2))
    times = [0.0, 0.5, 1.0]
    (only,) = mc_trajectories(spec, [z0], times, dropout_rate=0.0)
    direct = odeint(lambda t, z: vector_field(z, t, spec), z0, times)
    for a, b in zip(only.states, direct.states):
        assert np.array_equal(ad.value(a), ad.value(b))


def test_mc_identical_members_without_dropout():
    rng = np.random.default_rng(4)
    spec = small_spec(rng)
    z0 = rng.standard_normal((4, 2))
    trajs = mc_trajectories(spec, [z0] * 3, [0.0, 1.0], dropout_rate=0.0)
    finals = [ad.value(t.states[-1]) for t in trajs]
    assert all(f.tobytes() == finals[0].tobytes() for f in finals)
    ens = ensemble_stats(finals)
    assert np.all(ad.value(ens.var_epistemic) == 0.0)


def test_mc_reproducible_and_dropout_varies_members():
    rng = np.random.default_rng(5)
    spec = small_spec(rng)
    z0 = rng.standard_normal((4, 2))
    run = [mc_trajectories(spec, [z0] * 3, [0.0, 1.0], dropout_rate=0.3, seed=7)
           for _ in range(2)]
    a = np.stack([ad.value(t.states[-1]) for t in run[0]])
    b = np.stack([ad.value(t.states[-1]) for t in run[1]])
    assert a.tobytes() == b.tobytes()
    assert a.var(axis=0).max() > 0


def test_dropout_mask_properties():
    assert dropout_mask(np.random.default_rng(0), (3,), 0.0) is None
    m = dropout_mask(np.random.default_rng(0), (100_000,), 0.25)
    assert set(np.unique(m)) <= {0.0, 1 / 0.75}
    assert abs(m.mean() - 1.0) < 0.01


def test_lipschitz_estimate_finite_and_growth_linear():
    rng = np.random.default_rng(6)
    spec = small_spec(rng)
    zs = rng.standard_normal((1000, 2, 4, 2)) * 3
    ratios = []
    for a, b in zs:
        fa, fb = ad.value(vector_field(a, 0.0, spec)), ad.value(vector_field(b, 0.0, spec))
        ratios.append(np.linalg.norm(fa - fb) / np.linalg.norm(a - b))
    assert np.isfinite(max(ratios))
    traj = odeint(lambda t, z: vector_field(z, t, spec), rng.standard_normal((4, 2)),
                  np.linspace(0, 20, 5))
    assert all(np.all(np.isfinite(ad.value(s))) for s in traj.states)


def test_residual_gradients_match_finite_differences():
    rng = np.random.default_rng(9)
    res = init_residual_params(rng, 2, 3, hidden=6, out_scale=1.0)
    E = rng.standard_normal((4, 3))
    z = rng.standard_normal((4, 2))
    mask = dropout_mask(np.random.default_rng(1), (4, 6), 0.2)
    params = [res.W_z, res.W_e, res.b1, res.W2, res.b2]

    def loss(_):
        spec = VectorFieldSpec(residual=res, E=E, dropout_mask=mask)
        out = residual_field(z, spec)
        return ad.total(ad.mul(out, out))

    assert directional_errors(loss, params).max() < 1e-4


def test_gradient_through_solver():
    rng = np.random.default_rng(10)
    spec = small_spec(rng)
    z0 = ad.Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    params = [z0, *spec.gate.theta_diff, spec.residual.W2]
    cfg = OdeConfig(rtol=1e-9, atol=1e-9)

    def loss(_):
        s = VectorFieldSpec(**{**spec.__dict__, "_e_proj": None})
        traj = odeint(lambda t, z: vector_field(z, t, s), z0, [0.0, 0.7, 1.0], cfg)
        return ad.total(ad.mul(traj.states[-1], traj.states[1]))

    # tight tolerances keep the frozen step sizes from biasing the comparison
    assert directional_errors(loss, params, n_dirs=20).max() < 1e-4
