import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neuroddaf import autodiff as ad
from neuroddaf.spectral import (
    SpectralCoefs, dft_forward, dft_inverse, fourier_pde_step, init_spectral_weights,
    spectral_multiplier,
)
from gradcheck import directional_errors


def plain_weights(d, m, scale=1.0):
    w = init_spectral_weights(np.random.default_rng(0), d, m, mode_scale=scale, residual=False)
    return w


# -------------------------------------------------------------------- DFT

def test_constant_signal_is_dc_only():
    X = np.full((24, 3), 2.5)
    c = dft_forward(X).coefs
    np.testing.assert_allclose(c[0], 24 * 2.5, atol=1e-10)
    assert np.abs(c[1:]).max() < 1e-10


def test_zero_signal():
    assert np.all(dft_forward(np.zeros(10)).coefs == 0)


def test_pure_tone_bin():
    T = 24
    t = np.arange(T)
    c = dft_forward(np.cos(2 * np.pi * 3 * t / T)).coefs
    mag = np.abs(c)
    assert mag[3] == pytest.approx(12.0, abs=1e-9)
    assert np.delete(mag, 3).max() < 1e-9


def test_matches_numpy_rfft():
    x = np.random.default_rng(0).standard_normal((17, 2, 3))
    np.testing.assert_allclose(dft_forward(x).coefs, np.fft.rfft(x, axis=0), atol=1e-10)


@pytest.mark.parametrize("T", [24, 23, 1, 2])
def test_roundtrip(T):
    x = np.random.default_rng(T).standard_normal((T, 4))
    assert np.abs(dft_inverse(dft_forward(x)) - x).max() < 1e-10


def test_unit_dc_inverse_is_one_over_T():
    T = 12
    c = np.zeros(T // 2 + 1, dtype=complex)
    c[0] = 1.0
    np.testing.assert_allclose(dft_inverse(SpectralCoefs(c, T)), 1.0 / T, atol=1e-15)


def test_real_input_dc_and_nyquist_real():
    x = np.random.default_rng(2).standard_normal(16)
    c = dft_forward(x).coefs
    assert abs(c[0].imag) < 1e-10 and abs(c[-1].imag) < 1e-10


def test_dft_errors():
    with pytest.raises(ValueError):
        dft_forward(np.array([1.0, np.nan]))
    with pytest.raises(ValueError, match="inconsistent"):
        dft_inverse(SpectralCoefs(np.zeros(3, dtype=complex), 10))


# ------------------------------------------------------------- multiplier

def test_multiplier_examples():
    for v in (0.0, 2.3, -7.0):
        # zero wavenumber means v.k = 0 for every wind vector
        assert spectral_multiplier(0.0, v * 0.0, 0.7, 1.0) == 1.0
    assert abs(spectral_multiplier(1.0, np.pi, 0.0, 1.0)) == pytest.approx(1.0, abs=1e-15)
    assert spectral_multiplier(1.0, 0.0, 1.0, 1.0) == pytest.approx(np.exp(-1.0), abs=1e-12)
    assert spectral_multiplier(1.0, 0.0, 1.0, 1.0).real == pytest.approx(0.36788, abs=1e-5)


def test_multiplier_rejects_negative():
    with pytest.raises(ValueError):
        spectral_multiplier(1.0, 0.0, -0.1, 1.0)
    with pytest.raises(ValueError):
        spectral_multiplier(1.0, 0.0, 0.1, -1.0)


def test_multiplier_modulus_grid():
    rng = np.random.default_rng(0)
    D, k2, dt = rng.uniform(0, 3, (3, 1000))
    vk = rng.uniform(-10, 10, 1000)
    h = np.abs(spectral_multiplier(k2, vk, D, dt))
    assert np.all(h <= 1.0 + 1e-15)
    strict = D * k2 * dt > 1e-12
    assert np.all(h[strict] < 1.0)


# ---------------------------------------------------------------- step

def test_identity_multiplier_returns_input():
    Z = np.random.default_rng(0).standard_normal((24, 5, 3))
    out = fourier_pde_step(Z, plain_weights(3, 13), D=0.0, dt=1.0)
    np.testing.assert_allclose(ad.value(out), Z, atol=1e-9)


def test_zero_weights_zero_output():
    Z = np.random.default_rng(1).standard_normal((24, 5, 3))
    out = fourier_pde_step(Z, plain_weights(3, 8, scale=0.0), D=0.3)
    assert np.all(ad.value(out) == 0.0)


def test_single_mode_is_temporal_mean():
    Z = np.random.default_rng(2).standard_normal((24, 5, 3))
    out = ad.value(fourier_pde_step(Z, plain_weights(3, 1), D=0.0, modes=1))
    np.testing.assert_allclose(out, np.broadcast_to(Z.mean(axis=0), Z.shape), atol=1e-12)


def test_too_many_modes_rejected():
    with pytest.raises(ValueError):
        fourier_pde_step(np.zeros((4, 2, 1)), plain_weights(1, 8), D=0.0, modes=8)


def test_modes_clamped_for_short_sequence():
    out = fourier_pde_step(np.ones((1, 2, 3)), plain_weights(3, 8), D=0.5)
    np.testing.assert_allclose(ad.value(out), 1.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 2.0), st.integers(2, 30))
def test_nonexpansive_with_unit_weights(seed, D, T):
    rng = np.random.default_rng(seed)
    d = 3
    w = plain_weights(d, 8)
    phase = rng.uniform(0, 2 * np.pi, (8, d))
    w.mode_re.data = np.cos(phase)
    w.mode_im.data = np.sin(phase)
    Z = rng.standard_normal((T, 4, d))
    out = ad.value(fourier_pde_step(Z, w, D=D, wind_speed=rng.uniform(0, 1, 4)))
    assert np.all(np.linalg.norm(out, axis=0) <= np.linalg.norm(Z, axis=0) + 1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_linear_without_residual(seed, a, b):
    rng = np.random.default_rng(seed)
    w = plain_weights(2, 5)
    w.mode_re.data = rng.standard_normal((5, 2))
    w.mode_im.data = rng.standard_normal((5, 2))
    X, Y = rng.standard_normal((2, 12, 3, 2))
    wind = rng.uniform(0, 1, 3)

    def step(z):
        return ad.value(fourier_pde_step(z, w, D=0.2, wind_speed=wind))

    np.testing.assert_allclose(step(a * X + b * Y), a * step(X) + b * step(Y), atol=1e-9)


def test_output_is_real():
    Z = np.random.default_rng(4).standard_normal((9, 3, 2))
    w = init_spectral_weights(np.random.default_rng(1), 2, 4)
    out = ad.value(fourier_pde_step(Z, w, D=0.1, wind_speed=np.full(3, 0.4)))
    assert out.dtype == np.float64 and out.shape == Z.shape
    # explicit complex oracle: the same step computed with numpy FFTs has no
    # imaginary part beyond round-off
    w.residual = False
    ours = ad.value(fourier_pde_step(Z, w, D=0.1, wind_speed=np.full(3, 0.4)))
    n = Z.shape[0]
    k = 2 * np.pi * np.arange(n // 2 + 1) / n
    c = np.fft.rfft(Z, axis=0)
    H = np.exp(-0.1 * k ** 2)[:, None, None] * np.exp(-1j * k[:, None, None] * 0.4)
    W = (w.mode_re.data + 1j * w.mode_im.data)[:, None, :]
    full = np.zeros_like(c)
    full[:4] = (W * H[:4] * c[:4])
    spec = np.concatenate([full, np.conj(full[1:(n + 1) // 2][::-1])], axis=0)
    direct = np.fft.ifft(spec, axis=0)
    assert np.abs(direct.imag).max() < 1e-10
    np.testing.assert_allclose(ours, direct.real, atol=1e-10)


def test_spectral_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    w = init_spectral_weights(rng, 2, 4, residual_scale=1.0)
    w.mode_im.data = rng.standard_normal(w.mode_im.shape)
    D = ad.Tensor(np.array(0.3), requires_grad=True)
    Z = rng.standard_normal((10, 3, 2))
    params = [w.mode_re, w.mode_im, w.W1, w.b1, w.W2, w.b2, D]

    def loss(_):
        out = fourier_pde_step(Z, w, D, wind_speed=np.full(3, 0.5), t=0.2)
        return ad.total(ad.mul(out, out))

    assert directional_errors(loss, params).max() < 1e-4
