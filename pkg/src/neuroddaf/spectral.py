"""Temporal Fourier transport step with learnable low-mode weights.

The real DFT is computed by direct summation against cached cosine/sine
matrices, so any sequence length works. On a tape it is recorded as the
linear primitives ``rdft``/``irdft``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad


@lru_cache(maxsize=64)
def dft_matrices(n):
    """Matrices for the real DFT of length ``n``.

    Returns ``(fwd_re, fwd_im, inv_re, inv_im)`` with coefficients
    ``re = fwd_re @ x``, ``im = fwd_im @ x`` and the inverse
    ``x = inv_re @ re + inv_im @ im``.
    """
    nb = n // 2 + 1
    k = np.arange(nb)[:, None]
    t = np.arange(n)[None, :]
    ang = 2.0 * np.pi * ((k * t) % n) / n
    fwd_re = np.cos(ang)
    fwd_im = -np.sin(ang)
    # Hermitian weights: DC and (even n) Nyquist bins count once
    w = np.full(nb, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    inv_re = (w[:, None] * np.cos(ang)).T / n
    inv_im = (-w[:, None] * np.sin(ang)).T / n
    for mat in (fwd_re, fwd_im, inv_re, inv_im):
        mat.setflags(write=False)
    return fwd_re, fwd_im, inv_re, inv_im


@dataclass
class SpectralCoefs:
    coefs: np.ndarray  # complex, frequency bins along axis 0
    length: int


def _apply_time(mat, x):
    # contract mat (a, b) with axis 0 of x (b, ...)
    return np.tensordot(mat, x, axes=(1, 0))


def dft_forward(signal):
    """Real-input DFT along axis 0, returning ``n // 2 + 1`` complex bins."""
    x = np.asarray(signal, dtype=float)
    if x.ndim == 0 or x.shape[0] < 1:
        raise ValueError("need a sequence of length >= 1")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains NaN or infinite values")
    fr, fi, _, _ = dft_matrices(x.shape[0])
    return SpectralCoefs(_apply_time(fr, x) + 1j * _apply_time(fi, x), x.shape[0])


def dft_inverse(coefs):
    c = np.asarray(coefs.coefs)
    n = coefs.length
    if n < 1 or c.shape[0] != n // 2 + 1:
        raise ValueError(f"{c.shape[0]} bins inconsistent with stored length {n}")
    _, _, ir, ii = dft_matrices(n)
    return _apply_time(ir, c.real) + _apply_time(ii, c.imag)


# Taped versions: complex values carried as a trailing (re, im) axis of size 2.

def rdft(x):
    v = ad.value(x)
    fr, fi, _, _ = dft_matrices(v.shape[0])
    out = np.stack([_apply_time(fr, v), _apply_time(fi, v)], axis=-1)
    return ad.record("rdft", out, (x,), v.shape[0])


def irdft(c, n):
    v = ad.value(c)
    if v.shape[0] != n // 2 + 1:
        raise ValueError(f"{v.shape[0]} bins inconsistent with length {n}")
    _, _, ir, ii = dft_matrices(n)
    out = _apply_time(ir, v[..., 0]) + _apply_time(ii, v[..., 1])
    return ad.record("irdft", out, (c,), n)


def _rdft_vjp(g, out, inputs, n):
    fr, fi, _, _ = dft_matrices(n)
    return (_apply_time(fr.T, g[..., 0]) + _apply_time(fi.T, g[..., 1]),)


def _irdft_vjp(g, out, inputs, n):
    _, _, ir, ii = dft_matrices(n)
    return (np.stack([_apply_time(ir.T, g), _apply_time(ii.T, g)], axis=-1),)


ad.register_primitive("rdft", _rdft_vjp)
ad.register_primitive("irdft", _irdft_vjp)


def spectral_multiplier(k_norm_sq, vk, D, dt):
    """exp(-D |k|^2 dt) * exp(-i (v.k) dt); modulus never exceeds one."""
    if np.any(np.asarray(D) < 0) or np.any(np.asarray(dt) < 0):
        raise ValueError("diffusion coefficient and time step must be nonnegative")
    return np.exp(-D * np.asarray(k_norm_sq) * dt) * np.exp(-1j * np.asarray(vk) * dt)


def bin_wavenumbers(n, dt=1.0):
    """Angular frequency of each real-DFT bin, spanning [0, pi/dt]."""
    return 2.0 * np.pi * np.arange(n // 2 + 1) / (n * dt)


@dataclass
class SpectralWeights:
    mode_re: ad.Tensor  # (m, d)
    mode_im: ad.Tensor
    W1: ad.Tensor  # residual network on (re, im, |k|, t)
    b1: ad.Tensor
    W2: ad.Tensor
    b2: ad.Tensor
    residual: bool = True

    @property
    def m(self):
        return self.mode_re.shape[0]


def init_spectral_weights(rng, latent_dim, modes=8, hidden=32, mode_scale=1.0,
                          residual=True, residual_scale=0.1):
    """Mode weights start at ``mode_scale + 0i``; the residual network starts small."""
    if modes < 1:
        raise ValueError("need at least one retained mode")
    return SpectralWeights(
        mode_re=ad.Tensor(np.full((modes, latent_dim), mode_scale), requires_grad=True),
        mode_im=ad.Tensor(np.zeros((modes, latent_dim)), requires_grad=True),
        W1=ad.Tensor(rng.normal(0, 0.5, (4, hidden)), requires_grad=True),
        b1=ad.Tensor(np.zeros(hidden), requires_grad=True),
        W2=ad.Tensor(rng.normal(0, residual_scale / np.sqrt(hidden), (hidden, 2)),
                     requires_grad=True),
        b2=ad.Tensor(np.zeros(2), requires_grad=True),
        residual=residual,
    )


def fourier_pde_step(Z, weights, D, wind_speed=None, dt=1.0, t=0.0, modes=None):
    """Filter a latent sequence along axis 0 in the temporal frequency domain.

    Z has shape (n, ..., N, d) with time first, stations second to last and
    channels last. The lowest ``modes`` bins are multiplied by the learned
    complex weight and the physics multiplier, the residual network is added
    (scaled by ``dt``), higher bins are dropped, and the result is inverted.
    ``wind_speed`` is a nondimensional advection speed broadcastable to
    (..., N); ``D`` may be a float or a scalar tensor.
    """
    n = ad.value(Z).shape[0]
    nb = n // 2 + 1
    if modes is None:
        modes = min(weights.m, nb)
    elif modes > nb or modes > weights.m:
        raise ValueError(f"{modes} modes requested but only {min(nb, weights.m)} available")
    coefs = rdft(Z)  # (nb, ..., N, d, 2)
    low = ad.index(coefs, slice(0, modes))
    lead = (modes,) + (1,) * (ad.value(Z).ndim - 2)

    k = bin_wavenumbers(n, dt)[:modes]
    k_sq = (k ** 2).reshape(lead + (1,))
    if wind_speed is None:
        phase = np.zeros(lead + (1,))
    else:
        v = np.asarray(wind_speed, dtype=float)[..., None]  # (..., N, 1)
        phase = k.reshape(lead + (1,)) * v * dt
    decay = ad.exp(ad.mul(ad.neg(D), k_sq * dt)) if isinstance(D, ad.Tensor) \
        else np.exp(-D * k_sq * dt)
    h_re = ad.mul(decay, np.cos(phase))
    h_im = ad.mul(decay, -np.sin(phase))

    w_shape = lead[:-1] + (1,) + (weights.mode_re.shape[1],)
    w_re = ad.reshape(ad.index(weights.mode_re, slice(0, modes)), w_shape)
    w_im = ad.reshape(ad.index(weights.mode_im, slice(0, modes)), w_shape)
    # (w * h)
    g_re = ad.sub(ad.mul(w_re, h_re), ad.mul(w_im, h_im))
    g_im = ad.add(ad.mul(w_re, h_im), ad.mul(w_im, h_re))
    c_re = ad.index(low, (Ellipsis, 0))
    c_im = ad.index(low, (Ellipsis, 1))
    out_re = ad.sub(ad.mul(g_re, c_re), ad.mul(g_im, c_im))
    out_im = ad.add(ad.mul(g_re, c_im), ad.mul(g_im, c_re))

    if weights.residual:
        shape = ad.value(c_re).shape
        aux = np.broadcast_to(np.stack([np.sqrt(k_sq.reshape(lead + (1,))) *
                                        np.ones(shape), np.full(shape, t)], axis=-1),
                              shape + (2,))
        feats = ad.concat([ad.stack([c_re, c_im], axis=-1), aux], axis=-1)
        hidden = ad.tanh(ad.add(ad.matmul(feats, weights.W1), weights.b1))
        res = ad.add(ad.matmul(hidden, weights.W2), weights.b2)
        out_re = ad.add(out_re, ad.mul(ad.index(res, (Ellipsis, 0)), dt))
        out_im = ad.add(out_im, ad.mul(ad.index(res, (Ellipsis, 1)), dt))

    spec = ad.stack([out_re, out_im], axis=-1)
    if modes < nb:
        pad = np.zeros((nb - modes,) + ad.value(spec).shape[1:])
        spec = ad.concat([spec, pad], axis=0)
    return irdft(spec, n)
