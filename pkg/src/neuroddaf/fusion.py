"""Fusion of the spectral and ODE branches, decoding, ensemble statistics,
prediction intervals and the Normal-Inverse-Gamma evidential head."""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from . import autodiff as ad

SOFTPLUS_EPS = 1e-6


def _p(x):
    return ad.Tensor(x, requires_grad=True)


@dataclass
class FusionParams:
    W1: ad.Tensor  # (3 d, h) gate hidden layer on [Z_spec | Z | gamma]
    b1: ad.Tensor
    W2: ad.Tensor  # (h, d)
    b2: ad.Tensor
    W_dec: ad.Tensor  # (d, d')
    b_dec: ad.Tensor
    W_var: ad.Tensor  # (d, d') log-variance head
    b_var: ad.Tensor


def init_fusion_params(rng, latent_dim=4, hidden=16, out_dim=1, logvar_bias=-2.0):
    d = latent_dim
    return FusionParams(
        W1=_p(rng.normal(0, 1 / np.sqrt(3 * d), (3 * d, hidden))),
        b1=_p(np.zeros(hidden)),
        W2=_p(rng.normal(0, 0.1 / np.sqrt(hidden), (hidden, d))),
        b2=_p(np.zeros(d)),
        W_dec=_p(rng.normal(0, 1 / np.sqrt(d), (d, out_dim))),
        b_dec=_p(np.zeros(out_dim)),
        W_var=_p(rng.normal(0, 0.1 / np.sqrt(d), (d, out_dim))),
        b_var=_p(np.full(out_dim, logvar_bias)),
    )


def evidential_gate(Z_spec, Z, gamma, params):
    """Fusion gate sigmoid(MLP([Z_spec | Z | gamma])), elementwise in (0, 1)."""
    shapes = {ad.value(Z_spec).shape, ad.value(Z).shape, np.shape(gamma)}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch between Z_spec, Z and gamma: {sorted(shapes)}")
    x = ad.concat([Z_spec, Z, gamma], axis=-1)
    h = ad.tanh(ad.add(ad.matmul(x, params.W1), params.b1))
    return ad.sigmoid(ad.add(ad.matmul(h, params.W2), params.b2))


def fuse(Z_spec, Z, gate):
    """Z_final = -gate * tanh(Z_spec) - (1 - gate) * tanh(Z)."""
    g = ad.value(gate)
    if np.any(g < 0.0) or np.any(g > 1.0):
        raise ValueError("fusion gate must lie in [0, 1]")
    ts, tz = ad.tanh(Z_spec), ad.tanh(Z)
    return ad.neg(ad.add(tz, ad.mul(gate, ad.sub(ts, tz))))


def decode(Z_final, params):
    """Per-step, per-station dense map from the latent state to the outputs."""
    return ad.add(ad.matmul(Z_final, params.W_dec), params.b_dec)


def decode_logvar(Z_final, params):
    """Heteroscedastic head: log of the aleatoric variance per output."""
    return ad.add(ad.matmul(Z_final, params.W_var), params.b_var)


@dataclass
class TrajectoryEnsemble:
    members: list
    mean: object
    var_epistemic: object
    var_aleatoric: object
    var_total: object

    @property
    def S(self):
        return len(self.members)


def ensemble_stats(members, aleatoric=None):
    """Mean and law-of-total-variance split over S decoded trajectories.

    Epistemic variance uses the population (1/S) form. ``aleatoric`` is an
    optional list of per-member variances; when absent that term is zero.
    Works on arrays and tensors alike.
    """
    S = len(members)
    if S < 1:
        raise ValueError("ensemble needs at least one member")
    shape = ad.value(members[0]).shape
    if any(ad.value(m).shape != shape for m in members):
        raise ValueError("ensemble members differ in shape")
    # shifted by the first member so identical members give exactly zero spread
    first = members[0]
    if S == 1:
        mean = ad.mul(first, 1.0)
    else:
        mean = ad.add(first, ad.lincomb([1.0 / S] * (S - 1),
                                        [ad.sub(m, first) for m in members[1:]]))
    sq = [ad.mul(d, d) for d in (ad.sub(m, mean) for m in members)]
    epi = ad.lincomb([1.0 / S] * S, sq)
    if aleatoric is None:
        ale = ad.Tensor(np.zeros(shape))
    else:
        if len(aleatoric) != S:
            raise ValueError("need one aleatoric variance per member")
        ale = ad.lincomb([1.0 / S] * S, list(aleatoric))
    return TrajectoryEnsemble(list(members), mean, epi, ale, ad.add(ale, epi))


def normal_quantile(p):
    if not 0.0 < p < 1.0:
        raise ValueError("probability must lie in (0, 1)")
    return NormalDist().inv_cdf(p)


def prediction_interval(ens, level=0.9):
    """Central interval mean +- q sqrt(V_tot) with q the normal (1+level)/2 quantile."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    q = normal_quantile(0.5 * (1.0 + level))
    mean = ad.value(ens.mean)
    half = q * np.sqrt(np.maximum(ad.value(ens.var_total), 0.0))
    return mean - half, mean + half


def gaussian_nll(y, mean, var):
    """Mean Gaussian negative log-likelihood of ``y`` under N(mean, var)."""
    r = ad.sub(y, mean)
    terms = ad.add(ad.log(var), ad.div(ad.mul(r, r), var))
    return ad.add(ad.mul(ad.mean(terms), 0.5), 0.5 * math.log(2 * math.pi))


# ------------------------------------------------------------ evidential head

@dataclass
class NigParams:
    W: ad.Tensor  # (d, 4): raw mu, lambda, alpha, beta
    b: ad.Tensor


def init_nig_params(rng, in_dim, scale=0.1):
    return NigParams(W=_p(rng.normal(0, scale / np.sqrt(in_dim), (in_dim, 4))),
                     b=_p(np.zeros(4)))


@dataclass
class EvidentialOutput:
    mu: object
    lam: object
    nig_alpha: object
    beta: object

    def variance(self):
        """beta / (lambda (alpha - 1))."""
        lam, a, b = (ad.value(x) for x in (self.lam, self.nig_alpha, self.beta))
        return b / (lam * (a - 1.0))

    def student_t(self):
        """Predictive Student-t as ``(df, loc, scale)``."""
        lam, a, b = (ad.value(x) for x in (self.lam, self.nig_alpha, self.beta))
        return 2.0 * a, ad.value(self.mu), np.sqrt(b * (1.0 + lam) / (lam * a))


def nig_from_raw(raw):
    """Constrain raw (..., 4) outputs into an :class:`EvidentialOutput`."""
    parts = [ad.index(raw, (Ellipsis, i)) for i in range(4)]
    lam = ad.add(ad.softplus(parts[1]), SOFTPLUS_EPS)
    alpha = ad.add(ad.softplus(parts[2]), 1.0 + SOFTPLUS_EPS)
    beta = ad.add(ad.softplus(parts[3]), SOFTPLUS_EPS)
    return EvidentialOutput(parts[0], lam, alpha, beta)


def nig_head(features, params):
    return nig_from_raw(ad.add(ad.matmul(features, params.W), params.b))


def evidential_nll(out, y):
    """Elementwise Student-t negative log-likelihood of the NIG predictive."""
    lam, a, b = out.lam, out.nig_alpha, out.beta
    omega = ad.mul(ad.mul(b, 2.0), ad.add(lam, 1.0))
    r = ad.sub(y, out.mu)
    t1 = ad.mul(ad.log(ad.div(math.pi, lam)), 0.5)
    t2 = ad.neg(ad.mul(a, ad.log(omega)))
    t3 = ad.mul(ad.add(a, 0.5), ad.log(ad.add(ad.mul(lam, ad.mul(r, r)), omega)))
    t4 = ad.sub(ad.gammaln(a), ad.gammaln(ad.add(a, 0.5)))
    return ad.add(ad.add(t1, t2), ad.add(t3, t4))


def evidential_loss(out, y, lambda_reg=0.01):
    """Mean NLL plus ``lambda_reg * |y - mu| * (2 lambda + alpha)``."""
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be nonnegative")
    nll = ad.mean(evidential_nll(out, y))
    if lambda_reg == 0:
        return nll
    evidence = ad.add(ad.mul(out.lam, 2.0), out.nig_alpha)
    reg = ad.mean(ad.mul(ad.absolute(ad.sub(y, out.mu)), evidence))
    return ad.add(nll, ad.mul(reg, lambda_reg))
