"""GRU temporal encoder, wind-aware graph attention, and z0 sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graphnet import wind_features

DEFAULT_CHANNELS = {"target": 0, "wind_speed": 1, "wind_direction": 2}


@dataclass
class GruParams:
    W_in: ad.Tensor  # (F, 3H) columns ordered reset | update | candidate
    W_h: ad.Tensor  # (H, 3H)
    b: ad.Tensor  # (3H,)

    @property
    def hidden(self):
        return self.W_h.shape[0]


@dataclass
class GatParams:
    W: ad.Tensor  # (H, d_g)
    a_dst: ad.Tensor  # (d_g, 1)
    a_src: ad.Tensor  # (d_g, 1)
    a_wind: ad.Tensor  # (3, 1)
    slope: float = 0.2


@dataclass
class HeadParams:
    W_mu: ad.Tensor
    b_mu: ad.Tensor
    W_sigma: ad.Tensor
    b_sigma: ad.Tensor


@dataclass
class EncoderParams:
    gru: GruParams
    gat: GatParams
    head: HeadParams


@dataclass
class EncoderOutput:
    E: ad.Tensor  # (..., N, H + d_g)
    mu_z0: ad.Tensor
    sigma_z0: ad.Tensor


def _p(x):
    return ad.Tensor(x, requires_grad=True)


def init_encoder_params(rng, n_features=1, hidden=64, gat_dim=4, latent_dim=4,
                        sigma_bias=-3.0):
    H = hidden
    gru = GruParams(
        W_in=_p(rng.normal(0, 1.0 / np.sqrt(max(n_features, 1)), (n_features, 3 * H))),
        W_h=_p(rng.normal(0, 1.0 / np.sqrt(H), (H, 3 * H))),
        b=_p(np.zeros(3 * H)),
    )
    gat = GatParams(
        W=_p(rng.normal(0, 1.0 / np.sqrt(H), (H, gat_dim))),
        a_dst=_p(rng.normal(0, 0.3, (gat_dim, 1))),
        a_src=_p(rng.normal(0, 0.3, (gat_dim, 1))),
        a_wind=_p(rng.normal(0, 0.3, (3, 1))),
    )
    d_e = H + gat_dim
    head = HeadParams(
        W_mu=_p(rng.normal(0, 1.0 / np.sqrt(d_e), (d_e, latent_dim))),
        b_mu=_p(np.zeros(latent_dim)),
        W_sigma=_p(rng.normal(0, 0.1 / np.sqrt(d_e), (d_e, latent_dim))),
        b_sigma=_p(np.full(latent_dim, sigma_bias)),
    )
    return EncoderParams(gru, gat, head)


def _gru_update(gi, h, params):
    H = params.hidden
    gh = ad.matmul(h, params.W_h)
    r = ad.sigmoid(ad.add(gi[..., :H], gh[..., :H]))
    u = ad.sigmoid(ad.add(gi[..., H:2 * H], gh[..., H:2 * H]))
    n = ad.tanh(ad.add(gi[..., 2 * H:], ad.mul(r, gh[..., 2 * H:])))
    # (1 - u) * n + u * h
    return ad.add(n, ad.mul(u, ad.sub(h, n)))


def gru_cell(x, h, params):
    """One GRU step, h' = (1 - u) * n + u * h with u the update gate."""
    gi = ad.add(ad.matmul(x, params.W_in), params.b)
    return _gru_update(gi, h, params)


def pair_wind_features(speed, direction, bearing, speed_ref=10.0):
    """Features of each ordered pair (i <- j): source flow vector and its
    alignment with the bearing from j to i. Shape (..., N, N, 3)."""
    flow_vec = wind_features(speed, direction, speed_ref)  # (..., N, 2)
    flow = np.radians(np.asarray(direction) + 180.0)[..., None, :]
    align = (np.asarray(speed) / speed_ref)[..., None, :] * np.cos(flow - np.radians(bearing.T))
    src = np.broadcast_to(flow_vec[..., None, :, :], align.shape + (2,))
    return np.concatenate([src, align[..., None]], axis=-1)


def gat_layer(H, adjacency, pair_wind, params, return_attention=False):
    """Single-head attention over each node's neighbourhood plus itself.

    ``adjacency`` is a boolean (N, N) mask; self-loops are always added.
    """
    n = adjacency.shape[0]
    mask = np.asarray(adjacency, dtype=bool) | np.eye(n, dtype=bool)
    wh = ad.matmul(H, params.W)  # (..., N, d_g)
    s_dst = ad.matmul(wh, params.a_dst)  # (..., N, 1)
    s_src = ad.swapaxes(ad.matmul(wh, params.a_src), -1, -2)  # (..., 1, N)
    s_wind = ad.index(ad.matmul(pair_wind, params.a_wind), (Ellipsis, 0))  # (..., N, N)
    logits = ad.leaky_relu(ad.add(ad.add(s_dst, s_src), s_wind), params.slope)
    alpha = ad.softmax(logits, axis=-1, mask=mask)
    out = ad.tanh(ad.matmul(alpha, wh))
    return (out, alpha) if return_attention else out


def encode_sequence(X, adjacency, bearing, params, channels=None, speed_ref=10.0,
                    sigma_floor=1e-4):
    """Encode windows X of shape (..., T, N, F) into an :class:`EncoderOutput`.

    The GRU runs over the target channel of every station; graph attention
    uses the final hidden states and the wind at the last input step.
    """
    channels = DEFAULT_CHANNELS if channels is None else channels
    missing = {"target", "wind_speed", "wind_direction"} - set(channels)
    if missing:
        raise KeyError(f"feature-channel mapping lacks {sorted(missing)}")
    X = np.asarray(X, dtype=float)
    if X.shape[-3] < 1:
        raise ValueError("window length must be >= 1")
    target = X[..., channels["target"]][..., None]  # (..., T, N, 1)
    gi_all = ad.add(ad.matmul(target, params.gru.W_in), params.gru.b)
    h = np.zeros(target.shape[:-3] + target.shape[-2:-1] + (params.gru.hidden,))
    for t in range(X.shape[-3]):
        h = _gru_update(ad.index(gi_all, (Ellipsis, t, slice(None), slice(None))), h,
                        params.gru)
    speed = X[..., -1, :, channels["wind_speed"]]
    direction = X[..., -1, :, channels["wind_direction"]]
    z = gat_layer(h, adjacency, pair_wind_features(speed, direction, bearing, speed_ref),
                  params.gat)
    E = ad.concat([h, z], axis=-1)
    hp = params.head
    mu = ad.add(ad.matmul(E, hp.W_mu), hp.b_mu)
    raw = ad.softplus(ad.add(ad.matmul(E, hp.W_sigma), hp.b_sigma))
    sigma = ad.clip_min(raw, sigma_floor) if sigma_floor > 0 else raw
    return EncoderOutput(E, mu, sigma)


def sample_z0(out, S, seed=None, rng=None):
    """Reparameterized draws mu + sigma * eps stacked on a new axis before N.

    Returns shape (..., S, N, d). Pass either ``seed`` or a numpy ``rng``.
    """
    if S < 1:
        raise ValueError("need at least one sample (S >= 1)")
    rng = np.random.default_rng(seed) if rng is None else rng
    mu = out.mu_z0
    sigma = out.sigma_z0
    shape = ad.value(mu).shape
    eps = rng.standard_normal(shape[:-2] + (S,) + shape[-2:])
    mu_e = ad.reshape(mu, shape[:-2] + (1,) + shape[-2:])
    sig_e = ad.reshape(sigma, shape[:-2] + (1,) + shape[-2:])
    return ad.add(mu_e, ad.mul(sig_e, eps))
