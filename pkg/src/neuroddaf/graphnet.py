"""Station graph and graph transport operators.

Wind directions follow the meteorological convention: degrees clockwise from
north, giving the direction the wind blows *from*. Internally the flow
(downwind) direction is ``direction + 180``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad

EARTH_RADIUS_KM = 6371.0088


@dataclass(frozen=True)
class Station:
    id: str
    lat: float
    lon: float

    def __post_init__(self):
        if math.isnan(self.lat) or math.isnan(self.lon):
            raise ValueError(f"station {self.id!r} has a NaN coordinate")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"station {self.id!r}: latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"station {self.id!r}: longitude {self.lon} outside [-180, 180]")


def haversine_km(lat1, lon1, lat2, lon2):
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlam = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlam / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def initial_bearing_deg(lat1, lon1, lat2, lon2):
    """Compass bearing (degrees from north) of the great circle from point 1 to 2."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dlam = np.radians(np.asarray(lon2) - np.asarray(lon1))
    y = np.sin(dlam) * np.cos(p2)
    x = np.cos(p1) * np.sin(p2) - np.sin(p1) * np.cos(p2) * np.cos(dlam)
    return np.degrees(np.arctan2(y, x)) % 360.0


@dataclass
class DynamicGraph:
    """Stations plus a Gaussian-kernel base graph and optional wind series.

    ``distance``, ``base_weight`` and ``bearing`` are N x N; ``bearing[i, j]``
    is the bearing from station i to station j. ``wind_speed`` and
    ``wind_direction`` are (n_times, N) arrays when present.
    """

    stations: list
    distance: np.ndarray
    base_weight: np.ndarray
    bearing: np.ndarray
    wind_speed: np.ndarray | None = None
    wind_direction: np.ndarray | None = None
    speed_ref: float = 10.0
    mixing_gain: float = 0.0
    length_scale: float = field(default=1.0)
    cutoff: float = field(default=1.0)

    @property
    def n_nodes(self):
        return len(self.stations)

    @property
    def adjacency(self):
        return self.base_weight > 0.0

    @property
    def edges(self):
        """Undirected edges as (i, j) pairs with i < j."""
        i, j = np.nonzero(np.triu(self.adjacency, k=1))
        return list(zip(i.tolist(), j.tolist()))

    @property
    def edge_index(self):
        """Directed edge list (2, 2E): both orientations of every edge."""
        i, j = np.nonzero(self.adjacency)
        return np.stack([i, j])

    @property
    def edge_attr(self):
        """Per directed edge: (distance in km, base weight)."""
        i, j = self.edge_index
        return np.stack([self.distance[i, j], self.base_weight[i, j]], axis=1)

    @property
    def n_times(self):
        return 0 if self.wind_speed is None else self.wind_speed.shape[0]

    def with_wind(self, speed, direction):
        speed = np.atleast_2d(np.asarray(speed, dtype=float))
        direction = np.atleast_2d(np.asarray(direction, dtype=float))
        if speed.shape != direction.shape or speed.shape[1] != self.n_nodes:
            raise ValueError("wind arrays must be (n_times, n_stations)")
        if np.any(speed < 0) or not np.all(np.isfinite(speed)):
            raise ValueError("wind speed must be finite and nonnegative")
        return replace(self, wind_speed=speed, wind_direction=direction % 360.0)

    def wind_at(self, t):
        if self.wind_speed is None:
            if t == 0:
                zero = np.zeros(self.n_nodes)
                return zero, zero
            raise IndexError("graph has no wind data")
        if not 0 <= t < self.n_times:
            raise IndexError(f"time index {t} outside [0, {self.n_times})")
        return self.wind_speed[t], self.wind_direction[t]

    def weights(self, t=0):
        speed, _ = self.wind_at(t)
        return edge_weights(self.base_weight, speed, self.speed_ref, self.mixing_gain)


def build_graph(stations, length_scale, cutoff, *, speed_ref=10.0, mixing_gain=0.0):
    """Connect stations within ``cutoff`` km with weight exp(-d^2 / length_scale^2)."""
    if not stations:
        raise ValueError("need at least one station")
    if length_scale <= 0 or cutoff <= 0:
        raise ValueError("length_scale and cutoff must be positive")
    ids = [s.id for s in stations]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate station id(s): {dup}")
    lat = np.array([s.lat for s in stations])
    lon = np.array([s.lon for s in stations])
    dist = haversine_km(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    bearing = initial_bearing_deg(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    np.fill_diagonal(bearing, 0.0)
    w = np.exp(-(dist ** 2) / length_scale ** 2)
    w[dist > cutoff] = 0.0
    np.fill_diagonal(w, 0.0)
    return DynamicGraph(
        stations=list(stations), distance=dist, base_weight=w, bearing=bearing,
        speed_ref=speed_ref, mixing_gain=mixing_gain, length_scale=length_scale, cutoff=cutoff,
    )


def edge_weights(base_weight, speed, speed_ref=10.0, mixing_gain=0.0):
    """Time-varying symmetric weights; wind enhances mixing when ``mixing_gain`` > 0.

    ``speed`` may carry leading batch dimensions (..., N).
    """
    if mixing_gain == 0.0:
        return np.broadcast_to(base_weight, np.shape(speed)[:-1] + base_weight.shape)
    s = np.asarray(speed) / speed_ref
    pair = 0.5 * (s[..., :, None] + s[..., None, :])
    return base_weight * (1.0 + mixing_gain * pair)


def laplacian_from_weights(w):
    deg = w.sum(axis=-1)
    return deg[..., :, None] * np.eye(w.shape[-1]) - w


def laplacian(graph, t=0):
    """Combinatorial Laplacian Diag(W 1) - W at time index ``t``."""
    return laplacian_from_weights(graph.weights(t))


def smallest_positive_eigenvalue(L, rel_tol=1e-9):
    ev = np.linalg.eigvalsh(L)
    thresh = rel_tol * max(ev[-1], 1.0)
    pos = ev[ev > thresh]
    return float(pos[0]) if pos.size else 0.0


def advection_from_wind(base_weight, bearing, speed, direction, speed_ref=10.0, mode="learned"):
    """Directional transfer operator; supports leading batch dims on the wind arrays.

    Entry (i, j) moves material from j into i when the flow at j points toward
    i. Rows are normalized, then scaled by the source wind speed over
    ``speed_ref``.
    """
    if mode not in ("learned", "theory"):
        raise ValueError(f"unknown advection mode {mode!r}")
    speed = np.asarray(speed, dtype=float)
    flow = (np.asarray(direction, dtype=float) + 180.0)[..., None, :]
    # bearing.T[i, j] is the bearing from j to i
    align = np.cos(np.radians(flow - bearing.T))
    a = base_weight * np.maximum(align, 0.0) * (speed[..., None, :] > 0)
    rows = a.sum(axis=-1, keepdims=True)
    a = np.divide(a, rows, out=np.zeros_like(a), where=rows > 0)
    m = a * (speed[..., None, :] / speed_ref)
    if mode == "theory":
        m = 0.5 * (m - np.swapaxes(m, -1, -2))
    return m


def advection_operator(graph, t=0, mode="learned"):
    speed, direction = graph.wind_at(t)
    return advection_from_wind(graph.base_weight, graph.bearing, speed, direction,
                               graph.speed_ref, mode)


def wind_features(speed, direction, speed_ref=10.0):
    """Per-station flow vector (east, north) scaled by ``speed_ref``: shape (..., N, 2)."""
    flow = np.radians(np.asarray(direction) + 180.0)
    s = np.asarray(speed) / speed_ref
    return np.stack([s * np.sin(flow), s * np.cos(flow)], axis=-1)


ACTIVATIONS = {"tanh": ad.tanh, "identity": lambda x: x, "sigmoid": ad.sigmoid}


def k_hop_propagate(op, Z, coeffs, activation="tanh"):
    """sigma(sum_k op^k Z Theta_k) with op^0 = I; K = len(coeffs)."""
    if len(coeffs) == 0:
        raise ValueError("need at least one hop coefficient (K >= 1)")
    act = ACTIVATIONS[activation] if isinstance(activation, str) else activation
    power_z = Z
    acc = ad.matmul(Z, coeffs[0])
    for theta in coeffs[1:]:
        power_z = ad.matmul(op, power_z)
        acc = ad.add(acc, ad.matmul(power_z, theta))
    return act(acc)


@dataclass
class GateParams:
    W_alpha: ad.Tensor
    b_alpha: ad.Tensor
    W_phi: ad.Tensor
    b_phi: ad.Tensor
    theta_diff: list
    theta_adv: list

    @property
    def K(self):
        return len(self.theta_diff)


def init_gate_params(rng, latent_dim, wind_dim=2, phi_dim=4, K=2, scale=0.3):
    if K < 1:
        raise ValueError("K must be >= 1")
    d = latent_dim

    def mat(*shape, s=scale):
        return ad.Tensor(rng.normal(0.0, s / np.sqrt(shape[0]), size=shape), requires_grad=True)

    return GateParams(
        W_alpha=mat(2 * d + phi_dim, d),
        b_alpha=ad.Tensor(np.zeros(d), requires_grad=True),
        W_phi=mat(wind_dim, phi_dim, s=1.0),
        b_phi=ad.Tensor(np.zeros(phi_dim), requires_grad=True),
        theta_diff=[mat(d, d) for _ in range(K)],
        theta_adv=[mat(d, d) for _ in range(K)],
    )


def transport_gate(H_diff, H_adv, wind_feat, params):
    """Gate the two transport branches; returns ``(H_phys, gate)``.

    ``wind_feat`` (..., N, d_w) broadcasts against the leading dims of the
    branch outputs.
    """
    phi = ad.add(ad.matmul(wind_feat, params.W_phi), params.b_phi)
    shape = np.broadcast_shapes(ad.value(H_diff).shape[:-1], phi.shape[:-1]) + phi.shape[-1:]
    if phi.shape != shape:
        phi = ad.broadcast_to(phi, shape)
    x = ad.concat([H_diff, H_adv, phi], axis=-1)
    gate = ad.sigmoid(ad.add(ad.matmul(x, params.W_alpha), params.b_alpha))
    # gate*Hd + (1-gate)*Ha = Ha + gate*(Hd - Ha)
    h = ad.add(H_adv, ad.mul(gate, ad.sub(H_diff, H_adv)))
    return h, gate
