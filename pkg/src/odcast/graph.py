"""Origin-destination pair graph construction.

Vertices are whole O-D pairs, not zones: with m origin zones and u
destination zones the graph has m*u vertices and pair (o, d) sits at
index o*u + d. Edge weights come from inverse haversine distances
between origins and between destinations, combined as a root mean
square, so two pairs are close when their origins are close and their
destinations are close.

All distances are floored at DIST_FLOOR_KM before inversion, which caps
every adjacency entry (self-pairs included) at 1/DIST_FLOOR_KM.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DomainError, ShapeError

__all__ = [
    "EARTH_RADIUS_KM",
    "DIST_FLOOR_KM",
    "Zone",
    "ZoneTable",
    "ODGraph",
    "haversine",
    "build_adjacency",
    "transition_matrices",
    "chebyshev_sequence",
    "diffusion_stationary",
    "build_od_graph",
]

EARTH_RADIUS_KM = 6371.0
DIST_FLOOR_KM = 0.1


def haversine(lat1, lng1, lat2, lng2):
    """Great-circle distance in km between coordinate pairs in degrees.

    Accepts scalars or broadcastable arrays. Latitudes outside
    [-90, 90] or longitudes outside [-180, 180] raise DomainError.
    """
    lat1, lng1, lat2, lng2 = (np.asarray(v, dtype=np.float64)
                              for v in (lat1, lng1, lat2, lng2))
    for lat in (lat1, lat2):
        if lat.size and (np.any(lat < -90.0) or np.any(lat > 90.0)):
            raise DomainError("latitude outside [-90, 90]")
    for lng in (lng1, lng2):
        if lng.size and (np.any(lng < -180.0) or np.any(lng > 180.0)):
            raise DomainError("longitude outside [-180, 180]")
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dp = np.radians(lat2 - lat1)
    dl = np.radians(lng2 - lng1)
    a = np.sin(dp / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


@dataclass(frozen=True)
class Zone:
    """One traffic zone: identifier plus centroid coordinates."""

    zone_id: str
    lat: float
    lng: float


class ZoneTable:
    """Ordered collection of zones with unique identifiers."""

    def __init__(self, zones):
        zones = list(zones)
        if not zones:
            raise DataError("zone table is empty")
        seen = set()
        for z in zones:
            if z.zone_id in seen:
                raise DataError(f"duplicate zone id '{z.zone_id}'")
            seen.add(z.zone_id)
            if not -90.0 <= z.lat <= 90.0:
                raise DataError(f"zone '{z.zone_id}': latitude {z.lat} out of range")
            if not -180.0 <= z.lng <= 180.0:
                raise DataError(f"zone '{z.zone_id}': longitude {z.lng} out of range")
        self.zones = zones
        self.index = {z.zone_id: i for i, z in enumerate(zones)}

    def __len__(self):
        return len(self.zones)

    def __getitem__(self, i) -> Zone:
        return self.zones[i]

    def __iter__(self):
        return iter(self.zones)

    def lats(self) -> np.ndarray:
        return np.array([z.lat for z in self.zones])

    def lngs(self) -> np.ndarray:
        return np.array([z.lng for z in self.zones])

    def subset(self, ids) -> "ZoneTable":
        return ZoneTable([self.zones[self.index[i]] for i in ids])


def _inverse_distance(table: ZoneTable, count: int) -> np.ndarray:
    """Floored inverse pairwise distances among the first `count` zones."""
    lats = table.lats()[:count]
    lngs = table.lngs()[:count]
    d = haversine(lats[:, None], lngs[:, None], lats[None, :], lngs[None, :])
    return 1.0 / np.maximum(d, DIST_FLOOR_KM)


def build_adjacency(zones: ZoneTable, m: int, u: int) -> np.ndarray:
    """Adjacency over the m*u O-D pair vertices.

    Combines origin-side and destination-side inverse distances as
    sqrt((a_o^2 + a_d^2) / 2); symmetric with every entry in
    (0, 1/DIST_FLOOR_KM].
    """
    if not (1 <= m <= len(zones) and 1 <= u <= len(zones)):
        raise ShapeError(f"m={m}, u={u} incompatible with {len(zones)} zones")
    a_o = _inverse_distance(zones, m) ** 2
    a_d = _inverse_distance(zones, u) ** 2
    a = np.sqrt((a_o[:, None, :, None] + a_d[None, :, None, :]) / 2.0)
    a = a.reshape(m * u, m * u)
    # The construction is symmetric up to floating-point evaluation
    # order; make it bit-exact so the two diffusion directions coincide.
    return (a + a.T) / 2.0


def transition_matrices(adjacency: np.ndarray):
    """Row-normalized forward/backward transitions plus the out-degree.

    Returns (w_forward, w_backward, degree) with degree the diagonal
    matrix of row sums. Any non-positive row sum raises DomainError.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError("adjacency must be square")
    row = a.sum(axis=1)
    if np.any(row <= 0.0):
        raise DomainError("adjacency has a non-positive row sum")
    # Contiguous copy so a symmetric input yields bit-identical row
    # sums in both directions (summation order depends on strides).
    at = np.ascontiguousarray(a.T)
    col = at.sum(axis=1)
    if np.any(col <= 0.0):
        raise DomainError("adjacency has a non-positive column sum")
    w_f = a / row[:, None]
    w_b = at / col[:, None]
    return w_f, w_b, np.diag(row)


def chebyshev_sequence(x: np.ndarray, order: int) -> list[np.ndarray]:
    """Chebyshev polynomials T_0..T_order of a square matrix.

    T_0 = I, T_1 = X, T_k = 2 X T_{k-1} - T_{k-2}. Returns order+1
    matrices; order < 1 raises ShapeError.
    """
    if order < 1:
        raise ShapeError("chebyshev order must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ShapeError("chebyshev input must be square")
    seq = [np.eye(x.shape[0]), x.copy()]
    for _ in range(2, order + 1):
        seq.append(2.0 * (x @ seq[-1]) - seq[-2])
    return seq


def diffusion_stationary(adjacency: np.ndarray, alpha: float = 0.15,
                         terms: int = 50) -> np.ndarray:
    """Restart-walk stationary matrix, as a verification oracle.

    Sums alpha (1-alpha)^k (D^-1 A)^k over k < terms and renormalizes
    by the truncated geometric mass, so rows sum to one exactly like
    the untruncated limit. Not used by training; tests compare the
    learned transition structure against it.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    if terms < 1:
        raise ShapeError("terms must be >= 1")
    a = np.asarray(adjacency, dtype=np.float64)
    row = a.sum(axis=1)
    if np.any(row <= 0.0):
        raise DomainError("adjacency has a non-positive row sum")
    w = a / row[:, None]
    acc = np.zeros_like(w)
    power = np.eye(w.shape[0])
    coef = alpha
    mass = 0.0
    for _ in range(terms):
        acc += coef * power
        mass += coef
        power = power @ w
        coef *= 1.0 - alpha
    return acc / mass


@dataclass
class ODGraph:
    """Immutable bundle of everything downstream code needs.

    pairs[i] is the (origin_zone_id, destination_zone_id) of vertex i,
    with i = origin_index * num_destinations + destination_index.
    """

    zones: ZoneTable
    num_origins: int
    num_destinations: int
    adjacency: np.ndarray
    w_forward: np.ndarray = field(repr=False, default=None)
    w_backward: np.ndarray = field(repr=False, default=None)
    degree: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.w_forward is None:
            self.w_forward, self.w_backward, self.degree = \
                transition_matrices(self.adjacency)
        self.pairs = [(self.zones[o].zone_id, self.zones[d].zone_id)
                      for o in range(self.num_origins)
                      for d in range(self.num_destinations)]

    @property
    def num_nodes(self) -> int:
        return self.num_origins * self.num_destinations

    def pair_index(self, origin_id: str, dest_id: str) -> int:
        o = self.zones.index[origin_id]
        d = self.zones.index[dest_id]
        if o >= self.num_origins or d >= self.num_destinations:
            raise DataError(f"pair ({origin_id}, {dest_id}) outside the graph")
        return o * self.num_destinations + d


def build_od_graph(zones: ZoneTable, m: int | None = None,
                   u: int | None = None) -> ODGraph:
    """Construct the full O-D graph over a zone table."""
    m = len(zones) if m is None else m
    u = len(zones) if u is None else u
    return ODGraph(zones, m, u, build_adjacency(zones, m, u))
