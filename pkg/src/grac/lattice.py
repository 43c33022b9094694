"""Triangular Bravais lattice with a row of vacancies.

Sites are addressed by integer lattice coordinates ``(i, j)``; the physical
position is ``A @ (i, j)``.  Neighbourhoods are measured in hopping distance
on the nearest-neighbour graph.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, MissingNeighbourError

SQRT3 = np.sqrt(3.0)

# nearest-neighbour directions a_1..a_6 in lattice coordinates (a_{j+3} = -a_j)
NN_DIRECTIONS = np.array(
    [[1, 0], [0, 1], [-1, 1], [-1, 0], [0, -1], [1, -1]], dtype=np.int64
)


@dataclass(frozen=True)
class LatticeBasis:
    A: np.ndarray = field(
        default_factory=lambda: np.array([[1.0, 0.5], [0.0, SQRT3 / 2]])
    )

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.shape != (2, 2) or np.linalg.det(A) <= 0:
            raise ConfigurationError("lattice matrix must be 2x2 with det(A) > 0")
        object.__setattr__(self, "A", A)

    def positions(self, ij):
        return np.asarray(ij, dtype=float) @ self.A.T

    @property
    def det(self):
        return float(np.linalg.det(self.A))


TRIANGULAR = LatticeBasis()


def hop_distance(d):
    """Graph distance on the triangular nearest-neighbour graph.

    ``d`` is an integer array ``(..., 2)`` of lattice offsets.
    """
    d = np.asarray(d)
    di, dj = d[..., 0], d[..., 1]
    same = di * dj >= 0
    return np.where(same, np.abs(di) + np.abs(dj), np.maximum(np.abs(di), np.abs(dj)))


@dataclass(frozen=True)
class Stencil:
    """Ordered interaction range R with its half-range R+."""

    directions: np.ndarray  # (R, 2) int, lattice coordinates
    half: np.ndarray  # indices into directions forming R+
    hop_radius: int

    @property
    def size(self):
        return len(self.directions)

    @property
    def neg(self):
        """``neg[k]`` is the index of ``-directions[k]``."""
        d = self.directions
        match = np.all(d[:, None, :] == -d[None, :, :], axis=-1)
        return np.argmax(match, axis=1)

    def physical(self, basis=TRIANGULAR):
        return basis.positions(self.directions)


def stencil(hop_radius):
    """Interaction range in the ordering a_1, ..., a_6 (, a_7, ..., a_18)."""
    if hop_radius not in (1, 2):
        raise ConfigurationError(f"unsupported hop radius {hop_radius}")
    dirs = [d for d in NN_DIRECTIONS]
    if hop_radius == 2:
        for j in range(6):
            dirs.append(2 * NN_DIRECTIONS[j])
            dirs.append(NN_DIRECTIONS[j] + NN_DIRECTIONS[(j + 1) % 6])
    dirs = np.array(dirs, dtype=np.int64)
    half, seen = [], set()
    for k, d in enumerate(dirs):
        if tuple(-d) not in seen:
            half.append(k)
        seen.add(tuple(d))
    return Stencil(dirs, np.array(half), hop_radius)


def defect_row(k):
    """Integer e_1-offsets of the removed sites.

    Odd ``k`` gives the symmetric row {-(k-1)/2, ..., (k-1)/2}.  Even ``k``
    removes ``k`` neighbouring sites {-(k/2-1), ..., k/2}, so ``k = 2`` is the
    pair {0, e_1}.
    """
    if k < 0:
        raise ConfigurationError("defect size must be non-negative")
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    if k % 2:
        h = (k - 1) // 2
        return np.arange(-h, h + 1)
    return np.arange(-(k // 2 - 1), k // 2 + 1)


def row_extent(k):
    """First and last e_1-offset of the row the domain layers are built around."""
    row = defect_row(k)
    if len(row) == 0:
        return 0, 0
    return int(row[0]), int(row[-1])


def layer_index(ij, extent):
    """Hopping distance from ``ij`` to the row ``{(x, 0): x0 <= x <= x1}``."""
    ij = np.asarray(ij)
    x0, x1 = extent
    best = None
    for x in range(x0, x1 + 1):
        d = hop_distance(ij - np.array([x, 0]))
        best = d if best is None else np.minimum(best, d)
    return best


def hexagon_corners(s, extent):
    """Lattice coordinates of the six corners of layer ``s`` (counter-clockwise)."""
    x0, x1 = extent
    return np.array(
        [[x1 + s, 0], [x1, s], [x0 - s, s], [x0 - s, 0], [x0, -s], [x1 + s, -s]],
        dtype=np.int64,
    )


def hexagon_ring(s, extent):
    """All lattice sites on layer ``s``, walked counter-clockwise from corner 0."""
    if s == 0:
        x0, x1 = extent
        return np.array([[x, 0] for x in range(x0, x1 + 1)], dtype=np.int64)
    c = hexagon_corners(s, extent)
    out = []
    for k in range(6):
        a, b = c[k], c[(k + 1) % 6]
        n = int(hop_distance(b - a))
        step = (b - a) // n
        out.extend(a + t * step for t in range(n))
    return np.array(out, dtype=np.int64)


class SiteIndex:
    """Dense-grid lookup from lattice coordinates to a contiguous index."""

    def __init__(self, ij):
        ij = np.asarray(ij, dtype=np.int64)
        self.lo = ij.min(axis=0) if len(ij) else np.zeros(2, dtype=np.int64)
        hi = ij.max(axis=0) if len(ij) else np.zeros(2, dtype=np.int64)
        self.grid = -np.ones(hi - self.lo + 1, dtype=np.int64)
        self.grid[tuple((ij - self.lo).T)] = np.arange(len(ij))

    def __call__(self, ij):
        ij = np.asarray(ij, dtype=np.int64)
        if ij.ndim == 1:
            return int(self(ij[None])[0])
        rel = ij - self.lo
        ok = np.all((rel >= 0) & (rel < self.grid.shape), axis=-1)
        out = -np.ones(ij.shape[:-1], dtype=np.int64)
        out[ok] = self.grid[tuple(rel[ok].T)]
        return out


@dataclass
class ReferenceConfig:
    basis: LatticeBasis
    sites: np.ndarray  # (n, 2) int, lexicographic
    defect_sites: np.ndarray  # (k, 2) int
    bounding_layers: int
    k: int
    extent: tuple

    def __post_init__(self):
        self.index = SiteIndex(self.sites)
        self.layers = layer_index(self.sites, self.extent)

    def __len__(self):
        return len(self.sites)

    @property
    def positions(self):
        return self.basis.positions(self.sites)

    def lookup(self, ij):
        return self.index(ij)

    def neighbours(self, st):
        """``(n, R)`` site indices of ``site + rho``; -1 where absent."""
        return self.index(self.sites[:, None, :] + st.directions[None, :, :])


def build_reference_config(k, N, basis=TRIANGULAR, remove_defect=True):
    """Sites within ``N`` hops of the defect row, minus the ``k`` vacancies.

    With ``remove_defect=False`` the same elongated hexagon is returned with
    every site present (the homogeneous lattice used by the patch tests).
    """
    if N < 1:
        raise ConfigurationError("need at least one layer")
    row = defect_row(k)
    extent = row_extent(k)
    if k > 0 and N <= 0:
        raise ConfigurationError("defect does not fit inside the domain")
    x0, x1 = extent
    ii, jj = np.meshgrid(
        np.arange(x0 - N, x1 + N + 1), np.arange(-N, N + 1), indexing="ij"
    )
    ij = np.stack([ii.ravel(), jj.ravel()], axis=1)
    ij = ij[layer_index(ij, extent) <= N]
    defects = np.stack([row, np.zeros_like(row)], axis=1).astype(np.int64)
    if remove_defect and len(row):
        gone = np.isin(ij[:, 0], row) & (ij[:, 1] == 0)
        ij = ij[~gone]
    else:
        defects = defects[:0]
    order = np.lexsort((ij[:, 1], ij[:, 0]))
    return ReferenceConfig(basis, ij[order], defects, N, k, extent)


def _site_index(config, site):
    idx = config.lookup(np.asarray(site))
    if idx < 0:
        raise MissingNeighbourError(site, (0, 0))
    return int(idx)


def finite_difference_stencil(config, v, site, st):
    """``(D_rho v(site))_rho`` as an ``(R, m)`` array."""
    v = np.asarray(v, dtype=float)
    l = _site_index(config, site)
    nb = config.lookup(config.sites[l] + st.directions)
    missing = np.flatnonzero(nb < 0)
    if len(missing):
        raise MissingNeighbourError(config.sites[l], st.directions[missing[0]])
    return v[nb] - v[l]


STABILISATION_DIRECTIONS = NN_DIRECTIONS[:3]


def d2nn_sq(config, v, site, directions=STABILISATION_DIRECTIONS):
    """Sum of squared second differences along the given directions."""
    v = np.asarray(v, dtype=float)
    l = _site_index(config, site)
    x = config.sites[l]
    total = 0.0
    for b in directions:
        p, m = config.lookup(x + b), config.lookup(x - b)
        if p < 0:
            raise MissingNeighbourError(x, b)
        if m < 0:
            raise MissingNeighbourError(x, -b)
        total += float(np.sum((v[p] - 2 * v[l] + v[m]) ** 2))
    return total


def voronoi_volume(basis=TRIANGULAR):
    return basis.det


def discrete_h1_norm(config, v, st):
    """Discrete energy norm summed over all resolvable pairs."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    nb = config.neighbours(st)
    ok = nb >= 0
    rho2 = np.sum(st.physical(config.basis) ** 2, axis=1)
    l = np.broadcast_to(np.arange(len(config))[:, None], nb.shape)
    diff = v[nb[ok]] - v[l[ok]]
    w = np.broadcast_to(rho2, nb.shape)[ok]
    return float(np.sqrt(np.sum(np.sum(diff**2, axis=1) / w)))
