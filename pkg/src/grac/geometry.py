"""Domain decomposition, graded P1 mesh and effective volumes.

Every degree of freedom of the hybrid discretisation sits on a lattice site:
the atomistic core and interface sites, the atom-coincident band of finite
element nodes around them, and the ring nodes of the graded mesh (which are
chosen among lattice sites as well).  This keeps nodal interpolation trivial
and makes the canonical triangulation available wherever it is needed.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, GeometryError
from .lattice import (
    NN_DIRECTIONS,
    SQRT3,
    SiteIndex,
    hexagon_corners,
    hexagon_ring,
    hop_distance,
    layer_index,
    voronoi_volume,
)

METHODS = ("M1", "M2")


# --------------------------------------------------------------------------
# polygons


def polygon_area(P):
    P = np.asarray(P, dtype=float)
    if len(P) < 3:
        return 0.0
    x, y = P[:, 0], P[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_convex(subject, clip, tol=1e-12):
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW ``clip``."""
    out = [np.asarray(p, dtype=float) for p in subject]
    clip = np.asarray(clip, dtype=float)
    for k in range(len(clip)):
        if not out:
            break
        a, b = clip[k], clip[(k + 1) % len(clip)]
        edge = b - a
        scale = max(np.hypot(*edge), 1.0)

        def side(p):
            s = edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])
            return 0.0 if abs(s) <= tol * scale else s

        inp, out = out, []
        for i in range(len(inp)):
            p, q = inp[i - 1], inp[i]
            sp, sq = side(p), side(q)
            if sq >= 0:
                if sp < 0:
                    out.append(p + (q - p) * (sp / (sp - sq)))
                out.append(q)
            elif sp > 0:
                out.append(p + (q - p) * (sp / (sp - sq)))
    return np.array(out) if out else np.zeros((0, 2))


def voronoi_cell(x):
    """Regular hexagonal Voronoi cell of the unit triangular lattice at ``x``."""
    ang = np.pi / 6 + np.arange(6) * np.pi / 3
    return np.asarray(x, dtype=float) + np.stack([np.cos(ang), np.sin(ang)], 1) / SQRT3


def point_in_convex(P, x, tol=1e-12):
    P = np.asarray(P, dtype=float)
    e = np.roll(P, -1, axis=0) - P
    d = np.asarray(x, dtype=float)[..., None, :] - P
    cross = e[:, 0] * d[..., 1] - e[:, 1] * d[..., 0]
    return np.all(cross >= -tol, axis=-1)


# --------------------------------------------------------------------------
# decomposition


@dataclass
class Decomposition:
    config: object
    stencil: object
    K: int
    core: np.ndarray  # config indices of Lambda^a
    interface: np.ndarray  # config indices of Lambda^i
    continuum_atoms: np.ndarray  # config indices of Lambda^c

    @property
    def r(self):
        return self.stencil.hop_radius

    @property
    def N(self):
        return self.config.bounding_layers

    @property
    def outer_layer(self):
        """Layer index of the atomistic/continuum boundary."""
        return self.K + self.r

    @property
    def band_layer(self):
        """Outermost layer of the atom-coincident finite element band."""
        return self.K + 3 * self.r

    def polygon(self, s):
        return self.config.basis.positions(hexagon_corners(s, self.config.extent))

    @property
    def atomistic_polygon(self):
        return self.polygon(self.outer_layer)

    @property
    def domain_polygon(self):
        return self.polygon(self.N)


def domain_layers(K, r=2):
    """Total layer count ``N = K^2``, widened if the finite element band needs it."""
    return max(K * K, K + 3 * r)


def decompose(config, K, st):
    r = st.hop_radius
    if K < r + 1:
        raise ConfigurationError(f"K={K} too small for hop radius {r}")
    if config.bounding_layers < K + 3 * r:
        raise ConfigurationError("domain too small for the atom-coincident band")
    L = config.layers
    core = np.flatnonzero(L <= K)
    interface = np.flatnonzero((L > K) & (L <= K + r))
    band = np.flatnonzero((L > K + r) & (L <= K + 3 * r))
    dec = Decomposition(config, st, K, core, interface, band)
    reach = config.lookup(config.sites[interface][:, None, :] + st.directions)
    if np.any(reach < 0):
        raise ConfigurationError("interface stencil leaves the decomposition")
    return dec


# --------------------------------------------------------------------------
# mesh


def canonical_triangles(ij):
    """Canonical triangles (CCW, lattice coordinates) with all vertices in ``ij``."""
    idx = SiteIndex(ij)
    a1, a2, a3 = NN_DIRECTIONS[:3]
    tris = []
    for e, f in ((a1, a2), (a2, a3)):
        t = np.stack([np.arange(len(ij)), idx(ij + e), idx(ij + f)], axis=1)
        tris.append(t[np.all(t >= 0, axis=1)])
    return np.concatenate(tris)


def size_field(dist, K):
    """Target mesh size as a function of distance from the defect."""
    return (np.asarray(dist, dtype=float) / K) ** 1.5


def _ring_radii(s0, N, K):
    radii = [s0]
    while radii[-1] < N:
        s = radii[-1]
        step = max(1, int(round(size_field(s * SQRT3 / 2, K))))
        radii.append(min(s + step, N))
    if len(radii) > 2:
        last_step = radii[-1] - radii[-2]
        prev_step = radii[-2] - radii[-3]
        if last_step < 0.5 * prev_step:
            radii.pop(-2)
    return radii


def _ring_sides(s, extent, h):
    """Node lattice coordinates on each side of ring ``s`` (corners shared)."""
    c = hexagon_corners(s, extent)
    sides = []
    for k in range(6):
        a, b = c[k], c[(k + 1) % 6]
        L = int(hop_distance(b - a))
        step = (b - a) // max(L, 1)
        nseg = max(1, int(round(L / h)))
        t = np.unique(np.round(np.linspace(0, L, nseg + 1)).astype(int))
        sides.append(a + t[:, None] * step)
    return sides


def _zip(inner, outer, pos):
    """Triangulate the strip between two node chains by shortest diagonals."""
    tris = []
    i = j = 0
    a, b = len(inner) - 1, len(outer) - 1
    while i < a or j < b:
        if i == a:
            advance_outer = True
        elif j == b:
            advance_outer = False
        else:
            d_out = np.linalg.norm(pos[inner[i]] - pos[outer[j + 1]])
            d_in = np.linalg.norm(pos[inner[i + 1]] - pos[outer[j]])
            advance_outer = d_out < d_in
        if advance_outer:
            tris.append((inner[i], outer[j], outer[j + 1]))
            j += 1
        else:
            tris.append((inner[i], outer[j], inner[i + 1]))
            i += 1
    return tris


@dataclass
class Mesh:
    nodes: np.ndarray  # (n, 2) lattice coordinates of the nodes
    triangles: np.ndarray  # (t, 3) node indices, CCW
    atom_coincident: np.ndarray  # (n,) bool, node in the canonical band
    boundary: np.ndarray  # (n,) bool, node on the outer boundary
    basis: object
    K: int
    extent: tuple
    ring_radii: list = field(default_factory=list)

    def __post_init__(self):
        x = self.positions
        P = x[self.triangles]
        e1, e2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
        self.areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        if np.any(self.areas <= 0):
            raise GeometryError("inverted or degenerate triangle in mesh")
        # gradients of the three nodal basis functions, (t, 3, 2)
        J = np.stack([e1, e2], axis=2)  # columns e1, e2
        Jinv = np.linalg.inv(J)
        ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        self.gradients = np.einsum("ak,tkd->tad", ref, Jinv)
        edges = [np.linalg.norm(P[:, (a + 1) % 3] - P[:, a], axis=1) for a in range(3)]
        self.diameters = np.max(edges, axis=0)

    @property
    def positions(self):
        return self.basis.positions(self.nodes)

    @property
    def barycentres(self):
        return self.positions[self.triangles].mean(axis=1)

    def edge_counts(self):
        e = np.sort(
            np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                            self.triangles[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts


def build_mesh(decomp, N=None):
    """Canonical band between the interface and layer ``K + 3r``, graded rings beyond."""
    config = decomp.config
    N = decomp.N if N is None else N
    K, extent, basis = decomp.K, config.extent, config.basis
    s_in, s0 = decomp.outer_layer, decomp.band_layer
    if N < s0:
        raise ConfigurationError("outer boundary inside the finite element band")

    band_sites = config.sites[(config.layers >= s_in) & (config.layers <= s0)]
    band_layers = layer_index(band_sites, extent)
    tri = canonical_triangles(band_sites)
    tl = band_layers[tri]
    tri = tri[tl.max(axis=1) > s_in]

    nodes = [band_sites]
    node_index = {tuple(p): k for k, p in enumerate(band_sites)}
    triangles = [tri]

    def add(p):
        key = tuple(int(v) for v in p)
        if key not in node_index:
            node_index[key] = len(node_index)
            nodes.append(np.array([key]))
        return node_index[key]

    radii = _ring_radii(s0, N, K)
    inner_sides = _ring_sides(s0, extent, 1.0)
    for s in radii[1:]:
        outer_sides = _ring_sides(s, extent, size_field(s * SQRT3 / 2, K))
        for a, b in zip(inner_sides, outer_sides):
            ia = [add(p) for p in a]
            ib = [add(p) for p in b]
            pos = {}
            for k, p in zip(ia + ib, list(a) + list(b)):
                pos[k] = basis.positions(p)
            for t in _zip(ia, ib, pos):
                triangles.append(np.array([t]))
        inner_sides = outer_sides

    node_arr = np.concatenate(nodes).astype(np.int64)
    tris = np.concatenate(triangles).astype(np.int64)
    # orient counter-clockwise
    x = basis.positions(node_arr)
    P = x[tris]
    e1, e2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    cw = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] < 0
    tris[cw] = tris[cw][:, [0, 2, 1]]

    L = layer_index(node_arr, extent)
    coincident = L <= s0
    return Mesh(node_arr, tris, coincident, L == N, basis, K, extent, radii)


def write_mesh(mesh, path):
    """Plain-text dump: ``node id x y flags`` then ``tri id n1 n2 n3`` lines."""
    x = mesh.positions
    with open(path, "w") as fh:
        for k, p in enumerate(x):
            flags = int(mesh.atom_coincident[k]) | (int(mesh.boundary[k]) << 1)
            fh.write(f"node {k} {float(p[0])!r} {float(p[1])!r} {flags}\n")
        for k, t in enumerate(mesh.triangles):
            fh.write(f"tri {k} {t[0]} {t[1]} {t[2]}\n")


def read_mesh(path):
    xs, flags, tris = [], [], []
    with open(path) as fh:
        for line in fh:
            tok = line.split()
            if tok[0] == "node":
                xs.append((float(tok[2]), float(tok[3])))
                flags.append(int(tok[4]))
            elif tok[0] == "tri":
                tris.append(tuple(int(t) for t in tok[2:5]))
    return np.array(xs), np.array(flags), np.array(tris)


# --------------------------------------------------------------------------
# hybrid degrees of freedom


@dataclass
class HybridSpace:
    """Degrees of freedom of the coupled problem, one per lattice site used.

    Sites of ``Lambda^{a,i}`` come first (in configuration order), followed by
    the mesh nodes that are not atomistic sites.
    """

    decomp: Decomposition
    mesh: Mesh

    def __post_init__(self):
        cfg = self.decomp.config
        ai = np.sort(np.concatenate([self.decomp.core, self.decomp.interface]))
        ai_sites = cfg.sites[ai]
        lookup_ai = SiteIndex(ai_sites)
        extra = lookup_ai(self.mesh.nodes) < 0
        self.sites = np.concatenate([ai_sites, self.mesh.nodes[extra]])
        self.n_atomistic = len(ai_sites)
        self.index = SiteIndex(self.sites)
        self.node_dof = self.index(self.mesh.nodes)
        self.free = np.ones(len(self.sites), dtype=bool)
        self.free[self.node_dof[self.mesh.boundary]] = False
        self.core = self.index(cfg.sites[self.decomp.core])
        self.interface = self.index(cfg.sites[self.decomp.interface])

    def __len__(self):
        return len(self.sites)

    @property
    def basis(self):
        return self.decomp.config.basis

    @property
    def positions(self):
        return self.basis.positions(self.sites)

    @property
    def dof(self):
        return len(self.sites)

    def lookup(self, ij):
        return self.index(ij)


@dataclass
class HybridState:
    values: np.ndarray  # (n_dof, 2) deformed positions
    space: object
    B: np.ndarray = field(default_factory=lambda: np.eye(2))
    kind: str = "deformation"

    def displacement(self):
        return self.values - self.space.positions @ np.asarray(self.B).T

    def copy(self):
        return HybridState(self.values.copy(), self.space, np.array(self.B), self.kind)


def affine_state(space, F):
    F = np.asarray(F, dtype=float)
    return HybridState(space.positions @ F.T, space, F)


def interpolate(space, y, B=None):
    """Nodal (P1) interpolation of an atomistic field onto the hybrid DOFs.

    ``y`` is either a callable of physical positions, or a pair
    ``(config, values)`` of a reference configuration and per-site values.
    """
    if callable(y):
        vals = np.asarray(y(space.positions), dtype=float)
    else:
        cfg, v = y
        idx = cfg.lookup(space.sites)
        if np.any(idx < 0):
            raise ConfigurationError("field missing at a hybrid degree of freedom")
        vals = np.asarray(v, dtype=float)[idx]
    return HybridState(vals, space, np.eye(2) if B is None else np.asarray(B))


def evaluate_p1(space, state_values, x):
    """Evaluate the P1 interpolant on the mesh at physical points ``x``."""
    mesh = space.mesh
    P = mesh.positions[mesh.triangles]
    vals = np.asarray(state_values)[space.node_dof][mesh.triangles]
    out = np.full((len(x),) + vals.shape[2:], np.nan)
    for t in range(len(P)):
        a, b, c = P[t]
        T = np.stack([b - a, c - a], axis=1)
        lam = np.linalg.solve(T, (x - a).T).T
        inside = (lam >= -1e-12).all(1) & (lam.sum(1) <= 1 + 1e-12) & np.isnan(out[:, 0])
        if inside.any():
            l1, l2 = lam[inside, 0], lam[inside, 1]
            out[inside] = ((1 - l1 - l2)[:, None] * vals[t, 0] + l1[:, None] * vals[t, 1]
                           + l2[:, None] * vals[t, 2])
    return out


# --------------------------------------------------------------------------
# effective volumes


@dataclass
class EffectiveVolumes:
    omega_i: np.ndarray  # per interface site (decomp.interface order)
    omega_T: np.ndarray  # absolute effective area per triangle
    method: str


def effective_volumes(decomp, mesh, method):
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}")
    cfg = decomp.config
    vor = voronoi_volume(cfg.basis)
    x_i = cfg.positions[decomp.interface]
    omega_i = np.ones(len(x_i))
    omega_T = mesh.areas.copy()
    if method == "M2":
        poly = decomp.atomistic_polygon
        for n, x in enumerate(x_i):
            cell = clip_convex(voronoi_cell(x), poly)
            a = polygon_area(cell)
            if not 0 < a <= vor * (1 + 1e-12):
                raise GeometryError(f"clipping failed for interface cell {n}")
            omega_i[n] = min(a / vor, 1.0)
    else:
        # Voronoi cells of the triangular lattice meet a canonical triangle only
        # through its own vertices, so only those cells are clipped.
        lookup = SiteIndex(cfg.sites[decomp.interface])
        vert_i = lookup(mesh.nodes[mesh.triangles])
        P = mesh.positions[mesh.triangles]
        for t in np.flatnonzero((vert_i >= 0).any(axis=1)):
            for a in range(3):
                if vert_i[t, a] >= 0:
                    piece = clip_convex(voronoi_cell(P[t, a]), P[t])
                    omega_T[t] -= polygon_area(piece)
        omega_T[np.abs(omega_T) < 1e-14] = 0.0
        if np.any(omega_T < 0):
            raise GeometryError("negative effective triangle volume")
    return EffectiveVolumes(omega_i, omega_T, method)
