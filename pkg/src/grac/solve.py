"""Energy minimisation, stability check and error norms."""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import AtomisticSpace, StencilEnergy, atomistic_model
from .errors import ConfigurationError, ConvergenceError
from .geometry import HybridState, canonical_triangles, clip_convex, polygon_area
from .lattice import SiteIndex, build_reference_config, layer_index

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    grad_tol: float = 1e-8
    max_iter: int = 200
    shrink: float = 0.5
    armijo: float = 1e-4
    max_cg: int = 2000

    def __post_init__(self):
        if self.grad_tol <= 0 or not 0 < self.shrink < 1:
            raise ValueError("invalid solver configuration")


@dataclass
class MinimizeInfo:
    iterations: int = 0
    grad_norm: float = np.inf
    energies: list = field(default_factory=list)
    cg_iterations: int = 0


# --------------------------------------------------------------------------
# preconditioner


def p1_stiffness(positions, triangles, n):
    """Scalar P1 stiffness matrix of a triangulation."""
    P = positions[triangles]
    e1, e2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    J = np.stack([e1, e2], axis=2)
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    grads = np.einsum("ak,tkd->tad", ref, np.linalg.inv(J))
    Ke = area[:, None, None] * np.einsum("tad,tbd->tab", grads, grads)
    r = np.repeat(triangles, 3, axis=1).ravel()
    c = np.tile(triangles, (1, 3)).ravel()
    return sp.csr_matrix((Ke.ravel(), (r, c)), shape=(n, n))


def space_triangles(space):
    """Triangulation covering every DOF: canonical where atomistic, mesh elsewhere."""
    if isinstance(space, AtomisticSpace):
        return canonical_triangles(space.sites)
    at = canonical_triangles(space.sites[: space.n_atomistic])
    mesh_t = space.node_dof[space.mesh.triangles]
    return np.concatenate([at, mesh_t])


class LaplacianPreconditioner:
    """Exact solves with the P1 Laplacian of the DOF triangulation."""

    def __init__(self, space):
        K = p1_stiffness(space.positions, space_triangles(space), space.dof)
        f = np.flatnonzero(space.free)
        Kf = K[f][:, f].tocsc()
        Kf = Kf + 1e-12 * sp.identity(len(f), format="csc")
        self.lu = spla.splu(Kf)

    def __call__(self, r):
        return self.lu.solve(np.ascontiguousarray(r.reshape(-1, 2)))


# --------------------------------------------------------------------------
# Newton-CG


def _pcg(hessp, g, M, tol, max_iter):
    """Truncated preconditioned CG for ``H p = -g``; stops on negative curvature."""
    x = np.zeros_like(g)
    r = -g
    z = M(r)
    d = z
    rz = np.sum(r * z)
    gnorm = np.sqrt(np.sum(g * g))
    for k in range(max_iter):
        Hd = hessp(d)
        curv = np.sum(d * Hd)
        if curv <= 0:
            return (x if k > 0 else z), k, True
        alpha = rz / curv
        x = x + alpha * d
        r = r - alpha * Hd
        if np.sqrt(np.sum(r * r)) <= tol * gnorm:
            return x, k + 1, False
        z = M(r)
        rz_new = np.sum(r * z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    return x, max_iter, False


def minimize(fn, x0, cfg=SolverConfig(), precond=None, raise_on_failure=True):
    """Newton-CG with backtracking line search on the free DOFs of ``x0``.

    ``fn`` is an ``ACFunctional`` or anything with a ``model`` attribute, or
    a ``StencilEnergy``.  Returns ``(state, info)``.
    """
    model = fn if isinstance(fn, StencilEnergy) else fn.model
    space = x0.space
    free = space.free
    Y = x0.values.copy()
    Z = x0.values.copy()  # energies are tracked relative to the start
    M = precond if precond is not None else LaplacianPreconditioner(space)
    ref_sites = model.site_energies(Z)
    ref_q = 0.0 if model.Q is None else float(
        np.dot(model.q_weights, np.sum((model.Q @ Z) ** 2, axis=1)))

    def energy(Yc):
        e = float(np.dot(model.weights, model.site_energies(Yc) - ref_sites))
        if model.Q is not None:
            e += float(np.dot(model.q_weights, np.sum((model.Q @ Yc) ** 2, axis=1))) - ref_q
        return e

    def expand(v):
        full = np.zeros_like(Y)
        full[free] = v
        return full

    info = MinimizeInfo()
    E = energy(Y)
    info.energies.append(E)
    for it in range(cfg.max_iter + 1):
        g = model.gradient(Y)[free]
        gmax = float(np.max(np.abs(g), initial=0.0))
        info.grad_norm = gmax
        if gmax <= cfg.grad_tol:
            info.iterations = it
            return HybridState(Y, space, x0.B, x0.kind), info
        if it == cfg.max_iter:
            break
        eta = min(0.5, np.sqrt(np.sqrt(np.sum(g * g))))
        p, ncg, negative = _pcg(lambda d: model.hessp(Y, expand(d))[free], g, M,
                                eta, cfg.max_cg)
        info.cg_iterations += ncg
        slope = float(np.sum(g * p))
        if slope >= 0:
            p = -M(g)
            slope = float(np.sum(g * p))
        noise = 16 * np.finfo(float).eps * float(
            np.dot(np.abs(model.weights), np.abs(model.site_energies(Y))))
        alpha, accepted = 1.0, False
        # below the noise floor energy comparisons are meaningless; the step is
        # then judged by the decrease of the gradient instead
        roundoff = -slope <= noise
        while alpha > 1e-12:
            Yt = Y.copy()
            Yt[free] += alpha * p
            try:
                Et = energy(Yt)
            except ArithmeticError:
                alpha *= cfg.shrink
                continue
            if roundoff:
                gt = float(np.max(np.abs(model.gradient(Yt)[free])))
                if Et - E <= noise and gt < 0.5 * gmax:
                    accepted = True
                    break
            elif Et - E <= cfg.armijo * alpha * slope:
                accepted = True
                break
            alpha *= cfg.shrink
        if not accepted:
            break
        Y, E = Yt, Et
        info.energies.append(Et)
        log.debug("newton it %d |g| %.3e E %.12e cg %d", it, gmax, Et, ncg)
    info.iterations = it
    state = HybridState(Y, space, x0.B, x0.kind)
    if raise_on_failure:
        raise ConvergenceError(f"no convergence, |g| = {info.grad_norm:.3e}",
                               info.grad_norm, state)
    return state, info


# --------------------------------------------------------------------------
# stability


def min_eigenvalue(H, seeds=(0, 1, 2), dense_limit=2500):
    """Smallest eigenvalue of a sparse symmetric matrix."""
    n = H.shape[0]
    if n <= dense_limit:
        A = H.toarray() if sp.issparse(H) else np.asarray(H)
        return float(scipy.linalg.eigvalsh(A, subset_by_index=[0, 0])[0])
    H = sp.csc_matrix(H)
    scale = float(abs(H).sum(axis=1).max())
    for seed in seeds:
        v0 = np.random.default_rng(seed).standard_normal(n)
        try:
            lam0 = spla.eigsh(H, k=1, which="SA", tol=1e-3, v0=v0,
                              return_eigenvectors=False, maxiter=5000)[0]
            sigma = lam0 - 0.05 * abs(lam0) - 1e-6 * scale
            lam = spla.eigsh(H, k=1, sigma=sigma, which="LM", v0=v0, tol=1e-10,
                             return_eigenvectors=False)[0]
            return float(min(lam, lam0))
        except (spla.ArpackNoConvergence, RuntimeError):
            continue
    raise ConvergenceError("Lanczos iteration failed for every seed")


# --------------------------------------------------------------------------
# atomistic reference problem


def atomistic_problem(k, N, st, params, remove_defect=True):
    """Clamped atomistic problem on ``N`` layers (plus clamped buffer layers)."""
    config = build_reference_config(k, N + 2 * st.hop_radius, remove_defect=remove_defect)
    model, space = atomistic_model(config, st, params, free_layers=N)
    return model, space


def solve_atomistic(k, N, B, st, params, cfg=SolverConfig(), x0=None):
    model, space = atomistic_problem(k, N, st, params)
    start = HybridState(space.positions @ np.asarray(B).T, space, np.asarray(B))
    if x0 is not None:
        start.values[space.free] = x0(space)[space.free]
    state, info = minimize(model, start, cfg)
    return state, model, info


# --------------------------------------------------------------------------
# error norms


@dataclass
class ErrorReport:
    h1_seminorm: float
    w1inf_seminorm: float
    energy_error: float
    dof: int


def _canonical_gradients(pos, vals, tris):
    """Constant gradient (2x2, rows = components) of a P1 field on each triangle."""
    P = pos[tris]
    e1, e2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    Jinv = np.linalg.inv(np.stack([e1, e2], axis=2))
    dv = np.stack([vals[tris[:, 1]] - vals[tris[:, 0]], vals[tris[:, 2]] - vals[tris[:, 0]]], 1)
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    # grad v = dv^T Jinv
    return np.einsum("tkc,tkd->tcd", dv, Jinv), area


def _field_on_lattice(state, sites, B):
    """Values of ``state`` at lattice ``sites``; ``B x`` where it has no DOF."""
    space = state.space
    out = space.basis.positions(sites) @ np.asarray(B).T
    idx = space.lookup(sites)
    ok = idx >= 0
    out[ok] = state.values[idx[ok]]
    return out


def error_norms(state, ref_state, fn=None, ref_model=None, model=None):
    """Errors of ``state`` against an atomistic reference ``ref_state``.

    Both are P1 functions: the reference on the canonical triangulation of its
    lattice, the approximation on the canonical triangulation of its atomistic
    region and on its finite element mesh elsewhere; mesh/lattice overlaps are
    integrated exactly by polygon clipping.  Outside its domain the
    approximation equals ``B x``.
    """
    rspace = ref_state.space
    cfg = rspace.config
    B = np.asarray(state.B)
    rpos = cfg.positions
    rvals = ref_state.values
    tris = canonical_triangles(cfg.sites)
    gref, area = _canonical_gradients(rpos, rvals, tris)
    space = state.space
    if space.dof and np.any(cfg.lookup(space.sites[space.free]) < 0):
        raise ConfigurationError("reference domain smaller than the approximation")

    if isinstance(space, AtomisticSpace):
        in_mesh = np.zeros(len(tris), dtype=bool)
        dof = int(space.free.sum())
    else:
        L = layer_index(cfg.sites, cfg.extent)[tris].max(axis=1)
        in_mesh = (L > space.decomp.outer_layer) & (L <= space.decomp.N)
        dof = space.dof

    h_vals = _field_on_lattice(state, cfg.sites, B)
    gh, _ = _canonical_gradients(rpos, h_vals, tris)
    diff = np.linalg.norm(gref - gh, axis=(1, 2))
    h1_sq = float(np.sum(area[~in_mesh] * diff[~in_mesh] ** 2))
    winf = float(np.max(diff[~in_mesh], initial=0.0))

    if in_mesh.any():
        a, w = _mesh_overlap_errors(space, state, cfg, tris[in_mesh], gref[in_mesh])
        h1_sq += a
        winf = max(winf, w)

    energy_error = np.nan
    if ref_model is not None:
        e_ref = _energy_difference(ref_model, ref_state)
        if isinstance(space, AtomisticSpace):
            e_h = _energy_difference(model, state)
        else:
            e_h = _energy_difference(fn.model, state)
        energy_error = abs(e_h - e_ref) / abs(e_ref)
    return ErrorReport(float(np.sqrt(h1_sq)), winf, float(energy_error), dof)


def _energy_difference(model, state):
    Z = state.space.positions @ np.asarray(state.B).T
    d = model.site_energies(state.values) - model.site_energies(Z)
    e = float(np.dot(model.weights, d))
    if model.Q is not None:
        e += float(np.dot(model.q_weights, np.sum((model.Q @ state.values) ** 2, axis=1)))
        e -= float(np.dot(model.q_weights, np.sum((model.Q @ Z) ** 2, axis=1)))
    return e


def _mesh_overlap_errors(space, state, cfg, tris, gref):
    """Exact ``int |grad y - grad y_h|^2`` over the mesh region and the max pointwise."""
    mesh = space.mesh
    basis = cfg.basis
    node_vals = state.values[space.node_dof]
    gT, _ = _canonical_gradients(mesh.positions, node_vals, mesh.triangles)
    canon_key = {tuple(sorted(map(tuple, cfg.sites[t]))): k for k, t in enumerate(tris)}
    Ainv = np.linalg.inv(basis.A)
    lattice_tris = cfg.sites[tris]
    lookup_first = SiteIndex(np.unique(lattice_tris[:, 0], axis=0))
    by_anchor = {}
    for k, t in enumerate(lattice_tris):
        by_anchor.setdefault(tuple(t[0]), []).append(k)
    total, worst = 0.0, 0.0
    covered = np.zeros(len(tris))
    Pm = mesh.positions[mesh.triangles]
    for T in range(len(mesh.triangles)):
        key = tuple(sorted(map(tuple, mesh.nodes[mesh.triangles[T]])))
        k = canon_key.get(key)
        if k is not None:
            d = np.linalg.norm(gref[k] - gT[T])
            total += mesh.areas[T] * d * d
            covered[k] += mesh.areas[T]
            worst = max(worst, d)
            continue
        lat = Pm[T] @ Ainv.T
        lo = np.floor(lat.min(axis=0)).astype(int) - 1
        hi = np.ceil(lat.max(axis=0)).astype(int) + 1
        for i in range(lo[0], hi[0] + 1):
            for j in range(lo[1], hi[1] + 1):
                for kk in by_anchor.get((i, j), ()):
                    piece = clip_convex(basis.positions(lattice_tris[kk]), Pm[T])
                    a = polygon_area(piece)
                    if a > 1e-14:
                        d = np.linalg.norm(gref[kk] - gT[T])
                        total += a * d * d
                        covered[kk] += a
                        worst = max(worst, d)
    del lookup_first
    return total, worst
