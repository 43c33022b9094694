"""Geometric consistency equations for the interface reconstruction parameters.

Unknowns are the entries ``C[n, rho, sigma]`` of the reconstruction matrix of
interface site ``n`` (ordered lexicographically in ``(n, rho, sigma)``).  Two
families of linear equations constrain them:

* energy rows, ``rho = sum_sigma C[n, rho, sigma] sigma`` (two components),
* force rows, one per site ``m`` near the interface and ``rho`` in R+,
  ``c_a(m, rho) + c_i(m, rho) + c_c(m, rho) = 0``.

Directions are handled in integer lattice coordinates so that the energy
rows have exact integer coefficients.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.sparse.linalg import lsqr

from .errors import ConfigurationError, InfeasibleSystemError
from .lattice import SiteIndex, layer_index, voronoi_volume
from .potential import eval_V, stencil_gradient

FEASIBILITY_TOL = 1e-10
ZERO_TOL = 1e-10


def _half_map(st):
    """For each direction: its row ``p`` in R+ and the sign of ``nabla_rho V``."""
    R = st.size
    pos = -np.ones(R, dtype=np.int64)
    pos[st.half] = np.arange(len(st.half))
    sign = np.where(pos >= 0, 1.0, -1.0)
    p = np.where(pos >= 0, pos, pos[st.neg])
    return p, sign


def atomistic_coeffs(decomp, st, sites):
    """``c_a(m, rho) = [m - rho in core] - [m + rho in core]`` for ``rho`` in R+.

    Core membership is geometric (layer <= K), i.e. taken on the defect-free
    lattice, as the patch tests are.
    """
    sites = np.asarray(sites, dtype=np.int64)
    rho = st.directions[st.half]
    ext, K = decomp.config.extent, decomp.K
    minus = layer_index(sites[:, None, :] - rho, ext) <= K
    plus = layer_index(sites[:, None, :] + rho, ext) <= K
    return minus.astype(float) - plus.astype(float)


def continuum_coeffs(space, st, volumes, sites=None):
    """``c_c(node, rho) = sum_{T ni node} 2 (omega_T/|vor|) grad phi_node^T . rho``.

    Returned for every DOF of ``space`` (zero away from the mesh), or for the
    requested lattice ``sites``.
    """
    mesh = space.mesh
    vor = voronoi_volume(space.basis)
    rho = st.physical(space.basis)[st.half]
    contrib = 2 * (volumes.omega_T / vor)[:, None, None] * np.einsum(
        "tad,pd->tap", mesh.gradients, rho)
    out = np.zeros((space.dof, len(st.half)))
    np.add.at(out, space.node_dof[mesh.triangles].ravel(), contrib.reshape(-1, len(st.half)))
    if sites is None:
        return out
    idx = space.lookup(np.asarray(sites))
    res = np.zeros((len(sites), len(st.half)))
    res[idx >= 0] = out[idx[idx >= 0]]
    return res


@dataclass
class ConsistencySystem:
    A: sp.csr_matrix  # (rows, active unknowns)
    b: np.ndarray
    n_energy_rows: int
    unknowns: np.ndarray  # (active, 3) with columns (n, rho, sigma)
    n_interface: int
    R: int
    force_sites: np.ndarray  # lattice coordinates of the force rows' sites
    method: str

    @property
    def shape(self):
        return self.A.shape

    @property
    def n_force_rows(self):
        return self.A.shape[0] - self.n_energy_rows

    @property
    def n_unknowns_full(self):
        return self.n_interface * self.R**2

    def to_matrices(self, x):
        C = np.zeros((self.n_interface, self.R, self.R))
        u = self.unknowns
        C[u[:, 0], u[:, 1], u[:, 2]] = x
        return C

    def to_vector(self, C):
        u = self.unknowns
        return np.asarray(C)[u[:, 0], u[:, 1], u[:, 2]]

    def residual(self, C):
        return self.A @ self.to_vector(C) - self.b


def _active_unknowns(space, st, method):
    nI, R = len(space.interface), st.size
    n, r, s = np.meshgrid(np.arange(nI), np.arange(R), np.arange(R), indexing="ij")
    u = np.stack([n.ravel(), r.ravel(), s.ravel()], axis=1)
    if method == "M2":
        isites = space.sites[space.interface]
        target = isites[u[:, 0]] + st.directions[u[:, 2]]
        L = layer_index(target, space.decomp.config.extent)
        u = u[L <= space.decomp.outer_layer]
    return u


def force_sites(space, st, method):
    """Sites ``Lambda^i + R`` (restricted to ``Lambda^{a,i}`` for METHOD 2)."""
    isites = space.sites[space.interface]
    cand = (isites[:, None, :] + st.directions[None]).reshape(-1, 2)
    cand = np.unique(np.concatenate([cand, isites]), axis=0)
    if method == "M2":
        cand = cand[layer_index(cand, space.decomp.config.extent) <= space.decomp.outer_layer]
    order = np.lexsort((cand[:, 1], cand[:, 0]))
    return cand[order]


def interface_coeff_rows(space, st, volumes, sites, unknowns):
    """Sparse map from the unknown vector to ``c_i(m, rho)`` at ``sites``.

    Row ``k * |R+| + p`` belongs to site ``sites[k]`` and direction ``half[p]``.
    """
    p_of, sign = _half_map(st)
    nh = len(st.half)
    lookup = SiteIndex(sites)
    isites = space.sites[space.interface]
    n, rho, sig = unknowns[:, 0], unknowns[:, 1], unknowns[:, 2]
    w = volumes.omega_i[n] * sign[rho]
    m_plus = lookup(isites[n] + st.directions[sig])
    m_self = lookup(isites[n])
    cols = np.arange(len(unknowns))
    rows, vals, cc = [], [], []
    for m, s in ((m_plus, 1.0), (m_self, -1.0)):
        ok = m >= 0
        rows.append(m[ok] * nh + p_of[rho[ok]])
        vals.append(s * w[ok])
        cc.append(cols[ok])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cc))),
        shape=(len(sites) * nh, len(unknowns)),
    )


def energy_rows(st, unknowns):
    rows = (unknowns[:, 0] * st.size + unknowns[:, 1]) * 2
    sig = st.directions[unknowns[:, 2]].astype(float)
    cols = np.arange(len(unknowns))
    A = sp.csr_matrix(
        (np.concatenate([sig[:, 0], sig[:, 1]]),
         (np.concatenate([rows, rows + 1]), np.concatenate([cols, cols]))),
        shape=(int(unknowns[:, 0].max(initial=-1) + 1) * st.size * 2, len(unknowns)),
    )
    return A


def assemble_system(space, volumes, sites=None):
    """Energy and force patch-test equations for the interface of ``space``.

    ``sites`` overrides the force-row sites (e.g. every DOF, to inspect
    locality); the default is ``force_sites(space, st, method)``.
    """
    st = space.decomp.stencil
    method = volumes.method
    nI = len(space.interface)
    u = _active_unknowns(space, st, method)
    A_e = energy_rows(st, u)
    b_e = np.tile(st.directions.astype(float), (nI, 1)).ravel()
    if A_e.shape[0] < len(b_e):
        A_e.resize((len(b_e), len(u)))
    fs = force_sites(space, st, method) if sites is None else np.asarray(sites)
    A_f = interface_coeff_rows(space, st, volumes, fs, u)
    c = atomistic_coeffs(space.decomp, st, fs) + continuum_coeffs(space, st, volumes, fs)
    A = sp.vstack([A_e, A_f], format="csr")
    b = np.concatenate([b_e, -c.ravel()])
    return ConsistencySystem(A, b, len(b_e), u, nI, st.size, fs, method)


# --------------------------------------------------------------------------
# solvers


def _check(system, x, what):
    r = system.A @ x - system.b
    k = int(np.argmax(np.abs(r))) if len(r) else 0
    worst = float(np.abs(r[k])) if len(r) else 0.0
    if worst > FEASIBILITY_TOL:
        raise InfeasibleSystemError(
            f"{what}: constraint residual {worst:.3e} at row {k}", worst, k)
    return x


def _refine(A, b, x, iters=3):
    """Minimum-norm corrections restoring ``A x = b`` on the support of ``x``."""
    for _ in range(iters):
        r = b - A @ x
        if np.max(np.abs(r), initial=0.0) <= 1e-13:
            break
        dx = lsqr(A, r, atol=1e-16, btol=1e-16, iter_lim=20 * A.shape[1])[0]
        x = x + dx
    return x


def solve_min_norm(system, method="lsqr"):
    """Minimum Euclidean-norm solution of the (underdetermined) equations.

    ``method="lsqr"`` runs Golub-Kahan bidiagonalisation from zero, whose
    iterates stay in the row space of ``A``; ``"dense"`` uses an SVD-based
    pseudo-inverse and is meant for small systems.
    """
    A, b = system.A, system.b
    if not np.any(b):
        return system.to_matrices(np.zeros(A.shape[1]))
    if method == "dense":
        x = np.linalg.lstsq(A.toarray(), b, rcond=None)[0]
    else:
        x = lsqr(A, b, atol=1e-16, btol=1e-16, iter_lim=50 * A.shape[1])[0]
        # the corrections also start from zero, so x stays in range(A^T)
        x = _refine(A, b, x)
    return system.to_matrices(_check(system, x, "least-squares"))


def solve_l1(system, backend="highs"):
    """Minimum l1-norm solution via the split ``x = x+ - x-``, ``x+- >= 0``.

    ``backend="highs"`` uses the HiGHS dual simplex (vertex solutions, hence
    exact zeros); ``"simplex"`` is the dense Bland's-rule simplex below, for
    small systems.
    """
    A, b = system.A, system.b
    n = A.shape[1]
    if not np.any(b):
        return system.to_matrices(np.zeros(n))
    c = np.ones(2 * n)
    A2 = sp.hstack([A, -A], format="csr")
    if backend == "simplex":
        z = simplex(c, A2.toarray(), b)
    else:
        res = linprog(c, A_eq=A2, b_eq=b, bounds=(0, None), method="highs-ds",
                      options={"primal_feasibility_tolerance": 1e-10,
                               "dual_feasibility_tolerance": 1e-10,
                               "presolve": True})
        if res.status == 2:
            raise InfeasibleSystemError("l1: consistency equations are infeasible")
        if res.status != 0:
            raise InfeasibleSystemError(f"l1: LP solver failed ({res.message})")
        z = res.x
    x = z[:n] - z[n:]
    x[np.abs(x) < 1e-12] = 0.0
    supp = np.flatnonzero(x)
    if len(supp):
        As = A[:, supp]
        x[supp] = _refine(As, b, x[supp])
    return system.to_matrices(_check(system, x, "l1"))


def simplex(c, A, b, max_iter=100000):
    """Two-phase dense tableau simplex for ``min c.x, A x = b, x >= 0``.

    Bland's rule (smallest index entering and leaving) rules out cycling, so
    the result is deterministic.
    """
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    # tableau with artificial columns n..n+m-1, last column = rhs
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    basis = list(range(n, n + m))
    tol = 1e-11

    def run(cost, allowed):
        T[-1, :] = 0.0
        T[-1, :len(cost)] = cost
        for i, j in enumerate(basis):
            if T[-1, j] != 0:
                T[-1] -= T[-1, j] * T[i]
        for _ in range(max_iter):
            red = T[-1, :n + m]
            cand = np.flatnonzero((red < -tol) & allowed)
            if not len(cand):
                return
            e = cand[0]
            col = T[:m, e]
            pos = col > tol
            if not pos.any():
                raise InfeasibleSystemError("simplex: unbounded objective")
            ratios = np.full(m, np.inf)
            ratios[pos] = T[:m, -1][pos] / col[pos]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + tol * max(1.0, abs(best)))
            leave = min(ties, key=lambda i: basis[i])
            T[leave] /= T[leave, e]
            for i in range(m + 1):
                if i != leave and T[i, e] != 0:
                    T[i] -= T[i, e] * T[leave]
            basis[leave] = e
        raise InfeasibleSystemError("simplex: iteration limit")

    allowed = np.ones(n + m, dtype=bool)
    run(np.concatenate([np.zeros(n), np.ones(m)]), allowed)
    if -T[-1, -1] > 1e-9 * max(1.0, np.abs(b).max()):
        raise InfeasibleSystemError("simplex: equations are infeasible")
    # drive remaining artificials out of the basis (redundant rows stay put)
    for i, j in enumerate(basis):
        if j >= n:
            nz = np.flatnonzero(np.abs(T[i, :n]) > tol)
            if len(nz):
                e = nz[0]
                T[i] /= T[i, e]
                for k in range(m + 1):
                    if k != i and T[k, e] != 0:
                        T[k] -= T[k, e] * T[i]
                basis[i] = e
    allowed[n:] = False
    run(c, allowed)
    x = np.zeros(n + m)
    for i, j in enumerate(basis):
        x[j] = T[i, -1]
    return x[:n]


# --------------------------------------------------------------------------
# analytic continuum coefficients


def continuum_reconstruction_nnn(st):
    """Site reconstruction whose forces under uniform strain match Cauchy-Born.

    Nearest-neighbour rows are ``2/3 D_j + 1/3 D_{j+1} + 1/3 D_{j-1}``; for
    hop radius 2, the ``2 a_j`` rows are twice that and the ``a_j + a_{j+1}``
    rows are ``D_j + D_{j+1}``.
    """
    if st.hop_radius not in (1, 2):
        raise ConfigurationError("unsupported hop radius")
    R = st.size
    C = np.zeros((R, R))
    for j in range(6):
        C[j, j] = 2 / 3
        C[j, (j + 1) % 6] = 1 / 3
        C[j, (j - 1) % 6] = 1 / 3
    if st.hop_radius == 2:
        for j in range(6):
            C[6 + 2 * j] = 2 * C[j]
            C[7 + 2 * j, j] = 1.0
            C[7 + 2 * j, (j + 1) % 6] = 1.0
    return C


# --------------------------------------------------------------------------
# diagnostics


def sparsity(C, tol=ZERO_TOL):
    """Fraction of reconstruction entries with magnitude below ``tol``."""
    C = np.asarray(C)
    return float(np.mean(np.abs(C) < tol))


def verify_patch_tests(fn, F_samples, rel_tol=1e-9, energy_tol=1e-10):
    """Ghost forces and interface energy mismatch for homogeneous deformations.

    ``fn`` should be built on the defect-free lattice.  Returns a dict with
    one entry per sample and an overall ``passed`` flag.
    """
    from .energy import ghost_force, patch_force_scale

    st = fn.stencil
    out = {"samples": [], "passed": True}
    for F in F_samples:
        F = np.asarray(F, dtype=float)
        gf, field = ghost_force(F, fn)
        scale = patch_force_scale(F, fn)
        g = stencil_gradient(F, st, fn.space.basis)
        Vi = eval_V(np.einsum("nrs,sd->nrd", fn.C, g), fn.params)
        mismatch = float(np.max(np.abs(Vi - eval_V(g, fn.params)), initial=0.0))
        ok = gf <= rel_tol * scale and mismatch <= energy_tol
        out["samples"].append({"F": F, "ghost_force": gf, "force_scale": scale,
                               "energy_mismatch": mismatch, "passed": ok,
                               "field": field})
        out["passed"] &= ok
    return out


def write_system(system, path):
    """Sparse triplets ``row col value`` followed by an ``rhs`` block."""
    A = system.A.tocoo()
    with open(path, "w") as fh:
        fh.write(f"# rows {A.shape[0]} cols {A.shape[1]} energy_rows {system.n_energy_rows}\n")
        for r, c, v in zip(A.row, A.col, A.data):
            fh.write(f"{r} {c} {float(v)!r}\n")
        fh.write("rhs\n")
        for v in system.b:
            fh.write(f"{float(v)!r}\n")


def write_coefficients(C, path, tol=0.0):
    """One line ``site rho_idx sigma_idx value`` per stored entry."""
    C = np.asarray(C)
    with open(path, "w") as fh:
        for n, r, s in zip(*np.nonzero(np.abs(C) > tol)):
            fh.write(f"{n} {r} {s} {float(C[n, r, s])!r}\n")


def read_coefficients(path, n_interface, R):
    C = np.zeros((n_interface, R, R))
    with open(path) as fh:
        for line in fh:
            n, r, s, v = line.split()
            C[int(n), int(r), int(s)] = float(v)
    return C
