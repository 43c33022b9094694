"""Atomistic and coupled energies with exact first and second variations.

Every energy contribution has the form ``w * V(G)`` where the stencil
gradient ``G`` is a linear image of the nodal values: bond differences for
atomistic sites, reconstructed differences ``C_l . Dy(l)`` for interface
sites and ``(grad y_h|_T) rho`` for Cauchy-Born elements.  Stacking all of
them gives one sparse operator ``P`` and the energy, gradient, Hessian-vector
product and assembled Hessian all reduce to products with ``P``.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .geometry import HybridState, affine_state
from .lattice import STABILISATION_DIRECTIONS, SiteIndex, voronoi_volume
from .potential import EAMParams, eval_V, force_scale, grad_V, hess_V, hessp_V

__all__ = [
    "ACFunctional",
    "AtomisticSpace",
    "HybridState",
    "StencilEnergy",
    "atomistic_model",
    "energy_atm",
    "energy_ac",
    "grad_ac",
    "hess_ac",
    "ghost_force",
    "identity_reconstruction",
    "patch_force_scale",
]


class StencilEnergy:
    """``sum_s w_s V(G_s) + sum_q k_q |S_q|^2`` with ``G = P y`` and ``S = Q y``."""

    def __init__(self, n_dof, P, weights, R, params, mask=None, Q=None, q_weights=None):
        self.n_dof = n_dof
        self.P = sp.csr_matrix(P)
        self.PT = self.P.T.tocsr()
        self.weights = np.asarray(weights, dtype=float)
        self.R = R
        self.params = params
        self.mask = mask
        self.Q = None if Q is None or Q.shape[0] == 0 else sp.csr_matrix(Q)
        self.q_weights = None if self.Q is None else np.asarray(q_weights, dtype=float)

    def _G(self, Y):
        return (self.P @ Y).reshape(-1, self.R, 2)

    def site_energies(self, Y):
        return eval_V(self._G(Y), self.params, self.mask)

    def energy(self, Y):
        e = float(np.dot(self.weights, self.site_energies(Y)))
        if self.Q is not None:
            S = self.Q @ Y
            e += float(np.dot(self.q_weights, np.sum(S * S, axis=1)))
        return e

    def gradient(self, Y):
        dG = grad_V(self._G(Y), self.params, self.mask) * self.weights[:, None, None]
        g = self.PT @ dG.reshape(-1, 2)
        if self.Q is not None:
            g += 2 * (self.Q.T @ (self.q_weights[:, None] * (self.Q @ Y)))
        return g

    def hessp(self, Y, dY):
        dG = (self.P @ dY).reshape(-1, self.R, 2)
        h = hessp_V(self._G(Y), dG, self.params, self.mask) * self.weights[:, None, None]
        out = self.PT @ h.reshape(-1, 2)
        if self.Q is not None:
            out += 2 * (self.Q.T @ (self.q_weights[:, None] * (self.Q @ dY)))
        return out

    def stabilisation_hessian(self):
        """Hessian of the quadratic part, interleaved (x, y) ordering."""
        n2 = 2 * self.n_dof
        if self.Q is None:
            return sp.csr_matrix((n2, n2))
        Q2 = sp.kron(self.Q, sp.identity(2), format="csr")
        W = sp.diags(np.repeat(self.q_weights, 2))
        return (2 * Q2.T @ W @ Q2).tocsr()

    def hessian(self, Y):
        """Assembled sparse Hessian in interleaved (x, y) ordering."""
        G = self._G(Y)
        blocks = hess_V(G, self.params, self.mask) * self.weights[:, None, None, None, None]
        nS, R = G.shape[0], self.R
        blocks = blocks.reshape(nS, 2 * R, 2 * R)
        Hb = sp.block_diag(list(blocks), format="csr") if nS else sp.csr_matrix((0, 0))
        P2 = sp.kron(self.P, sp.identity(2), format="csr")
        H = (P2.T @ Hb @ P2).tocsr()
        H = H + self.stabilisation_hessian()
        return ((H + H.T) * 0.5).tocsr()


# --------------------------------------------------------------------------
# atomistic model


@dataclass
class AtomisticSpace:
    """Lattice sites of a reference configuration used directly as DOFs."""

    config: object
    free: np.ndarray

    @property
    def sites(self):
        return self.config.sites

    @property
    def positions(self):
        return self.config.positions

    @property
    def basis(self):
        return self.config.basis

    @property
    def dof(self):
        return len(self.config.sites)

    def __len__(self):
        return self.dof

    def lookup(self, ij):
        return self.config.lookup(ij)


def _difference_rows(n_dof, centre, nbr, valid):
    """Sparse rows ``y[nbr] - y[centre]`` for every (site, direction) pair."""
    nS, R = nbr.shape
    rows = np.arange(nS * R).reshape(nS, R)
    r = np.concatenate([rows[valid], rows[valid]])
    c = np.concatenate([nbr[valid], np.broadcast_to(centre[:, None], nbr.shape)[valid]])
    v = np.concatenate([np.ones(valid.sum()), -np.ones(valid.sum())])
    return sp.csr_matrix((v, (r, c)), shape=(nS * R, n_dof))


def _site_neighbours(lookup, sites, st, defects=None):
    """Neighbour DOFs, bond mask (vacancies off) and resolvability per site."""
    targets = sites[:, None, :] + st.directions[None, :, :]
    nbr = lookup(targets)
    vacant = np.zeros(nbr.shape, dtype=bool)
    if defects is not None and len(defects):
        dl = SiteIndex(defects)
        vacant = dl(targets) >= 0
    resolvable = np.all((nbr >= 0) | vacant, axis=1)
    return nbr, nbr >= 0, resolvable


def atomistic_model(config, st, params=EAMParams(), free_layers=None):
    """Full atomistic energy on ``config``; sites beyond ``free_layers`` are clamped.

    Energy sites are those whose stencil is resolvable inside ``config``
    (vacant neighbours are simply absent bonds).
    """
    nbr, mask, ok = _site_neighbours(config.lookup, config.sites, st, config.defect_sites)
    centre = np.flatnonzero(ok)
    nbr, mask = nbr[centre], mask[centre]
    P = _difference_rows(len(config), centre, np.where(mask, nbr, 0), mask)
    model = StencilEnergy(len(config), P, np.ones(len(centre)), st.size, params, mask)
    if free_layers is None:
        free_layers = config.bounding_layers - 2 * st.hop_radius
    free = config.layers <= free_layers
    return model, AtomisticSpace(config, free)


def energy_atm(y, z, config, st, params=EAMParams()):
    """Energy difference ``sum_l Phi_l(y) - Phi_l(z)`` over resolvable sites."""
    model, _ = atomistic_model(config, st, params)
    return model.energy(np.asarray(y, float)) - model.energy(np.asarray(z, float))


# --------------------------------------------------------------------------
# coupled model


def identity_reconstruction(n_interface, R):
    return np.broadcast_to(np.eye(R), (n_interface, R, R)).copy()


@dataclass
class ACFunctional:
    space: object  # geometry.HybridSpace
    volumes: object  # geometry.EffectiveVolumes
    C: np.ndarray  # (n_interface, R, R)
    params: EAMParams = field(default_factory=EAMParams)
    kappa: float = 0.0

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("stabilisation parameter must be non-negative")
        self.C = np.asarray(self.C, dtype=float)
        nI, R = len(self.space.interface), self.stencil.size
        if self.C.shape != (nI, R, R):
            raise ValueError(f"expected reconstruction of shape {(nI, R, R)}")

    @property
    def stencil(self):
        return self.space.decomp.stencil

    @property
    def method(self):
        return self.volumes.method

    def with_kappa(self, kappa):
        return ACFunctional(self.space, self.volumes, self.C, self.params, kappa)

    @cached_property
    def model(self):
        return build_ac_model(self)


def build_ac_model(fn):
    space, st = fn.space, fn.stencil
    n, R = space.dof, st.size
    cfg = space.decomp.config
    vor = voronoi_volume(space.basis)
    parts, weights, masks = [], [], []

    # atomistic core (vacancies remove bonds)
    core_sites = space.sites[space.core]
    nbr, mask, ok = _site_neighbours(space.lookup, core_sites, st, cfg.defect_sites)
    if not ok.all():
        raise ValueError("atomistic stencil leaves the hybrid space")
    parts.append(_difference_rows(n, space.core, np.where(mask, nbr, 0), mask))
    weights.append(np.ones(len(core_sites)))
    masks.append(mask)

    # interface: G = C (y[nbr] - y[l])
    isites = space.sites[space.interface]
    inbr = space.lookup(isites[:, None, :] + st.directions)
    if np.any(inbr < 0):
        raise ValueError("interface stencil leaves the hybrid space")
    nI = len(isites)
    rows = np.arange(nI * R).reshape(nI, R)
    r = np.repeat(rows[:, :, None], R, axis=2)  # (nI, rho, sigma)
    c = np.broadcast_to(inbr[:, None, :], (nI, R, R))
    vals = fn.C
    P_int = sp.csr_matrix((vals.ravel(), (r.ravel(), c.ravel())), shape=(nI * R, n))
    P_int = P_int - sp.csr_matrix(
        (vals.sum(axis=2).ravel(), (rows.ravel(), np.repeat(space.interface, R))),
        shape=(nI * R, n),
    )
    parts.append(P_int)
    weights.append(fn.volumes.omega_i)
    masks.append(np.ones((nI, R), dtype=bool))

    # Cauchy-Born elements: G_rho = sum_i y_i (grad phi_i . rho)
    mesh = space.mesh
    rho = st.physical(space.basis)
    coef = np.einsum("tad,rd->tra", mesh.gradients, rho)  # (T, R, 3)
    nT = len(mesh.triangles)
    rows = np.arange(nT * R).reshape(nT, R)
    r = np.repeat(rows[:, :, None], 3, axis=2)
    c = np.broadcast_to(space.node_dof[mesh.triangles][:, None, :], (nT, R, 3))
    parts.append(sp.csr_matrix((coef.ravel(), (r.ravel(), c.ravel())), shape=(nT * R, n)))
    weights.append(fn.volumes.omega_T / vor)
    masks.append(np.ones((nT, R), dtype=bool))

    P = sp.vstack(parts, format="csr")
    Q, qw = None, None
    if fn.kappa > 0:
        Q, qw = stabilisation_operator(space, fn.volumes.omega_i * fn.kappa)
    return StencilEnergy(n, P, np.concatenate(weights), R, fn.params,
                         np.concatenate(masks), Q, qw)


def stabilisation_operator(space, site_weights, directions=STABILISATION_DIRECTIONS):
    """Second differences ``y(l+b) - 2y(l) + y(l-b)`` at the interface sites."""
    isites = space.sites[space.interface]
    m = len(directions)
    rows, cols, vals = [], [], []
    for j, b in enumerate(directions):
        p, q = space.lookup(isites + b), space.lookup(isites - b)
        if np.any(p < 0) or np.any(q < 0):
            raise ValueError("stabilisation stencil leaves the hybrid space")
        rr = np.arange(len(isites)) * m + j
        rows += [rr, rr, rr]
        cols += [p, q, space.interface]
        vals += [np.ones(len(rr)), np.ones(len(rr)), -2 * np.ones(len(rr))]
    Q = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(len(isites) * m, space.dof))
    return Q, np.repeat(np.asarray(site_weights, float), m)


def energy_ac(state, ref, fn):
    return fn.model.energy(state.values) - fn.model.energy(ref.values)


def grad_ac(state, fn):
    """Gradient with respect to the free degrees of freedom, shape ``(n_free, 2)``."""
    return fn.model.gradient(state.values)[fn.space.free]


def free_interleaved(free):
    return np.repeat(free, 2)


def hess_ac(state, fn):
    """Sparse symmetric Hessian over the free DOFs, interleaved (x, y) ordering."""
    H = fn.model.hessian(state.values)
    f = np.flatnonzero(free_interleaved(fn.space.free))
    return H[f][:, f].tocsr()


def ghost_force(F, fn):
    """Forces of the homogeneous deformation ``y = F x`` (zero for a consistent scheme)."""
    state = affine_state(fn.space, F)
    g = fn.model.gradient(state.values)
    g[~fn.space.free] = 0.0
    return float(np.max(np.abs(g))), g


def write_field(path, field_values):
    with open(path, "w") as fh:
        for k, (gx, gy) in enumerate(field_values):
            fh.write(f"{k} {float(gx)!r} {float(gy)!r}\n")


def patch_force_scale(F, fn):
    return force_scale(F, fn.stencil, fn.params, fn.space.basis)
