"""EAM toy site potential on finite-difference stencils and its Cauchy-Born density.

All routines are vectorised over leading batch dimensions: a stencil
gradient ``g`` has shape ``(..., R, 2)`` and an optional boolean ``mask`` of
shape ``(..., R)`` switches individual bonds off (vacancies).
"""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ConfigurationError, SingularConfigurationError
from .lattice import TRIANGULAR


@dataclass(frozen=True)
class EAMParams:
    a: float = 4.4
    b: float = 3.0
    c: float = 5.0
    rho0: float = 6.0 * np.exp(-3.0)


def _radial(g, mask):
    r = np.sqrt(np.sum(g * g, axis=-1))
    if mask is None:
        mask = np.ones(r.shape, dtype=bool)
    if np.any(r[mask] == 0.0):
        raise SingularConfigurationError("zero-length finite difference")
    # masked-out bonds get r = 1 so that nothing below divides by zero
    r = np.where(mask, r, 1.0)
    return r, mask


def _terms(r, mask, p):
    e1 = np.exp(-2 * p.a * (r - 1))
    e2 = np.exp(-p.a * (r - 1))
    phi = e1 - 2 * e2
    dphi = -2 * p.a * e1 + 2 * p.a * e2
    ddphi = 4 * p.a**2 * e1 - 2 * p.a**2 * e2
    psi = np.exp(-p.b * r)
    m = mask.astype(float)
    phi, dphi, ddphi = phi * m, dphi * m, ddphi * m
    psi = psi * m
    t = np.sum(psi, axis=-1)
    s = t - p.rho0
    F = p.c * (s**2 + s**4)
    dF = p.c * (2 * s + 4 * s**3)
    ddF = p.c * (2 + 12 * s**2)
    return phi, dphi, ddphi, psi, F, dF, ddF


def eval_V(g, params=EAMParams(), mask=None):
    g = np.asarray(g, dtype=float)
    r, mask = _radial(g, mask)
    phi, _, _, _, F, _, _ = _terms(r, mask, params)
    return np.sum(phi, axis=-1) + F


def grad_V(g, params=EAMParams(), mask=None):
    """Partial derivatives with respect to each bond vector, shape of ``g``."""
    g = np.asarray(g, dtype=float)
    r, mask = _radial(g, mask)
    _, dphi, _, psi, _, dF, _ = _terms(r, mask, params)
    dpsi = -params.b * psi
    coef = (dphi + dF[..., None] * dpsi) / r
    return coef[..., None] * g


def _second_order(g, params, mask):
    r, mask = _radial(g, mask)
    _, dphi, ddphi, psi, _, dF, ddF = _terms(r, mask, params)
    dpsi = -params.b * psi
    ddpsi = params.b**2 * psi
    ghat = g / r[..., None]
    first = dphi + dF[..., None] * dpsi
    radial = ddphi + dF[..., None] * ddpsi  # along ghat
    tangential = first / r  # orthogonal to ghat
    return ghat, radial, tangential, ddF, dpsi


def hessp_V(g, dg, params=EAMParams(), mask=None):
    """Second derivative of ``V`` at ``g`` applied to the perturbation ``dg``."""
    g = np.asarray(g, dtype=float)
    dg = np.asarray(dg, dtype=float)
    ghat, radial, tangential, ddF, dpsi = _second_order(g, params, mask)
    proj = np.sum(ghat * dg, axis=-1)
    out = (radial - tangential)[..., None] * proj[..., None] * ghat
    out += tangential[..., None] * dg
    coupling = ddF * np.sum(dpsi * proj, axis=-1)
    out += (coupling[..., None] * dpsi)[..., None] * ghat
    if mask is not None:
        out = out * mask[..., None]
    return out


def hess_V(g, params=EAMParams(), mask=None):
    """Dense Hessian blocks, shape ``(..., R, 2, R, 2)``."""
    g = np.asarray(g, dtype=float)
    ghat, radial, tangential, ddF, dpsi = _second_order(g, params, mask)
    R = g.shape[-2]
    eye = np.eye(2)
    outer = ghat[..., :, None] * ghat[..., None, :]
    diag = (radial - tangential)[..., None, None] * outer
    diag = diag + tangential[..., None, None] * eye
    u = dpsi[..., None] * ghat  # (..., R, 2)
    H = ddF[..., None, None, None, None] * (
        u[..., :, :, None, None] * u[..., None, None, :, :]
    )
    idx = np.arange(R)
    H[..., idx, :, idx, :] += np.moveaxis(diag, -3, 0)
    if mask is not None:
        m = mask.astype(float)
        H = H * m[..., :, None, None, None] * m[..., None, None, :, None]
    return H


def stencil_gradient(F, st, basis=TRIANGULAR):
    """Homogeneously deformed stencil ``(F rho)_rho``."""
    return st.physical(basis) @ np.asarray(F, dtype=float).T


def eval_W(F, st, params=EAMParams(), basis=TRIANGULAR):
    return float(eval_V(stencil_gradient(F, st, basis), params)) / basis.det


def grad_W(F, st, params=EAMParams(), basis=TRIANGULAR):
    """First Piola-Kirchhoff stress dW/dF."""
    rho = st.physical(basis)
    dV = grad_V(stencil_gradient(F, st, basis), params)
    return dV.T @ rho / basis.det


def _alpha_derivs(alpha, st, params, basis):
    rho = st.physical(basis)
    g = alpha * rho
    d1 = np.sum(grad_V(g, params) * rho)
    d2 = np.sum(hessp_V(g, rho, params) * rho)
    return d1 / basis.det, d2 / basis.det


def find_F0(st, params=EAMParams(), basis=TRIANGULAR, bracket=(0.5, 2.0)):
    """Ground-state strain ``alpha * I`` minimising ``alpha -> W(alpha I)``."""
    lo, hi = bracket
    w = lambda a: eval_W(a * np.eye(2), st, params, basis)
    res = minimize_scalar(w, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10})
    alpha = float(res.x)
    if not lo + 1e-6 < alpha < hi - 1e-6:
        raise ConfigurationError("no interior minimiser of W(alpha I) in bracket")
    for _ in range(50):
        d1, d2 = _alpha_derivs(alpha, st, params, basis)
        if abs(d1) <= 1e-12:
            break
        alpha -= d1 / d2
    return alpha * np.eye(2)


def force_scale(F, st, params=EAMParams(), basis=TRIANGULAR):
    """Largest bond force ``|nabla_rho V|`` of the homogeneous state."""
    dV = grad_V(stencil_gradient(F, st, basis), params)
    return float(np.max(np.linalg.norm(dV, axis=-1)))
