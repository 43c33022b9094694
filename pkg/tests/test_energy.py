import numpy as np
import pytest

from conftest import make_space
from grac.energy import (ACFunctional, atomistic_model, energy_ac, energy_atm,
                         free_interleaved, ghost_force, grad_ac, hess_ac,
                         identity_reconstruction, patch_force_scale)
from grac.geometry import affine_state
from grac.lattice import build_reference_config, layer_index
from grac.potential import eval_V


def perturbed(space, F, rng, amp=0.02):
    s = affine_state(space, F)
    s.values[space.free] += amp * rng.standard_normal((space.free.sum(), 2))
    return s


def test_energy_atm_basic(st2, params, F0, rng):
    cfg = build_reference_config(2, 8)
    z = cfg.positions @ F0.T
    assert energy_atm(z, z, cfg, st2, params) == 0
    y = z.copy()
    l = cfg.lookup(np.array([3, 0]))
    y[l] += [0.05, -0.02]
    # direct two-sum over the sites whose stencil sees the bump
    direct = 0.0
    vac = {tuple(s) for s in cfg.defect_sites}
    for m, x in enumerate(cfg.sites):
        nb = [cfg.lookup(x + d) for d in st2.directions]
        if any(n < 0 and tuple(x + d) not in vac for d, n in zip(st2.directions, nb)):
            continue
        mask = np.array([n >= 0 for n in nb])
        idx = np.where(mask, nb, 0)
        gy, gz = y[idx] - y[m], z[idx] - z[m]
        direct += eval_V(gy, params, mask) - eval_V(gz, params, mask)
    assert energy_atm(y, z, cfg, st2, params) == pytest.approx(direct, abs=1e-12)
    c = np.array([3.0, -1.0])
    assert energy_atm(y + c, z + c, cfg, st2, params) == pytest.approx(
        energy_atm(y, z, cfg, st2, params), abs=1e-12)


def test_atomistic_derivatives(st2, params, F0, rng):
    cfg = build_reference_config(2, 8)
    model, space = atomistic_model(cfg, st2, params)
    for _ in range(3):
        Y = perturbed(space, F0, rng).values
        U = rng.standard_normal(Y.shape)
        U[~space.free] = 0
        h = 1e-6
        fd = (model.energy(Y + h * U) - model.energy(Y - h * U)) / (2 * h)
        g = np.sum(model.gradient(Y) * U)
        assert abs(fd - g) / abs(g) < 1e-6
        hv = model.hessp(Y, U)
        fdh = (model.gradient(Y + h * U) - model.gradient(Y - h * U)) / (2 * h)
        assert np.linalg.norm(hv - fdh) / np.linalg.norm(hv) < 1e-5


@pytest.fixture(scope="module")
def grac_fn(solved, params):
    s = solved("M1")
    space, vol = make_space(3, method="M1")
    return ACFunctional(space, vol, s.C_l1, params)


def test_energy_ac_zero_at_reference(grac_fn, F0):
    s = affine_state(grac_fn.space, F0)
    assert energy_ac(s, s, grac_fn) == 0


@pytest.mark.parametrize("kappa", [0.0, 1.0])
def test_ac_derivatives(grac_fn, F0, rng, kappa):
    fn = grac_fn.with_kappa(kappa)
    free = fn.space.free
    for _ in range(3):
        state = perturbed(fn.space, F0, rng)
        U = np.zeros_like(state.values)
        U[free] = rng.standard_normal((free.sum(), 2))
        h = 1e-6
        Yp, Ym = state.values + h * U, state.values - h * U
        fd = (fn.model.energy(Yp) - fn.model.energy(Ym)) / (2 * h)
        g = np.sum(grad_ac(state, fn) * U[free])
        assert abs(fd - g) / abs(g) < 1e-6
        H = hess_ac(state, fn)
        assert abs(H - H.T).max() <= 1e-12
        fdh = (fn.model.gradient(Yp) - fn.model.gradient(Ym))[free] / (2 * h)
        hv = H @ U[free].ravel()
        assert np.linalg.norm(hv - fdh.ravel()) / np.linalg.norm(hv) < 1e-5


def test_kappa_is_linear_in_hessian(grac_fn, F0, rng):
    state = perturbed(grac_fn.space, F0, rng)
    H0 = hess_ac(state, grac_fn.with_kappa(0.0))
    H1 = hess_ac(state, grac_fn.with_kappa(1.0))
    H3 = hess_ac(state, grac_fn.with_kappa(3.0))
    np.testing.assert_allclose((H3 - H0).toarray(), 3 * (H1 - H0).toarray(), atol=1e-10)
    # and the increment does not depend on the state
    other = perturbed(grac_fn.space, F0, rng)
    d = hess_ac(other, grac_fn.with_kappa(1.0)) - hess_ac(other, grac_fn.with_kappa(0.0))
    np.testing.assert_allclose(d.toarray(), (H1 - H0).toarray(), atol=1e-10)
    # positive semi-definite increment
    assert np.linalg.eigvalsh((H1 - H0).toarray()).min() > -1e-10


def test_ghost_forces(solved, params, F0, rng):
    for method in ("M1", "M2"):
        s = solved(method)
        for C in (s.C_l1, s.C_l2):
            fn = ACFunctional(s.space, s.volumes, C, params)
            for F in (F0, 1.03 * F0, F0 @ (np.eye(2) + 0.03 * rng.standard_normal((2, 2)))):
                gf, _ = ghost_force(F, fn)
                assert gf <= 1e-9 * patch_force_scale(F, fn)


def test_stabilisation_adds_no_ghost_force(solved, params, F0):
    s = solved("M1")
    for C in (s.C_l1, identity_reconstruction(len(s.space.interface), 18)):
        fn = ACFunctional(s.space, s.volumes, C, params)
        _, g0 = ghost_force(F0, fn)
        _, g1 = ghost_force(F0, fn.with_kappa(1.0))
        assert np.abs(g1 - g0).max() <= 1e-12


def test_qce_ghost_forces_localised(solved, params, F0):
    s = solved("M1")
    space = s.space
    fn = ACFunctional(space, s.volumes, identity_reconstruction(len(space.interface), 18), params)
    gf, field = ghost_force(F0, fn)
    assert gf > 1e-3 * patch_force_scale(F0, fn)
    assert gf == pytest.approx(0.8796, abs=1e-4)
    isites = space.sites[space.interface]
    near = {tuple(x + d) for x in isites for d in np.vstack([[0, 0], fn.stencil.directions])}
    big = np.abs(field).max(axis=1) > 1e-12
    assert all(tuple(x) in near for x in space.sites[big])


def test_core_energy_matches_atomistic(params, F0, rng, st2):
    """A bump deep in the core changes E^ac exactly as it changes the atomistic energy."""
    space, vol = make_space(5, method="M1", remove_defect=False)
    fn = ACFunctional(space, vol, identity_reconstruction(len(space.interface), 18), params)
    z = affine_state(space, F0)
    y = z.copy()
    cfg = space.decomp.config
    inner = layer_index(space.sites, cfg.extent) <= 1
    inner[space.n_atomistic:] = False
    y.values[inner] += 0.03 * rng.standard_normal((inner.sum(), 2))
    e_ac = energy_ac(y, z, fn)
    full = build_reference_config(2, 9, remove_defect=False)
    Yf = full.positions @ F0.T
    Zf = Yf.copy()
    idx = full.lookup(space.sites[inner])
    Yf[idx] = y.values[inner]
    assert e_ac == pytest.approx(energy_atm(Yf, Zf, full, st2, params), abs=1e-12)


def test_energy_patch_for_affine(solved, params, F0):
    # E^ac(y_F; y_F) = 0 and interface energies equal the atomistic one
    s = solved("M2")
    fn = ACFunctional(s.space, s.volumes, s.C_l1, params)
    F = 1.02 * F0
    y = affine_state(s.space, F)
    assert energy_ac(y, y, fn) == 0.0
    assert free_interleaved(s.space.free).sum() == 2 * s.space.free.sum()
