"""Benchmark driver: method x size sweeps against a large atomistic reference.

Usage::

    python -m grac.bench run experiment.cfg
    python -m grac.bench patchtest experiment.cfg
    python -m grac.bench coeffs experiment.cfg
    python -m grac.bench slope results/divacancy.csv H1
"""
import argparse
import csv
import logging
import math
import os
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .consistency import (assemble_system, solve_l1, solve_min_norm, sparsity,
                          verify_patch_tests, write_coefficients)
from .energy import (ACFunctional, atomistic_model, ghost_force, hess_ac,
                     identity_reconstruction, patch_force_scale)
from .errors import ConfigurationError
from .geometry import (HybridSpace, affine_state, build_mesh, decompose,
                       domain_layers, effective_volumes, write_mesh)
from .lattice import build_reference_config, stencil
from .potential import EAMParams, find_F0, force_scale
from .solve import (SolverConfig, atomistic_problem, error_norms, min_eigenvalue,
                    minimize)

log = logging.getLogger(__name__)

THREADS_ENV = "GRAC_THREADS"
COLUMNS = ["method", "K", "DOF", "H1", "W1inf", "Eerr", "ghost_force_max",
           "min_eig", "wall_time", "status"]
NORMS = ["H1", "W1inf", "Eerr"]
METHOD_RE = re.compile(r"^M([12])-L([12])-S([01])$")

PROBLEMS = {
    # name: (defect row length, default K list)
    "divacancy": (2, (3, 4, 5, 6, 8)),
    "microcrack11": (11, (7, 8, 9, 10)),
}


def loading(problem, F0, strain=0.03):
    """Far-field deformation ``B`` of a benchmark problem."""
    s = g = strain
    if problem == "divacancy":
        return np.array([[1 + s, g], [0, 1 + s]]) @ F0
    if problem == "microcrack11":
        return np.array([[1, g], [0, 1 + s]]) @ F0
    raise ConfigurationError(f"unknown problem {problem!r}")


@dataclass(frozen=True)
class MethodId:
    name: str
    kind: str  # "ATM", "QCE" or "GRAC"
    volumes: str = "M1"
    norm: int = 1
    stabilised: bool = False

    @classmethod
    def parse(cls, name):
        name = name.strip()
        if name in ("ATM", "QCE"):
            return cls(name, name)
        m = METHOD_RE.match(name)
        if not m:
            raise ConfigurationError(f"bad method id {name!r}")
        return cls(name, "GRAC", "M" + m.group(1), int(m.group(2)), m.group(3) == "1")


@dataclass
class ExperimentSpec:
    problem: str = "divacancy"
    methods: list = field(default_factory=lambda: ["M1-L1-S1", "M2-L1-S1"])
    K_list: list = None
    seed: int = 0
    output_dir: str = "results"
    kappa: float = 1.0
    n_ref_factor: int = 4
    grad_tol: float = 1e-8
    ref_grad_tol: float = 1e-10
    record_wall_time: bool = False
    hop_radius: int = 2

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigurationError(f"unknown problem {self.problem!r}")
        if self.K_list is None:
            self.K_list = list(PROBLEMS[self.problem][1])
        self.K_list = [int(k) for k in self.K_list]
        self.method_ids = [MethodId.parse(m) for m in self.methods]
        if self.n_ref_factor < 1 or min(self.K_list) < 1:
            raise ConfigurationError("K values and n_ref_factor must be positive")

    @property
    def N_max(self):
        return max(domain_layers(K, self.hop_radius) for K in self.K_list)


CONFIG_KEYS = {
    "problem": str, "methods": lambda v: [m.strip() for m in v.split(",") if m.strip()],
    "K_list": lambda v: [int(k) for k in v.split(",") if k.strip()],
    "seed": int, "output_dir": str, "kappa": float, "n_ref_factor": int,
    "grad_tol": float, "ref_grad_tol": float, "hop_radius": int,
    "record_wall_time": lambda v: v.strip().lower() in ("1", "true", "yes", "on"),
}


def parse_config(text):
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    kw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigurationError(f"line {n}: unknown key {key!r}")
        try:
            kw[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ConfigurationError(f"line {n}: {exc}") from None
    return ExperimentSpec(**kw)


def load_config(path):
    return parse_config(Path(path).read_text())


# --------------------------------------------------------------------------
# building blocks


class Problem:
    """Shared state of one benchmark problem: stencil, potential, loading, caches."""

    def __init__(self, spec, params=EAMParams()):
        self.spec = spec
        self.k = PROBLEMS[spec.problem][0]
        self.st = stencil(spec.hop_radius)
        self.params = params
        self.F0 = find_F0(self.st, params)
        self.B = loading(spec.problem, self.F0)
        self._coeffs = {}
        self._reference = None

    def geometry(self, K, volumes, remove_defect=True):
        N = domain_layers(K, self.spec.hop_radius)
        cfg = build_reference_config(self.k, N, remove_defect=remove_defect)
        decomp = decompose(cfg, K, self.st)
        mesh = build_mesh(decomp)
        space = HybridSpace(decomp, mesh)
        return space, effective_volumes(decomp, mesh, volumes)

    def coefficients(self, K, volumes, norm):
        """Reconstruction solved on the defect-free lattice (cached)."""
        key = (K, volumes, norm)
        if key not in self._coeffs:
            space, vol = self.geometry(K, volumes, remove_defect=False)
            system = assemble_system(space, vol)
            C = solve_l1(system) if norm == 1 else solve_min_norm(system)
            self._coeffs[key] = C
        return self._coeffs[key]

    def functional(self, K, mid, remove_defect=True):
        space, vol = self.geometry(K, mid.volumes, remove_defect)
        if mid.kind == "QCE":
            C = identity_reconstruction(len(space.interface), self.st.size)
        else:
            C = self.coefficients(K, mid.volumes, mid.norm)
        kappa = self.spec.kappa if mid.stabilised else 0.0
        return ACFunctional(space, vol, C, self.params, kappa)

    def reference(self):
        if self._reference is None:
            N_ref = self.spec.n_ref_factor * self.spec.N_max
            log.info("reference: atomistic problem with %d layers", N_ref)
            model, space = atomistic_problem(self.k, N_ref, self.st, self.params)
            cfg = SolverConfig(grad_tol=self.spec.ref_grad_tol)
            state, _ = minimize(model, affine_state(space, self.B), cfg)
            self._reference = (state, model)
        return self._reference


def _atomistic_row(prob, K):
    N = domain_layers(K, prob.spec.hop_radius)
    model, space = atomistic_problem(prob.k, N, prob.st, prob.params)
    y, _ = minimize(model, affine_state(space, prob.B), SolverConfig(prob.spec.grad_tol))
    # ghost forces of the (consistent) atomistic model on the perfect lattice
    m0, s0 = atomistic_problem(prob.k, N, prob.st, prob.params, remove_defect=False)
    g = m0.gradient(s0.positions @ prob.B.T)[s0.free]
    H = model.hessian(y.values)
    f = np.flatnonzero(np.repeat(space.free, 2))
    lam = min_eigenvalue(H[f][:, f])
    return y, model, None, float(np.max(np.abs(g))), lam


def _coupled_row(prob, K, mid):
    fn = prob.functional(K, mid)
    y, _ = minimize(fn, affine_state(fn.space, prob.B), SolverConfig(prob.spec.grad_tol))
    fn0 = prob.functional(K, mid, remove_defect=False)
    gf, _ = ghost_force(prob.B, fn0)
    lam = min_eigenvalue(hess_ac(y, fn))
    return y, None, fn, gf, lam


def run_row(prob, K, mid):
    """One table row; failures are recorded in ``status`` instead of raised."""
    t0 = time.perf_counter()
    row = {"method": mid.name, "K": K}
    try:
        if mid.kind == "ATM":
            y, model, fn, gf, lam = _atomistic_row(prob, K)
        else:
            y, model, fn, gf, lam = _coupled_row(prob, K, mid)
        ref_state, ref_model = prob.reference()
        rep = error_norms(y, ref_state, fn=fn, ref_model=ref_model, model=model)
        row.update(DOF=rep.dof, H1=rep.h1_seminorm, W1inf=rep.w1inf_seminorm,
                   Eerr=rep.energy_error, ghost_force_max=gf, min_eig=lam, status="ok")
    except Exception as exc:  # recorded per row, the sweep continues
        log.warning("%s K=%d failed: %s", mid.name, K, exc)
        row["status"] = "fail:" + type(exc).__name__
    row["wall_time"] = time.perf_counter() - t0
    return row


def _threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer") from None


def run_experiment(spec, write=True):
    """Run the method x K sweep; returns the rows (and writes the CSV)."""
    prob = Problem(spec)
    prob.reference()
    jobs = [(K, mid) for K in spec.K_list for mid in spec.method_ids]
    # coefficient cache is filled up front so concurrent rows only read it
    for K, mid in jobs:
        if mid.kind == "GRAC":
            try:
                prob.coefficients(K, mid.volumes, mid.norm)
            except Exception as exc:
                log.warning("consistency K=%d %s failed: %s", K, mid.name, exc)
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        rows = list(pool.map(lambda job: run_row(prob, *job), jobs))
    if write:
        out = Path(spec.output_dir)
        write_table(rows, out / f"{spec.problem}.csv", spec.record_wall_time)
        write_timings(rows, out / f"{spec.problem}.timings")
        emit_plotdata(rows, out, spec.problem)
    return rows


# --------------------------------------------------------------------------
# tables


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(rows, path, record_wall_time=False):
    """CSV with the fixed column order of ``COLUMNS``.

    Wall times are only written when requested, so that reruns are
    byte-identical by default; they always go to the ``.timings`` file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            vals = dict(r)
            if not record_wall_time:
                vals["wall_time"] = None
            w.writerow([_fmt(vals.get(c)) for c in COLUMNS])


def write_timings(rows, path):
    with open(path, "w") as fh:
        for r in rows:
            fh.write(f"{r['method']} {r['K']} {r['wall_time']:.3f}\n")


def read_table(path):
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            row = {"method": r["method"], "K": int(r["K"]), "status": r["status"]}
            for c in COLUMNS[2:-1]:
                row[c] = float(r[c])
            rows.append(row)
    return rows


def fit_slope(table, column, method=None):
    """Least-squares slope of ``log(column)`` against ``log(DOF)``."""
    pts = [(r["DOF"], r[column]) for r in table
           if (method is None or r["method"] == method)
           and np.isfinite(r.get(column, np.nan)) and r.get(column, 0) > 0
           and np.isfinite(r.get("DOF", np.nan)) and r.get("DOF", 0) > 0]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 positive rows to fit {column!r}")
    x, y = np.log(np.array(pts, dtype=float)).T
    return float(np.polyfit(x, y, 1)[0])


def plot_table(rows, norm):
    """``(methods, [(DOF, {method: value})])`` ordered by K."""
    methods = list(dict.fromkeys(r["method"] for r in rows))
    by_K = {}
    for r in rows:
        by_K.setdefault(r["K"], {})[r["method"]] = r
    out = []
    for K in sorted(by_K):
        cells = by_K[K]
        # coupled methods share the DOF count; the atomistic row is used only alone
        dofs = [c.get("DOF") for m, c in cells.items() if m != "ATM" and c.get("DOF") is not None]
        dofs = dofs or [c.get("DOF") for c in cells.values() if c.get("DOF") is not None]
        dof = dofs[0] if dofs else float("nan")
        vals = {m: (cells[m].get(norm, float("nan")) if m in cells and cells[m].get("status", "ok") == "ok"
                    else float("nan")) for m in methods}
        out.append((dof, vals))
    return methods, out


def emit_plotdata(rows, output_dir, problem):
    """One whitespace-separated file per norm: DOF then one column per method."""
    if not rows:
        raise ValueError("empty table")
    output_dir = Path(output_dir)
    paths = []
    for norm in NORMS:
        methods, data = plot_table(rows, norm)
        path = output_dir / f"{problem}_{norm}.dat"
        try:
            output_dir.mkdir(parents=True, exist_ok=True)
            with open(path, "w") as fh:
                fh.write("# DOF " + " ".join(methods) + "\n")
                for dof, vals in data:
                    fh.write(" ".join([_fmt(dof)] + [_fmt(vals[m]) for m in methods]) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write plot data {path}: {exc}") from exc
        paths.append(path)
    return paths


def read_plotdata(path):
    with open(path) as fh:
        methods = fh.readline().split()[2:]
        data = []
        for line in fh:
            vals = [float(v) for v in line.split()]
            data.append((vals[0], dict(zip(methods, vals[1:]))))
    return methods, data


# --------------------------------------------------------------------------
# patch tests and coefficient dumps


def patch_samples(F0, seed, n_random=2, spread=0.05):
    rng = np.random.default_rng(seed)
    out = [F0, 1.03 * F0]
    for _ in range(n_random):
        out.append(F0 @ (np.eye(2) + rng.uniform(-spread, spread, (2, 2))))
    return out


def run_patchtests(spec, out=None):
    """Patch tests on the perfect lattice; QCE rows must show ghost forces."""
    out = out or sys.stdout
    prob = Problem(spec)
    samples = patch_samples(prob.F0, spec.seed)
    ok_all = True
    for K in spec.K_list:
        for mid in spec.method_ids:
            if mid.kind == "ATM":
                continue
            try:
                fn = prob.functional(K, mid, remove_defect=False)
                res = verify_patch_tests(fn, samples)
                worst = max(s["ghost_force"] / s["force_scale"] for s in res["samples"])
                energy = max(s["energy_mismatch"] for s in res["samples"])
                ok = res["passed"] if mid.kind == "GRAC" else worst > 1e-3
                tag = "ok" if ok else "FAIL"
            except Exception as exc:
                ok, worst, energy, tag = False, float("nan"), float("nan"), "fail:" + type(exc).__name__
            ok_all &= ok
            out.write(f"{mid.name:10s} K={K:<3d} ghost/scale={worst:.3e} "
                      f"energy_mismatch={energy:.3e} {tag}\n")
    return ok_all


def dump_coefficients(spec, out=None):
    out = out or sys.stdout
    prob = Problem(spec)
    od = Path(spec.output_dir)
    od.mkdir(parents=True, exist_ok=True)
    done = set()
    for K in spec.K_list:
        for mid in spec.method_ids:
            if mid.kind != "GRAC" or (K, mid.volumes, mid.norm) in done:
                continue
            done.add((K, mid.volumes, mid.norm))
            C = prob.coefficients(K, mid.volumes, mid.norm)
            space, _ = prob.geometry(K, mid.volumes)
            stem = f"{spec.problem}_K{K}_{mid.volumes}-L{mid.norm}"
            write_coefficients(C, od / f"{stem}.coeffs")
            write_mesh(space.mesh, od / f"{stem}.mesh")
            out.write(f"{stem}: {C.shape[0]} interface sites, "
                      f"sparsity {sparsity(C):.3f}, l1 norm {np.abs(C).sum():.6g}\n")
    return True


# --------------------------------------------------------------------------
# command line


CONFIG_HELP = """configuration file keys (key = value, '#' comments):
  problem          divacancy | microcrack11
  methods          comma-separated ids: ATM, QCE, M{1,2}-L{1,2}-S{0,1}
  K_list           comma-separated atomistic radii
  seed             integer seed for random patch-test samples
  output_dir       directory for CSV, plot data, coefficient and mesh dumps
  kappa            stabilisation strength used by S1 methods (default 1)
  n_ref_factor     reference domain is n_ref_factor * N_max layers (default 4)
  grad_tol         solver tolerance for the compared methods (default 1e-8)
  ref_grad_tol     solver tolerance for the reference (default 1e-10)
  record_wall_time write wall times into the CSV (default false)
  hop_radius       interaction range in nearest-neighbour hops (default 2)
environment: %s sets the number of rows solved concurrently.
""" % THREADS_ENV


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="grac-bench", description="Coupling benchmarks.", epilog=CONFIG_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [("run", "run the sweep and write CSV and plot data"),
                       ("patchtest", "verify the patch tests only"),
                       ("coeffs", "solve and dump reconstruction coefficients")]:
        p = sub.add_parser(name, help=text)
        p.add_argument("config")
    p = sub.add_parser("slope", help="fit log-log slope of a CSV column against DOF")
    p.add_argument("csv")
    p.add_argument("column")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "slope":
            table = [r for r in read_table(args.csv) if r["status"] == "ok"]
            ok = True
            for m in dict.fromkeys(r["method"] for r in table):
                try:
                    print(f"{m} {fit_slope(table, args.column, m):.4f}")
                except ValueError as exc:
                    print(f"{m} nan ({exc})")
                    ok = False
            return 0 if ok else 1
        spec = load_config(args.config)
        if args.command == "run":
            rows = run_experiment(spec)
            for r in rows:
                print(" ".join(f"{c}={_fmt(r.get(c))}" for c in COLUMNS))
            return 0 if all(r["status"] == "ok" for r in rows) else 1
        if args.command == "patchtest":
            return 0 if run_patchtests(spec) else 1
        return 0 if dump_coefficients(spec) else 1
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
