import numpy as np
import pytest

from grac import bench
from grac.bench import (ExperimentSpec, MethodId, emit_plotdata, fit_slope, loading,
                        parse_config, read_plotdata, read_table, write_table)
from grac.errors import ConfigurationError


def test_method_ids():
    m = MethodId.parse("M2-L1-S0")
    assert (m.kind, m.volumes, m.norm, m.stabilised) == ("GRAC", "M2", 1, False)
    assert MethodId.parse("ATM").kind == "ATM"
    for bad in ("M3-L1-S0", "M1-L3-S1", "m1-l1-s1", "QCF"):
        with pytest.raises(ConfigurationError):
            MethodId.parse(bad)


def test_loadings(F0):
    B = loading("divacancy", F0)
    np.testing.assert_allclose(B, np.array([[1.03, 0.03], [0, 1.03]]) @ F0)
    B = loading("microcrack11", F0)
    np.testing.assert_allclose(B, np.array([[1, 0.03], [0, 1.03]]) @ F0)


def test_config_parsing():
    spec = parse_config("""
        # comment
        problem = microcrack11
        methods = ATM, M1-L1-S1
        K_list = 7, 8
        seed = 3   # trailing comment
        output_dir = out
        n_ref_factor = 2
        record_wall_time = yes
    """)
    assert spec.problem == "microcrack11" and spec.K_list == [7, 8]
    assert spec.methods == ["ATM", "M1-L1-S1"] and spec.seed == 3
    assert spec.record_wall_time and spec.n_ref_factor == 2
    assert ExperimentSpec().K_list == [3, 4, 5, 6, 8]
    for bad in ("colour = red", "problem", "problem = crack", "K_list = a,b"):
        with pytest.raises(ConfigurationError):
            parse_config(bad)


def test_fit_slope_synthetic():
    rows = [{"method": "X", "DOF": d, "H1": 1.0 / d} for d in (10.0, 100.0, 1000.0)]
    assert fit_slope(rows, "H1") == pytest.approx(-1.0, abs=1e-12)
    rows = [{"method": "X", "DOF": d, "H1": 0.5} for d in (10.0, 100.0, 1000.0)]
    assert fit_slope(rows, "H1") == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        fit_slope(rows[:2], "H1")


def _rows():
    rows = []
    for K, dof in ((3, 288), (4, 382), (5, 478)):
        for m, f in (("M1-L1-S1", 1.0), ("QCE", 2.0)):
            rows.append({"method": m, "K": K, "DOF": dof, "H1": f / dof, "W1inf": f / dof**2,
                         "Eerr": f * 0.1, "ghost_force_max": 0.0, "min_eig": 1.0,
                         "wall_time": 0.5, "status": "ok"})
    rows[-1]["status"] = "fail:ConvergenceError"
    rows[-1]["H1"] = float("nan")
    return rows


def test_plotdata_roundtrip(tmp_path):
    rows = _rows()
    paths = emit_plotdata(rows, tmp_path, "divacancy")
    assert [p.name for p in paths] == ["divacancy_H1.dat", "divacancy_W1inf.dat", "divacancy_Eerr.dat"]
    methods, data = read_plotdata(tmp_path / "divacancy_H1.dat")
    assert methods == ["M1-L1-S1", "QCE"]
    assert len(data) == 3 and all(len(v) == 2 for _, v in data)
    assert [d for d, _ in data] == [288, 382, 478]
    for (dof, vals), K in zip(data, (3, 4, 5)):
        assert vals["M1-L1-S1"] == 1.0 / dof
    assert np.isnan(data[2][1]["QCE"])
    assert "nan" in (tmp_path / "divacancy_H1.dat").read_text().split("\n")[3]
    with pytest.raises(ValueError):
        emit_plotdata([], tmp_path, "x")


def test_table_roundtrip(tmp_path):
    rows = _rows()
    write_table(rows, tmp_path / "t.csv", record_wall_time=True)
    back = read_table(tmp_path / "t.csv")
    assert back[0]["H1"] == rows[0]["H1"] and back[0]["wall_time"] == 0.5
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "method,K,DOF,H1,W1inf,Eerr,ghost_force_max,min_eig,wall_time,status"
    write_table(rows, tmp_path / "u.csv")
    assert np.isnan(read_table(tmp_path / "u.csv")[0]["wall_time"])


SMALL = """problem = divacancy
methods = ATM, QCE, M1-L1-S1, M2-L2-S0
K_list = 3, 4
n_ref_factor = 2
output_dir = {out}
"""


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "small.cfg"
    cfg.write_text(SMALL.format(out=out / "a"))
    code = bench.main(["run", str(cfg)])
    return out, cfg, code


def test_run_outputs(small_run):
    out, cfg, code = small_run
    assert code == 0
    rows = read_table(out / "a" / "divacancy.csv")
    assert [(r["method"], r["K"]) for r in rows] == [
        (m, K) for K in (3, 4) for m in ("ATM", "QCE", "M1-L1-S1", "M2-L2-S0")]
    by = {(r["method"], r["K"]): r for r in rows}
    for K in (3, 4):
        assert by[("M1-L1-S1", K)]["ghost_force_max"] < 1e-9
        assert by[("QCE", K)]["ghost_force_max"] > 1e-3
        assert by[("M1-L1-S1", K)]["H1"] < by[("QCE", K)]["H1"]
    assert by[("ATM", 4)]["H1"] < by[("ATM", 3)]["H1"]
    assert (out / "a" / "divacancy_Eerr.dat").exists()


def test_run_is_byte_identical(small_run, monkeypatch):
    out, cfg, _ = small_run
    cfg2 = out / "again.cfg"
    cfg2.write_text(SMALL.format(out=out / "b"))
    monkeypatch.setenv(bench.THREADS_ENV, "2")
    assert bench.main(["run", str(cfg2)]) == 0
    for name in ("divacancy.csv", "divacancy_H1.dat"):
        assert (out / "a" / name).read_bytes() == (out / "b" / name).read_bytes()


def test_slope_and_patchtest_cli(small_run, capsys, tmp_path):
    out, cfg, _ = small_run
    capsys.readouterr()
    assert bench.main(["slope", str(out / "a" / "divacancy.csv"), "H1"]) == 1  # only 2 K values
    assert "nan" in capsys.readouterr().out
    pcfg = tmp_path / "p.cfg"
    pcfg.write_text("problem = divacancy\nmethods = QCE, M1-L1-S1, M2-L1-S1\nK_list = 3\n")
    assert bench.main(["patchtest", str(pcfg)]) == 0
    text = capsys.readouterr().out
    assert text.count("ok") == 3


def test_coeffs_cli(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"problem = divacancy\nmethods = M2-L1-S1\nK_list = 3\noutput_dir = {tmp_path}\n")
    assert bench.main(["coeffs", str(cfg)]) == 0
    assert (tmp_path / "divacancy_K3_M2-L1.coeffs").exists()
    assert (tmp_path / "divacancy_K3_M2-L1.mesh").exists()


def test_failed_rows_set_exit_code(tmp_path, monkeypatch):
    cfg = tmp_path / "f.cfg"
    cfg.write_text(f"problem = divacancy\nmethods = QCE\nK_list = 3\nn_ref_factor = 2\noutput_dir = {tmp_path}\n")

    def boom(*a, **k):
        raise ArithmeticError("forced")

    monkeypatch.setattr(bench, "_coupled_row", boom)
    assert bench.main(["run", str(cfg)]) == 1
    assert read_table(tmp_path / "divacancy.csv")[0]["status"] == "fail:ArithmeticError"


def test_bad_config_exit_code(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("nonsense = 1\n")
    assert bench.main(["run", str(cfg)]) == 2
