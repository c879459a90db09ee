import numpy as np
import pytest

from homogenize.cli import main
from homogenize.config import ConfigError, bundled_configs, load_config


def test_bundled_configs_present():
    names = set(bundled_configs())
    assert {"constant.cfg", "layered.cfg", "layered_l2.cfg", "product_sinusoid.cfg",
            "checkerboard.cfg", "disk_layered.cfg", "disk_constant.cfg"} <= names


@pytest.mark.parametrize("name", sorted(bundled_configs()))
def test_bundled_configs_parse(name):
    rc = load_config(bundled_configs()[name])
    rc.sweep_config()
    rc.bands()


def test_unknown_key_named(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("[coefficient]\nkind = layered\nampltude = 1\n")
    with pytest.raises(ConfigError, match="coefficient.ampltude"):
        load_config(p)
    with pytest.raises(ConfigError, match="sweep.nope"):
        load_config(None, ["sweep.nope=1"])


def test_matrix_and_fraction_parsing():
    rc = load_config(None, ["coefficient.kind=constant", "coefficient.matrix=2, 0; 0, 3",
                            "sweep.eps_list=1/8, 1/16, 1/32"])
    b, g = rc.problem()
    assert np.array_equal(g.params["matrix"], np.diag([2.0, 3.0]))
    assert rc.floats("sweep", "eps_list") == [0.125, 0.0625, 0.03125]


def test_cell_constant(capsys, tmp_path):
    assert main(["cell", "--config", "constant", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "2.0000000000   0.0000000000" in out and "3.0000000000" in out
    assert list(tmp_path.glob("cell-*.txt"))


def test_cell_layered(capsys, tmp_path):
    assert main(["cell", "--config", "layered", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "1.7320508" in out and "2.0000000000" in out


def test_malformed_key_exit_code(capsys):
    assert main(["cell", "--set", "coefficient.colour=red"]) == 2
    assert "coefficient.colour" in capsys.readouterr().err


def test_missing_config_exit_code(capsys):
    assert main(["cell", "--config", "no_such_config"]) == 2


def test_eps_above_eps0_refused(capsys, tmp_path):
    code = main(["sweep", "--config", "layered_l2", "--set", "sweep.eps_list=1/4, 1/8, 1/16",
                 "--out", str(tmp_path)])
    assert code == 2
    assert "0 < eps <= eps0 = 0.146447" in capsys.readouterr().err


def test_constant_sweep_flagged(capsys, tmp_path):
    assert main(["sweep", "--config", "constant", "--out", str(tmp_path)]) == 0
    assert "degenerate: u_eps == u0" in capsys.readouterr().out


def test_sweep_deterministic(tmp_path):
    args = ["sweep", "--config", "product_sinusoid", "--set", "sweep.eps_list=1/8, 1/12, 1/16",
            "--set", "cell.resolution=32", "--seed", "3"]
    a, b = tmp_path / "a", tmp_path / "b"
    main(args + ["--out", str(a)])
    main(args + ["--out", str(b)])
    for name in ("table.csv", "summary.txt", "e_l2.dat"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_check_default_passes(capsys):
    import time
    t0 = time.perf_counter()
    assert main(["check"]) == 0
    assert time.perf_counter() - t0 < 60
    assert "FAIL" not in capsys.readouterr().out


def test_check_fault_injection(capsys):
    assert main(["check", "--corrupt-lambda-mean"]) == 1
    out = capsys.readouterr().out
    assert "FAIL  Lambda columns have zero mean" in out


def test_check_verbose(capsys):
    main(["check", "--verbose"])
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith(("PASS", "FAIL"))]
    assert lines and all("measured" in l for l in lines)


def test_solve_single(capsys, tmp_path):
    assert main(["solve", "--config", "layered", "--set", "sweep.eps=1/8", "--out", str(tmp_path)]) == 0
    assert "e_l2 = " in capsys.readouterr().out


def test_solver_failure_exit_code(capsys, tmp_path, monkeypatch):
    from homogenize import cli
    from homogenize.cell import SolverError

    def boom(*a, **k):
        raise SolverError("forced", 1.0)

    monkeypatch.setattr(cli, "solve_cell_problem", boom)
    assert main(["cell", "--config", "layered", "--out", str(tmp_path)]) == 3


@pytest.mark.slow
def test_layered_l2_bundled_run(capsys, tmp_path):
    assert main(["sweep", "--config", "layered_l2", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS slope e_l2" in out
    assert (tmp_path / "table.csv").read_text().count("\n") == 5
