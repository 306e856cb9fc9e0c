import csv
import subprocess
import sys
import pytest

from tokenroll.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, check_spec_report, main
from tokenroll.closed_loop import run_closed_loop
from tokenroll.errors import ConstraintViolated
from tokenroll.trace_io import gnuplot_script, read_trace_csv, trace_header, validate_rows, write_trace_csv

SCALAR = """
name = "{name}"
[plant]
A = [[{a}]]
B = [[{b}]]
[weights]
Q = 1.0
R = 1.0
sigma = 1e-6
[bucket]
b = 22
c = 8
g = {g}
[controller]
N = {N}
[initial]
x_p = [{x0}]
u_s = [0.0]
beta = 22
[scenario]
duration = 12
"""


def scalar_config(tmp_path, name="scalar", a=0.5, b=1.0, g=3, N=3, x0=0.0):
    path = tmp_path / f"{name}.toml"
    path.write_text(SCALAR.format(name=name, a=a, b=b, g=g, N=N, x0=x0))
    return path


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestCheckSpec:
    def test_reactor(self, capsys, config_path):
        code, out, _ = run_cli(capsys, "check-spec", "--config", str(config_path("reactor.example")))
        assert code == EXIT_OK
        for line in ("q = 3", "M = 3", "rate bound g/c = 0.375", "transmission margin qg - c = 1: pass",
                     "bucket sector (all k): [13, 22]", "bucket sector (solve instants): {22}"):
            assert line in out.splitlines()

    def test_divisible_ratio_flagged(self, capsys, tmp_path):
        code, out, _ = run_cli(capsys, "check-spec", "--config", str(scalar_config(tmp_path, g=4, N=2)))
        assert code == EXIT_CHECK
        assert "c/g not an integer: FAIL" in out

    def test_sigma_below_threshold(self, capsys, tmp_path):
        path = scalar_config(tmp_path, N=6)
        text = path.read_text().replace("sigma = 1e-6", "sigma = 1e-6\npsi = 9.93e-10")
        path.write_text(text.replace("N = 6", 'N = 6\nvariant = "direct_link"'))
        code, out, _ = run_cli(capsys, "check-spec", "--config", str(path))
        assert code == EXIT_CHECK
        line = next(s for s in out.splitlines() if s.startswith("sigma threshold"))
        assert "FAIL" in line
        threshold = float(line.split(">= ")[1].split(")")[0])
        assert threshold == pytest.approx(1443 * 9.93e-10, rel=1e-15)
        assert "stability preconditions" in out

    def test_setup_b_preset_passes(self, load_preset):
        lines, ok = check_spec_report(load_preset("reactor_setup_b"))
        assert ok
        assert any(s.startswith("sigma threshold") and "pass" in s for s in lines)


class TestSimulate:
    def test_reactor_solve_instants_full(self, capsys, config_path, tmp_path):
        code, out, _ = run_cli(capsys, "simulate", "--config", str(config_path("reactor.example")),
                               "--out", str(tmp_path), "--emit-plot")
        assert code == EXIT_OK
        rows = read_trace_csv(tmp_path / "reactor.csv")
        assert len(rows) == 75
        assert all(r["beta"] == 22 for r in rows if r["k"] >= 21 and r["k"] % 3 == 0)
        assert (tmp_path / "reactor.gp").read_text().count("reactor.csv") == 6
        summary = (tmp_path / "reactor_summary.txt").read_text()
        assert "traffic audit: pass" in summary and "decrease monitor: pass" in summary

    def test_setup_b_brim(self, capsys, config_path, tmp_path):
        assert main(["simulate", "--config", str(config_path("reactor_setup_b")), "--out", str(tmp_path)]) == 0
        rows = read_trace_csv(tmp_path / "reactor_setup_b.csv")
        assert all(r["beta"] == 22 for r in rows if r["k"] >= 21)

    def test_equilibrium_zero_cost(self, capsys, tmp_path):
        assert main(["simulate", "--config", str(scalar_config(tmp_path)), "--out", str(tmp_path)]) == 0
        rows = read_trace_csv(tmp_path / "scalar.csv")
        assert all(r["stage_cost"] == 0.0 for r in rows)

    def test_deterministic_bytes(self, capsys, config_path, tmp_path):
        cfg = str(config_path("double_integrator"))
        main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["simulate", "--config", cfg, "--out", str(tmp_path / "b")])
        a = (tmp_path / "a" / "double_integrator.csv").read_bytes()
        assert a == (tmp_path / "b" / "double_integrator.csv").read_bytes()
        assert b"\r" not in a

    def test_csv_format(self, capsys, tmp_path):
        main(["simulate", "--config", str(scalar_config(tmp_path, x0=1.0)), "--out", str(tmp_path)])
        with open(tmp_path / "scalar.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == trace_header(1, 1)
        assert rows[1][rows[0].index("V_star")] != "" and rows[2][rows[0].index("V_star")] == ""
        # floats carry 17 significant digits
        assert rows[2][1] == format(float(rows[2][1]), ".17g")

    def test_infeasible_exit(self, capsys, tmp_path):
        path = scalar_config(tmp_path, a=2.0, x0=5.0)
        path.write_text(path.read_text().replace("B = [[1.0]]", "B = [[1.0]]\nu_lower = [-0.001]\nu_upper = [0.001]"))
        code, _, err = run_cli(capsys, "simulate", "--config", str(path), "--out", str(tmp_path))
        assert code == EXIT_INFEASIBLE
        assert "terminal region" in err

    def test_config_error_exit(self, capsys, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[bucket]\nb = 1\n")
        code, _, err = run_cli(capsys, "simulate", "--config", str(path))
        assert code == EXIT_CONFIG and "config error" in err

    def test_single_config_only(self, capsys, config_path):
        cfg = str(config_path("double_integrator"))
        assert main(["simulate", "--config", cfg, "--config", cfg]) == EXIT_CONFIG

    def test_bad_seed(self, capsys, config_path):
        with pytest.raises(SystemExit):
            main(["simulate", "--config", str(config_path("double_integrator")), "--seed", "-1"])


class TestCompare:
    def test_identical_configs(self, capsys, config_path, tmp_path):
        cfg = str(config_path("double_integrator"))
        assert main(["compare", "--config", cfg, "--config", cfg, "--out", str(tmp_path)]) == 0
        with open(tmp_path / "compare.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["k", "cum_cost_double_integrator", "cum_cost_double_integrator_2"]
        assert all(r[1] == r[2] for r in rows[1:])

    def test_n3_vs_n7_sectors(self, capsys, config_path, tmp_path):
        code, out, _ = run_cli(capsys, "compare", "--config", str(config_path("reactor.example")),
                               "--config", str(config_path("reactor_n7")), "--out", str(tmp_path))
        assert code == EXIT_OK
        assert "sector check (tail): pass sector [13, 22]" in out
        assert "sector check (tail): pass sector [1, 22]" in out

    def test_mismatched_skeleton(self, capsys, config_path):
        code, _, err = run_cli(capsys, "compare", "--config", str(config_path("reactor.example")),
                               "--config", str(config_path("reactor_setup_b")))
        assert code == EXIT_CONFIG and "share" in err

    def test_needs_two(self, capsys, config_path):
        assert main(["compare", "--config", str(config_path("reactor.example"))]) == EXIT_CONFIG


class TestVerifyTerminal:
    def test_reactor(self, capsys, config_path):
        code, out, _ = run_cli(capsys, "verify-terminal", "--config", str(config_path("reactor.example")))
        assert code == EXIT_OK
        assert "certification: pass" in out
        residual = float(next(s for s in out.splitlines() if s.startswith("residual eigenvalue")).split(": ")[1])
        assert residual <= 1e-8

    def test_zero_dynamics_prints_q(self, capsys, tmp_path):
        code, out, _ = run_cli(capsys, "verify-terminal", "--config", str(scalar_config(tmp_path, a=0.0)))
        assert code == EXIT_OK
        # with A = 0 the lifted system is x+ = 3u, and P solves a scalar DARE
        assert "P =" in out

    def test_zero_dynamics_q1_gives_state_weight(self, capsys, tmp_path):
        path = scalar_config(tmp_path, a=0.0, g=8, N=1)
        code, out, _ = run_cli(capsys, "verify-terminal", "--config", str(path))
        assert code == EXIT_OK
        assert "P =\n[[1.]]" in out

    def test_unstabilizable(self, capsys, tmp_path):
        code, out, _ = run_cli(capsys, "verify-terminal", "--config", str(scalar_config(tmp_path, a=2.0, b=0.0)))
        assert code == EXIT_CHECK
        assert "not stabilizable" in out


class TestTraceRoundTrip:
    @pytest.mark.parametrize("name", ["double_integrator", "reactor_setup_b", "reactor_setpoints"])
    def test_rows_revalidate(self, load_preset, tmp_path, name):
        config = load_preset(name)
        trace = run_closed_loop(config.problem(), config.scenario)
        path = write_trace_csv(trace, tmp_path / "t.csv")
        rows = read_trace_csv(path)
        assert validate_rows(rows, config.plant, config.spec, config.variant) == len(trace)
        for r, rec in zip(rows, trace):
            assert r["x_p0"] == rec.x.x_p[0] and r["cum_cost"] == rec.cumulative_cost

    def test_tampered_row_rejected(self, load_preset, tmp_path):
        config = load_preset("double_integrator")
        trace = run_closed_loop(config.problem(), config.scenario)
        rows = read_trace_csv(write_trace_csv(trace, tmp_path / "t.csv"))
        rows[10]["x_p0"] += 1e-3
        with pytest.raises(ConstraintViolated):
            validate_rows(rows, config.plant, config.spec, config.variant)

    def test_gnuplot_columns(self):
        script = gnuplot_script("t.csv", 2, 1)
        assert "using 1:5 with steps" in script
        assert "using 1:10 with lines" in script


def test_module_entry_point(config_path):
    result = subprocess.run(
        [sys.executable, "-m", "tokenroll", "check-spec", "--config", str(config_path("double_integrator"))],
        capture_output=True, text=True, check=False,
    )
    assert result.returncode == 0 and "q = 3" in result.stdout
