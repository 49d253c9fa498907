import io
import math

import pytest

from randflight import cli
from randflight import montecarlo as mc


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.execute(cli.parse(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def table(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    header = lines[0].split(",")
    return [dict(zip(header, ln.split(","))) for ln in lines[1:]]


def test_parse_example():
    spec = cli.parse(["profile", "--model", "gamma:k=2", "--d", "3", "--c", "0.75"])
    assert spec.problem.model.spec_string() == "gamma:k=2"
    assert spec.problem.d == 3 and spec.problem.c == 0.75


@pytest.mark.parametrize("argv", [
    ["profile", "--c", "1.0"],
    ["profile", "--model", "betaprime:k=2"],
    ["profile", "--flavors", "p1,exact"],
    ["audit", "--m", "3"],
    ["profile", "--r", "0,1"],
    ["launch"],
])
def test_bad_arguments_exit_two(argv, capsys):
    assert cli.main(argv) == cli.EXIT_ARGS
    assert "usage:" in capsys.readouterr().err


def test_spectrum_three_dimensions():
    code, out, _ = run(["spectrum", "--model", "exp", "--d", "3", "--c", "0.9"])
    assert code == 0
    (row,) = table(out)
    assert float(row["chi"]) == pytest.approx(0.525429, abs=1e-5)
    assert "# seed = 12345" in out and "# model = exp" in out


def test_spectrum_four_dimensional_breakdown():
    code, out, _ = run(["spectrum", "--model", "exp", "--d", "4", "--c", "0.5"])
    assert code == 0
    (row,) = table(out)
    assert float(row["nu0"]) == pytest.approx(1.0, abs=1e-10)
    assert abs(float(row["weight_collision"])) < 1e-10
    assert row["breakdown"] == "1"
    code, _, err = run(["spectrum", "--model", "exp", "--d", "4", "--c", "0.5", "--require-rigorous"])
    assert code == cli.EXIT_BREAKDOWN and "breaks down" in err


def test_audit_pearson_flux():
    code, out, _ = run(["audit", "--model", "pearson", "--d", "3", "--c", "0.5", "--m", "2", "--quantity", "flux"])
    assert code == 0
    (row,) = table(out)
    assert float(row["exact"]) == pytest.approx(8 / 3, rel=1e-10)
    assert row["mc"] == "NA"


def test_exact_only_exit_three():
    code, _, _ = run(["profile", "--model", "betaprime:k=3", "--d", "3", "--c", "0.5", "--exact-only"])
    assert code == cli.EXIT_UNAVAILABLE


def test_numeric_failure_exit_four():
    code, _, err = run(["invert", "--model", "pearson", "--d", "1", "--c", "0.5", "--n", "2", "--r", "1"])
    assert code == cli.EXIT_NUMERIC
    assert "numeric failure" in err and "envelope" in err


def test_profile_cells_are_finite_or_na():
    code, out, _ = run(["profile", "--model", "exp", "--d", "3", "--c", "0.9", "--r", "0.5:4:6",
                        "--histories", "2000"])
    assert code == 0
    rows = table(out)
    assert len(rows) == 6
    for row in rows:
        for cell in row.values():
            assert cell == "NA" or math.isfinite(float(cell))
        assert float(row["rel_err_rigorous"]) != 0.0


def test_output_is_byte_identical():
    argv = ["profile", "--model", "chi:k=2", "--d", "2", "--c", "0.5", "--r", "0.5,1", "--histories", "3000"]
    assert run(argv)[1] == run(argv)[1]


def test_moments_table():
    code, out, _ = run(["moments", "--model", "gamma:k=2", "--d", "2", "--c", "0.5", "--m", "0,2"])
    assert code == 0
    rows = table(out)
    for row in rows:
        assert float(row["numeric"]) == pytest.approx(float(row["exact"]), rel=1e-6)
    # independent flights: <s^2> sum n c^(n-1) = 1.5 / (1 - c)^2
    assert float(rows[1]["exact"]) == pytest.approx(6.0)


def test_invert_matches_exact():
    code, out, _ = run(["invert", "--model", "exp", "--d", "4", "--c", "0.5", "--quantity", "flux", "--r", "1"])
    assert code == 0
    (row,) = table(out)
    assert float(row["inverted"]) == pytest.approx(math.exp(-1) * 2 / (2 * math.pi**2), rel=1e-6)


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nmodel = gamma:k=2\nd = 2\nc = 0.3\nexact-only = yes\n")
    spec = cli.parse(["profile", "--config", str(cfg), "--c", "0.6"])
    assert spec.problem.model.spec_string() == "gamma:k=2"
    assert spec.problem.d == 2 and spec.problem.c == 0.6
    assert spec.exact_only
    cfg.write_text("colour = blue\n")
    with pytest.raises(cli.UsageError):
        cli.parse(["profile", "--config", str(cfg)])


def test_workers_from_environment(monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "3")
    assert cli.parse(["mc"]).workers == 3
    assert cli.parse(["mc", "--workers", "2"]).workers == 2


def test_mc_writes_tally_file(tmp_path):
    path = tmp_path / "t.txt"
    code, _, _ = run(["mc", "--model", "exp", "--d", "3", "--c", "0.5", "--histories", "1000",
                      "--shells", "5", "--output", str(path)])
    assert code == 0
    tallies = mc.load_tallies(path)
    assert tallies.histories == 1000 and tallies.shell_edges.size == 6


def test_plot_writes_png(tmp_path):
    pytest.importorskip("matplotlib")
    path = tmp_path / "profile.csv"
    code, _, err = run(["profile", "--model", "exp", "--d", "3", "--c", "0.9", "--r", "0.5:3:4",
                        "--output", str(path), "--plot"])
    assert code == 0
    png = tmp_path / "profile.png"
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert "figure written" in err
