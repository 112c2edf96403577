"""Tests for the TOML config loader and the command-line workflows."""

import hashlib
import json
import math

import pytest

import bigmatch as bm
from bigmatch import formulas
from bigmatch.cli import main
from bigmatch.config import load_config, parse_config, sweep_points

SINGLE_SCHOOL = """\
[market]
schools = 1
capacities = 1

[market.measure]
family = "classes"

[[market.measure.classes]]
weight = 1.0
prefs = ["s01"]

[solver]
kind = "poisson"
tol = 1e-12
"""

INTRO_SIM = """\
[market]
schools = 10
capacities = 1

[market.measure]
family = "symmetric_iid"
total_mass = 10.0
list_length = 1

[simulate]
trials = 40
seed = 3
count = "exact"
students = 10
"""

SWEPT_COMPARE = """\
[market]
schools = 4
capacities = 1

[market.measure]
family = "common_value"
total_mass = 8.0
weight = 0.5

[solver]
kind = "poisson"
grid_size = 301
common_grid_size = 65

[simulate]
trials = 30
seed = 5

[sweep]
parameter = "capacity"
values = [1, 2]
mass_per_seat = 2.0
"""


def write(tmp_path, text, name="exp.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_table(path):
    header, columns, *rows = path.read_text().splitlines()
    return header, columns.split("\t"), [r.split("\t") for r in rows]


class TestConfigParsing:
    def test_full_round(self, tmp_path):
        cfg = load_config(write(tmp_path, SWEPT_COMPARE))
        assert cfg.market.n_schools == 4
        assert cfg.solver.grid_size == 301
        assert cfg.simulate.trials == 30
        assert cfg.sweep.values == (1.0, 2.0)
        points = sweep_points(cfg)
        assert [p.market.total_seats for p in points] == [4, 8]
        assert [p.market.total_mass for p in points] == [8.0, 16.0]

    def test_unknown_keys_name_their_path(self):
        with pytest.raises(bm.ConfigError, match=r"\[solver\].gird_size"):
            parse_config(SINGLE_SCHOOL.replace("tol = 1e-12", "gird_size = 3"))
        with pytest.raises(bm.ConfigError, match=r"config\.solve"):
            parse_config("[solve]\nkind = 'poisson'")
        with pytest.raises(bm.ConfigError, match=r"classes\[0\]\.prefss"):
            parse_config(SINGLE_SCHOOL.replace("prefs =", "prefss ="))

    def test_invalid_values(self):
        with pytest.raises(bm.ConfigError, match="trials"):
            parse_config(INTRO_SIM.replace("trials = 40", "trials = 0"))
        with pytest.raises(bm.ConfigError, match="students"):
            parse_config(INTRO_SIM.replace('count = "exact"', 'count = "poisson"'))
        with pytest.raises(bm.ConfigError, match="kind"):
            parse_config(SINGLE_SCHOOL.replace('"poisson"', '"gaussian"'))
        with pytest.raises(bm.ConfigError, match="not valid TOML"):
            parse_config("= what")
        with pytest.raises(bm.ConfigError, match="mass_per_seat"):
            parse_config(
                SWEPT_COMPARE.replace('parameter = "capacity"', 'parameter = "total_mass"')
            )

    def test_total_mass_sweep_rescales_classes(self, tmp_path):
        text = """
[market]
schools = ["a", "b"]
capacities = [1, 2]

[market.measure]
family = "classes"

[[market.measure.classes]]
weight = 1.0
prefs = ["a", "b"]

[[market.measure.classes]]
weight = 3.0
prefs = ["b"]
priorities = { model = "lottery" }

[sweep]
parameter = "total_mass"
values = [2.0, 8.0]
"""
        cfg = parse_config(text)
        points = sweep_points(cfg)
        assert [p.market.total_mass for p in points] == [2.0, 8.0]
        weights = [c.weight for c in points[0].market.measure.classes]
        assert weights == [0.5, 1.5]  # proportions preserved

    def test_sha_covers_the_exact_bytes(self, tmp_path):
        path = write(tmp_path, SINGLE_SCHOOL)
        cfg = load_config(path)
        assert cfg.sha256 == hashlib.sha256(path.read_bytes()).hexdigest()


class TestSolveCommand:
    def test_single_school_matches_closed_form(self, tmp_path):
        cfg = write(tmp_path, SINGLE_SCHOOL)
        out = tmp_path / "solve.tsv"
        assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
        header, columns, rows = read_table(out)
        assert header.startswith("# bigmatch ")
        row = dict(zip(columns, rows[0]))
        assert float(row["matched_mass"]) == pytest.approx(1 - math.exp(-1), abs=1e-9)
        assert row["converged"] == "true"
        # outcome document sits alongside and reloads
        doc = bm.load_outcome(str(out) + ".outcome.json")
        assert doc["market"]["schools"] == ["s01"]
        meta = json.loads((tmp_path / "solve.tsv.meta.json").read_text())
        assert meta["config_sha256"] == cfg_sha(cfg)
        assert meta["tool_version"] == bm.__version__
        assert "time" not in "".join(meta)

    def test_trace_dumps_every_iteration(self, tmp_path):
        cfg = write(tmp_path, SINGLE_SCHOOL)
        out = tmp_path / "t.tsv"
        assert main(["solve", "--config", str(cfg), "--out", str(out), "--trace"]) == 0
        _, columns, rows = read_table(tmp_path / "t.tsv.trace.tsv")
        assert columns == ["iteration", "residual", "school", "p", "admission"]
        iterations = {int(r[0]) for r in rows}
        assert iterations == {1, 2}

    def test_sweep_rejected(self, tmp_path):
        cfg = write(tmp_path, SWEPT_COMPARE)
        rc = main(["solve", "--config", str(cfg), "--out", str(tmp_path / "x.tsv")])
        assert rc == 2

    def test_non_convergence_exit_code(self, tmp_path):
        cfg = write(tmp_path, SINGLE_SCHOOL + "max_iter = 1\n")
        rc = main(["solve", "--config", str(cfg), "--out", str(tmp_path / "x.tsv")])
        assert rc == 3

    def test_missing_config_file(self, tmp_path):
        rc = main(["solve", "--config", str(tmp_path / "nope.toml"),
                   "--out", str(tmp_path / "x.tsv")])
        assert rc == 2


class TestSimulateCommand:
    def test_reruns_are_byte_identical(self, tmp_path):
        cfg = write(tmp_path, INTRO_SIM)
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        assert main(["simulate", "--config", str(cfg), "--out", str(a)]) == 0
        assert main(["simulate", "--config", str(cfg), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert (
            json.loads((tmp_path / "a.tsv.meta.json").read_text())["config_sha256"]
            == json.loads((tmp_path / "b.tsv.meta.json").read_text())["config_sha256"]
        )

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = write(tmp_path, INTRO_SIM)
        a, b, c = (tmp_path / n for n in ("a.tsv", "b.tsv", "c.tsv"))
        main(["simulate", "--config", str(cfg), "--out", str(a)])
        main(["simulate", "--config", str(cfg), "--out", str(b), "--seed", "99"])
        main(["simulate", "--config", str(cfg), "--out", str(c), "--seed", "3"])
        assert a.read_text().splitlines()[1:] != b.read_text().splitlines()[1:]
        assert a.read_text().splitlines()[1:] == c.read_text().splitlines()[1:]

    def test_matched_fraction_lands_near_closed_form(self, tmp_path):
        cfg = write(tmp_path, INTRO_SIM.replace("trials = 40", "trials = 400"))
        out = tmp_path / "sim.tsv"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        _, columns, rows = read_table(out)
        picked = [
            dict(zip(columns, r))
            for r in rows
            if r[columns.index("metric")] == "matched"
            and r[columns.index("direction")] == "student"
        ]
        assert len(picked) == 1
        mean, se = float(picked[0]["mean"]), float(picked[0]["se"])
        expected = 10 * (1 - (1 - 1 / 10) ** 10)
        assert abs(mean - expected) <= 3 * se


class TestCompareCommand:
    def test_join_structure_and_sweep(self, tmp_path):
        cfg = write(tmp_path, SWEPT_COMPARE)
        out = tmp_path / "cmp.tsv"
        assert main(["compare", "--config", str(cfg), "--out", str(out)]) == 0
        _, columns, rows = read_table(out)
        assert columns[:5] == ["parameter", "value", "direction", "school", "metric"]
        values = {r[1] for r in rows}
        assert values == {"1.0", "2.0"}
        metrics = {r[4] for r in rows}
        assert metrics == {
            "matched", "average_rank", "cutoff_mean", "cutoff_q05", "cutoff_q95",
        }
        pooled = [r for r in rows if r[3] == "*"]
        assert len(pooled) == 2 * 2 * 3  # point x direction x statistic
        # discrepancy columns: absolute, and scaled by the simulation se
        row = dict(zip(columns, pooled[0]))
        assert float(row["abs_diff"]) == pytest.approx(
            abs(float(row["model"]) - float(row["sim"])), rel=1e-12
        )

    def test_requires_both_specs(self, tmp_path):
        no_solver = SWEPT_COMPARE.replace("[solver]", "[notused]")
        rc = main(["compare", "--config", str(write(tmp_path, no_solver)),
                   "--out", str(tmp_path / "x.tsv")])
        assert rc == 2

    def test_empty_sweep_is_a_header_only_success(self, tmp_path):
        text = SWEPT_COMPARE.replace("values = [1, 2]", "values = []")
        out = tmp_path / "empty.tsv"
        rc = main(["compare", "--config", str(write(tmp_path, text)), "--out", str(out)])
        assert rc == 0
        assert len(out.read_text().splitlines()) == 2  # hash comment + columns


class TestFormulasCommand:
    def test_match_count_table(self, tmp_path):
        text = """
[formulas]
table = "match_counts"
W = [50]
M = [10, 50]
q = [0.9]
"""
        out = tmp_path / "f.tsv"
        assert main(["formulas", "--config", str(write(tmp_path, text)), "--out", str(out)]) == 0
        _, columns, rows = read_table(out)
        assert columns == ["W", "M", "q", "v_rsd_exact", "v_rsd_hat", "v_iid_hat"]
        first = dict(zip(columns, rows[0]))
        assert float(first["v_rsd_hat"]) == pytest.approx(
            formulas.v_rsd_hat(50, 10, 0.9), rel=1e-15
        )

    def test_bounds_table_marks_inapplicable_cells(self, tmp_path):
        text = """
[formulas]
table = "rank_bounds"
rho = [0.97, 1.1]
capacity = [1]
ell = [5]
"""
        out = tmp_path / "b.tsv"
        assert main(["formulas", "--config", str(write(tmp_path, text)), "--out", str(out)]) == 0
        _, columns, rows = read_table(out)
        below, above = (dict(zip(columns, r)) for r in rows)
        assert float(below["more_seats"]) > 1 and below["more_students_iid"] == "nan"
        assert above["more_seats"] == "nan" and float(above["more_students_iid"]) > 0


def cfg_sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()
