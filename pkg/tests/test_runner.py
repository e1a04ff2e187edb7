import json
from dataclasses import replace

import pytest

from urbf import cli, runner
from urbf.layers import count_parameters
from urbf.regression import NNPI_GRID
from urbf.runner import Aggregate, ArchConfig, Condition, ConfigError, ExperimentConfig, RunResult

TINY = """
[experiment]
task = regression
function = gauss
complexity = 1, 3
lr = 0.001
epochs = 2
batch_size = 32
n_train = 64
n_test = 16
repetitions = 2
base_seed = 7

[arch:mlp]
kind = mlp
hidden = 8

[arch:urbf]
kind = urbf
hidden = 8
nnpi = 3, 5
"""


def fake(values, cond=Condition("mlp", "mlp", 5, 0), task="regression"):
    return [RunResult(task, "f", cond, i, i, final_metric=v, param_count=10) for i, v in enumerate(values)]


class TestConfig:
    def test_round_trip(self):
        cfg = runner.parse(TINY)
        assert runner.parse(runner.serialize(cfg)) == cfg
        for task in runner.TASKS:
            d = runner.default_config(task, desk_scale=True)
            assert runner.parse(runner.serialize(d)) == d

    def test_parsed_values(self):
        cfg = runner.parse(TINY)
        assert cfg.complexity == (1, 3) and cfg.lr == 0.001
        assert cfg.archs[1] == ArchConfig("urbf", "urbf", (8,), (3, 5), (16,))
        assert len(runner.conditions(cfg)) == 2 * 3

    @pytest.mark.parametrize(
        "text",
        [
            "no sections at all",
            "[experiment]\ntask = regression\n",
            "[experiment]\ntask = cooking\n[arch:a]\nkind = mlp\nhidden = 4\n",
            "[experiment]\nepochs = many\n[arch:a]\nkind = mlp\nhidden = 4\n",
            "[experiment]\ncolour = red\n[arch:a]\nkind = mlp\nhidden = 4\n",
            "[experiment]\n[arch:a]\nkind = mlp\nhidden = 4\nwidth = 3\n",
            "[experiment]\n[arch:a]\nkind = transformer\nhidden = 4\n",
            "[experiment]\n[arch:a]\nkind = urbf\nhidden = 4\nnnpi = 1\n",
            "[experiment]\nrepetitions = 0\n[arch:a]\nkind = mlp\nhidden = 4\n",
            "[experiment]\ninit_range = 3, 1\n[arch:a]\nkind = urbf\nhidden = 4\n",
            "[experiment]\n[arch:a]\nkind = mrbf\n",
        ],
    )
    def test_invalid_configs(self, text):
        with pytest.raises(ConfigError):
            runner.parse(text)

    def test_seeds(self):
        cfg = replace(runner.parse(TINY), repetitions=5, base_seed=100)
        assert cfg.seeds() == [100, 101, 102, 103, 104]

    def test_fingerprint_ignores_output_dir(self):
        cfg = runner.parse(TINY)
        assert cfg.fingerprint() == replace(cfg, output_dir="elsewhere").fingerprint()
        assert cfg.fingerprint() != replace(cfg, lr=0.5).fingerprint()

    def test_desk_scale(self):
        cfg = runner.default_config("maze", desk_scale=True)
        assert cfg.repetitions == 5 and cfg.total_timesteps == 50_000

    @pytest.mark.parametrize(
        "hidden,count",
        [((16,), 65), ((32, 64), 2 * 32 + 32 + 32 * 64 + 64 + 64 + 1), ((32, 64, 128), 96 + 2112 + 8320 + 129)],
    )
    def test_table_parameter_counts(self, hidden, count):
        cfg = ExperimentConfig(archs=(ArchConfig("m", "mlp", hidden), ArchConfig("u", "urbf", hidden, (5,))))
        conds = runner.conditions(cfg)
        assert count_parameters(runner.network_spec(cfg, conds[0])) == count
        # U-RBF adds 2*5 centres and 2*5 spreads and widens the first affine input from 2 to 10
        assert count_parameters(runner.network_spec(cfg, conds[1])) == count + 20 + 8 * hidden[0]


class TestAggregate:
    def test_two_points(self):
        (a,) = runner.aggregate(fake([1.0, 3.0]))
        assert (a.mean, a.std, a.count, a.std_divisor) == (2.0, 1.0, 2, "N")

    def test_textbook(self):
        (a,) = runner.aggregate(fake([2, 4, 4, 4, 5, 5, 7, 9]))
        assert (a.mean, a.std) == (5.0, 2.0)

    def test_single(self):
        (a,) = runner.aggregate(fake([0.25]))
        assert a.std == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            runner.aggregate([])

    def test_failed_runs_are_excluded(self):
        runs = fake([1.0, 3.0, 100.0])
        runs[2].status = "failed"
        (a,) = runner.aggregate(runs)
        assert a.count == 2 and a.mean == 2.0

    def test_learning_curve(self):
        cond = Condition("u", "urbf", 1, 10, 16)
        runs = fake([0.0, 0.0], cond, task="maze")
        runs[0].trace = [(0, 400, -100.0, 1.0), (1, 900, 100.0, 0.5), (2, 1500, 100.0, 0.02)]
        runs[1].trace = [(0, 700, 0.0, 1.0)]
        (a,) = runner.aggregate(runs)
        assert a.curve == [(1000, 0.0, 0.0, 2), (2000, 100.0, 0.0, 1)]


def grid_aggregates(difficulties, nnpis, archs=("mlp", "urbf")):
    out = []
    for arch in archs:
        for d in difficulties:
            for k in nnpis if arch == "urbf" else (0,):
                out.append(Aggregate("regression", Condition(arch, arch, d, k), 1.0, 0.1, 3, 100 + k))
    return out


class TestPlotRows:
    def test_complexity_axis(self):
        rows = runner.plot_rows(grid_aggregates((0, 1, 3, 5), (20,)), "complexity")
        for arch in ("mlp", "urbf"):
            assert [r[1] for r in rows if r[0] == arch] == [0, 1, 3, 5]
        assert [r[1] for r in rows] == sorted(r[1] for r in rows)

    def test_nnpi_axis(self):
        rows = runner.plot_rows(grid_aggregates((5,), NNPI_GRID), "nnpi")
        assert [r[1] for r in rows] == list(NNPI_GRID)
        assert {r[0] for r in rows} == {"urbf"}

    def test_empty(self):
        with pytest.raises(ValueError):
            runner.plot_rows([], "complexity")

    def test_mixed_tasks(self):
        aggs = grid_aggregates((1,), (5,))
        aggs[0] = replace(aggs[0], task="maze")
        with pytest.raises(ValueError):
            runner.plot_rows(aggs, "param_count")

    def test_file(self, tmp_path):
        path = runner.emit_plot_data(grid_aggregates((0, 1), (5,)), "complexity", tmp_path / "p.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "architecture,complexity,mean,std,count" and len(lines) == 5


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    cfg = replace(runner.parse(TINY), output_dir=str(out))
    return cfg, runner.run_experiment(cfg), out


class TestRunExperiment:
    def test_result_set(self, tiny_run):
        cfg, results, _ = tiny_run
        assert len(results) == 6 * 2 and all(r.ok for r in results)
        assert {r.seed for r in results} == {7, 8}
        assert len({r.fingerprint for r in results}) == 1
        assert all(len(r.trace) == 2 and r.param_count > 0 for r in results)

    def test_single_repetition(self, tmp_path):
        cfg = replace(runner.parse(TINY), repetitions=1, complexity=(0,), archs=runner.parse(TINY).archs[:1])
        assert len(runner.run_experiment(cfg, out_dir=tmp_path)) == 1

    def test_persisted_results_reaggregate_identically(self, tiny_run):
        _, results, out = tiny_run
        loaded = runner.load_results(out)
        assert len(loaded) == len(results)
        by_key = {(r.condition, r.repetition): r for r in loaded}
        for r in results:
            back = by_key[(r.condition, r.repetition)]
            assert back.final_metric == r.final_metric and back.trace == r.trace
        key = lambda a: a.condition.key()
        fresh = sorted(runner.aggregate(results), key=key)
        again = sorted(runner.aggregate(loaded), key=key)
        assert [(a.mean, a.std, a.count) for a in fresh] == [(a.mean, a.std, a.count) for a in again]

    def test_rerun_is_identical(self, tiny_run, tmp_path):
        cfg, results, _ = tiny_run
        rerun = runner.run_experiment(cfg, out_dir=tmp_path)
        assert [r.final_metric for r in rerun] == [r.final_metric for r in results]

    def test_failed_repetition_is_recorded(self, tmp_path):
        # sixty disjoint rectangles do not fit in the domain, so every run fails
        cfg = replace(runner.parse(TINY), function="disc", complexity=(1, 60), repetitions=1)
        results = runner.run_experiment(cfg, out_dir=tmp_path)
        failed = [r for r in results if not r.ok]
        assert failed and all(r.condition.difficulty == 60 for r in failed)
        assert all(r.ok for r in results if r.condition.difficulty == 1)
        meta = json.loads((tmp_path / f"{failed[0].stem()}.json").read_text())
        assert meta["status"] == "failed" and "RuntimeError" in meta["error"]

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError):
            runner.run_experiment(runner.parse(TINY), out_dir=blocker / "sub")

    def test_summary_records_divisor(self, tiny_run, tmp_path):
        _, results, _ = tiny_run
        runner.write_summary(runner.aggregate(results), tmp_path)
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["std_divisor"] == "N" and len(summary["groups"]) == 6


class TestCli:
    def test_missing_config_file(self, tmp_path):
        assert cli.main(["regress", "--config", str(tmp_path / "nope.ini")]) == cli.EXIT_CONFIG

    def test_wrong_task(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text(TINY)
        assert cli.main(["maze", "--config", str(path)]) == cli.EXIT_CONFIG

    def test_gradcheck(self, capsys):
        assert cli.main(["gradcheck", "--cases", "2"]) == cli.EXIT_OK
        assert "within" in capsys.readouterr().out

    def test_regress_then_aggregate(self, tmp_path, capsys):
        path = tmp_path / "c.ini"
        path.write_text(TINY)
        out = tmp_path / "out"
        assert cli.main(["regress", "--config", str(path), "--reps", "1", "--seed", "3", "--out", str(out)]) == 0
        assert (out / "summary.json").exists() and (out / "config.ini").exists()
        assert cli.main(["aggregate", "--out", str(out), "--axis", "complexity", "--axis", "nnpi"]) == 0
        assert (out / "plot_complexity.csv").exists() and (out / "plot_nnpi.csv").exists()

    def test_failed_runs_exit_code(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text(TINY.replace("complexity = 1, 3", "complexity = 60").replace("gauss", "disc"))
        assert cli.main(["regress", "--config", str(path), "--reps", "1", "--out", str(tmp_path / "o")]) == cli.EXIT_RUN

    def test_aggregate_without_results(self, tmp_path):
        assert cli.main(["aggregate", "--out", str(tmp_path)]) == cli.EXIT_RUN
