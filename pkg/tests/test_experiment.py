import csv
import json
import math
import warnings

import numpy as np
import pytest

from cbgraph import graph as G
from cbgraph.errors import InvalidInputError
from cbgraph.experiment import (
    AGGREGATE_HEADER,
    ConfigError,
    ExperimentConfig,
    aggregate_rows,
    build_graph,
    cell_name,
    compare_graph_families,
    oriented_random_graph,
    read_trace_final,
    run_cell,
    run_experiment,
    scaling_fit,
)
from cbgraph.quantities import beta_M_exact, independence_number_exact, mas_number_exact


def base_config(tmp_path, **kw):
    d = dict(
        name="t",
        graph={"generator": "edgeless", "K": 3},
        M=1,
        horizons=[10],
        algorithms=["alg1"],
        delta=0.1,
        reps=1,
        seed=0,
        out=str(tmp_path / "out"),
        schema=1,
    )
    d.update(kw)
    return ExperimentConfig.from_dict(d)


@pytest.fixture(autouse=True)
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


class TestConfig:
    def test_roundtrip(self, tmp_path):
        cfg = base_config(tmp_path, horizons=[10, 40], algorithms=["alg1", "alg2"])
        again = ExperimentConfig.loads(cfg.dumps())
        assert again == cfg and again.dumps() == cfg.dumps()

    def test_lists_all_problems(self, tmp_path):
        with pytest.raises(ConfigError) as err:
            base_config(tmp_path, M=0, horizons=[10, -1], reps=0, delta=2, algorithms=["nope"])
        fields = {p.split(":")[0] for p in err.value.problems}
        assert {"M", "horizons", "reps", "delta", "algorithms"} <= fields

    def test_unknown_and_missing(self):
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_dict({"name": "x", "bogus": 1, "schema": 1})
        text = " ".join(err.value.problems)
        assert "bogus: unknown field" in text and "graph: missing" in text

    def test_schema_version(self, tmp_path):
        with pytest.raises(ConfigError):
            base_config(tmp_path, schema=2)

    def test_bad_json(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.loads("{not json")

    @pytest.mark.parametrize("graph", [
        {"generator": "mystery", "K": 3},
        {"generator": "erdos-renyi", "K": 3, "p": 1.5},
        {"generator": "grid", "k": 0, "M": 2},
        {"generator": "complete"},
    ])
    def test_graph_problems(self, tmp_path, graph):
        with pytest.raises(ConfigError):
            base_config(tmp_path, graph=graph)

    def test_is_input_error(self):
        assert issubclass(ConfigError, InvalidInputError)


class TestBuildGraph:
    def test_generators(self):
        assert build_graph({"generator": "grid", "k": 2, "M": 3}).K == 6
        assert build_graph({"generator": "chain", "K": 4}).has_edge(0, 3)
        assert build_graph({"generator": "complete", "K": 3}).has_edge(2, 0)
        a = build_graph({"generator": "erdos-renyi", "K": 6, "p": 0.5, "seed": 3})
        assert a == build_graph({"generator": "erdos-renyi", "K": 6, "p": 0.5, "seed": 3})

    def test_file_relative_to_config(self, tmp_path):
        G.write_graph(G.star(4), tmp_path / "g.txt")
        assert build_graph({"file": "g.txt"}, tmp_path) == G.star(4)


class TestRun:
    def test_single_cell_aggregate(self, tmp_path):
        cfg = base_config(tmp_path)
        rows = run_experiment(cfg)
        out = tmp_path / "out"
        trace = out / "traces" / f"{cell_name('alg1', 10, 0)}.csv"
        final = read_trace_final(trace)
        assert rows[0]["mean"] == rows[0]["median"] == rows[0]["q05"] == rows[0]["q95"] == final
        with open(out / "aggregate.csv") as fh:
            reader = csv.reader(fh)
            assert tuple(next(reader)) == AGGREGATE_HEADER
            row = next(reader)
        assert float(row[3]) == final
        assert (out / "report.txt").read_text().startswith("experiment t\n")

    def test_byte_identical_reruns(self, tmp_path):
        def go(sub):
            cfg = base_config(tmp_path, out=str(tmp_path / sub), graph={"generator": "erdos-renyi", "K": 6, "p": 0.3},
                              M=2, horizons=[200, 400, 800], algorithms=["alg1", "alg2", "baseline"], reps=2)
            run_experiment(cfg)
            root = tmp_path / sub
            return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

        a, b = go("a"), go("b")
        assert a == b and len(a) == 3 * 3 * 2 + 2

    def test_aggregate_recomputed_from_traces(self, tmp_path):
        cfg = base_config(tmp_path, graph={"generator": "chain", "K": 5}, M=3, horizons=[300, 600],
                          algorithms=["alg1", "alg2"], reps=4, schedule="blocks")
        rows = run_experiment(cfg)
        out = tmp_path / "out"
        finals = {
            (a, T): [read_trace_final(out / "traces" / f"{cell_name(a, T, r)}.csv") for r in range(4)]
            for a in cfg.algorithms for T in cfg.horizons
        }
        again = aggregate_rows(finals, cfg)
        emitted = list(csv.DictReader(open(out / "aggregate.csv")))
        for want, got in zip(again, emitted):
            for key in ("mean", "median", "q05", "q95"):
                assert f"{want[key]:.12g}" == got[key]
        assert again == rows

    def test_workers_match_serial(self, tmp_path, monkeypatch):
        kw = dict(graph={"generator": "edgeless", "K": 4}, M=2, horizons=[100, 200], algorithms=["alg1", "alg2"], reps=2)
        run_experiment(base_config(tmp_path, out=str(tmp_path / "s"), **kw))
        monkeypatch.setenv("CBGRAPH_WORKERS", "2")
        run_experiment(base_config(tmp_path, out=str(tmp_path / "p"), **kw))
        for f in (tmp_path / "s").rglob("*.csv"):
            assert f.read_bytes() == (tmp_path / "p" / f.relative_to(tmp_path / "s")).read_bytes()

    def test_algorithms_share_the_environment(self, tmp_path):
        cfg = base_config(tmp_path, M=2, horizons=[100], algorithms=["alg1", "alg2"])
        g = build_graph(cfg.graph)
        a = run_cell(cfg, g, "alg1", 100, 0)
        b = run_cell(cfg, g, "alg2", 100, 0)
        assert np.array_equal(a.contexts, b.contexts)

    def test_adding_algorithm_keeps_cells(self, tmp_path):
        run_experiment(base_config(tmp_path, out=str(tmp_path / "one"), M=2, horizons=[100]))
        run_experiment(base_config(tmp_path, out=str(tmp_path / "two"), M=2, horizons=[100], algorithms=["alg2", "alg1"]))
        name = f"traces/{cell_name('alg1', 100, 0)}.csv"
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()

    def test_instance_and_schedule_files(self, tmp_path):
        (tmp_path / "inst.txt").write_text("2 3\n0.9 0.1 0.1\n0.1 0.1 0.9\n")
        (tmp_path / "sched.txt").write_text("1\n1\n2\n2\n1\n2\n")
        cfg_path = tmp_path / "cfg.json"
        d = base_config(tmp_path, M=2, horizons=[6], algorithms=["alg2"], out="res").to_dict()
        d.update(instance="inst.txt", schedule="sched.txt")
        cfg_path.write_text(json.dumps(d))
        rows = run_experiment(ExperimentConfig.load(cfg_path))
        assert rows[0]["reps"] == 1 and (tmp_path / "res" / "aggregate.csv").exists()

    def test_schedule_length_checked(self, tmp_path):
        (tmp_path / "sched.txt").write_text("1\n1\n")
        cfg = base_config(tmp_path, horizons=[5], schedule=str(tmp_path / "sched.txt"))
        with pytest.raises(InvalidInputError):
            run_experiment(cfg)


class TestScalingFit:
    def test_exact_recovery(self):
        T = [100, 400, 1600, 6400]
        fit = scaling_fit(T, [0.7 * math.sqrt(3 * t) for t in T], 3)
        assert abs(fit.c - 0.7) < 1e-9 and fit.r2 == pytest.approx(1.0)
        assert fit.slope == pytest.approx(0.5) and not fit.flat
        assert max(map(abs, fit.residuals)) < 1e-9

    def test_flat(self):
        fit = scaling_fit([100, 1000, 10000], [5.0, 5.0, 5.0], 2)
        assert fit.flat and abs(fit.slope) < 1e-9
        assert "flat" in fit.describe()

    def test_needs_three_points(self):
        with pytest.raises(InvalidInputError):
            scaling_fit([1, 2], [1, 2], 1)

    def test_bad_inputs(self):
        with pytest.raises(InvalidInputError):
            scaling_fit([1, 2, 3], [1, 2], 1)
        with pytest.raises(InvalidInputError):
            scaling_fit([1, 2, 3], [1, 2, 3], 0)

    def test_noisy_recovers_roughly(self):
        rng = np.random.default_rng(0)
        T = np.array([1e3, 4e3, 1.6e4, 6.4e4])
        y = 1.3 * np.sqrt(5 * T) * (1 + 0.02 * rng.standard_normal(4))
        fit = scaling_fit(T, y, 5)
        assert abs(fit.c - 1.3) < 0.05 and fit.r2 > 0.99


class TestFamilies:
    def test_oriented_graph_has_no_two_cycles(self):
        g = oriented_random_graph(9, 0.5, np.random.default_rng(0))
        for u in range(9):
            for v in range(9):
                if u != v:
                    assert not (g.has_edge(u, v) and g.has_edge(v, u))

    def test_undirected_beta_equals_alpha(self):
        for seed in range(5):
            g = G.symmetrize(oriented_random_graph(8, 0.4, np.random.default_rng(seed)))
            a = independence_number_exact(g).value
            assert mas_number_exact(g).value == a
            assert all(beta_M_exact(g, M).value == a for M in range(1, 5))

    def test_chain_profile(self):
        g = G.chain(6)
        assert [beta_M_exact(g, M).value for M in range(1, 8)] == [1, 2, 3, 4, 5, 6, 6]

    @pytest.mark.parametrize("k,M", [(2, 2), (3, 2), (4, 3), (3, 4)])
    def test_grid_beta(self, k, M):
        assert beta_M_exact(G.grid(k, M), M).value >= k + M - 1

    def test_report(self):
        rows, text = compare_graph_families(K=6, Ms=(1, 3), T=400, reps=2, seed=1)
        assert len(rows) == 4 and text.splitlines()[0].startswith("family M alpha")
        und = [r for r in rows if r.family == "undirected"]
        assert all(r.beta == r.alpha == r.mas for r in und)
        directed = [r for r in rows if r.family == "directed"]
        assert directed[0].beta == directed[0].alpha and directed[1].beta >= directed[0].beta
        again = compare_graph_families(K=6, Ms=(1, 3), T=400, reps=2, seed=1)[1]
        assert again == text
