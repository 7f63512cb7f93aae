import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from cbgraph import graph as G
from cbgraph.env import BanditInstance, ContextSchedule, build_hard_instance, make_rng, pseudo_regret
from cbgraph.errors import InternalConsistencyError, InvalidInputError, PreconditionError, UnsupportedGraphError
from cbgraph.games import lex_pick, replay_transcript
from cbgraph.graph import FeedbackGraph, bits
from cbgraph.policies import (
    ALGORITHMS,
    Alg2State,
    PolicyConfig,
    alg1_run,
    alg2_choose_action,
    alg2_run,
    alg2_run_lex,
    baseline_no_crosslearn,
    eliminate,
)
from cbgraph.quantities import beta_dom_exact
from conftest import random_corpus

GENERAL = ["alg1", "alg2", "baseline"]  # alg2-lex needs grid labels

# fitted on 30 calibration runs (random means, random schedules): max 1.74
ALG2_CYCLE_C = 2.5


def run(alg, inst, sched, seed=0, delta=0.1, **kw):
    cfg = PolicyConfig.for_run(inst, sched, delta)
    return ALGORITHMS[alg](inst, sched, cfg, make_rng(seed, "policy", alg), **kw)


class TestConfig:
    def test_validation(self):
        for bad in (0, 1, -0.5):
            with pytest.raises(InvalidInputError):
                PolicyConfig(10, 2, 1, bad)
        with pytest.raises(InvalidInputError):
            PolicyConfig(10, 2, 1, 0.1, "bogus")
        with pytest.raises(InvalidInputError):
            PolicyConfig(0, 2, 1)

    def test_threshold(self):
        cfg = PolicyConfig(100, 4, 2, 0.1)
        lt = math.log(2 * 2 * 4 * 100 / 0.1)
        assert cfg.threshold(3) == pytest.approx(2 * math.sqrt(lt / 3))
        h = PolicyConfig(100, 4, 2, 0.1, "hoeffding")
        assert h.width(3) == pytest.approx(math.sqrt(lt / 6))


class TestEliminate:
    def test_equal_means(self):
        assert eliminate(0b1011, np.full(4, 0.3), 0.1) == 0b1011

    def test_separated(self):
        assert eliminate(0b11, np.array([1.0, 0.0]), 0.3) == 0b01

    def test_empty(self):
        assert eliminate(0, np.zeros(3), 0.1) == 0

    def test_negative_threshold(self):
        with pytest.raises(InvalidInputError):
            eliminate(1, np.zeros(1), -1)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=10), st.integers(1, 1023), st.floats(0, 1))
    def test_brute(self, means, active, thr):
        K = len(means)
        active &= (1 << K) - 1
        members = [a for a in range(K) if active >> a & 1]
        want = 0
        if members:
            top = max(means[a] for a in members)
            want = sum(1 << a for a in members if means[a] >= top - thr)
            assert want  # the argmax survives
        assert eliminate(active, np.array(means), thr) == want


class TestTrivialRegret:
    @pytest.mark.parametrize("alg", sorted(ALGORITHMS))
    def test_single_action(self, alg):
        g = FeedbackGraph.from_edges(1, [])
        g = FeedbackGraph(1, g.out_masks, labels=[(1, 1)])
        inst = BanditInstance(g, [[0.3], [0.8]])
        tr = run(alg, inst, ContextSchedule.even_blocks(2, 50))
        assert tr.final_regret == 0

    @pytest.mark.parametrize("alg", sorted(ALGORITHMS))
    def test_constant_means(self, alg):
        g = G.grid(2, 2)
        inst = BanditInstance(g, np.full((2, g.K), 0.4))
        tr = run(alg, inst, ContextSchedule.even_blocks(2, 300))
        assert tr.final_regret == 0


class TestTrace:
    def test_csv(self):
        inst = BanditInstance(G.edgeless(2), [[0.5, 0.25]])
        tr = run("alg1", inst, ContextSchedule.even_blocks(1, 5))
        lines = tr.to_csv().splitlines()
        assert lines[0] == "t,context,action,reward,inst_regret,cum_regret"
        rows = [ln.split(",") for ln in lines[1:]]
        assert [int(r[0]) for r in rows] == [1, 2, 3, 4, 5]
        cum = np.cumsum([float(r[4]) for r in rows])
        assert np.allclose(cum, [float(r[5]) for r in rows])
        assert all(r[1] == "1" for r in rows)

    @pytest.mark.parametrize("alg", GENERAL)
    def test_regret_matches_oracle(self, alg):
        rng = np.random.default_rng(5)
        g = G.erdos_renyi(6, 0.3, rng)
        inst = BanditInstance(g, rng.random((3, 6)))
        sched = ContextSchedule.even_blocks(3, 600) if alg == "alg1" else ContextSchedule.random(3, 600, rng)
        tr = run(alg, inst, sched)
        want = oracles.regret(inst.mu.tolist(), sched.contexts.tolist(), tr.actions.tolist())
        assert tr.final_regret == pytest.approx(want)
        assert tr.final_regret == pytest.approx(pseudo_regret(inst, sched, tr.actions))

    @pytest.mark.parametrize("alg", GENERAL)
    def test_deterministic(self, alg):
        rng = np.random.default_rng(6)
        g = G.erdos_renyi(7, 0.3, rng)
        inst = BanditInstance(g, rng.random((2, 7)))
        sched = ContextSchedule.even_blocks(2, 800)
        assert run(alg, inst, sched, seed=3).to_csv() == run(alg, inst, sched, seed=3).to_csv()
        assert run(alg, inst, sched, seed=3).to_csv() != run(alg, inst, sched, seed=4).to_csv()


class TestAlg1:
    def test_rejects_general_schedule(self):
        inst = BanditInstance(G.edgeless(2), [[0.5, 0.25], [0.1, 0.2]])
        with pytest.raises(PreconditionError):
            run("alg1", inst, ContextSchedule([0, 1, 0]))

    def test_schedule_must_fit(self):
        inst = BanditInstance(G.edgeless(2), [[0.5, 0.25]])
        with pytest.raises(InvalidInputError):
            run("alg1", inst, ContextSchedule.blocks([2, 2]))

    def test_retention_complete_graph(self):
        inst = BanditInstance(G.complete(2), [[0.9, 0.1]])
        sched = ContextSchedule.even_blocks(1, 2000)
        kept = sum(run("alg1", inst, sched, seed=s, delta=0.05).info["best_retained"] for s in range(200))
        assert kept >= 190

    def test_eliminates_clear_loser(self):
        inst = BanditInstance(G.edgeless(2), [[0.95, 0.05]])
        tr = run("alg1", inst, ContextSchedule.even_blocks(1, 4000))
        assert tr.info["eliminations"] > 0
        # the loser stops being played once eliminated
        assert (tr.actions[-1000:] == 0).all()

    @pytest.mark.parametrize("kind,g", random_corpus(15, 3, 7, seed=41))
    def test_layer_transcripts_replay(self, kind, g):
        rng = np.random.default_rng(g.K)
        M = 3
        inst = BanditInstance(g, rng.random((M, g.K)))
        sched = ContextSchedule.blocks([120, 80, 200])
        tr = run("alg1", inst, sched, record_transcripts=True)
        assert len(tr.transcripts) == len(tr.info["layer_costs"])
        for t, cost in zip(tr.transcripts, tr.info["layer_costs"]):
            assert replay_transcript(g, M, t) == t.cost
            assert t.cost >= cost  # interrupted layers count only what was played
        assert sum(tr.info["layer_costs"]) == sched.T

    def test_claim_checks_hold(self):
        g = G.erdos_renyi(8, 0.3, np.random.default_rng(0))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, inst, sched = build_hard_instance(g, 3, 5000, np.random.default_rng(1))
        tr = run("alg1", inst, sched)
        assert tr.info["gap_violations"] == 0


class TestAlg2:
    def test_choose_action(self):
        g = G.star(4)
        state = Alg2State(g, 1)
        assert alg2_choose_action(state, 0) == 0
        state.active[0][1] = 0b0100
        assert alg2_choose_action(state, 0) == 2

    def test_choose_action_precondition(self):
        g = G.star(3)
        state = Alg2State(g, 1)
        state.covered[1] = g.full_mask
        with pytest.raises(InternalConsistencyError):
            alg2_choose_action(state, 0)

    def test_lazy_active_sets(self):
        state = Alg2State(G.edgeless(3), 2)
        state.active[0][3] = 0b011
        state.level[0] = 3
        assert state.active_set(0, 2) == 0b111
        assert state.active_set(0, 7) == 0b011

    @pytest.mark.parametrize("kind,g", random_corpus(25, 3, 8, seed=42))
    def test_layer_costs_below_beta_dom(self, kind, g):
        rng = np.random.default_rng(g.K + 100)
        M = 3
        inst = BanditInstance(g, rng.random((M, g.K)))
        sched = ContextSchedule.blocks([300, 300, 300], order=rng.permutation(M))
        tr = run("alg2", inst, sched, record_transcripts=True)
        bound = beta_dom_exact(g, M).value
        assert max(tr.info["layer_costs"]) <= bound
        for t in tr.transcripts:
            assert replay_transcript(g, M, t) == t.cost

    @pytest.mark.parametrize("seed", range(5))
    def test_general_schedule_transcripts(self, seed):
        rng = np.random.default_rng(seed)
        g = G.erdos_renyi(7, 0.35, rng)
        inst = BanditInstance(g, rng.random((4, 7)))
        sched = ContextSchedule.random(4, 1500, rng)
        tr = run("alg2", inst, sched, record_transcripts=True)
        for t in tr.transcripts:
            assert replay_transcript(g, 4, t) == t.cost
        assert tr.info["best_retained"] or not tr.info["confidence_held"]

    def test_lex_on_grid(self):
        k, M = 3, 2
        g = G.grid(k, M)
        inst = BanditInstance(g, np.full((M, g.K), 0.5))
        sched = ContextSchedule.random(M, 500, np.random.default_rng(0))
        tr = run("alg2-lex", inst, sched, record_transcripts=True)
        assert max(tr.info["layer_costs"]) <= k + M - 1

    def test_lex_needs_labels(self):
        inst = BanditInstance(G.edgeless(3), np.full((1, 3), 0.5))
        with pytest.raises(UnsupportedGraphError):
            run("alg2-lex", inst, ContextSchedule.even_blocks(1, 5))

    def test_cycle_regret_regression(self):
        g = G.cycle(5, undirected=True)
        M, T = 2, 10_000
        bound = beta_dom_exact(g, M).value
        for rep in range(8):
            env = make_rng(2024, "cycle", rep)
            inst = BanditInstance(g, env.uniform(0, 1, (M, 5)))
            sched = ContextSchedule.random(M, T, env)
            cfg = PolicyConfig.for_run(inst, sched, 0.1)
            tr = alg2_run(inst, sched, cfg, make_rng(2024, "cycle-policy", rep))
            assert tr.final_regret <= ALG2_CYCLE_C * math.sqrt(T * bound * cfg.log_term)

    def test_lex_wrapper(self):
        g = G.grid(2, 2)
        inst = BanditInstance(g, np.full((2, 4), 0.5))
        sched = ContextSchedule.even_blocks(2, 40)
        cfg = PolicyConfig.for_run(inst, sched)
        a = alg2_run_lex(inst, sched, cfg, make_rng(0, "x"))
        b = alg2_run(inst, sched, cfg, make_rng(0, "x"), pick=lex_pick)
        assert a.to_csv() == b.to_csv()


class TestBaseline:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_alg1_with_one_context(self, seed):
        rng = np.random.default_rng(seed)
        g = G.erdos_renyi(6, 0.3, rng)
        inst = BanditInstance(g, rng.random((1, 6)))
        sched = ContextSchedule.even_blocks(1, 1000)
        cfg = PolicyConfig.for_run(inst, sched)
        a = alg1_run(inst, sched, cfg, make_rng(seed, "p"))
        b = baseline_no_crosslearn(inst, sched, cfg, make_rng(seed, "p"))
        assert a.to_csv() == b.to_csv()

    def test_no_better_than_alg1_with_cross_learning(self):
        g = G.complete(4)
        M, T = 5, 3000
        diffs = []
        for rep in range(20):
            env = make_rng(7, "paired", rep)
            inst = BanditInstance(g, env.uniform(0, 1, (M, 4)))
            sched = ContextSchedule.even_blocks(M, T)
            cfg = PolicyConfig.for_run(inst, sched)
            a = alg1_run(inst, sched, cfg, make_rng(7, "alg1", rep)).final_regret
            b = baseline_no_crosslearn(inst, sched, cfg, make_rng(7, "base", rep)).final_regret
            diffs.append(b - a)
        assert np.mean(diffs) > 0

    def test_observations_restricted_to_played_context(self):
        g = G.complete(3)
        inst = BanditInstance(g, [[0.9, 0.1, 0.1], [0.1, 0.9, 0.1]])
        sched = ContextSchedule.even_blocks(2, 60)
        tr = run("baseline", inst, sched)
        # each context restarts exploration from its own first layer
        assert tr.info["max_layer"][1] >= 2


def test_bits_helper_consistent():
    assert list(bits(0b1011)) == [0, 1, 3]
