"""Layered arm elimination with graph feedback and cross-learning.

``alg1_run`` handles self-avoiding context sequences by playing game I on
every layer; ``alg2_run`` handles arbitrary sequences through game II with
one shared action set per layer.  ``baseline_no_crosslearn`` runs the same
layered elimination separately in every context, seeing only the played
context's rewards.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .env import BanditInstance, ContextSchedule, validate_self_avoiding
from .errors import InternalConsistencyError, InvalidInputError, PreconditionError
from .games import GameIIState, GameIState, GameTranscript, game1_learner_move, greedy_pick, lex_pick
from .graph import bits, from_mask, lowest

RADII = ("standard", "hoeffding")


@dataclass(frozen=True)
class PolicyConfig:
    T: int
    K: int
    M: int
    delta: float = 0.1
    radius: str = "standard"

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise InvalidInputError(f"delta must lie in (0, 1), got {self.delta}")
        if self.T < 1 or self.K < 1 or self.M < 1:
            raise InvalidInputError("T, K and M must be positive")
        if self.radius not in RADII:
            raise InvalidInputError(f"unknown radius rule {self.radius!r}; choose from {RADII}")

    @property
    def log_term(self) -> float:
        return math.log(2 * self.M * self.K * self.T / self.delta)

    def width(self, layer: int) -> float:
        """Confidence half-width after ``layer`` observations."""
        if self.radius == "standard":
            return math.sqrt(self.log_term / layer)
        return math.sqrt(self.log_term / (2 * layer))

    def threshold(self, layer: int) -> float:
        return 2 * self.width(layer)

    @classmethod
    def for_run(cls, instance: BanditInstance, schedule: ContextSchedule, delta: float = 0.1, radius: str = "standard"):
        return cls(schedule.T, instance.K, instance.M, delta, radius)


def eliminate(active: int, means: np.ndarray, threshold: float) -> int:
    """Keep a iff means[a] >= max over active of means - threshold."""
    if threshold < 0:
        raise InvalidInputError("threshold must be nonnegative")
    members = bits(active)
    if not members:
        return 0
    top = max(means[a] for a in members)
    keep = 0
    for a in members:
        if means[a] >= top - threshold:
            keep |= 1 << a
    return keep


@dataclass
class RegretTrace:
    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    inst_regret: np.ndarray
    rep: int = 0
    info: dict = field(default_factory=dict)
    transcripts: list = field(default_factory=list)

    HEADER = ("t", "context", "action", "reward", "inst_regret", "cum_regret")

    @property
    def T(self) -> int:
        return int(self.actions.size)

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.inst_regret)

    @property
    def final_regret(self) -> float:
        return float(self.inst_regret.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.HEADER) + "\n")
        cum = self.cum_regret
        for i in range(self.T):
            buf.write(
                f"{i + 1},{int(self.contexts[i]) + 1},{int(self.actions[i])},"
                f"{self.rewards[i]:.12g},{self.inst_regret[i]:.12g},{cum[i]:.12g}\n"
            )
        return buf.getvalue()


class _Recorder:
    """Shared bookkeeping: observations, the trace and invariant diagnostics."""

    def __init__(self, instance: BanditInstance, schedule: ContextSchedule, config: PolicyConfig, rng, cross_learning=True):
        if config.K != instance.K or config.M < instance.M:
            raise InvalidInputError("config does not match the instance")
        if not schedule.fits(instance.M):
            raise InvalidInputError("schedule names a context outside the instance")
        self.inst = instance
        self.cfg = config
        self.rng = rng
        self.cross = cross_learning
        self.mu_rows = instance.mu.tolist()
        self.best = instance.best_means.tolist()
        self.pos = [bits(m).index(a) for a, m in enumerate(instance.graph.out_masks)]
        M, K, T = instance.M, instance.K, schedule.T
        self.sums = np.zeros((M, K))
        self.counts = np.zeros((M, K), dtype=np.int64)
        self.contexts = schedule.contexts
        self.actions = np.zeros(T, dtype=np.int64)
        self.rewards = np.zeros(T)
        self.t = 0
        self.best_retained = True
        self.confidence_held = True
        self.gap_violations = 0
        self.eliminations = 0
        self.max_layer = [0] * M

    def play(self, a: int) -> None:
        t = self.t
        c = int(self.contexts[t])
        sup = self.inst.supports[a]
        if self.cross:
            obs = self.inst.sample(a, self.rng)
            self.sums[:, sup] += obs
            self.counts[:, sup] += 1
            self.rewards[t] = obs[c, self.pos[a]]
        else:
            obs = self.inst.sample_context(c, a, self.rng)
            self.sums[c, sup] += obs
            self.counts[c, sup] += 1
            self.rewards[t] = obs[self.pos[a]]
        self.actions[t] = a
        self.t += 1

    def eliminate(self, c: int, active: int, layer: int) -> int:
        """Elimination at the end of ``layer`` with invariant checks."""
        idx = bits(active)
        counts = self.counts[c]
        if min(counts[a] for a in idx) < layer:
            raise InternalConsistencyError(
                f"context {c + 1}, layer {layer}: action with fewer than {layer} observations"
            )
        means = (self.sums[c] / np.maximum(counts, 1)).tolist()
        thr = self.cfg.threshold(layer)
        kept = eliminate(active, means, thr)
        self.eliminations += 1
        mu = self.mu_rows[c]
        width = self.cfg.width(layer)
        if self.confidence_held and any(abs(means[a] - mu[a]) > width for a in idx):
            self.confidence_held = False
        best = self.best[c]
        survivors = bits(kept)
        if not any(mu[a] == best for a in survivors):
            self.best_retained = False
        if self.confidence_held and survivors:
            worst = max(best - mu[a] for a in survivors)
            if worst > min(1.0, 2 * thr) + 1e-12:
                self.gap_violations += 1
        self.max_layer[c] = max(self.max_layer[c], layer + 1)
        return kept

    def trace(self, rep: int, info: dict, transcripts: list) -> RegretTrace:
        inst_regret = self.inst.gaps[self.contexts, self.actions]
        base = {
            "best_retained": self.best_retained,
            "confidence_held": self.confidence_held,
            "gap_violations": self.gap_violations,
            "eliminations": self.eliminations,
            "max_layer": list(self.max_layer),
        }
        base.update(info)
        return RegretTrace(self.contexts.copy(), self.actions, self.rewards, inst_regret, rep, base, transcripts)


# -- algorithm for self-avoiding contexts ---------------------------------------------

def alg1_run(
    instance: BanditInstance,
    schedule: ContextSchedule,
    config: PolicyConfig,
    rng: np.random.Generator,
    rep: int = 0,
    learner: Optional[Callable] = None,
    record_transcripts: bool = False,
) -> RegretTrace:
    """Layered elimination; on each layer contexts play game I in order of appearance."""
    if not validate_self_avoiding(schedule):
        raise PreconditionError("this policy needs a self-avoiding context sequence")
    g = instance.graph
    learner = learner or game1_learner_move
    rec = _Recorder(instance, schedule, config, rng)
    T = schedule.T
    cs = schedule.contexts
    n_blocks = len({int(c) for c in cs})
    layers = {}  # layer -> GameIState over the contexts that reached it
    costs = {}
    while rec.t < T:
        c = int(cs[rec.t])
        active = g.full_mask
        layer = 1
        while rec.t < T and cs[rec.t] == c:
            game = layers.setdefault(layer, GameIState(g, n_blocks))
            residual = active & ~game.covered
            d = g.mask(learner(game, from_mask(residual), rng)) if residual else 0
            played = 0
            for a in bits(d):
                if rec.t >= T or cs[rec.t] != c:
                    break
                rec.play(a)
                played |= 1 << a
            costs[layer] = costs.get(layer, 0) + played.bit_count()
            if played != d:
                # block ended mid-layer: only what was played covers anything
                game.play(residual & g.nout(played), played)
                break
            game.play(residual, d)
            active = rec.eliminate(c, active, layer)
            layer += 1
    transcripts = []
    if record_transcripts:
        for layer in sorted(layers):
            tr = GameTranscript("I")
            for step, (a, d) in enumerate(layers[layer].history):
                tr.moves.append(("ADV", step, from_mask(a)))
                tr.moves.append(("LRN", from_mask(d)))
            tr.cost = layers[layer].cost
            transcripts.append(tr)
    info = {"algorithm": "alg1", "layer_costs": [costs[k] for k in sorted(costs)]}
    return rec.trace(rep, info, transcripts)


# -- algorithm for general contexts -----------------------------------------------

class Alg2State:
    """Active sets per (context, layer), shared per-layer action sets and layer indices."""

    def __init__(self, g, M: int, pick: Optional[Callable] = None):
        self.g = g
        self.M = M
        self.pick = pick or greedy_pick
        self.level = [1] * M
        self.active = [{1: g.full_mask} for _ in range(M)]
        self.chosen = {}  # layer -> D_layer
        self.covered = {}  # layer -> N_out(D_layer)
        self.games = {}  # layer -> GameIIState

    def active_set(self, c: int, layer: int) -> int:
        """A_{c,layer}; unvisited layers fall back to the last materialised set."""
        sets = self.active[c]
        if layer in sets:
            return sets[layer]
        if layer >= self.level[c]:
            # the current level is always the newest materialised layer
            return sets[self.level[c]]
        return sets[max(k for k in sets if k <= layer)]

    def residual(self, c: int) -> int:
        layer = self.level[c]
        return self.active_set(c, layer) & ~self.covered.get(layer, 0)

    def new_level(self, c: int) -> int:
        layer = self.level[c]
        while not self.active_set(c, layer) & ~self.covered.get(layer, 0):
            layer += 1
        return layer


def alg2_choose_action(state: Alg2State, c: int) -> int:
    r = state.residual(c)
    if not r:
        raise InternalConsistencyError(f"context {c + 1} sits on a fully covered layer")
    return state.pick(state.g, r)


def alg2_run(
    instance: BanditInstance,
    schedule: ContextSchedule,
    config: PolicyConfig,
    rng: np.random.Generator,
    rep: int = 0,
    pick: Optional[Callable] = None,
    record_transcripts: bool = False,
) -> RegretTrace:
    """Layered elimination with a shared action set per layer, driven by game II."""
    g = instance.graph
    M = instance.M
    rec = _Recorder(instance, schedule, config, rng)
    state = Alg2State(g, M, pick)
    out = g.out_masks
    cs = schedule.contexts
    for t in range(schedule.T):
        c = int(cs[t])
        layer = state.level[c]
        a = alg2_choose_action(state, c)
        if record_transcripts:
            game = state.games.setdefault(layer, GameIIState(g, M))
            game.adversary_move(c, state.active_set(c, layer) if game.sets[c] is None else None)
            game.learner_move(a)
        rec.play(a)
        state.chosen[layer] = state.chosen.get(layer, 0) | (1 << a)
        state.covered[layer] = state.covered.get(layer, 0) | out[a]
        for c2 in range(M):
            # the shrunken set may already be covered on its new layer, so repeat
            while (new := state.new_level(c2)) > (old := state.level[c2]):
                prev = state.active_set(c2, old)
                state.active[c2][new] = rec.eliminate(c2, prev, new - 1)
                state.level[c2] = new
    transcripts = []
    if record_transcripts:
        for layer in sorted(state.games):
            game = state.games[layer]
            tr = GameTranscript("II")
            for c, v in zip(game.contexts, game.vertices):
                tr.moves.append(("ADV", c, from_mask(game.sets[c])))
                tr.moves.append(("LRN", v))
            tr.cost = game.t
            transcripts.append(tr)
    info = {
        "algorithm": "alg2",
        "layer_costs": [state.chosen[k].bit_count() for k in sorted(state.chosen)],
    }
    return rec.trace(rep, info, transcripts)


def alg2_run_lex(instance, schedule, config, rng, rep: int = 0, record_transcripts: bool = False) -> RegretTrace:
    return alg2_run(instance, schedule, config, rng, rep, lex_pick, record_transcripts)


# -- baseline ----------------------------------------------------------------------

def baseline_no_crosslearn(
    instance: BanditInstance,
    schedule: ContextSchedule,
    config: PolicyConfig,
    rng: np.random.Generator,
    rep: int = 0,
) -> RegretTrace:
    """Layered elimination run separately per context; rewards seen only for the played context."""
    g = instance.graph
    M = instance.M
    rec = _Recorder(instance, schedule, config, rng, cross_learning=False)
    active = [g.full_mask] * M
    layer = [1] * M
    queue = [0] * M
    cs = schedule.contexts
    for t in range(schedule.T):
        c = int(cs[t])
        if not queue[c]:
            game = GameIState(g, 1)
            queue[c] = g.mask(game1_learner_move(game, from_mask(active[c]), rng))
        a = lowest(queue[c])
        queue[c] &= queue[c] - 1
        rec.play(a)
        if not queue[c]:
            active[c] = rec.eliminate(c, active[c], layer[c])
            layer[c] += 1
    return rec.trace(rep, {"algorithm": "baseline"}, [])


ALGORITHMS = {
    "alg1": alg1_run,
    "alg2": alg2_run,
    "alg2-lex": alg2_run_lex,
    "baseline": baseline_no_crosslearn,
}
