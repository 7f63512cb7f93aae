"""Stochastic contextual bandits with graph feedback and complete cross-learning."""
from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateInstanceWarning,
    InternalConsistencyError,
    InvalidInputError,
)
from .graph import FeedbackGraph, bits
from .quantities import beta_M_exact

FAMILIES = ("bernoulli", "gaussian")


# -- RNG streams -------------------------------------------------------------------

def stream_key(*parts) -> int:
    """Stable 64-bit key for a tuple of labels (independent of PYTHONHASHSEED)."""
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(base_seed: int, *parts) -> np.random.Generator:
    """Philox stream for (base_seed, parts); distinct parts give independent streams."""
    entropy = [int(base_seed) & 0xFFFFFFFFFFFFFFFF, stream_key(*parts)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


# -- instances ---------------------------------------------------------------------

@dataclass(frozen=True)
class BanditInstance:
    graph: FeedbackGraph
    mu: np.ndarray
    family: str = "bernoulli"
    sigma: float = 0.25

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        if mu.ndim != 2 or mu.shape[1] != self.graph.K or mu.shape[0] < 1:
            raise InvalidInputError(f"mean table must be M x {self.graph.K}, got shape {mu.shape}")
        if not np.all(np.isfinite(mu)) or mu.min() < 0 or mu.max() > 1:
            raise InvalidInputError("means must lie in [0, 1]")
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown reward family {self.family!r}")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @property
    def M(self) -> int:
        return self.mu.shape[0]

    @property
    def K(self) -> int:
        return self.mu.shape[1]

    @cached_property
    def best_means(self) -> np.ndarray:
        return self.mu.max(axis=1)

    @cached_property
    def gaps(self) -> np.ndarray:
        return self.best_means[:, None] - self.mu

    @cached_property
    def supports(self) -> tuple:
        """Observed actions N_out(a) for every a, as index arrays."""
        return tuple(np.array(list(bits(m)), dtype=np.intp) for m in self.graph.out_masks)

    def best_actions(self, c: int) -> frozenset:
        return frozenset(np.flatnonzero(self.mu[c] == self.best_means[c]).tolist())

    def sample(self, a: int, rng: np.random.Generator) -> np.ndarray:
        """Rewards for every context on N_out(a); shape (M, |N_out(a)|)."""
        return self._draw(self.mu[:, self.supports[a]], rng)

    def sample_context(self, c: int, a: int, rng: np.random.Generator) -> np.ndarray:
        """Rewards of context c only on N_out(a)."""
        return self._draw(self.mu[c, self.supports[a]], rng)

    def _draw(self, means: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.family == "bernoulli":
            return (rng.random(means.shape) < means).astype(float)
        return np.clip(means + self.sigma * rng.standard_normal(means.shape), 0.0, 1.0)


@dataclass(frozen=True)
class ContextSchedule:
    """Context sequence c_1..c_T (0-indexed in memory)."""

    contexts: np.ndarray
    kind: str = "general"

    def __post_init__(self):
        cs = np.array(self.contexts, dtype=np.int64).reshape(-1)
        if cs.size and cs.min() < 0:
            raise InvalidInputError("contexts must be nonnegative")
        if self.kind not in ("self-avoiding", "general"):
            raise InvalidInputError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "self-avoiding" and not validate_self_avoiding(cs):
            raise InvalidInputError("schedule tagged self-avoiding revisits a context")
        cs.setflags(write=False)
        object.__setattr__(self, "contexts", cs)

    @property
    def T(self) -> int:
        return int(self.contexts.size)

    @classmethod
    def blocks(cls, lengths: Sequence[int], order: Optional[Sequence[int]] = None) -> "ContextSchedule":
        order = range(len(lengths)) if order is None else order
        cs = np.concatenate([np.full(int(n), c, dtype=np.int64) for c, n in zip(order, lengths)] or [np.zeros(0, np.int64)])
        return cls(cs, "self-avoiding")

    @classmethod
    def even_blocks(cls, M: int, T: int) -> "ContextSchedule":
        base = [T // M] * M
        base[-1] += T - sum(base)
        return cls.blocks(base)

    @classmethod
    def random(cls, M: int, T: int, rng: np.random.Generator) -> "ContextSchedule":
        return cls(rng.integers(0, M, size=T), "general")

    def fits(self, M: int) -> bool:
        return self.T == 0 or int(self.contexts.max()) < M


def validate_self_avoiding(schedule) -> bool:
    """True iff no context comes back after a different one was seen."""
    cs = schedule.contexts if isinstance(schedule, ContextSchedule) else schedule
    seen = set()
    prev = None
    for c in cs:
        c = int(c)
        if c != prev:
            if c in seen:
                return False
            seen.add(c)
            prev = c
    return True


@dataclass(frozen=True)
class FeedbackRecord:
    t: int
    action: int
    support: np.ndarray
    rewards: np.ndarray  # (M, len(support))

    @property
    def observed(self) -> dict:
        return {
            (c, int(a)): float(self.rewards[c, j])
            for c in range(self.rewards.shape[0])
            for j, a in enumerate(self.support)
        }


def step(instance: BanditInstance, schedule: ContextSchedule, t: int, a_t: int, rng: np.random.Generator) -> FeedbackRecord:
    """Play a_t at round t (1-indexed); observe every context on N_out(a_t)."""
    if not 1 <= t <= schedule.T:
        raise InvalidInputError(f"round {t} outside 1..{schedule.T}")
    if not 0 <= a_t < instance.K:
        raise InvalidInputError(f"action {a_t} outside 0..{instance.K - 1}")
    return FeedbackRecord(t, int(a_t), instance.supports[a_t], instance.sample(a_t, rng))


def instantaneous_regret(instance: BanditInstance, schedule: ContextSchedule, actions) -> np.ndarray:
    acts = np.asarray(actions, dtype=np.int64)
    cs = schedule.contexts[: acts.size]
    if acts.size != schedule.T:
        raise InvalidInputError(f"expected {schedule.T} actions, got {acts.size}")
    return instance.gaps[cs, acts]


def pseudo_regret(instance: BanditInstance, schedule: ContextSchedule, actions) -> float:
    return float(instantaneous_regret(instance, schedule, actions).sum())


def kl_bernoulli(p: float, q: float) -> float:
    if not (0 < p < 1 and 0 < q < 1):
        raise InvalidInputError(f"kl_bernoulli needs p, q in (0, 1); got {p}, {q}")
    return p * math.log(p / q) + (1 - p) * math.log((1 - p) / (1 - q))


# -- hard instance -----------------------------------------------------------------

@dataclass(frozen=True)
class HardInstanceSpec:
    """Blocks J_1..J_m; each J_c lists its distinguished action first."""

    sets: tuple
    u: tuple  # 0-based position of the planted best action inside each J_c
    gap: float
    block_lengths: tuple
    T: int
    beta: int
    witness: tuple = field(default=(), compare=False)

    @property
    def m(self) -> int:
        return len(self.sets)

    def best_action(self, c: int) -> int:
        return self.sets[c][self.u[c]]

    def summary(self) -> str:
        lines = [
            f"beta_M {self.beta}",
            f"m {self.m}",
            f"gap {self.gap:.10g}",
            f"T {self.T}",
        ]
        for c, (js, uc, n) in enumerate(zip(self.sets, self.u, self.block_lengths)):
            members = " ".join(map(str, js))
            lines.append(f"J{c + 1} first={js[0]} best={js[uc]} block={n} members={members}")
        return "\n".join(lines) + "\n"


def reduce_witness(witness: Sequence) -> list:
    """Turn ordered independent sets into blocks J_c with a distinguished first element.

    Empty sets are dropped; a singleton absorbs the set after it and
    becomes that block's first element; a trailing singleton is dropped.
    """
    sets = [sorted(s) for s in witness if len(s)]
    out = []
    i = 0
    while i < len(sets):
        s = sets[i]
        if len(s) == 1:
            if i + 1 < len(sets):
                out.append(tuple(s + sets[i + 1]))
                i += 2
            else:
                i += 1
        else:
            out.append(tuple(s))
            i += 1
    return out


def hard_instance_problems(g: FeedbackGraph, spec: HardInstanceSpec, inst: BanditInstance) -> list:
    """Structural and reward-table checks of the hard-instance construction."""
    problems = []
    placed = 0
    for c, js in enumerate(spec.sets):
        jm = g.mask(js)
        if len(js) < 2:
            problems.append(f"J_{c + 1} has fewer than two actions")
        if jm & placed:
            problems.append(f"J_{c + 1} overlaps an earlier block")
        first = js[0]
        for a in js:
            for b in js:
                if a != b and g.has_edge(a, b) and b != first:
                    problems.append(f"edge {a}->{b} inside J_{c + 1} misses the first element")
        for later in spec.sets[c + 1:]:
            if g.nout(jm) & g.mask(later):
                problems.append(f"J_{c + 1} points into a later block")
                break
        placed |= jm
        # property 3: nothing else in J_1..J_c observes the planted action
        best = spec.best_action(c)
        if spec.u[c] != 0 and g.in_masks[best] & placed & ~(1 << best):
            problems.append(f"planted action {best} of J_{c + 1} is observed from J_<= {c + 1}")
    if spec.beta >= 2 and sum(map(len, spec.sets)) < spec.beta - 1:
        problems.append("blocks lost more than one action of the witness")
    mu = inst.mu
    for c in range(inst.M):
        if c >= spec.m:
            if mu[c].any():
                problems.append(f"context {c + 1} beyond m has nonzero means")
            continue
        best = spec.best_action(c)
        others = np.delete(np.arange(inst.K), best)
        if np.any(mu[c, best] - mu[c, others] < spec.gap - 1e-12):
            problems.append(f"context {c + 1}: some action is within the gap of the best")
        outside = np.setdiff1d(np.arange(inst.K), spec.sets[c])
        if outside.size and np.any(mu[c, best] - mu[c, outside] < 0.25 - 1e-12):
            problems.append(f"context {c + 1}: an action outside J has gap below 1/4")
    return problems


def build_hard_instance(
    g: FeedbackGraph,
    M: int,
    T: int,
    rng: np.random.Generator,
    witness: Optional[Sequence] = None,
    family: str = "bernoulli",
) -> tuple:
    """Lower-bound instance built from a β_M witness; returns (spec, instance, schedule)."""
    if T < 1 or M < 1:
        raise InvalidInputError("T and M must be positive")
    if witness is None:
        witness = beta_M_exact(g, M).certificate
    witness = tuple(frozenset(s) for s in witness)
    beta = sum(len(s) for s in witness)
    gap = math.sqrt(beta / (16 * T))
    if gap > 3 / 8:
        raise InvalidInputError(f"T={T} too small: gap {gap:.3f} would push means above 1")
    if T < beta ** 3:
        warnings.warn(f"T={T} below beta_M^3={beta ** 3}; lower-bound regime not reached", stacklevel=2)
    if beta <= 1:
        warnings.warn("beta_M = 1: the lower bound is trivial and no blocks are built", DegenerateInstanceWarning, stacklevel=2)
    sets = reduce_witness(witness)
    m = len(sets)
    if m > M:
        raise InternalConsistencyError("more blocks than contexts")
    u = tuple(int(rng.integers(len(js))) for js in sets)
    mu = np.zeros((M, g.K))
    for c, js in enumerate(sets):
        mu[c, list(js)] = 0.25
        mu[c, js[0]] = 0.25 + gap
        if u[c] != 0:
            mu[c, js[u[c]]] = 0.25 + 2 * gap
    if m:
        sizes = [len(js) for js in sets]
        total = sum(sizes)
        lengths = [len_ * T // total for len_ in sizes]
        lengths[-1] += T - sum(lengths)
    else:
        lengths = []
    spec = HardInstanceSpec(tuple(sets), u, gap, tuple(lengths), T, beta, witness)
    inst = BanditInstance(g, mu, family)
    sched = ContextSchedule.blocks(lengths) if m else ContextSchedule(np.zeros(T, np.int64), "self-avoiding")
    problems = hard_instance_problems(g, spec, inst)
    if problems:
        raise InternalConsistencyError("; ".join(problems))
    return spec, inst, sched


# -- file formats ------------------------------------------------------------------

def format_instance(inst: BanditInstance) -> str:
    lines = [f"{inst.M} {inst.K}"]
    lines += [" ".join(repr(float(x)) for x in row) for row in inst.mu]
    return "\n".join(lines) + "\n"


def parse_instance(text: str, g: FeedbackGraph, family: str = "bernoulli") -> BanditInstance:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows or len(rows[0]) != 2:
        raise InvalidInputError("instance header must be 'M K'")
    try:
        M, K = int(rows[0][0]), int(rows[0][1])
        mu = np.array([[float(x) for x in r] for r in rows[1:]])
    except ValueError as exc:
        raise InvalidInputError(f"malformed instance file: {exc}") from None
    if K != g.K or mu.shape != (M, K):
        raise InvalidInputError(f"instance declares {M}x{K} but has shape {mu.shape} for a graph on {g.K} vertices")
    return BanditInstance(g, mu, family)


def format_schedule(sched: ContextSchedule) -> str:
    return "".join(f"{int(c) + 1}\n" for c in sched.contexts)


def parse_schedule(text: str) -> ContextSchedule:
    try:
        cs = [int(ln) - 1 for ln in text.split()]
    except ValueError as exc:
        raise InvalidInputError(f"malformed schedule file: {exc}") from None
    if any(c < 0 for c in cs):
        raise InvalidInputError("schedule contexts are 1-indexed")
    kind = "self-avoiding" if validate_self_avoiding(cs) else "general"
    return ContextSchedule(np.array(cs, dtype=np.int64), kind)


def read_instance(path, g: FeedbackGraph, family: str = "bernoulli") -> BanditInstance:
    return parse_instance(Path(path).read_text(), g, family)


def read_schedule(path) -> ContextSchedule:
    return parse_schedule(Path(path).read_text())
