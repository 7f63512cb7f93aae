"""Sequential exploration games on a feedback graph.

Game I: for c = 1..M the adversary names A_c outside N_out of everything
played so far, and the learner answers with D_c ⊆ A_c dominating A_c.
The learner pays sum |D_c|.

Game II: at every step the adversary names a context (fixing A_c on its
first appearance) whose set still has an uncovered vertex, and the learner
adds one vertex of A_c to D.  The learner pays the number of steps.

Contexts are 0-indexed in memory and 1-indexed in transcript text.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    InternalConsistencyError,
    InvalidInputError,
    RuleViolationError,
    SizeLimitError,
    UnsupportedGraphError,
)
from .graph import FeedbackGraph, bits, format_set, from_mask, parse_set
from .quantities import (
    _dom_table,
    approx_independent_set,
    beta_M_exact,
    greedy_dom_mask,
    log_factor,
    min_dom_mask,
)


# -- transcripts ------------------------------------------------------------------

@dataclass
class GameTranscript:
    """Ordered moves of one game; ``moves`` holds ("ADV", c, set) and ("LRN", set | vertex)."""

    kind: str
    moves: list = field(default_factory=list)
    cost: int = 0

    def format(self) -> str:
        lines = []
        for mv in self.moves:
            if mv[0] == "ADV":
                lines.append(f"ADV {mv[1] + 1} {format_set(mv[2])}")
            elif isinstance(mv[1], int):
                lines.append(f"LRN {mv[1]}")
            else:
                lines.append(f"LRN {format_set(mv[1])}")
        lines.append(f"COST {self.cost}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str, kind: str) -> "GameTranscript":
        tr = cls(kind)
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tag, _, rest = line.partition(" ")
            rest = rest.strip()
            if tag == "ADV":
                c, _, body = rest.partition(" ")
                tr.moves.append(("ADV", int(c) - 1, parse_set(body)))
            elif tag == "LRN":
                if rest.startswith("["):
                    tr.moves.append(("LRN", parse_set(rest)))
                else:
                    tr.moves.append(("LRN", int(rest)))
            elif tag == "COST":
                tr.cost = int(rest)
            else:
                raise InvalidInputError(f"unknown transcript line {raw!r}")
        return tr


# -- game I ----------------------------------------------------------------------

class GameIState:
    """Rule-checking state machine for game I."""

    def __init__(self, g: FeedbackGraph, M: int):
        self.g = g
        self.M = M
        self.step = 0
        self.covered = 0
        self.history = []
        self.cost = 0

    @property
    def done(self) -> bool:
        return self.step >= self.M

    @property
    def available(self) -> int:
        return self.g.full_mask & ~self.covered

    def check_adversary(self, a: int) -> None:
        if self.done:
            raise RuleViolationError("game I already finished")
        if a & self.covered:
            raise RuleViolationError(
                f"A_{self.step + 1} meets N_out of earlier learner sets: {format_set(from_mask(a & self.covered))}"
            )

    def play(self, a, d) -> None:
        am, dm = _as_mask(self.g, a), _as_mask(self.g, d)
        self.check_adversary(am)
        if dm & ~am:
            raise RuleViolationError(f"D_{self.step + 1} is not a subset of A_{self.step + 1}")
        if am & ~self.g.nout(dm):
            raise RuleViolationError(f"D_{self.step + 1} does not dominate A_{self.step + 1}")
        self.history.append((am, dm))
        self.covered |= self.g.nout(dm)
        self.cost += dm.bit_count()
        self.step += 1


def _as_mask(g: FeedbackGraph, s) -> int:
    return s if isinstance(s, int) else g.mask(s)


def game1_learner_move(state: GameIState, a_c, rng: np.random.Generator) -> frozenset:
    """Polynomial-time learner: greedy dominating set plus a large independent set."""
    g = state.g
    am = _as_mask(g, a_c)
    state.check_adversary(am)
    if not am:
        return frozenset()
    dom = greedy_dom_mask(g, am)
    ind = g.mask(approx_independent_set(g, from_mask(am), rng))
    return from_mask(dom | ind)


class Game1Solver:
    """Exact minimax values of game I, memoised on (uncovered set, steps left)."""

    def __init__(self, g: FeedbackGraph, cap: int = 8, step_cap: int = 4):
        if g.K > cap:
            raise SizeLimitError(f"game I exact solver: K={g.K} exceeds cap {cap}")
        self.g = g
        self.step_cap = step_cap
        n = 1 << g.K
        self._nout = [g.nout(m) for m in range(n)]
        self._dom = _dom_table(g)
        self._memo = {}

    def _dominating_subsets(self, a: int):
        nout = self._nout
        sub = a
        while True:
            if a & ~nout[sub] == 0:
                yield sub
            if not sub:
                return
            sub = (sub - 1) & a

    def response_value(self, avail: int, a: int, steps: int) -> tuple:
        """Best learner answer to A with ``steps`` steps left (this one included)."""
        best = (math.inf, 0)
        for d in self._dominating_subsets(a):
            val = d.bit_count() + self.value(avail & ~self._nout[d], steps - 1)
            if val < best[0] or (val == best[0] and d < best[1]):
                best = (val, d)
        return best

    def value(self, avail: int, steps: int) -> int:
        if steps <= 0 or not avail:
            return 0
        key = (avail, steps)
        if key in self._memo:
            return self._memo[key][0]
        if steps == 1:
            # last step: the learner pays δ(A); adversary maximises it
            best, arg = 0, 0
            sub = avail
            while sub:
                if self._dom[sub] > best:
                    best, arg = self._dom[sub], sub
                sub = (sub - 1) & avail
        else:
            best, arg = 0, 0
            sub = avail
            while sub:
                val = self.response_value(avail, sub, steps)[0]
                if val > best:
                    best, arg = val, sub
                sub = (sub - 1) & avail
        self._memo[key] = (best, arg)
        return best

    def best_adversary(self, avail: int, steps: int) -> int:
        if steps <= 0 or not avail:
            return 0
        self.value(avail, steps)
        return self._memo[(avail, steps)][1]

    def solve(self, M: int) -> int:
        if M > self.step_cap:
            raise SizeLimitError(f"game I exact solver: M={M} exceeds cap {self.step_cap}")
        return self.value(self.g.full_mask, M)


def game1_minimax_exact(g: FeedbackGraph, M: int, cap: int = 8, step_cap: int = 4) -> int:
    return Game1Solver(g, cap, step_cap).solve(M)


# game I strategies: adversary(state) -> A mask, learner(state, A mask) -> D mask

def game1_adversary_beta_witness(g: FeedbackGraph, M: int) -> Callable:
    """Play A_c = I_c from a β_M witness; every learner must answer D_c = I_c."""
    witness = [g.mask(s) for s in beta_M_exact(g, M).certificate]

    def adversary(state: GameIState) -> int:
        return witness[state.step]

    return adversary


def game1_adversary_exact(solver: Game1Solver) -> Callable:
    def adversary(state: GameIState) -> int:
        return solver.best_adversary(state.available, state.M - state.step)

    return adversary


def game1_adversary_sets(sets: Sequence) -> Callable:
    def adversary(state: GameIState) -> int:
        return _as_mask(state.g, sets[state.step]) if state.step < len(sets) else 0

    return adversary


def game1_learner_approx(rng: np.random.Generator) -> Callable:
    def learner(state: GameIState, a: int) -> int:
        return state.g.mask(game1_learner_move(state, a, rng))

    return learner


def game1_learner_exact(solver: Game1Solver) -> Callable:
    def learner(state: GameIState, a: int) -> int:
        return solver.response_value(state.available, a, state.M - state.step)[1]

    return learner


def game1_learner_greedy(state: GameIState, a: int) -> int:
    return greedy_dom_mask(state.g, a)


def game1_learner_take_all(state: GameIState, a: int) -> int:
    return a


def play_game1(g: FeedbackGraph, M: int, adversary: Callable, learner: Callable) -> GameTranscript:
    state = GameIState(g, M)
    tr = GameTranscript("I")
    while not state.done:
        a = adversary(state)
        state.check_adversary(a)
        d = learner(state, a)
        state.play(a, d)
        tr.moves.append(("ADV", state.step - 1, from_mask(a)))
        tr.moves.append(("LRN", from_mask(d)))
    tr.cost = state.cost
    return tr


# -- game II ----------------------------------------------------------------------

class GameIIState:
    """Rule-checking state machine for game II."""

    def __init__(self, g: FeedbackGraph, M: int):
        self.g = g
        self.M = M
        self.sets = [None] * M
        self.chosen = 0  # D_t
        self.covered = 0  # N_out(D_t)
        self.contexts = []
        self.vertices = []
        self.pending = None

    @property
    def t(self) -> int:
        return len(self.vertices)

    def residual(self, c: int) -> int:
        a = self.sets[c]
        return 0 if a is None else a & ~self.covered

    def legal_contexts(self) -> list:
        return [c for c in range(self.M) if self.sets[c] is not None and self.residual(c)]

    def unused_contexts(self) -> list:
        return [c for c in range(self.M) if self.sets[c] is None]

    def is_terminal(self) -> bool:
        if self.legal_contexts():
            return False
        return not self.unused_contexts() or self.covered == self.g.full_mask

    def adversary_move(self, c: int, a=None) -> None:
        if self.pending is not None:
            raise RuleViolationError("adversary moved twice in a row")
        if not 0 <= c < self.M:
            raise RuleViolationError(f"context {c + 1} outside 1..{self.M}")
        if self.sets[c] is None:
            if a is None:
                raise RuleViolationError(f"context {c + 1} appears first without a set")
            self.sets[c] = _as_mask(self.g, a)
        elif a is not None and _as_mask(self.g, a) != self.sets[c]:
            raise RuleViolationError(f"A_{c + 1} changed after its first appearance")
        if not self.residual(c):
            raise RuleViolationError(f"A_{c + 1} is already covered")
        self.pending = c

    def learner_move(self, v: int) -> None:
        if self.pending is None:
            raise RuleViolationError("learner moved before the adversary")
        c = self.pending
        if not self.sets[c] >> v & 1:
            raise RuleViolationError(f"vertex {v} not in A_{c + 1}")
        self.contexts.append(c)
        self.vertices.append(v)
        self.chosen |= 1 << v
        self.covered |= self.g.out_masks[v]
        self.pending = None


def greedy_pick(g: FeedbackGraph, residual: int) -> int:
    """Vertex of largest out-degree inside ``residual``; lowest index on ties."""
    om = g.out_masks
    best_v, best_deg = -1, -1
    for v in bits(residual):
        deg = (om[v] & residual).bit_count()
        if deg > best_deg:
            best_v, best_deg = v, deg
    return best_v


def lex_pick(g: FeedbackGraph, residual: int) -> int:
    if g.labels is None:
        raise UnsupportedGraphError("lexicographic learner needs (row, column) vertex labels")
    return min(bits(residual), key=lambda v: g.labels[v])


def _pending_residual(state: GameIIState) -> int:
    if state.pending is None:
        raise RuleViolationError("no pending adversary move")
    r = state.residual(state.pending)
    if not r:
        raise RuleViolationError("empty residual: the adversary broke the rules")
    return r


def game2_learner_greedy(state: GameIIState) -> int:
    return greedy_pick(state.g, _pending_residual(state))


def game2_learner_lex(state: GameIIState) -> int:
    return lex_pick(state.g, _pending_residual(state))


class RandomGame2Adversary:
    """Random disjoint context sets, introduced and interleaved at random.

    Every vertex joins one of the M sets uniformly, or none with
    probability ``p_skip``.  Only contexts whose residual is non-empty
    are ever named.
    """

    def __init__(self, g: FeedbackGraph, M: int, rng: np.random.Generator, p_skip: float = 0.2):
        self.rng = rng
        owner = rng.integers(0, M, size=g.K)
        skip = rng.random(g.K) < p_skip
        self.planned = [0] * M
        for v in range(g.K):
            if not skip[v]:
                self.planned[int(owner[v])] |= 1 << v

    def __call__(self, state: GameIIState):
        options = []
        for c in range(state.M):
            a = self.planned[c] if state.sets[c] is None else state.sets[c]
            if a & ~state.covered:
                options.append(c)
        if not options:
            return None
        c = options[int(self.rng.integers(len(options)))]
        return c, (self.planned[c] if state.sets[c] is None else None)


def game2_adversary_random(g: FeedbackGraph, M: int, rng: np.random.Generator) -> RandomGame2Adversary:
    return RandomGame2Adversary(g, M, rng)


def game2_adversary_moves(moves: Sequence) -> Callable:
    """Replay a fixed list of (context, set) moves, skipping ones that became illegal."""
    queue = list(moves)

    def adversary(state: GameIIState):
        while queue:
            c, a = queue.pop(0)
            known = state.sets[c]
            a = known if known is not None else _as_mask(state.g, a)
            if a & ~state.covered:
                return c, (a if known is None else None)
        return None

    return adversary


def game2_adversary_order(sets: Sequence, order: Sequence) -> Callable:
    """Fixed sets A_c, contexts named in ``order`` while legal."""
    return game2_adversary_moves([(c, sets[c]) for c in order])


def play_game2(g: FeedbackGraph, M: int, adversary: Callable, learner: Callable, max_steps: Optional[int] = None) -> GameTranscript:
    state = GameIIState(g, M)
    tr = GameTranscript("II")
    limit = g.K if max_steps is None else max_steps
    while state.t < limit:
        move = adversary(state)
        if move is None:
            break
        c, a = move
        state.adversary_move(c, a)
        v = learner(state)
        state.learner_move(v)
        tr.moves.append(("ADV", c, from_mask(state.sets[c])))
        tr.moves.append(("LRN", v))
    tr.cost = state.t
    return tr


# -- replay and certificates ---------------------------------------------------------------

def replay_transcript(g: FeedbackGraph, M: int, tr: GameTranscript) -> int:
    """Run a transcript through the state machine; returns the recomputed cost."""
    if tr.kind == "I":
        state = GameIState(g, M)
        moves = tr.moves
        if len(moves) % 2:
            raise RuleViolationError("game I transcript must alternate ADV/LRN")
        for adv, lrn in zip(moves[::2], moves[1::2]):
            if adv[0] != "ADV" or lrn[0] != "LRN":
                raise RuleViolationError("game I transcript must alternate ADV/LRN")
            if adv[1] != state.step:
                raise RuleViolationError(f"step {state.step + 1} labelled as {adv[1] + 1}")
            state.play(adv[2], lrn[1])
        cost = state.cost
    elif tr.kind == "II":
        state = GameIIState(g, M)
        for mv in tr.moves:
            if mv[0] == "ADV":
                c = mv[1]
                a = mv[2] if state.sets[c] is None else None
                if a is None and g.mask(mv[2]) != state.sets[c]:
                    raise RuleViolationError(f"A_{c + 1} changed after its first appearance")
                state.adversary_move(c, a)
            else:
                state.learner_move(mv[1])
        cost = state.t
    else:
        raise InvalidInputError(f"unknown game kind {tr.kind!r}")
    if tr.cost and cost != tr.cost:
        raise RuleViolationError(f"transcript claims cost {tr.cost}, replay gives {cost}")
    return cost


def game2_transcript_to_cert(g: FeedbackGraph, M: int, tr: GameTranscript) -> tuple:
    """(V_1..V_M, B_1..B_M) read off a greedy game II transcript, verified."""
    state = GameIIState(g, M)
    vs = [0] * M
    bs = [0] * M
    for mv in tr.moves:
        if mv[0] == "ADV":
            c = mv[1]
            state.adversary_move(c, mv[2] if state.sets[c] is None else None)
        else:
            c = state.pending
            residual = state.residual(c)
            v = mv[1]
            vs[c] |= g.out_masks[v] & residual
            bs[c] |= 1 << v
            state.learner_move(v)
    problems = []
    r = log_factor(g.K)
    seen = 0
    for c in range(M):
        if vs[c] & seen:
            problems.append(f"V_{c + 1} overlaps another V")
        seen |= vs[c]
        if vs[c] & ~g.nout(bs[c]):
            problems.append(f"B_{c + 1} does not dominate V_{c + 1}")
        d = min_dom_mask(g, vs[c]).bit_count()
        if bs[c].bit_count() > d * r + 1e-9:
            problems.append(f"|B_{c + 1}| = {bs[c].bit_count()} > δ(V_{c + 1})(1+ln K) = {d * r:.3f}")
    union_b = 0
    for b in bs:
        union_b |= b
    if not g.acyclic_mask(union_b):
        problems.append("union of B_c is cyclic")
    if problems:
        raise InternalConsistencyError("; ".join(problems))
    return [from_mask(v) for v in vs], [from_mask(b) for b in bs]


def game2_as_game1(g: FeedbackGraph, M: int, tr: GameTranscript) -> GameTranscript:
    """Regroup a self-avoiding game II transcript as game I moves.

    Context blocks become steps in order of first appearance; A_c becomes
    the part of the block's residual the learner actually covered.
    """
    state = GameIIState(g, M)
    blocks = []  # [context, residual at block start, chosen vertices]
    for mv in tr.moves:
        if mv[0] == "ADV":
            c = mv[1]
            state.adversary_move(c, mv[2] if state.sets[c] is None else None)
            if not blocks or blocks[-1][0] != c:
                if any(b[0] == c for b in blocks):
                    raise InvalidInputError("context order is not self-avoiding")
                blocks.append([c, state.residual(c), 0])
        else:
            blocks[-1][2] |= 1 << mv[1]
            state.learner_move(mv[1])
    out = GameTranscript("I")
    for step, (_, start, d) in enumerate(blocks):
        a = start & g.nout(d)
        out.moves.append(("ADV", step, from_mask(a)))
        out.moves.append(("LRN", from_mask(d)))
        out.cost += d.bit_count()
    return out


# -- exhaustive worst-case durations -----------------------------------------------------------

def _pick_fn(g: FeedbackGraph, learner: str) -> Callable:
    if learner == "greedy":
        return lambda r: greedy_pick(g, r)
    if learner == "lex":
        if g.labels is None:
            raise UnsupportedGraphError("lexicographic learner needs (row, column) vertex labels")
        return lambda r: lex_pick(g, r)
    raise InvalidInputError(f"unknown learner {learner!r}")


def game2_worst_over_orders(g: FeedbackGraph, sets: Sequence, learner: str = "greedy") -> tuple:
    """Longest game II against a deterministic learner over every context order.

    The sets A_c are fixed; the adversary only picks which context to name
    next.  Returns (duration, worst context order).
    """
    pick = _pick_fn(g, learner)
    masks = [_as_mask(g, s) for s in sets]
    memo = {}

    def longest(covered):
        if covered in memo:
            return memo[covered]
        best = (0, ())
        for c, a in enumerate(masks):
            r = a & ~covered
            if not r:
                continue
            v = pick(r)
            sub = longest(covered | g.out_masks[v])
            if sub[0] + 1 > best[0]:
                best = (sub[0] + 1, (c,) + sub[1])
        memo[covered] = best
        return best

    return longest(0)


def game2_worst_duration_exact(g: FeedbackGraph, M: int, learner: str = "greedy", cap: int = 6) -> int:
    """Longest game II against a deterministic learner over all adversaries.

    Only residual sets matter to these learners, and contexts are
    interchangeable, so the state is (covered, sorted residuals, unused count).
    """
    if g.K > cap:
        raise SizeLimitError(f"game II exhaustive adversary: K={g.K} exceeds cap {cap}")
    pick = _pick_fn(g, learner)
    full = g.full_mask
    memo = {}

    def longest(covered, residuals, unused):
        key = (covered, residuals, unused)
        if key in memo:
            return memo[key]
        best = 0
        for i, r in enumerate(residuals):
            v = pick(r)
            cov = covered | g.out_masks[v]
            rest = tuple(sorted(x & ~cov for j, x in enumerate(residuals) if j != i and x & ~cov))
            if r & ~cov:
                rest = tuple(sorted(rest + (r & ~cov,)))
            best = max(best, 1 + longest(cov, rest, unused))
        if unused:
            free = full & ~covered
            sub = free
            while sub:
                v = pick(sub)
                cov = covered | g.out_masks[v]
                rest = [x & ~cov for x in residuals if x & ~cov]
                if sub & ~cov:
                    rest.append(sub & ~cov)
                best = max(best, 1 + longest(cov, tuple(sorted(rest)), unused - 1))
                sub = (sub - 1) & free
        memo[key] = best
        return best

    return longest(0, (), M)
