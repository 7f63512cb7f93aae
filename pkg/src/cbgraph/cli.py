"""Command-line interface: ``cbgraph <subcommand> ...``."""
from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

from . import games
from .env import (
    ContextSchedule,
    build_hard_instance,
    format_instance,
    format_schedule,
    make_rng,
    read_instance,
    read_schedule,
)
from .errors import InternalConsistencyError
from .experiment import ExperimentConfig, _atomic_write, run_experiment
from .graph import read_graph
from .policies import ALGORITHMS, RADII, PolicyConfig
from .quantities import EXACT_CAP, all_quantities


def _quantities(args) -> int:
    g = read_graph(args.graph)
    reports = all_quantities(g, args.M, cap=args.exact_cap)
    names = {r.name for r in reports}
    for r in reports:
        print(r.format())
    for name in ("alpha", "delta", "mas", "beta_M", "beta_bar_M", "beta_dom", "rho"):
        if name not in names:
            print(f"{name} skipped: exact search cap exceeded", file=sys.stderr)
    return 0


def _emit(tr: games.GameTranscript, out) -> None:
    text = tr.format()
    if out:
        _atomic_write(Path(out), text)
    else:
        sys.stdout.write(text)


def _file_moves(path) -> list:
    tr = games.GameTranscript.parse(Path(path).read_text(), "I")
    return [(mv[1], mv[2]) for mv in tr.moves if mv[0] == "ADV"]


def _game1(args) -> int:
    g = read_graph(args.graph)
    rng = make_rng(args.seed, "game1")
    solver = None
    if args.adversary == "exact" or args.learner == "exact":
        solver = games.Game1Solver(g)
    if args.adversary == "beta-witness":
        adversary = games.game1_adversary_beta_witness(g, args.M)
    elif args.adversary == "exact":
        adversary = games.game1_adversary_exact(solver)
    else:
        if not args.adversary_file:
            raise SystemExit("--adversary file needs --adversary-file")
        adversary = games.game1_adversary_sets([s for _, s in _file_moves(args.adversary_file)])
    learner = games.game1_learner_exact(solver) if args.learner == "exact" else games.game1_learner_approx(rng)
    _emit(games.play_game1(g, args.M, adversary, learner), args.out)
    return 0


def _game2(args) -> int:
    g = read_graph(args.graph)
    rng = make_rng(args.seed, "game2")
    if args.adversary == "random":
        adversary = games.game2_adversary_random(g, args.M, rng)
    else:
        if not args.adversary_file:
            raise SystemExit("--adversary file needs --adversary-file")
        adversary = games.game2_adversary_moves(_file_moves(args.adversary_file))
    learner = games.game2_learner_lex if args.learner == "lex" else games.game2_learner_greedy
    tr = games.play_game2(g, args.M, adversary, learner)
    if args.learner == "greedy":
        games.game2_transcript_to_cert(g, args.M, tr)
    _emit(tr, args.out)
    return 0


def _lowerbound(args) -> int:
    g = read_graph(args.graph)
    spec, inst, sched = build_hard_instance(g, args.M, args.T, make_rng(args.seed, "env", args.T, 0))
    out = Path(args.out)
    _atomic_write(out / "instance.txt", format_instance(inst))
    _atomic_write(out / "schedule.txt", format_schedule(sched))
    _atomic_write(out / "spec.txt", spec.summary())
    sys.stdout.write(spec.summary())
    return 0


def _simulate(args) -> int:
    g = read_graph(args.graph)
    chunks = []
    for rep in range(args.reps):
        env_rng = make_rng(args.seed, "env", args.T, rep)
        if args.instance == "hard":
            _, inst, sched = build_hard_instance(g, args.M, args.T, env_rng)
        else:
            inst = read_instance(args.instance, g)
            sched = None
        if args.schedule == "random":
            sched = ContextSchedule.random(inst.M, args.T, env_rng)
        elif args.schedule == "blocks":
            sched = sched if sched is not None else ContextSchedule.even_blocks(inst.M, args.T)
        else:
            sched = read_schedule(args.schedule)
        cfg = PolicyConfig(sched.T, inst.K, inst.M, args.delta, args.radius)
        trace = ALGORITHMS[args.algo](inst, sched, cfg, make_rng(args.seed, "policy", args.algo, args.T, rep), rep)
        body = trace.to_csv().splitlines()
        if rep == 0:
            chunks.append("rep," + body[0])
        chunks += [f"{rep},{line}" for line in body[1:]]
        print(f"rep {rep} final_regret {trace.final_regret:.6g}", file=sys.stderr)
    _atomic_write(Path(args.out), "\n".join(chunks) + "\n")
    return 0


def _run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    rows = run_experiment(cfg)
    for r in rows:
        print(f"{r['algorithm']} T={r['T']} mean={r['mean']:.6g} median={r['median']:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cbgraph", description="Contextual bandits with graph feedback.")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("quantities", help="exact graph quantities with witnesses")
    q.add_argument("--graph", required=True)
    q.add_argument("--M", type=int, required=True)
    q.add_argument("--exact-cap", type=int, default=EXACT_CAP)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=_quantities)

    g1 = sub.add_parser("game1", help="play sequential game I")
    g1.add_argument("--graph", required=True)
    g1.add_argument("--M", type=int, required=True)
    g1.add_argument("--adversary", choices=["beta-witness", "exact", "file"], default="beta-witness")
    g1.add_argument("--adversary-file")
    g1.add_argument("--learner", choices=["approx", "exact"], default="approx")
    g1.add_argument("--seed", type=int, default=0)
    g1.add_argument("--out")
    g1.set_defaults(func=_game1)

    g2 = sub.add_parser("game2", help="play sequential game II")
    g2.add_argument("--graph", required=True)
    g2.add_argument("--M", type=int, required=True)
    g2.add_argument("--adversary", choices=["random", "file"], default="random")
    g2.add_argument("--adversary-file")
    g2.add_argument("--learner", choices=["greedy", "lex"], default="greedy")
    g2.add_argument("--seed", type=int, default=0)
    g2.add_argument("--out")
    g2.set_defaults(func=_game2)

    lb = sub.add_parser("lowerbound", help="write a hard instance")
    lb.add_argument("--graph", required=True)
    lb.add_argument("--M", type=int, required=True)
    lb.add_argument("--T", type=int, required=True)
    lb.add_argument("--seed", type=int, default=0)
    lb.add_argument("--out", required=True)
    lb.set_defaults(func=_lowerbound)

    s = sub.add_parser("simulate", help="run a policy and write its regret trace")
    s.add_argument("--algo", choices=sorted(ALGORITHMS), required=True)
    s.add_argument("--graph", required=True)
    s.add_argument("--M", type=int, default=1, help="contexts for the hard instance")
    s.add_argument("--instance", default="hard", help="'hard' or an instance file")
    s.add_argument("--schedule", default="blocks", help="'blocks', 'random' or a schedule file")
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--delta", type=float, default=0.1)
    s.add_argument("--radius", choices=RADII, default="standard")
    s.add_argument("--reps", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_simulate)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", required=True)
    r.set_defaults(func=_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        try:
            return args.func(args)
        except InternalConsistencyError:
            raise
        except (ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2


if __name__ == "__main__":
    sys.exit(main())
