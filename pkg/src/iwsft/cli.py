"""Command-line entry points: generate, curate, train, eval, bound-sweep.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from collections import Counter

import numpy as np

from . import diffnum, envs, io
from .config import SEED_ENV, ConfigError, load_config
from .curation import EmptyCuratedSetError, curate_quality, filter_binary
from .data import dataset_stats
from .diffnum import LayoutMismatchError
from .experiment import evaluate, generate, make_env, run
from .trainer import TrainingDivergedError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None


def _chain_from(args) -> envs.ChainMDPSpec:
    return envs.ChainMDPSpec.random(args.chain_states, args.chain_horizon, args.chain_seed)


def _env_from(args):
    if args.env == "chain":
        return _chain_from(args)
    return make_env(args.env)


def _add_chain_flags(p):
    p.add_argument("--chain-states", type=int, default=3)
    p.add_argument("--chain-horizon", type=int, default=3)
    p.add_argument("--chain-seed", type=int, default=0)


# -- commands -----------------------------------------------------------------------


def cmd_generate(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    env = _env_from(args)
    ds = generate(env, args.n, _seed(args.seed), args.noise)
    digest = io.save_dataset(ds, args.out)
    print(f"wrote {len(ds)} trajectories to {args.out}")
    print(f"sha256 {digest}")
    print(dataset_stats(ds).format())
    return EXIT_OK


def _composition(cd) -> str:
    counts: Counter = Counter()
    for i, m in cd.entries:
        t = cd.source[i]
        if t.is_discrete:
            for a in t.masked()[1]:
                counts[int(a)] += m
    return " ".join(f"action{a}={counts[a]}" for a in sorted(counts))


def cmd_curate(args) -> int:
    if (args.cutoffs is None) == (args.threshold is None):
        raise UsageError("give exactly one of --cutoffs or --threshold")
    ds, digest = io.load_dataset(args.inp)
    if args.cutoffs is not None:
        try:
            cuts = [float(c) for c in args.cutoffs.split(",") if c.strip()]
        except ValueError:
            raise UsageError(f"bad --cutoffs {args.cutoffs!r}") from None
        cd = curate_quality(ds, cuts)
    else:
        cd = filter_binary(ds, args.threshold)
    io.save_curated(cd, digest, args.out)
    print(f"thresholds {' '.join(f'{c:.6g}' for c in cd.cutoffs)}")
    print(f"bin sizes {' '.join(str(b) for b in cd.bin_sizes())}")
    print(f"entries {len(cd)} total multiplicity {int(cd.multiplicities.sum())}")
    comp = _composition(cd)
    if comp:
        print(f"composition {comp}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    res = run(cfg, args.out_dir)
    s = res.summary
    print(f"steps {s['steps']} final_loss {s['final_loss']!r} wall_time_s {s['wall_time_s']:.2f}")
    for key, val in sorted(s.get("eval", {}).items()):
        print(f"{key} {val!r}")
    print(f"outputs in {args.out_dir}")
    return EXIT_OK


EVAL_COLUMNS = ("env", "episodes", "seed", "mc_return_mean", "mc_return_stderr", "exact_J", "sft_bound", "iw_bound")


def cmd_eval(args) -> int:
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    params = diffnum.load_checkpoint(args.checkpoint)
    env = _env_from(args)
    expected = _expected_io(env)
    lay = params.layout
    if (lay.input_dim, lay.head, lay.output_dim) != expected:
        raise LayoutMismatchError(
            f"checkpoint layout {lay.input_dim}->{lay.head}({lay.output_dim}) does not fit env {args.env}"
        )
    reference = diffnum.load_checkpoint(args.reference) if args.reference else None
    if reference is not None and reference.layout != lay:
        raise LayoutMismatchError("reference layout differs from checkpoint layout")
    res = evaluate(params, env, args.episodes, _seed(args.seed), args.deterministic, reference)
    if not args.exact:
        for key in ("exact_J", "sft_bound", "iw_bound"):
            res.pop(key, None)
    for key in ("mc_return_mean", "mc_return_stderr", "exact_J", "sft_bound", "iw_bound", "p_right"):
        if key in res:
            print(f"{key} {res[key]!r}")
    if args.csv:
        row = {"env": args.env, "seed": _seed(args.seed), **res}
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(EVAL_COLUMNS)
            w.writerow(["" if row.get(c) is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                        for c in EVAL_COLUMNS])
    return EXIT_OK


def _expected_io(env) -> tuple[int, str, int]:
    if isinstance(env, envs.PointMassEnv):
        return env.state_dim, "gaussian", env.action_space.size
    return env.state_dim, "categorical", env.action_space.size


SWEEP_COLUMNS = ("probe", "kl", "exact_J", "sft_bound", "iw_bound")


def bound_sweep_rows(spec, probes: int, seed: int, radius: float = 0.1, ref_seed: int = 0,
                     ref_scale: float = 0.5, with_reference: bool = False) -> list[tuple]:
    """Rows of (probe, KL, exact J, SFT bound, iw bound with q = p) over random KL-ball probes."""
    E = envs.enumerate_trajectories(spec)
    layout = spec.layout()
    rng = np.random.default_rng(ref_seed)
    theta_ref = diffnum.PolicyParams(ref_scale * rng.standard_normal(layout.n_params), layout)
    thetas = [(theta_ref, 0.0)] if with_reference else []
    thetas += envs.kl_ball_probes(theta_ref, E, probes, radius, seed)
    rows = []
    for i, (theta, kl) in enumerate(thetas):
        rows.append((
            i,
            kl,
            envs.exact_J(theta, E),
            envs.sft_bound(theta, theta_ref, E),
            envs.exact_bound(theta, theta, theta_ref, E),
        ))
    return rows


def cmd_bound_sweep(args) -> int:
    if args.probes < 1:
        raise UsageError("--probes must be >= 1")
    spec = _chain_from(args)
    rows = bound_sweep_rows(spec, args.probes, _seed(args.seed), args.radius, args.ref_seed,
                            with_reference=args.with_reference)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([r[0]] + [repr(float(x)) for x in r[1:]])
    worst_iw = max(r[4] - r[2] for r in rows)
    worst_sft = max(r[3] - r[4] for r in rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    print(f"max(iw_bound - exact_J) {worst_iw!r}")
    print(f"max(sft_bound - iw_bound) {worst_sft!r}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="iwsft", description=__doc__.splitlines()[0], allow_abbrev=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="generate a dataset from a toy environment", allow_abbrev=False)
    g.add_argument("--env", choices=("bandit", "chain", "pointmass"), required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=None, help=f"defaults to ${SEED_ENV} or 0")
    g.add_argument("--out", required=True)
    g.add_argument("--noise", type=float, default=0.3, help="point-mass controller noise")
    _add_chain_flags(g)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("curate", help="filter or quality-bin a dataset", allow_abbrev=False)
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--cutoffs", help="comma-separated percentiles, e.g. 90,95,98")
    c.add_argument("--threshold", type=float)
    c.set_defaults(func=cmd_curate)

    t = sub.add_parser("train", help="run a training config", allow_abbrev=False)
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir", default="run")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint", allow_abbrev=False)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--env", choices=("bandit", "chain", "pointmass"), required=True)
    e.add_argument("--episodes", type=int, required=True)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--exact", action="store_true", help="also report exact J (and bounds with --reference)")
    e.add_argument("--reference", help="reference checkpoint for exact bounds")
    e.add_argument("--deterministic", action="store_true", help="act greedily / with the mean action")
    e.add_argument("--csv", help="write the metrics row to this CSV file")
    _add_chain_flags(e)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bound-sweep", help="exact J and lower bounds over a KL ball", allow_abbrev=False)
    b.add_argument("--probes", type=int, default=200)
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--radius", type=float, default=0.1)
    b.add_argument("--ref-seed", type=int, default=0)
    b.add_argument("--with-reference", action="store_true", help="prepend a probe at theta = theta_ref")
    _add_chain_flags(b)
    b.set_defaults(func=cmd_bound_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, io.IntegrityError, LayoutMismatchError, EmptyCuratedSetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDivergedError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
