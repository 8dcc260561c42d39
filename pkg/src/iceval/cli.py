"""Command-line entry point: ``iceval <subcommand> [options]``.

Experiment subcommands (``sweep``, ``oracle-check``, ``learn-curve`` and
``ltr-learn`` with ``--config``) write ``<out>/<kind>.csv`` plus a JSON
manifest.  The other subcommands move single artefacts around: datasets,
bandit logs, policies, query sets and click logs.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datasets as dsmod
from . import experiments as ex
from . import ltr
from .errors import IcevalError
from .estimators import WeightScheme, evaluate, read_jsonl, write_jsonl
from .learn import LearnConfig, erm_learn
from .policy import load_policy
from .rng import stream
from .world import exact_bias, exact_variance, load_world, true_value


def _scheme(args) -> WeightScheme:
    return WeightScheme(args.scheme, M=args.M, tau=args.tau)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(doc, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def _print(doc) -> None:
    print(json.dumps(doc, sort_keys=True))


def _config(args) -> ex.ExperimentConfig:
    if not args.config:
        raise SystemExit(f"{args.command}: --config is required")
    cfg = ex.ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


# --------------------------------------------------------------------------
# experiment subcommands


def cmd_experiment(args, allowed) -> int:
    cfg = _config(args)
    if cfg.kind not in allowed:
        raise SystemExit(f"{args.command}: config kind {cfg.kind!r} not in {allowed}")
    report = ex.run(cfg, args.workers)
    path = report.write(_out(args), cfg.kind)
    print(path)
    return 0 if report.ok else 1


# --------------------------------------------------------------------------
# bandit artefacts


def cmd_gen_data(args) -> int:
    ds = dsmod.make_synthetic_multiclass(args.n, args.d, args.k, args.separation,
                                         0 if args.seed is None else args.seed)
    out = _out(args)
    dsmod.save_csv(ds, out / "dataset.csv")
    _dump(ds.meta, out / "dataset.manifest.json")
    print(out / "dataset.csv")
    return 0


def cmd_gen_bandit(args) -> int:
    seed = 0 if args.seed is None else args.seed
    out = _out(args)
    if args.world:
        log = dsmod.sample_world_log(load_world(args.world), args.n, seed)
        write_jsonl(out / "log.jsonl", log)
        _dump(log.provenance, out / "log.manifest.json")
        print(out / "log.jsonl")
        return 0
    ds = dsmod.load_csv(args.data)
    models = dsmod.train_logger_and_models(ds, args.logger_fraction, args.model_fraction, seed,
                                           reward_shift=args.reward_shift)
    _dump(models.logging_policy.to_dict(), out / "logger.json")
    _dump(models.target_policy.to_dict(), out / "target.json")
    _dump(models.reward_model.to_dict(), out / "reward_model.json")
    for i, split in enumerate(dsmod.SPLITS):
        log = dsmod.supervised_to_bandit(ds.part(split), models.logging_policy, seed,
                                         reward_shift=args.reward_shift, key=(1, i))
        write_jsonl(out / f"{split}.jsonl", log)
    _dump(models.manifest, out / "bandit.manifest.json")
    print(out)
    return 0


def _reward_model(path):
    if not path:
        return None
    with open(path) as fh:
        return dsmod.ArgmaxRewardModel.from_dict(json.load(fh))


def cmd_evaluate(args) -> int:
    scheme = _scheme(args)
    if args.world:
        world = load_world(args.world)
        n = args.n
        doc = {"truth": true_value(world), "exact_bias": exact_bias(world, scheme)}
        if n:
            doc["exact_variance"] = exact_variance(world, scheme, n)
        if args.log:
            log = read_jsonl(args.log)
            xid = np.asarray(log.contexts, dtype=int)
            doc["estimate"] = evaluate(scheme, log, world.pi[xid], world.delta_hat[xid])
    else:
        with open(args.policy) as fh:
            policy = load_policy(json.load(fh))
        log = read_jsonl(args.log)
        doc = {"estimate": evaluate(scheme, log, policy, _reward_model(args.reward_model))}
    doc["scheme"] = scheme.to_dict()
    _print(doc)
    return 0


def cmd_learn(args) -> int:
    log = read_jsonl(args.log)
    cfg = LearnConfig(_scheme(args), lam=args.lam, restarts=args.restarts,
                      max_iter=args.max_iter, seed=0 if args.seed is None else args.seed)
    policy = erm_learn(log, cfg, _reward_model(args.reward_model))
    out = _out(args)
    _dump(policy.to_dict(), out / "policy.json")
    print(out / "policy.json")
    return 0


# --------------------------------------------------------------------------
# learning to rank


def _logger_noise(seed, d):
    # same perturbation of the true weights as the ltr experiment runners
    return stream(seed, 13).normal(size=d)


def _ranker(path, d):
    if not path:
        return ltr.LinearRanker(np.zeros(d))
    with open(path) as fh:
        return ltr.LinearRanker.from_dict(json.load(fh))


def cmd_ltr_sim(args) -> int:
    seed = 0 if args.seed is None else args.seed
    out = _out(args)
    if args.queries:
        qs = ltr.read_queries(args.queries)
        logger = _ranker(args.ranker, qs.d)
    else:
        qs, w_true = ltr.make_synthetic_queries(args.n_queries, args.n_docs, args.d, seed)
        logger = ltr.LinearRanker(w_true + _logger_noise(seed, qs.d))
        ltr.write_queries(out / "queries.jsonl", qs)
        _dump(logger.to_dict(), out / "logger.json")
    log = ltr.simulate_clicks(qs, logger, args.sweeps, seed)
    ltr.write_clicklog(out / "clicks.jsonl", log, qs)
    _dump(log.provenance, out / "clicks.manifest.json")
    print(out / "clicks.jsonl")
    return 0


def cmd_ltr_eval(args) -> int:
    scheme = ltr.ltr_scheme(_scheme(args))
    qs = ltr.read_queries(args.queries)
    log = ltr.read_clicklog(args.clicks, qs)
    ranker = _ranker(args.ranker, qs.d)
    _print({"estimate": ltr.ltr_evaluate(scheme, log, qs, ranker),
            "true_metric": ltr.true_metric(qs, ranker), "scheme": scheme.to_dict()})
    return 0


def cmd_ltr_learn(args) -> int:
    if args.config:
        return cmd_experiment(args, ("ltr-learn", "ltr-sweep"))
    scheme = ltr.ltr_scheme(_scheme(args))
    seed = 0 if args.seed is None else args.seed
    out = _out(args)
    if args.queries:
        qs = ltr.read_queries(args.queries)
        log = ltr.read_clicklog(args.clicks, qs) if args.clicks else \
            ltr.simulate_clicks(qs, _ranker(args.ranker, qs.d), args.sweeps, seed)
    else:
        qs, w_true = ltr.make_synthetic_queries(args.n_queries, args.n_docs, args.d, seed)
        log = ltr.simulate_clicks(qs, ltr.LinearRanker(w_true + _logger_noise(seed, qs.d)),
                                  args.sweeps, seed)
    ranker = ltr.svmrank_learn(log, qs, scheme, args.C, None, args.budget, seed)
    _dump(ranker.to_dict(), out / "ranker.json")
    _print({"ranker": str(out / "ranker.json"), "true_metric": ltr.true_metric(qs, ranker)})
    return 0


# --------------------------------------------------------------------------
# argument parsing


def _global(p):
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out")
    p.add_argument("--workers", type=int, default=1)


def _scheme_flags(p, default="IPS"):
    p.add_argument("--scheme", default=default)
    p.add_argument("--M", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iceval", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthetic multiclass dataset as CSV")
    _global(p)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--separation", type=float, default=2.0)

    p = sub.add_parser("gen-bandit", help="bandit logs from a dataset or enumerable world")
    _global(p)
    p.add_argument("--data")
    p.add_argument("--world")
    p.add_argument("--n", type=int, default=1000, help="records when sampling a world")
    p.add_argument("--logger-fraction", type=float, default=0.05)
    p.add_argument("--model-fraction", type=float, default=0.1)
    p.add_argument("--reward-shift", type=float, default=0.0)

    p = sub.add_parser("evaluate", help="one estimate, or exact bias/variance on a world")
    _global(p)
    _scheme_flags(p)
    p.add_argument("--log")
    p.add_argument("--policy")
    p.add_argument("--reward-model")
    p.add_argument("--world")
    p.add_argument("--n", type=int, default=None)

    for name in ("sweep", "oracle-check", "learn-curve"):
        p = sub.add_parser(name, help=f"run an experiment config ({name})")
        _global(p)

    p = sub.add_parser("learn", help="ERM policy learning on a bandit log")
    _global(p)
    _scheme_flags(p, "CAB")
    p.add_argument("--log", required=True)
    p.add_argument("--reward-model")
    p.add_argument("--lam", type=float, default=1e-3)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--max-iter", type=int, default=200)

    ltr_help = {"ltr-sim": "simulate position-biased clicks for a ranker",
                "ltr-eval": "estimate a ranker's average rank from a click log",
                "ltr-learn": "propensity-weighted SVM-rank, or an ltr-learn config"}
    for name, text in ltr_help.items():
        p = sub.add_parser(name, help=text)
        _global(p)
        _scheme_flags(p)
        p.add_argument("--queries")
        p.add_argument("--clicks")
        p.add_argument("--ranker")
        p.add_argument("--sweeps", type=float, default=1.0)
        p.add_argument("--n-queries", type=int, default=100)
        p.add_argument("--n-docs", type=int, default=10)
        p.add_argument("--d", type=int, default=8)
        p.add_argument("--C", type=float, default=1.0)
        p.add_argument("--budget", type=int, default=300)
    return parser


COMMANDS = {
    "gen-data": cmd_gen_data,
    "gen-bandit": cmd_gen_bandit,
    "evaluate": cmd_evaluate,
    "sweep": lambda a: cmd_experiment(a, ("sweep", "compare", "ltr-sweep")),
    "oracle-check": lambda a: cmd_experiment(a, ("oracle-check",)),
    "learn": cmd_learn,
    "learn-curve": lambda a: cmd_experiment(a, ("learn-curve", "ltr-learn")),
    "ltr-sim": cmd_ltr_sim,
    "ltr-eval": cmd_ltr_eval,
    "ltr-learn": cmd_ltr_learn,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (IcevalError, ValueError, FileNotFoundError) as exc:
        print(f"iceval {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
