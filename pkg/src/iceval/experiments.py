"""Replicated experiments: bias/variance/MSE sweeps, oracle checks, learning curves.

Replications are drawn in blocks of :data:`iceval.rng.BLOCK_SIZE`; block ``b``
of sample size index ``j`` uses the stream ``(seed, tag, j, b)``.  Every
estimator in a run sees the same replicated logs, so comparisons between
estimators are paired.  Reports are lists of rows written as CSV with floats
at 12 significant digits, next to a JSON manifest.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import datasets as dsmod
from . import ltr
from . import rng as rngmod
from .errors import NotIdentifiableInLTR
from .estimators import WeightScheme, record_values
from .learn import LearnConfig, candidate_grid, expected_error, select_hyperparams
from .world import (
    EnumerableWorld,
    exact_bias,
    exact_variance,
    load_world,
    true_value,
)

SCHEMA = "iceval.experiment/1"
EXPERIMENT_KINDS = ("oracle-check", "sweep", "compare", "learn-curve", "ltr-sweep", "ltr-learn")
FLOAT_FMT = "{:.12g}"

TAG_WORLD = 1
TAG_LTR = 2


# --------------------------------------------------------------------------
# configuration


def expand_estimators(specs: Sequence[dict]) -> List[WeightScheme]:
    """``[{"kind": "CAB", "M": [1, 2]}, {"kind": "DM"}]`` -> list of schemes."""
    out = []
    for spec in specs:
        kind = spec["kind"]
        if "M" in spec:
            for M in np.atleast_1d(spec["M"]):
                out.append(WeightScheme(kind, M=float(M)))
        elif "tau" in spec:
            for tau in np.atleast_1d(spec["tau"]):
                out.append(WeightScheme(kind, tau=float(tau)))
        else:
            out.append(WeightScheme(kind))
    if not out:
        raise ValueError("estimator grid is empty")
    return out


def _learn_kind(kind: str) -> str:
    return WeightScheme(kind, **({"M": 1.0} if kind.upper() in ("CIPS", "SWITCH", "CAB", "CABDR")
                                 else {"tau": 0.5} if kind.upper() == "SB" else {})).kind


@dataclass
class ExperimentConfig:
    kind: str
    estimators: List[dict]
    R: int = 1000
    n: List[int] = field(default_factory=lambda: [100])
    seed: int = 0
    world: Optional[str] = None
    dataset: Optional[dict] = None
    queries: Optional[dict] = None
    learn: dict = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.R < 1:
            raise ValueError("R must be at least 1")
        self.n = [int(v) for v in np.atleast_1d(self.n)]
        if not self.n or min(self.n) < 1:
            raise ValueError("sample sizes must be positive")
        if self.kind == "learn-curve":
            # hyperparameter grids for learning default to the ``learn`` section
            if not self.estimators:
                raise ValueError("estimator grid is empty")
            for spec in self.estimators:
                if _learn_kind(spec["kind"]) == "SWITCH":
                    raise ValueError("SWITCH cannot be learned with gradients")
            self.schemes = []
        else:
            self.schemes = expand_estimators(self.estimators)
        if self.kind.startswith("ltr"):
            for s in self.schemes:
                ltr.ltr_scheme(s)
        if self.kind in ("oracle-check", "sweep", "compare"):
            if (self.world is None) == (self.dataset is None):
                raise ValueError("give exactly one of 'world' or 'dataset'")
            if self.kind == "oracle-check" and self.world is None:
                raise ValueError("oracle-check needs an enumerable world")
        if self.world is not None and not self.world_path().exists():
            raise FileNotFoundError(self.world_path())

    def world_path(self) -> Path:
        p = Path(self.world)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "ExperimentConfig":
        if doc.get("schema") != SCHEMA:
            raise ValueError(f"config schema must be {SCHEMA!r}, got {doc.get('schema')!r}")
        keys = {"kind", "estimators", "R", "n", "seed", "world", "dataset", "queries", "learn"}
        unknown = set(doc) - keys - {"schema"}
        if unknown:
            raise ValueError(f"unknown config fields {sorted(unknown)}")
        return cls(**{k: v for k, v in doc.items() if k in keys}, base_dir=str(base_dir))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), Path(path).parent)


@dataclass
class Report:
    columns: List[str]
    rows: List[dict]
    manifest: dict
    ok: bool = True

    def write(self, outdir, name: str) -> Path:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{name}.csv"
        write_csv(path, self.columns, self.rows)
        with open(out / f"{name}.manifest.json", "w") as fh:
            json.dump(self.manifest, fh, indent=1, sort_keys=True, default=str)
        return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT.format(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


# --------------------------------------------------------------------------
# Monte Carlo over enumerable worlds


def value_tables(world: EnumerableWorld, scheme: WeightScheme):
    """Per-record value ``v0 + r * v1`` of ``scheme`` for each (context, action).

    Record values are affine in the observed reward, so two calls to
    :func:`record_values` over the enumerated pairs give both tables exactly.
    Pairs the logger never plays may come out non-finite; they are never drawn.
    """
    C, k = world.pi.shape
    shape = (C, k, k)
    pi_rows = np.broadcast_to(world.pi[:, None, :], shape)
    dhat = np.broadcast_to(world.delta_hat[:, None, :], shape)
    rows = np.broadcast_to(world.pi0_hat[:, None, :], shape)
    actions = np.broadcast_to(np.arange(k), (C, k))
    props = world.pi0_hat
    with np.errstate(divide="ignore", invalid="ignore"):
        v0 = record_values(scheme, pi_rows, actions, np.zeros((C, k)), props, dhat, rows)
        v1 = record_values(scheme, pi_rows, actions, np.ones((C, k)), props, dhat, rows) - v0
    return v0, v1


def _world_block(args):
    world, tables, n, seed, j, b, count = args
    g = rngmod.stream(seed, TAG_WORLD, j, b)
    xid, actions, rewards = dsmod.sample_world_arrays(world, n, count, g)
    out = np.empty((len(tables), count))
    for s, (v0, v1) in enumerate(tables):
        out[s] = np.mean(v0[xid, actions] + v1[xid, actions] * rewards, axis=-1)
    return out


def _map(fn, tasks, workers: int):
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def block_size_for(n: int) -> int:
    """Replications per block, keeping a block's ``(count, n)`` arrays near 2M entries."""
    return int(max(1, min(rngmod.BLOCK_SIZE, 2_000_000 // max(1, n))))


def mc_world_estimates(world: EnumerableWorld, schemes: Sequence[WeightScheme], n: int,
                       R: int, seed: int, size_index: int = 0, workers: int = 1) -> np.ndarray:
    """Estimates of every scheme on ``R`` shared replicated logs; shape ``(S, R)``."""
    tables = [value_tables(world, s) for s in schemes]
    tasks = [(world, tables, n, seed, size_index, b, c)
             for b, c in rngmod.blocks(R, block_size_for(n))]
    return np.concatenate(_map(_world_block, tasks, workers), axis=1)


def summarize(estimates: np.ndarray, truth: float) -> dict:
    """Empirical bias, variance, MSE and their Monte Carlo standard errors."""
    R = estimates.shape[-1]
    mean = float(np.mean(estimates))
    var = float(np.var(estimates, ddof=1)) if R > 1 else 0.0
    centered2 = (estimates - mean) ** 2
    se_var = float(np.std(centered2, ddof=1) / math.sqrt(R)) if R > 1 else math.nan
    bias = mean - truth
    return {
        "mean": mean,
        "bias": bias,
        "var": var,
        "mse": bias * bias + var,
        "se_bias": math.sqrt(var / R),
        "se_var": se_var,
        "R": R,
    }


def _param(scheme: WeightScheme):
    return "" if scheme.param is None else scheme.param


def _ground_world(cfg: ExperimentConfig):
    if cfg.world is not None:
        return load_world(cfg.world_path())
    spec = dict(cfg.dataset)
    ds = _load_dataset(spec, cfg.base_dir)
    models = dsmod.train_logger_and_models(
        ds, spec.get("logger_fraction", 0.1), spec.get("model_fraction", 0.1),
        spec.get("model_seed", cfg.seed), reward_shift=spec.get("reward_shift", 0.0),
    )
    return dsmod.dataset_world(ds.part(spec.get("split", "test")), models, ds.k)


def _load_dataset(spec: dict, base_dir="."):
    if "csv" in spec:
        p = Path(spec["csv"])
        return dsmod.load_csv(p if p.is_absolute() else Path(base_dir) / p)
    syn = spec["synthetic"]
    return dsmod.make_synthetic_multiclass(
        syn["n"], syn["d"], syn["k"], syn["cluster_separation"], syn["seed"]
    )


SWEEP_COLUMNS = ["estimator", "param", "n", "bias", "var", "mse", "se_bias", "se_var",
                 "R", "seed", "prng"]


def run_sweep(cfg: ExperimentConfig, workers: int = 1) -> Report:
    """Empirical bias, variance and MSE of each estimator at each sample size."""
    world = _ground_world(cfg)
    truth = true_value(world)
    rows = []
    for j, n in enumerate(cfg.n):
        est = mc_world_estimates(world, cfg.schemes, n, cfg.R, cfg.seed, j, workers)
        for scheme, e in zip(cfg.schemes, est):
            s = summarize(e, truth)
            rows.append({"estimator": scheme.kind, "param": _param(scheme), "n": n,
                         **s, "seed": cfg.seed, "prng": rngmod.PRNG_ID})
    manifest = {"kind": cfg.kind, "truth": truth, "world": world.name, "R": cfg.R,
                "n": cfg.n, "seed": cfg.seed, "prng": rngmod.PRNG_ID, "schema": SCHEMA}
    return Report(SWEEP_COLUMNS, rows, manifest)


ORACLE_COLUMNS = ["estimator", "param", "n", "exact_bias", "mc_bias", "se_bias", "z_bias",
                  "exact_var", "mc_var", "se_var", "z_var", "rel_var_err", "R", "seed", "prng"]
Z_LIMIT = 5.0


def oracle_rows(world: EnumerableWorld, schemes, n: int, R: int, seed: int, size_index=0,
                workers: int = 1) -> List[dict]:
    truth = true_value(world)
    est = mc_world_estimates(world, schemes, n, R, seed, size_index, workers)
    rows = []
    for scheme, e in zip(schemes, est):
        s = summarize(e, truth)
        eb, ev = exact_bias(world, scheme), exact_variance(world, scheme, n)
        z_b = (s["bias"] - eb) / s["se_bias"] if s["se_bias"] > 0 else (0.0 if s["bias"] == eb else math.inf)
        z_v = (s["var"] - ev) / s["se_var"] if s["se_var"] > 0 else (0.0 if abs(s["var"] - ev) < 1e-15 else math.inf)
        rows.append({
            "estimator": scheme.kind, "param": _param(scheme), "n": n,
            "exact_bias": eb, "mc_bias": s["bias"], "se_bias": s["se_bias"], "z_bias": z_b,
            "exact_var": ev, "mc_var": s["var"], "se_var": s["se_var"], "z_var": z_v,
            "rel_var_err": (s["var"] - ev) / ev if ev > 0 else 0.0,
            "R": R, "seed": seed, "prng": rngmod.PRNG_ID,
        })
    return rows


def run_oracle_check(cfg: ExperimentConfig, workers: int = 1) -> Report:
    """Closed-form bias/variance against Monte Carlo, with z-scores."""
    world = load_world(cfg.world_path())
    rows = []
    for j, n in enumerate(cfg.n):
        rows += oracle_rows(world, cfg.schemes, n, cfg.R, cfg.seed, j, workers)
    ok = all(abs(r["z_bias"]) <= Z_LIMIT and abs(r["z_var"]) <= Z_LIMIT for r in rows)
    manifest = {"kind": cfg.kind, "world": world.name, "R": cfg.R, "n": cfg.n,
                "seed": cfg.seed, "prng": rngmod.PRNG_ID, "z_limit": Z_LIMIT, "ok": ok,
                "schema": SCHEMA}
    return Report(ORACLE_COLUMNS, rows, manifest, ok)


# --------------------------------------------------------------------------
# learning curves


LEARN_DEFAULTS = {
    "axis": "n",               # n | logger_fraction | model_fraction
    "values": [5000],
    "seeds": 10,
    "lams": [1e-3, 1e-2],
    "M": [2.0, 10.0, 50.0],
    "tau": [0.25, 0.5, 0.75],
    "restarts": 3,
    "max_iter": 200,
    "logger_fraction": 0.05,
    "model_fraction": 0.1,
    "reward_shift": 1.0,
    "selector": "cips90",
}


def _learn_settings(cfg: ExperimentConfig) -> dict:
    opts = dict(LEARN_DEFAULTS)
    unknown = set(cfg.learn) - set(opts) - {"C", "budget", "sweeps", "val_sweeps", "model_fraction_ltr"}
    if unknown:
        raise ValueError(f"unknown learn options {sorted(unknown)}")
    opts.update(cfg.learn)
    return opts


def _grid_for(spec: dict, opts: dict, seed: int) -> List[LearnConfig]:
    kind = _learn_kind(spec["kind"])
    extra = {"restarts": opts["restarts"], "max_iter": opts["max_iter"], "seed": seed}
    if kind in ("cIPS", "CAB", "CABDR"):
        return candidate_grid(kind, opts["lams"], spec.get("M", opts["M"]), **extra)
    if kind == "SB":
        return candidate_grid(kind, opts["lams"], spec.get("tau", opts["tau"]), **extra)
    return candidate_grid(kind, opts["lams"], **extra)


def _subsample(split: dsmod.LabeledSplit, n: int, g: np.random.Generator) -> dsmod.LabeledSplit:
    if n <= len(split):
        return split.subset(np.sort(g.permutation(len(split))[:n]))
    return split.subset(g.integers(0, len(split), size=n))


def learning_trial(ds: dsmod.SupervisedDataset, specs: Sequence[dict], opts: dict, seed: int,
                   n: int, logger_fraction: float, model_fraction: float) -> Dict[str, dict]:
    """One seed: train logger/model/log, learn every estimator kind, score on test."""
    models = dsmod.train_logger_and_models(
        ds, logger_fraction, model_fraction, seed, reward_shift=opts["reward_shift"]
    )
    g = rngmod.stream(seed, 5)
    train = _subsample(ds.part("train"), n, g)
    train_log = dsmod.supervised_to_bandit(train, models.logging_policy, seed,
                                           reward_shift=opts["reward_shift"], key=(1,))
    val_log = dsmod.supervised_to_bandit(ds.part("validation"), models.logging_policy, seed,
                                         reward_shift=opts["reward_shift"], key=(4,))
    test = ds.part("test")
    out = {"logger": {"error": expected_error(models.logging_policy, test.X, test.y)}}
    for spec in specs:
        sel = select_hyperparams(_grid_for(spec, opts, seed), train_log, val_log,
                                 models.reward_model, ds.k, method=opts["selector"])
        out[_learn_kind(spec["kind"])] = {"error": expected_error(sel.policy, test.X, test.y),
                     "lam": sel.config.lam, "param": sel.config.scheme.param,
                     "score": sel.score}
    return out


def _trial_task(args):
    return learning_trial(*args)


LEARN_COLUMNS = ["estimator", "axis", "value", "mean_error", "se_error", "seeds", "seed", "prng"]


def learn_curve_trials(cfg: ExperimentConfig, workers: int = 1):
    """Per-trial results keyed by ``(axis value, seed index)``."""
    opts = _learn_settings(cfg)
    ds = _load_dataset(cfg.dataset, cfg.base_dir)
    kinds = [_learn_kind(e["kind"]) for e in cfg.estimators]
    tasks, keys = [], []
    for value in opts["values"]:
        for s in range(opts["seeds"]):
            n = int(value) if opts["axis"] == "n" else int(cfg.n[0])
            lf = float(value) if opts["axis"] == "logger_fraction" else opts["logger_fraction"]
            mf = float(value) if opts["axis"] == "model_fraction" else opts["model_fraction"]
            tasks.append((ds, cfg.estimators, opts, cfg.seed * 1000 + s, n, lf, mf))
            keys.append((value, s))
    results = _map(_trial_task, tasks, workers)
    return opts, kinds, dict(zip(keys, results))


def run_learn_curve(cfg: ExperimentConfig, workers: int = 1) -> Report:
    """Mean and standard error of test expected error along one axis."""
    if cfg.kind == "ltr-learn":
        return run_ltr_learn(cfg, workers)
    opts, kinds, trials = learn_curve_trials(cfg, workers)
    rows = []
    for kind in ["logger"] + kinds:
        for value in opts["values"]:
            errs = np.array([trials[(value, s)][kind]["error"] for s in range(opts["seeds"])])
            se = float(errs.std(ddof=1) / math.sqrt(len(errs))) if len(errs) > 1 else math.nan
            rows.append({"estimator": kind, "axis": opts["axis"], "value": value,
                         "mean_error": float(errs.mean()), "se_error": se,
                         "seeds": len(errs), "seed": cfg.seed, "prng": rngmod.PRNG_ID})
    manifest = {"kind": cfg.kind, "learn": opts, "dataset": cfg.dataset, "seed": cfg.seed,
                "prng": rngmod.PRNG_ID, "schema": SCHEMA}
    return Report(LEARN_COLUMNS, rows, manifest)


# --------------------------------------------------------------------------
# learning to rank


def _ltr_setup(cfg: ExperimentConfig):
    q = dict(cfg.queries or {})
    qs, w_true = ltr.make_synthetic_queries(
        q.get("n_queries", 200), q.get("n_docs", 10), q.get("d", 8), q.get("seed", cfg.seed),
        noise=q.get("noise", 1.0), relevant_rate=q.get("relevant_rate", 0.25),
    )
    g = rngmod.stream(q.get("seed", cfg.seed), 13)
    logger = ltr.LinearRanker(w_true + q.get("logger_noise", 1.0) * g.normal(size=qs.d))
    return q, qs, w_true, logger


LTR_SWEEP_COLUMNS = SWEEP_COLUMNS


def run_ltr_sweep(cfg: ExperimentConfig, workers: int = 1) -> Report:
    """Bias/variance/MSE of LTR estimators for a fixed target ranker.

    ``n`` counts logged query impressions, so ``n / len(queries)`` sweeps.
    """
    q, qs, w_true, logger = _ltr_setup(cfg)
    g = rngmod.stream(q.get("seed", cfg.seed), 14)
    target = ltr.LinearRanker(w_true + q.get("target_noise", 0.3) * g.normal(size=qs.d))
    dhat = ltr.fit_relevance_model(qs, q.get("model_fraction", 0.1), q.get("seed", cfg.seed))(qs)
    truth = ltr.true_metric(qs, target)
    rows = []
    for j, n in enumerate(cfg.n):
        sweeps = n / len(qs)
        est = np.empty((len(cfg.schemes), cfg.R))
        for r in range(cfg.R):
            log = ltr.simulate_clicks(qs, logger, sweeps, cfg.seed, key=(TAG_LTR, j, r))
            for s, scheme in enumerate(cfg.schemes):
                est[s, r] = ltr.ltr_evaluate(scheme, log, qs, target, dhat)
        for scheme, e in zip(cfg.schemes, est):
            rows.append({"estimator": scheme.kind, "param": _param(scheme), "n": n,
                         **summarize(e, truth), "seed": cfg.seed, "prng": rngmod.PRNG_ID})
    manifest = {"kind": cfg.kind, "truth": truth, "queries": q, "R": cfg.R, "n": cfg.n,
                "seed": cfg.seed, "prng": rngmod.PRNG_ID, "schema": SCHEMA}
    return Report(LTR_SWEEP_COLUMNS, rows, manifest)


def ltr_cips90(log: ltr.ClickLog, qs: ltr.QuerySet, ranker) -> float:
    """Validation score for rankers: clipped IPS at the 90th percentile of ``1/p``."""
    inv = (1.0 / log.prop)[qs.mask[log.query_index]]
    M = float(np.percentile(inv, 90.0, method="inverted_cdf"))
    return ltr.ltr_evaluate(WeightScheme("cIPS", M=M), log, qs, ranker)


LTR_LEARN_COLUMNS = ["estimator", "C", "param", "val_score", "test_metric", "sweeps", "seed", "prng"]


def run_ltr_learn(cfg: ExperimentConfig, workers: int = 1) -> Report:
    """Propensity SVM-Rank per estimator with grid search on validation clicks."""
    opts = {"C": [0.1, 1.0], "budget": 300, "sweeps": 1.0, "val_sweeps": 5.0, **cfg.learn}
    q, qs, w_true, logger = _ltr_setup(cfg)
    g = rngmod.stream(q.get("seed", cfg.seed), 15)
    perm = g.permutation(len(qs))
    n_tr, n_va = int(0.6 * len(qs)), int(0.2 * len(qs))
    train, val, test = (qs.subset(np.sort(perm[:n_tr])), qs.subset(np.sort(perm[n_tr:n_tr + n_va])),
                        qs.subset(np.sort(perm[n_tr + n_va:])))
    model = ltr.fit_relevance_model(train, q.get("model_fraction", 0.1), cfg.seed)
    tr_log = ltr.simulate_clicks(train, logger, opts["sweeps"], cfg.seed, key=(TAG_LTR, 100))
    va_log = ltr.simulate_clicks(val, logger, opts["val_sweeps"], cfg.seed, key=(TAG_LTR, 101))
    rows = []
    best: Dict[str, tuple] = {}
    for scheme in cfg.schemes:
        for C in np.atleast_1d(opts["C"]):
            ranker = ltr.svmrank_learn(tr_log, train, scheme, float(C), model(train),
                                       opts["budget"], cfg.seed)
            score = ltr_cips90(va_log, val, ranker)
            metric = ltr.true_metric(test, ranker)
            rows.append({"estimator": scheme.kind, "C": float(C), "param": _param(scheme),
                         "val_score": score, "test_metric": metric, "sweeps": opts["sweeps"],
                         "seed": cfg.seed, "prng": rngmod.PRNG_ID})
            key = (score, float(C), scheme.param or 0.0)
            if scheme.kind not in best or key < best[scheme.kind][0]:
                best[scheme.kind] = (key, metric)
    manifest = {"kind": cfg.kind, "queries": q, "learn": opts, "seed": cfg.seed,
                "selected": {k: v[1] for k, v in best.items()}, "logger_metric":
                ltr.true_metric(test, logger), "prng": rngmod.PRNG_ID, "schema": SCHEMA}
    return Report(LTR_LEARN_COLUMNS, rows, manifest)


RUNNERS = {
    "oracle-check": run_oracle_check,
    "sweep": run_sweep,
    "compare": run_sweep,
    "learn-curve": run_learn_curve,
    "ltr-sweep": run_ltr_sweep,
    "ltr-learn": run_ltr_learn,
}


def run(cfg: ExperimentConfig, workers: int = 1) -> Report:
    return RUNNERS[cfg.kind](cfg, workers)
