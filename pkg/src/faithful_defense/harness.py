"""The extraction game: attacker queries, defender answers, metrics are tracked."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .attacker import (Attacker, AttackerConfig, MarginalModel, estimate_marginals,
                       surrogate_predict)
from .bitset import popcount
from .cart import ConstantModel
from .dataset import BinarizationPolicy, BinarizedDataset, FeatureSchema, binarize, load_csv
from .defense import Defender, DefenseConfig, Explanation, ExplanationHistory, verify_faithful
from .models import DecisionSet, GamModel, gam_to_decision_set, load_model
from .synthetic import SyntheticSpec, generate_synthetic

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
QUERY_LOG = "queries.jsonl"
CURVES_FILE = "curves.csv"
SUMMARY_FILE = "summary.json"
TIMING_FILE = "timing.csv"
CURVE_COLUMNS = ("query_count", "coverage_train", "coverage_test", "agreement")

# config file section for each ExperimentConfig field
SECTIONS = {
    "data": ("train", "test", "features", "synthetic", "data_seed", "marginals"),
    "binarization": ("quantiles", "thresholds", "categorical_ne"),
    "model": ("model", "tau", "leaf_cap"),
    "defense": ("defense", "l", "defense_seed", "node_limit"),
    "attacker": ("strategy", "attacker_seed", "k", "delta", "committee_size", "candidates",
                 "max_depth"),
    "run": ("max_q", "cadence", "output", "replay"),
}
# short keys accepted inside a section, e.g. [defense] method = "exact"
ALIASES = {("defense", "method"): "defense", ("defense", "seed"): "defense_seed",
           ("attacker", "seed"): "attacker_seed", ("data", "seed"): "data_seed",
           ("model", "path"): "model"}


class ExperimentError(RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


@dataclass
class ExperimentConfig:
    train: str | None = None
    test: str | None = None
    features: list | None = None
    synthetic: dict | None = None
    data_seed: int = 0
    marginals: str | None = None
    quantiles: int = 8
    thresholds: dict = field(default_factory=dict)
    categorical_ne: bool = False
    model: str | None = None
    tau: float | None = None
    leaf_cap: int = 10**6
    defense: str = "greedy"
    l: int = 3
    defense_seed: int = 0
    node_limit: int = 10**6
    strategy: str = "perturbation"
    attacker_seed: int = 0
    k: int = 2
    delta: float | None = None
    committee_size: int = 5
    candidates: int = 32
    max_depth: int = 5
    max_q: int = 2000
    cadence: int = 50
    output: str | None = None
    replay: str | None = None

    def __post_init__(self):
        if self.max_q < 1:
            raise ValueError("max_q must be >= 1")
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")
        if self.synthetic is None and (self.train is None or self.model is None):
            raise ValueError("config needs either [data] synthetic or train + model paths")
        DefenseConfig(self.defense, self.l, self.defense_seed, self.node_limit)
        AttackerConfig(self.strategy, self.attacker_seed, self.k, self.delta,
                       self.committee_size, self.candidates)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, defense_seed=seed, attacker_seed=seed)

    def to_dict(self) -> dict:
        flat = asdict(self)
        return {sec: {k: flat[k] for k in keys} for sec, keys in SECTIONS.items()}

    @classmethod
    def from_dict(cls, doc: dict, base: Path | None = None) -> "ExperimentConfig":
        flat = {}
        names = {f.name for f in fields(cls)}
        for sec, body in doc.items():
            if not isinstance(body, dict) or sec not in SECTIONS:
                key = ALIASES.get((None, sec), sec)
                if key not in names:
                    raise ValueError(f"unknown config key {sec!r}")
                flat[key] = body
                continue
            for k, v in body.items():
                key = ALIASES.get((sec, k), k)
                if key not in names:
                    raise ValueError(f"unknown config key {sec}.{k}")
                flat[key] = v
        if base is not None:
            for k in ("train", "test", "model", "marginals", "replay", "output"):
                if isinstance(flat.get(k), str) and not os.path.isabs(flat[k]):
                    flat[k] = str((base / flat[k]).resolve())
        return cls(**flat)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        doc = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
        return cls.from_dict(doc, path.parent)


def parse_override(item: str) -> tuple[str, object]:
    """``section.key=value`` (or ``key=value``); value parsed as TOML when possible."""
    key, sep, raw = item.partition("=")
    if not sep:
        raise ValueError(f"override {item!r} is not key=value")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    sec, dot, name = key.strip().rpartition(".")
    name = ALIASES.get((sec or None, name), name) if dot else name
    if (sec, name) in ALIASES:
        name = ALIASES[(sec, name)]
    return name, value


def apply_overrides(cfg: ExperimentConfig, items: Iterable[str]) -> ExperimentConfig:
    changes = dict(parse_override(i) for i in items)
    names = {f.name for f in fields(ExperimentConfig)}
    bad = set(changes) - names
    if bad:
        raise ValueError(f"unknown config keys {sorted(bad)}")
    return replace(cfg, **changes)


# ---------------------------------------------------------------------------
# setup

@dataclass
class Setup:
    train: BinarizedDataset
    test: BinarizedDataset
    model: DecisionSet
    marginals: MarginalModel
    train_pos: int = 0
    test_pos: int = 0
    test_neg: int = 0

    def __post_init__(self):
        from .bitset import from_bool
        self.train_labels = self.model.predict_binary(self.train.matrix)
        self.test_labels = self.model.predict_binary(self.test.matrix)
        self.train_pos = from_bool(self.train_labels == 1)
        self.test_pos = from_bool(self.test_labels == 1)
        self.test_neg = from_bool(self.test_labels == 0)


def _load_protected(cfg: ExperimentConfig):
    model = load_model(cfg.model)
    if isinstance(model, GamModel):
        model = gam_to_decision_set(model, cfg.tau, leaf_cap=cfg.leaf_cap)
    return model


def prepare(cfg: ExperimentConfig) -> Setup:
    """Load or generate data and the protected model; binarize both splits."""
    if cfg.synthetic is not None:
        train_raw, test_raw, model = generate_synthetic(SyntheticSpec.from_dict(cfg.synthetic),
                                                        cfg.data_seed)
    else:
        model = _load_protected(cfg)
        schema = (FeatureSchema.from_list(cfg.features) if cfg.features else model.schema)
        train_raw = load_csv(cfg.train, schema)
        test_raw = load_csv(cfg.test, schema) if cfg.test else train_raw
        if model.schema.names != train_raw.schema.names:
            raise ValueError("model features do not match the data schema")
        model = DecisionSet(train_raw.schema, model.conditions, model.rules, model.metadata)
    policy = BinarizationPolicy(cfg.quantiles, dict(cfg.thresholds), cfg.categorical_ne)
    train = binarize(train_raw, policy, include=model.all_conditions())
    test = train.apply(test_raw)
    bound = model.bind(train)
    if cfg.marginals:
        marginals = MarginalModel.load(cfg.marginals, train.schema)
    else:
        marginals = estimate_marginals(train_raw)
    return Setup(train, test, bound, marginals)


# ---------------------------------------------------------------------------
# metrics

def _explanation_bits(e: Explanation, data: BinarizedDataset) -> int:
    return data.support(e.conditions)[1].bits


def _fraction(num: int, den: int):
    return None if den == 0 else num / den


def coverage_metric(E: Iterable[Explanation], data: BinarizedDataset, positives) -> float | None:
    """Share of positive rows captured by at least one explanation; None without positives."""
    pos = positives if isinstance(positives, int) else _as_bits(positives)
    covered = 0
    for e in E:
        covered |= _explanation_bits(e, data)
    return _fraction(popcount(covered & pos), popcount(pos))


def _as_bits(mask) -> int:
    from .bitset import CoverageSet, from_bool
    if isinstance(mask, CoverageSet):
        return mask.bits
    return from_bool(np.asarray(mask, dtype=bool))


def agreement_metric(f: DecisionSet, E: Iterable[Explanation], surrogate,
                     test: BinarizedDataset) -> float:
    """Fraction of test rows where ``cap(E, x) or surrogate(x)`` equals ``f(x)``."""
    if test.n == 0:
        raise ValueError("agreement needs a non-empty test set")
    truth = f.predict_binary(test.matrix)
    pred = surrogate_predict(list(E), surrogate, test.X, test.table)
    return float(np.mean(truth == pred))


def explanation_fpr(E: Iterable[Explanation], test: BinarizedDataset, f: DecisionSet):
    """Rate at which model-negative test rows are captured by an explanation."""
    neg = f.predict_binary(test.matrix) == 0
    covered = 0
    for e in E:
        covered |= _explanation_bits(e, test)
    return _fraction(popcount(covered & _as_bits(neg)), int(neg.sum()))


class CoverageTracker:
    """Running union of explanation coverage on the train and test splits."""

    def __init__(self, setup: Setup):
        self.s = setup
        self.train_bits = 0
        self.test_bits = 0

    def add(self, e: Explanation) -> None:
        self.train_bits |= e.coverage.bits if e.coverage is not None else \
            _explanation_bits(e, self.s.train)
        self.test_bits |= _explanation_bits(e, self.s.test)

    def coverage(self):
        s = self.s
        return (_fraction(popcount(self.train_bits & s.train_pos), popcount(s.train_pos)),
                _fraction(popcount(self.test_bits & s.test_pos), popcount(s.test_pos)))

    def agreement(self, surrogate) -> float:
        s = self.s
        from .bitset import to_bool
        covered = to_bool(self.test_bits, s.test.n)
        pred = covered | (np.asarray(surrogate.predict(s.test.X)) == 1)
        return float(np.mean(pred.astype(np.int8) == s.test_labels))

    def fpr(self):
        s = self.s
        return _fraction(popcount(self.test_bits & s.test_neg), popcount(s.test_neg))


# ---------------------------------------------------------------------------
# the game

@dataclass
class ExtractionRun:
    config: ExperimentConfig
    records: list
    history: ExplanationHistory
    curves: list
    timings: list
    surrogates: list
    summary: dict
    queries: list


def _record(t, q, answer, provenance, history):
    e = answer.explanation
    rec = {"query_id": t, "query": [float(v) for v in q], "label": int(answer.label),
           "source": provenance.get("source") if provenance else "replay"}
    if e is None:
        rec.update({"method": None, "explanation": None, "e_base": None, "e_add": None,
                    "supp": None, "reused": False})
    else:
        rec.update({"method": e.method, "explanation": history.index(e),
                    "e_base": list(e.e_base), "e_add": list(e.e_add), "supp": e.supp,
                    "reused": bool(answer.reused)})
    return rec


def load_queries(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(np.array(json.loads(line)["query"], dtype=float))
    return out


def run_extraction(cfg: ExperimentConfig, setup: Setup | None = None,
                   replay: Sequence | None = None) -> ExtractionRun:
    """Play ``max_q`` rounds of query / answer and track the metric curves.

    With ``replay`` (or ``cfg.replay``) the attacker's queries are taken
    from a recorded sequence instead of being generated adaptively.
    """
    setup = setup or prepare(cfg)
    if replay is None and cfg.replay:
        replay = load_queries(cfg.replay)
    if replay is not None and len(replay) < cfg.max_q:
        raise ExperimentError(f"replay holds {len(replay)} queries, max_q is {cfg.max_q}")
    defender = Defender(setup.model, setup.train,
                        DefenseConfig(cfg.defense, cfg.l, cfg.defense_seed, cfg.node_limit))
    attacker = Attacker(AttackerConfig(cfg.strategy, cfg.attacker_seed, cfg.k, cfg.delta,
                                       cfg.committee_size, cfg.candidates,
                                       max_depth=cfg.max_depth),
                        setup.marginals, setup.train.table)
    tracker = CoverageTracker(setup)
    records, timings, surrogates, queries = [], [], [], []
    constant = ConstantModel(0)
    cov_tr, cov_te = tracker.coverage()
    curves = [{"query_count": 0, "coverage_train": cov_tr, "coverage_test": cov_te,
               "agreement": tracker.agreement(constant)}]
    n_before = 0
    for t in range(cfg.max_q):
        try:
            if replay is not None:
                q, prov = np.asarray(replay[t], dtype=float), None
            else:
                q, prov = attacker.next_query()
            ans = defender.answer(q, query_id=t)
            attacker.observe(q, ans.label, ans.explanation)
        except Exception as exc:
            raise ExperimentError(f"{type(exc).__name__}: {exc}", step=t + 1) from exc
        queries.append(q)
        if len(defender.history) > n_before:
            tracker.add(defender.history[-1])
            n_before = len(defender.history)
        if ans.elapsed is not None:
            timings.append((t, ans.elapsed))
        records.append(_record(t, q, ans, prov, defender.history))
        if (t + 1) % cfg.cadence == 0:
            tree = attacker.train_surrogate()
            surrogates.append(tree)
            cov_tr, cov_te = tracker.coverage()
            curves.append({"query_count": t + 1, "coverage_train": cov_tr,
                           "coverage_test": cov_te, "agreement": tracker.agreement(tree)})
    final_tree = surrogates[-1] if cfg.max_q % cfg.cadence == 0 else attacker.train_surrogate()
    summary = _summary(cfg, setup, defender, attacker, tracker, records, timings, final_tree)
    return ExtractionRun(cfg, records, defender.history, curves, timings, surrogates, summary,
                         queries)


def _quantiles(values):
    if not values:
        return {"count": 0, "median": None, "p90": None, "max": None}
    v = np.asarray(values)
    return {"count": int(len(v)), "median": float(np.median(v)),
            "p90": float(np.quantile(v, 0.9)), "max": float(v.max())}


def _summary(cfg, setup, defender, attacker, tracker, records, timings, tree):
    cov_tr, cov_te = tracker.coverage()
    faithful = [verify_faithful(e, setup.model, _query_of(records, e)) for e in defender.history]
    return {
        "queries": len(records),
        "positive_queries": int(sum(r["label"] for r in records)),
        "explanations": len(defender.history),
        "coverage_train": cov_tr,
        "coverage_test": cov_te,
        "agreement": tracker.agreement(tree),
        "explanation_fpr": tracker.fpr(),
        "faithful_fraction": _fraction(sum(faithful), len(faithful)),
        "non_optimal_exact": int(sum(e.optimal is False and e.method != "greedy"
                                     for e in defender.history)),
        "attacker_fallbacks": int(attacker.fallbacks),
        "timing_seconds": _quantiles([s for _, s in timings]),
    }


def _query_of(records, e: Explanation):
    return np.asarray(records[e.query_id]["query"], dtype=float)


# ---------------------------------------------------------------------------
# output

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_results(run: ExtractionRun, outdir) -> list:
    """Write the config echo, query log, metric curves, summary and (if any) timings."""
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        p = out / CONFIG_FILE
        p.write_text(json.dumps(run.config.to_dict(), indent=2, sort_keys=True) + "\n",
                     encoding="utf-8")
        written.append(p)
        p = out / QUERY_LOG
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            for rec in run.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        written.append(p)
        p = out / CURVES_FILE
        write_curves(p, run.curves)
        written.append(p)
        p = out / SUMMARY_FILE
        p.write_text(json.dumps(run.summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(p)
        if run.timings:
            p = out / TIMING_FILE
            with open(p, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["query_id", "seconds"])
                for t, s in run.timings:
                    w.writerow([t, repr(s)])
            written.append(p)
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    return written


def write_curves(path, curves) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for row in curves:
            w.writerow([_fmt(row[c]) for c in CURVE_COLUMNS])


def read_curves(path) -> list:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({"query_count": int(row["query_count"]),
                         **{c: (float(row[c]) if row[c] != "" else None)
                            for c in CURVE_COLUMNS[1:]}})
    return rows


def recompute_metrics(run_dir, setup: Setup | None = None) -> tuple[list, dict]:
    """Rebuild curves and final metrics from a saved run directory."""
    run_dir = Path(run_dir)
    cfg = ExperimentConfig.from_dict(json.loads((run_dir / CONFIG_FILE).read_text()))
    setup = setup or prepare(cfg)
    from .cart import train_cart
    history = ExplanationHistory()
    tracker = CoverageTracker(setup)
    Q, y = [], []
    cov_tr, cov_te = tracker.coverage()
    curves = [{"query_count": 0, "coverage_train": cov_tr, "coverage_test": cov_te,
               "agreement": tracker.agreement(ConstantModel(0))}]
    cat = setup.train.schema.categorical_mask
    tree = ConstantModel(0)
    with open(run_dir / QUERY_LOG, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            Q.append(rec["query"])
            y.append(rec["label"])
            idx = rec["explanation"]
            if idx is not None and idx == len(history):
                e = Explanation(rec["e_base"], rec["e_add"], rec["method"], rec["query_id"])
                history.append(e)
                tracker.add(e)
            t = rec["query_id"] + 1
            if t % cfg.cadence == 0:
                tree = train_cart(np.array(Q), np.array(y), cfg.max_depth, categorical=cat)
                cov_tr, cov_te = tracker.coverage()
                curves.append({"query_count": t, "coverage_train": cov_tr,
                               "coverage_test": cov_te, "agreement": tracker.agreement(tree)})
    if Q and len(Q) % cfg.cadence:
        tree = train_cart(np.array(Q), np.array(y), cfg.max_depth, categorical=cat)
    cov_tr, cov_te = tracker.coverage()
    final = {"coverage_train": cov_tr, "coverage_test": cov_te,
             "agreement": tracker.agreement(tree), "explanation_fpr": tracker.fpr(),
             "explanations": len(history)}
    return curves, final


# ---------------------------------------------------------------------------
# sweeps

def _sweep_one(args):
    cfg, outdir = args
    run = run_extraction(cfg)
    emit_results(run, outdir)
    return str(outdir), run.summary


def sweep(cfg: ExperimentConfig, defenses: Sequence[str], strategies: Sequence[str],
          seeds: Sequence[int], outdir, workers: int | None = None) -> list:
    """Run the cross product of defenses x strategies x seeds, one directory per run."""
    jobs = []
    for d, s, seed in itertools.product(defenses, strategies, seeds):
        c = replace(cfg.with_seed(seed), defense=d, strategy=s)
        jobs.append((c, Path(outdir) / f"{d}__{s}__seed{seed}"))
    workers = workers or min(len(jobs), os.cpu_count() or 1)
    if workers <= 1:
        return [_sweep_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_one, jobs))
