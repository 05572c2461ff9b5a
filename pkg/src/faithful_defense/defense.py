"""Faithful, low-support explanations for positive predictions of a decision set."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .bitset import CoverageSet
from .coverage import build_instance, exact, greedy
from .dataset import BinarizedDataset, clamp_query
from .models import DecisionSet

GREEDY = "greedy"
EXACT = "exact"
EXACT_RA = "exact_ra"
BASE_RULE = "base_rule"
RANDOM = "random"
NONE = "none"

OPTIMIZED = (GREEDY, EXACT, EXACT_RA)
BASELINES = (BASE_RULE, RANDOM, NONE)
METHODS = OPTIMIZED + BASELINES


@dataclass(eq=False)
class Explanation:
    """``e_base`` is a full rule of the model; ``e_add`` narrows it.

    Both hold condition ids of the dataset vocabulary the model is bound to.
    """

    e_base: tuple
    e_add: tuple
    method: str
    query_id: int | None = None
    rule: int | None = None
    supp: int | None = None
    coverage: CoverageSet | None = field(default=None, repr=False)
    optimal: bool | None = None

    def __post_init__(self):
        self.e_base = tuple(sorted(self.e_base))
        self.e_add = tuple(sorted(self.e_add))
        overlap = set(self.e_base) & set(self.e_add)
        if overlap:
            raise ValueError(f"e_add repeats base conditions {sorted(overlap)}")
        self.mask = 0
        for j in self.conditions:
            self.mask |= 1 << j

    @property
    def conditions(self) -> tuple:
        return tuple(sorted(self.e_base + self.e_add))

    def __len__(self):
        return len(self.e_base) + len(self.e_add)

    def covers(self, qmask: int) -> bool:
        """Whether a query with satisfied-condition mask ``qmask`` meets every condition."""
        return self.mask & ~qmask == 0

    def to_dict(self) -> dict:
        return {"method": self.method, "e_base": list(self.e_base), "e_add": list(self.e_add),
                "supp": self.supp}


class ExplanationHistory:
    """Append-only list of released explanations."""

    def __init__(self, explanations: Iterable[Explanation] = ()):
        self._items: list = []
        for e in explanations:
            self.append(e)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i) -> Explanation:
        return self._items[i]

    def append(self, e: Explanation) -> int:
        self._items.append(e)
        return len(self._items) - 1

    def find(self, qmask: int) -> Explanation | None:
        """Earliest released explanation that covers the query."""
        for e in self._items:
            if e.mask & ~qmask == 0:
                return e
        return None

    def covers(self, qmask: int) -> bool:
        return self.find(qmask) is not None

    def index(self, e: Explanation) -> int:
        for i, item in enumerate(self._items):
            if item is e:
                return i
        raise ValueError("explanation not in history")


@dataclass
class DefenseConfig:
    method: str = GREEDY
    l: int = 3
    seed: int = 0
    node_limit: int = 10**6

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown defense method {self.method!r}; choose from {METHODS}")
        if self.l < 0:
            raise ValueError("max length l must be >= 0")


def query_mask(q, data: BinarizedDataset) -> int:
    return data.table.mask(clamp_query(q, data.schema))


def _ids(mask: int) -> list:
    out = []
    j = 0
    while mask:
        if mask & 1:
            out.append(j)
        mask >>= 1
        j += 1
    return out


def pick_rule(f: DecisionSet, qmask: int, data: BinarizedDataset) -> int | None:
    """Satisfied rule with the smallest training support; lowest index on ties."""
    best, best_key = None, None
    for i, (r, rmask) in enumerate(zip(f.rules, f.rule_masks)):
        if rmask & ~qmask:
            continue
        supp = r.support if r.support is not None else data.support(r.conditions)[0]
        if best_key is None or (supp, i) < best_key:
            best, best_key = i, (supp, i)
    return best


def random_append(selected: Iterable[int], candidates: Iterable[int], l: int,
                  rng: np.random.Generator) -> tuple:
    """Pad ``selected`` to ``min(l, |candidates|)`` ids drawn uniformly from the rest."""
    selected = sorted(set(selected))
    pool = sorted(set(candidates) - set(selected))
    need = min(l, len(selected) + len(pool)) - len(selected)
    if need > 0:
        picks = rng.choice(len(pool), size=need, replace=False)
        selected = sorted(selected + [pool[i] for i in picks])
    return tuple(selected)


def _finish(e: Explanation, data: BinarizedDataset) -> Explanation:
    e.supp, e.coverage = data.support(e.conditions)
    return e


def generate_explanation(q, f: DecisionSet, data: BinarizedDataset, config: DefenseConfig,
                         rng: np.random.Generator | None = None, *, query_id=None,
                         qmask: int | None = None) -> Explanation:
    """Pick the query's rule and add up to ``l`` of its other true conditions to
    minimise training support (greedy, exact, or exact plus random padding)."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    if config.method not in OPTIMIZED:
        return baseline_explanation(q, f, data, config.method, config.l, rng,
                                    query_id=query_id, qmask=qmask)
    qmask = query_mask(q, data) if qmask is None else qmask
    r = pick_rule(f, qmask, data)
    if r is None:
        raise ValueError("query is not predicted positive; no explanation to generate")
    base = f.rules[r].conditions
    base_cov = f.rules[r].coverage
    if base_cov is None:
        base_cov = data.support(base)[1]
    cq = [j for j in _ids(qmask) if j not in set(base)]
    inst = build_instance(base_cov, cq, data)
    if config.method == GREEDY:
        sol = greedy(inst, config.l)
        e_add = random_append(sol.selected, cq, config.l, rng)
    else:
        sol = exact(inst, config.l, config.node_limit)
        e_add = sol.selected
        if config.method == EXACT_RA:
            e_add = random_append(e_add, cq, config.l, rng)
    e = Explanation(base, e_add, config.method, query_id, r, optimal=sol.optimal)
    return _finish(e, data)


def baseline_explanation(q, f: DecisionSet, data: BinarizedDataset, method: str, l: int = 3,
                         rng: np.random.Generator | None = None, *, query_id=None,
                         qmask: int | None = None) -> Explanation | None:
    """``base_rule``: the matched rule; ``random``: the rule plus ``l`` random true
    conditions; ``none``: no explanation."""
    if method == NONE:
        return None
    qmask = query_mask(q, data) if qmask is None else qmask
    r = pick_rule(f, qmask, data)
    if r is None:
        raise ValueError("query is not predicted positive; no explanation to generate")
    base = f.rules[r].conditions
    if method == BASE_RULE:
        e_add = ()
    elif method == RANDOM:
        rng = rng if rng is not None else np.random.default_rng()
        cq = [j for j in _ids(qmask) if j not in set(base)]
        e_add = random_append((), cq, l, rng)
    else:
        raise ValueError(f"{method!r} is not a baseline")
    return _finish(Explanation(base, e_add, method, query_id, r), data)


def faithful_defense(q, f: DecisionSet, data: BinarizedDataset, E: ExplanationHistory,
                     config: DefenseConfig, rng: np.random.Generator | None = None, *,
                     query_id=None):
    """Label a query; positives get a previously released explanation if one
    covers the query, otherwise a freshly generated one (appended to ``E``)."""
    qmask = query_mask(q, data)
    if pick_rule(f, qmask, data) is None:
        return 0, None
    e = E.find(qmask)
    if e is None:
        e = generate_explanation(q, f, data, config, rng, query_id=query_id, qmask=qmask)
        E.append(e)
    return 1, e


def verify_faithful(e: Explanation | None, f: DecisionSet, q) -> bool:
    """True iff ``e`` contains a whole rule of ``f`` and the query meets all of ``e``."""
    if e is None:
        return False
    conds = set(e.conditions)
    if not any(set(r.conditions) <= conds for r in f.rules):
        return False
    return all(f.conditions[j].holds(q) for j in conds)


@dataclass
class Answer:
    label: int
    explanation: Explanation | None
    reused: bool
    elapsed: float | None


class Defender:
    """Stateful defender: the model, its training data and the released history."""

    def __init__(self, f: DecisionSet, data: BinarizedDataset, config: DefenseConfig):
        self.f = f if all(r.coverage is not None for r in f.rules) else f.bind(data)
        self.data = data
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.history = ExplanationHistory()
        self._released: dict = {}

    def answer(self, q, query_id=None) -> Answer:
        qmask = query_mask(q, self.data)
        if pick_rule(self.f, qmask, self.data) is None:
            return Answer(0, None, False, None)
        method = self.config.method
        if method == NONE:
            return Answer(1, None, False, None)
        if method in OPTIMIZED:
            e = self.history.find(qmask)
            if e is not None:
                return Answer(1, e, True, None)
        t0 = time.perf_counter()
        e = generate_explanation(q, self.f, self.data, self.config, self.rng,
                                 query_id=query_id, qmask=qmask)
        elapsed = time.perf_counter() - t0
        # baselines can regenerate an already released explanation verbatim
        key = (e.e_base, e.e_add)
        if key in self._released:
            return Answer(1, self._released[key], True, elapsed)
        self._released[key] = e
        self.history.append(e)
        return Answer(1, e, False, elapsed)
