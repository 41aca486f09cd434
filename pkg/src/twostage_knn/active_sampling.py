"""The two-round sampling procedure with label-budget accounting.

Round one labels ``n`` i.i.d. draws and builds the region handle.  If the
augmented region is seen to have positive mass, round two rejection-samples
``floor((1 - pi) m)`` labeled points from it; rejected proposals cost no
label.  Finally ``floor(pi m)`` more labeled points are drawn from P.  If the
region looks empty the rejection round is skipped and its budget is left
unspent.

Each source of randomness draws from its own stream, derived from the run
seed with a fixed spawn key (see :class:`Streams`), so changing one part of a
run leaves the other streams untouched.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .knn_core import ClassifierBundle, ModifiedKNNClassifier
from .metric_space import Provenance, SamplePool
from .region_estimation import (
    ConstantsError,
    HyperParams,
    RegionHandle,
    c_delta,
    derive_constants,
    search_region,
)

log = logging.getLogger(__name__)

STREAM_KEYS = {
    "round1": 0,
    "tiebreak": 1,
    "witness": 2,
    "proposals": 3,
    "round2_p": 4,
    "labels": 5,
    "unlabeled": 6,
    "evaluation": 7,
}


class Streams:
    """Named, independent generators spawned from one seed.

    Stream ``name`` is ``default_rng(SeedSequence(entropy, spawn_key=key +
    (STREAM_KEYS[name],)))``, where ``entropy`` and ``key`` come from the seed
    (an int, or a ``SeedSequence`` such as a per-trial child).
    """

    def __init__(self, seed):
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self.entropy = ss.entropy
        self.key = tuple(ss.spawn_key)
        self._cache: dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._cache:
            ss = np.random.SeedSequence(self.entropy, spawn_key=self.key + (STREAM_KEYS[name],))
            self._cache[name] = np.random.default_rng(ss)
        return self._cache[name]


class ProposalCapExceeded(RuntimeError):
    pass


@dataclass
class BudgetLedger:
    labels_cap: int
    labels_used: int = 0
    unlabeled_used: int = 0
    rejected_proposals: int = 0

    def charge(self, count: int) -> None:
        if self.labels_used + count > self.labels_cap:
            raise RuntimeError(
                f"label budget exceeded: {self.labels_used} + {count} > {self.labels_cap}")
        self.labels_used += count


@dataclass
class SamplingOutcome:
    dataset: SamplePool
    region: RegionHandle | None
    ledger: BudgetLedger
    positivity: bool
    params: HyperParams
    metric: object = None
    warnings: list[str] = field(default_factory=list)

    def pool(self, *provenances: Provenance) -> SamplePool:
        mask = np.isin(self.dataset.provenance, [int(p) for p in provenances])
        return self.dataset.subset(mask)

    def counts(self) -> dict[Provenance, int]:
        return {p: int(np.count_nonzero(self.dataset.provenance == p)) for p in Provenance}

    def bundle(self) -> ClassifierBundle:
        region = self.region if self.positivity else None
        if region is None:
            return ClassifierBundle(self.dataset, SamplePool.empty(self.dataset.dim), None,
                                    self.params.k)
        return ClassifierBundle(
            self.pool(Provenance.ROUND1, Provenance.ROUND2_FROM_P),
            self.pool(Provenance.ROUND2_REJECTION),
            region,
            self.params.k,
        )

    def classifier(self, method: str = "auto") -> ModifiedKNNClassifier:
        return ModifiedKNNClassifier(self.bundle(), self.metric, method)


def draw_labeled(dist, count: int, streams: Streams, stream: str, provenance: Provenance,
                 first_id: int = 0) -> SamplePool:
    X = dist.sample_instances(count, streams[stream])
    return label_points(dist, X, streams, provenance, first_id)


def label_points(dist, X: np.ndarray, streams: Streams, provenance: Provenance,
                 first_id: int = 0) -> SamplePool:
    tb = streams["tiebreak"].random(len(X))
    y = dist.sample_labels(X, streams["labels"])
    return SamplePool(X, y, tb, np.full(len(X), int(provenance)),
                      np.arange(first_id, first_id + len(X)))


def run_round1(dist, params: HyperParams, seed, witness_size: int = 10_000,
               streams: Streams | None = None) -> tuple[SamplePool, RegionHandle]:
    streams = streams or Streams(seed)
    consts = derive_constants(params)
    round1 = draw_labeled(dist, params.n, streams, "round1", Provenance.ROUND1)
    handle = RegionHandle.build(round1, params, dist, streams["witness"],
                                witness_size=witness_size, consts=consts)
    return round1, handle


def run_rejection_round(dist, region, budget: int, seed=None, streams: Streams | None = None,
                        proposal_cap: int = 10_000_000, batch: int = 4096,
                        first_id: int = 0, ledger: BudgetLedger | None = None) -> SamplePool:
    """Rejection-sample ``budget`` labeled points from ``region``.

    ``region`` is anything with a vectorized ``contains(X)``.  Proposals come
    from the marginal one batch at a time; accepted points are taken in
    proposal order, so the result matches a one-at-a-time loop.
    """
    streams = streams or Streams(seed)
    rng = streams["proposals"]
    accepted: list[np.ndarray] = []
    have = proposed = rejected = 0
    while have < budget:
        if proposed >= proposal_cap:
            raise ProposalCapExceeded(
                f"{proposed} proposals yielded only {have}/{budget} acceptances; "
                "the acceptance region has (near) zero mass")
        X = dist.sample_instances(min(batch, proposal_cap - proposed), rng)
        inside = region.contains(X)
        hits = np.flatnonzero(inside)
        need = budget - have
        if len(hits) >= need:
            last = int(hits[need - 1])
            accepted.append(X[hits[:need]])
            proposed += last + 1
            rejected += last + 1 - need
            have = budget
        else:
            accepted.append(X[hits])
            proposed += len(X)
            rejected += len(X) - len(hits)
            have += int(len(hits))
    if ledger is not None:
        ledger.rejected_proposals += rejected
        ledger.unlabeled_used += proposed
        ledger.charge(budget)
    X = np.concatenate(accepted) if accepted else np.empty((0, dist.dim))
    return label_points(dist, X, streams, Provenance.ROUND2_REJECTION, first_id)


def budget_split(m: int, pi: float) -> tuple[int, int]:
    """(rejection budget, P-round budget) = (floor((1-pi) m), floor(pi m))."""
    return math.floor((1.0 - pi) * m), math.floor(pi * m)


def run_algorithm1(dist, params: HyperParams, seed, witness_size: int = 10_000,
                   unlabeled_budget: int = 10_000, proposal_cap: int = 10_000_000
                   ) -> SamplingOutcome:
    streams = Streams(seed)
    notes = []
    try:
        lhs = params.m * (1 - params.pi) * c_delta(params.k, params.delta)
        rhs = params.n * c_delta(params.k, params.delta / math.sqrt(2))
        if lhs < rhs:
            notes.append(f"m(1-pi)c_delta={lhs:.6g} < n c_(delta/sqrt2)={rhs:.6g}")
    except ConstantsError as exc:
        notes.append(str(exc))
    for note in notes:
        warnings.warn(f"sample-size precondition not met: {note}", stacklevel=2)

    ledger = BudgetLedger(labels_cap=params.n + params.m)
    round1, handle = run_round1(dist, params, None, witness_size, streams)
    ledger.charge(len(round1))

    positive, used = search_region(handle, unlabeled_budget, dist, streams["unlabeled"])
    ledger.unlabeled_used += used
    rej_budget, p_budget = budget_split(params.m, params.pi)
    pools = [round1]
    if positive:
        pools.append(run_rejection_round(dist, handle, rej_budget, streams=streams,
                                         proposal_cap=proposal_cap, first_id=params.n,
                                         ledger=ledger))
    else:
        log.info("augmented region looks empty; skipping the rejection round")
    first = params.n + (rej_budget if positive else 0)
    p_pool = draw_labeled(dist, p_budget, streams, "round2_p", Provenance.ROUND2_FROM_P, first)
    ledger.charge(len(p_pool))
    pools.append(p_pool)
    return SamplingOutcome(SamplePool.concat(pools), handle, ledger, positive, params,
                           metric=dist.metric, warnings=notes)
