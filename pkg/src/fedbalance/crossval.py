"""Stratified K-fold orchestration of the federated train/personalize cycle.

Per fold: partition-respecting global FedAvg training, a checkpoint of the
server and of every client, then one personalization pass per sampling
technique, each starting from the same reloaded checkpoint so techniques are
compared from identical bytes.  Metrics are recorded on a fixed round
schedule and collected into a flat table keyed (fold, sampler, round).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import load_client, load_global, save_client, save_global
from .dataset import Dataset, partition_noniid, stratified_kfold
from .federation import (
    ClientState,
    ServerState,
    TrainHyper,
    build_personalization_set,
    evaluate_clients,
    run_global_round,
    train_on,
)
from .gcae import ArchSpec, ModelState, init_model
from .resampling import SamplerSpec
from .seeding import derive_rng, derive_seed


@dataclass(frozen=True)
class MetricsRecord:
    fold: int
    sampler: str
    round: int
    test_accuracy: float
    test_auc: float
    std_test_accuracy: float
    std_test_auc: float
    train_loss: float


@dataclass
class MetricsTable:
    """Flat (fold, sampler, round) metric rows plus small query helpers."""

    records: list[MetricsRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def samplers(self) -> list[str]:
        seen: list[str] = []
        for r in self.records:
            if r.sampler not in seen:
                seen.append(r.sampler)
        return seen

    def folds(self) -> list[int]:
        return sorted({r.fold for r in self.records})

    def rounds(self) -> list[int]:
        return sorted({r.round for r in self.records})

    def select(self, sampler=None, fold=None, round=None) -> list[MetricsRecord]:
        out = self.records
        if sampler is not None:
            out = [r for r in out if r.sampler == sampler]
        if fold is not None:
            out = [r for r in out if r.fold == fold]
        if round is not None:
            out = [r for r in out if r.round == round]
        return out

    def to_dicts(self) -> list[dict]:
        return [
            {
                "fold": r.fold, "sampler": r.sampler, "round": r.round,
                "test_accuracy": r.test_accuracy, "test_auc": r.test_auc,
                "std_test_accuracy": r.std_test_accuracy, "std_test_auc": r.std_test_auc,
                "train_loss": r.train_loss,
            }
            for r in self.records
        ]


def _as_spec(s) -> SamplerSpec:
    return s if isinstance(s, SamplerSpec) else SamplerSpec(kind=s)


@dataclass
class ExperimentPlan:
    """Everything needed to reproduce one experiment, plus progress state.

    ``fold_now`` tracks the fold currently (or last) being processed so a
    crashed run can be resumed against the on-disk checkpoints.
    """

    dataset: Dataset
    num_clients: int
    samplers: Sequence[SamplerSpec | str]
    work_dir: str | Path
    num_folds: int = 5
    global_rounds: int = 200
    personalization_rounds: int = 200
    eval_gap: int = 1
    master_seed: int = 0
    concentration: float = 0.5
    arch: ArchSpec | None = None
    hyper: TrainHyper = field(default_factory=TrainHyper)
    personalize_full_model: bool = True
    fold_now: int = 0

    def __post_init__(self):
        self.samplers = tuple(_as_spec(s) for s in self.samplers)
        self.work_dir = Path(self.work_dir)
        if self.num_clients < 2:
            raise ValueError("need at least 2 clients")
        if self.num_folds < 2:
            raise ValueError("need at least 2 folds")
        if self.global_rounds < 1 or self.personalization_rounds < 1:
            raise ValueError("round counts must be >= 1")
        if self.eval_gap < 1:
            raise ValueError("eval_gap must be >= 1")
        if not self.samplers:
            raise ValueError("need at least one sampler")
        names = [s.kind for s in self.samplers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate sampler names: {names}")
        if self.arch is None:
            self.arch = ArchSpec(input_len=self.dataset.features.shape[1],
                                 num_classes=self.dataset.num_classes)
        if self.arch.input_width != self.dataset.features.shape[1]:
            raise ValueError("architecture input width does not match the dataset")

    def eval_schedule(self) -> tuple[int, ...]:
        """Personalization rounds at which metrics are recorded: the round-0
        baseline plus every ``eval_gap``-th round."""
        r = self.personalization_rounds
        return (0,) + tuple(i for i in range(1, r + 1) if i % self.eval_gap == 0)

    def fold_dir(self, fold: int) -> Path:
        return Path(self.work_dir) / f"fold_{fold}"


def _partition(plan: ExperimentPlan):
    return partition_noniid(plan.dataset, plan.num_clients,
                            concentration=plan.concentration,
                            seed=derive_seed(plan.master_seed, "partition"))


def _fold_plan(plan: ExperimentPlan):
    return stratified_kfold(plan.dataset.labels, plan.num_folds,
                            seed=derive_seed(plan.master_seed, "folds"))


def _split_clients(shards, fold_plan, fold: int):
    """Per-client (train, test) row indices for one fold."""
    test_mask = fold_plan.assignment == fold
    out = []
    for sh in shards:
        rows = sh.sample_indices
        out.append((rows[~test_mask[rows]], rows[test_mask[rows]]))
    return out

def _eval_sets(clients, features, labels):
    return [(features[c.test_indices], labels[c.test_indices]) for c in clients]


def _global_eval(server: ServerState, features, labels) -> None:
    """Score the aggregated model on every client's test split and append to
    the server's running histories."""
    probe = [
        ClientState(c.client_id, server.global_model, c.train_indices, c.test_indices)
        for c in server.clients
    ]
    train_sets = [(features[c.train_indices], labels[c.train_indices]) for c in probe]
    summary = evaluate_clients(probe, _eval_sets(probe, features, labels), train_sets)
    server.rs_test_acc.append(summary.accuracy)
    server.rs_test_auc.append(summary.auc)


def run_fold(plan: ExperimentPlan, fold: int) -> list[MetricsRecord]:
    """Run one fold end to end and return its metric rows.

    Writes ``global.fedh`` plus one ``client_<id>.fedh`` per client into the
    fold directory after the global phase; every sampler trial starts by
    reloading those files, so trials cannot contaminate each other.
    """
    if not 0 <= fold < plan.num_folds:
        raise ValueError(f"fold {fold} outside 0..{plan.num_folds - 1}")
    plan.fold_now = fold
    features, labels = plan.dataset.features, plan.dataset.labels
    shards = _partition(plan)
    splits = _split_clients(shards, _fold_plan(plan), fold)

    seed0 = plan.master_seed
    init_rng = derive_rng(seed0, "init", fold)
    global_model = init_model(plan.arch, init_rng)
    clients = [
        ClientState(client_id=i, model=global_model.copy(), train_indices=tr, test_indices=te)
        for i, (tr, te) in enumerate(splits)
    ]
    server = ServerState(global_model=global_model, clients=clients)

    _global_eval(server, features, labels)
    for rnd in range(1, plan.global_rounds + 1):
        try:
            run_global_round(server, features, labels, plan.hyper,
                             lambda cid, _r=rnd: derive_rng(seed0, "global", fold, _r, cid))
        except Exception as exc:
            raise RuntimeError(f"fold {fold}, global round {rnd}: {exc}") from exc
        if rnd % plan.eval_gap == 0:
            _global_eval(server, features, labels)

    fold_dir = plan.fold_dir(fold)
    fold_dir.mkdir(parents=True, exist_ok=True)
    save_global(fold_dir / "global.fedh", server)
    for c in server.clients:
        save_client(fold_dir / f"client_{c.client_id}.fedh", c)

    records: list[MetricsRecord] = []
    for spec in plan.samplers:
        reloaded = load_global(fold_dir / "global.fedh")
        reloaded.clients = [load_client(fold_dir / f"client_{c.client_id}.fedh")
                            for c in server.clients]
        try:
            records.extend(_run_personalization(plan, fold, spec, reloaded, features, labels))
        except Exception as exc:
            raise RuntimeError(f"fold {fold}, sampler {spec.kind!r}: {exc}") from exc
    return records


def _run_personalization(plan: ExperimentPlan, fold: int, spec: SamplerSpec,
                         server: ServerState, features, labels) -> list[MetricsRecord]:
    """Personalize every client with one sampler, recording scheduled rounds."""
    seed0 = plan.master_seed
    base = server.global_model
    train_sets, trainable = [], []
    for c in server.clients:
        c.model = base.copy()
        tr = c.train_indices
        if len(tr) == 0:
            warnings.warn(f"client {c.client_id} has no fold-train rows; it keeps the "
                          "global model", stacklevel=2)
            train_sets.append((features[:0], labels[:0]))
            continue
        pers = build_personalization_set(
            c.model, features[tr], labels[tr], spec,
            derive_rng(seed0, "resample", fold, spec.kind, c.client_id))
        train_sets.append((pers.features, pers.labels))
        trainable.append((c, pers))

    test_sets = _eval_sets(server.clients, features, labels)
    schedule = set(plan.eval_schedule())
    records: list[MetricsRecord] = []

    def record(rnd: int) -> None:
        s = evaluate_clients(server.clients, test_sets, train_sets)
        records.append(MetricsRecord(fold=fold, sampler=spec.kind, round=rnd,
                                     test_accuracy=s.accuracy, test_auc=s.auc,
                                     std_test_accuracy=s.std_accuracy,
                                     std_test_auc=s.std_auc, train_loss=s.train_loss))

    record(0)
    for rnd in range(1, plan.personalization_rounds + 1):
        for c, pers in trainable:
            train_on(c.model, pers.features, pers.labels, plan.hyper,
                     derive_rng(seed0, "ptrain", fold, spec.kind, rnd, c.client_id),
                     head_only=not plan.personalize_full_model)
        if rnd in schedule:
            record(rnd)
    return records


def run_experiment(plan: ExperimentPlan) -> MetricsTable:
    """All folds, grid-checked: every (fold, sampler, scheduled round) cell
    must be present exactly once or the run is rejected as inconsistent."""
    table = MetricsTable()
    for fold in range(plan.num_folds):
        table.records.extend(run_fold(plan, fold))
    _check_grid(plan, table)
    return table


def _check_grid(plan: ExperimentPlan, table: MetricsTable) -> None:
    want = {(f, s.kind, r)
            for f in range(plan.num_folds)
            for s in plan.samplers
            for r in plan.eval_schedule()}
    got = [(r.fold, r.sampler, r.round) for r in table.records]
    if len(got) != len(set(got)):
        raise RuntimeError("duplicate metric rows for the same (fold, sampler, round)")
    missing = want - set(got)
    extra = set(got) - want
    if missing or extra:
        raise RuntimeError(f"metrics grid is ragged: missing={sorted(missing)[:5]} "
                           f"extra={sorted(extra)[:5]}")
