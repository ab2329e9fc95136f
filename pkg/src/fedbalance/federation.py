"""Cloud-edge simulation: FedAvg rounds, local SGD, latent-space personalization.

A global round copies the server model to every selected client, trains it
locally on the client's fold-train rows, and replaces the server model with
the sample-count-weighted average of the returned models.  Personalization
reuses the same local-training machinery but never aggregates: each client
drifts on its own class-balanced data.

Clients carry simulated-deployment metadata (slow flags, accumulated time
costs).  The costs are incremented by configurable amounts each round and
are checkpointed, but they never influence training results.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .gcae import ModelState, decode, encode, evaluate_loss, forward, train_step
from .metrics import accuracy, roc_auc_macro, sample_std
from .resampling import ResampledSet, SamplerSpec, resample


@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = 0.01
    batch_size: int = 32
    local_epochs: int = 1
    train_cost: float = 0.0  # simulated time added per participating round
    send_cost: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.local_epochs < 1:
            raise ValueError("batch_size and local_epochs must be >= 1")
        if self.train_cost < 0 or self.send_cost < 0:
            raise ValueError("simulated costs must be non-negative")


@dataclass
class ClientState:
    """One simulated edge device: its model, its rows, and inert metadata."""

    client_id: int
    model: ModelState
    train_indices: np.ndarray
    test_indices: np.ndarray
    train_slow: bool = False
    send_slow: bool = False
    train_time_cost: float = 0.0
    send_time_cost: float = 0.0

    def __post_init__(self):
        self.train_indices = np.asarray(self.train_indices, dtype=np.int64)
        self.test_indices = np.asarray(self.test_indices, dtype=np.int64)
        if np.intersect1d(self.train_indices, self.test_indices).size:
            raise ValueError("train and test indices overlap")

    @property
    def num_train(self) -> int:
        return len(self.train_indices)


@dataclass
class ServerState:
    global_model: ModelState
    clients: list[ClientState]
    selected_clients: list[int] | None = None  # None -> all clients
    train_slow_clients: list[bool] | None = None
    send_slow_clients: list[bool] | None = None
    rs_test_acc: list[float] = field(default_factory=list)
    rs_test_auc: list[float] = field(default_factory=list)
    rs_train_loss: list[float] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.clients)
        if self.selected_clients is None:
            self.selected_clients = list(range(n))
        if self.train_slow_clients is None:
            self.train_slow_clients = [c.train_slow for c in self.clients]
        if self.send_slow_clients is None:
            self.send_slow_clients = [c.send_slow for c in self.clients]
        if any(not 0 <= i < n for i in self.selected_clients):
            raise ValueError("selected_clients must index into clients")
        if len(self.train_slow_clients) != n or len(self.send_slow_clients) != n:
            raise ValueError("slow-flag lists must have one entry per client")
        for c in self.clients:
            if c.model.arch != self.global_model.arch:
                raise ValueError(f"client {c.client_id} arch differs from the server's")
        if len(self.rs_test_acc) != len(self.rs_test_auc):
            raise ValueError("test accuracy/AUC histories must stay aligned")


def fedavg(models: list[ModelState], sample_counts) -> ModelState:
    """Sample-count-weighted parameter mean.

    Accumulates in float64 in fixed list order and casts back to the model
    dtype; counts are normalized first, so a single model (or identical
    models) averages to itself exactly.
    """
    if not models:
        raise ValueError("need at least one model")
    w = np.asarray(sample_counts, dtype=np.float64)
    if w.shape != (len(models),):
        raise ValueError("one sample count per model required")
    if np.any(w <= 0):
        raise ValueError("sample counts must be positive")
    names = list(models[0].params)
    for m in models[1:]:
        if m.arch != models[0].arch or list(m.params) != names:
            raise ValueError("models have mismatched architectures")
    coef = w / w.sum()
    out: dict[str, np.ndarray] = {}
    for name in names:
        acc = np.zeros(models[0].params[name].shape, dtype=np.float64)
        for c, m in zip(coef, models):
            acc += c * m.params[name].astype(np.float64)
        out[name] = acc.astype(models[0].dtype)
    return ModelState(models[0].arch, out)


def train_on(model: ModelState, features, labels, hyper: TrainHyper, rng,
             head_only: bool = False) -> float:
    """Minibatch SGD over seeded shuffled epochs; returns the per-sample
    mean of the pre-update batch losses.  The trailing partial batch is kept."""
    n = len(labels)
    if n == 0:
        raise ValueError("cannot train on an empty set")
    total, seen = 0.0, 0
    for _ in range(hyper.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            batch_loss = train_step(model, features[idx], labels[idx],
                                    hyper.learning_rate, head_only=head_only)
            total += batch_loss * len(idx)
            seen += len(idx)
    return total / seen


def run_global_round(server: ServerState, features, labels, hyper: TrainHyper,
                     rng_factory) -> float:
    """One FedAvg round over the selected clients.

    ``rng_factory(client_id)`` supplies each client's batch-shuffling stream.
    Clients with empty fold-train data are skipped with a warning; if every
    selected client is empty the round fails.  Returns the sample-weighted
    mean client train loss, which is also appended to rs_train_loss.
    """
    if not server.selected_clients:
        raise ValueError("no clients selected")
    models, weights, losses = [], [], []
    for idx in server.selected_clients:
        client = server.clients[idx]
        tr = client.train_indices
        if len(tr) == 0:
            warnings.warn(f"client {client.client_id} has no fold-train data; skipping",
                          stacklevel=2)
            continue
        local = server.global_model.copy()
        client_loss = train_on(local, features[tr], labels[tr], hyper,
                               rng_factory(client.client_id))
        client.model = local
        client.train_time_cost += hyper.train_cost * (2.0 if client.train_slow else 1.0)
        client.send_time_cost += hyper.send_cost * (2.0 if client.send_slow else 1.0)
        models.append(local)
        weights.append(len(tr))
        losses.append(client_loss)
    if not models:
        raise ValueError("every selected client was empty; nothing to aggregate")
    server.global_model = fedavg(models, weights)
    mean_loss = float(np.average(losses, weights=weights))
    server.rs_train_loss.append(mean_loss)
    return mean_loss


@dataclass
class PersonalSet:
    """Client training material after latent-space class balancing.

    Surviving original rows keep their raw features; synthetic latent rows
    are decoded back to feature space by the same model that encoded them.
    ``resampled`` is None when resampling was skipped (single-class client).
    """

    features: np.ndarray
    labels: np.ndarray
    resampled: ResampledSet | None


def build_personalization_set(model: ModelState, features, labels,
                              spec: SamplerSpec, rng) -> PersonalSet:
    """encode -> resample in latent space -> decode synthetics -> feature set.

    A single-class client cannot be resampled; it keeps its raw rows and a
    warning is recorded rather than aborting the experiment.
    """
    features = np.asarray(features)
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        warnings.warn("single-class training split; resampling skipped", stacklevel=2)
        return PersonalSet(features.astype(model.dtype), labels.copy(), None)
    latent = encode(model, features)
    rs = resample(latent, labels, spec, rng)
    out = np.empty((len(rs.labels), features.shape[1]), dtype=model.dtype)
    originals = ~rs.is_synthetic
    out[originals] = features[rs.source_indices[originals]].astype(model.dtype)
    if rs.is_synthetic.any():
        out[rs.is_synthetic] = decode(model, rs.features[rs.is_synthetic])
    return PersonalSet(features=out, labels=rs.labels.copy(), resampled=rs)


def personalize_client(client: ClientState, global_model: ModelState, spec: SamplerSpec,
                       features, labels, hyper: TrainHyper, resample_rng, round_rng_factory,
                       rounds: int, full_model: bool = True) -> ClientState:
    """Full per-client personalization: init from the global model, balance
    the client's fold-train rows in latent space, then train ``rounds``
    local rounds with no aggregation.  The global model is never mutated.
    ``round_rng_factory(round_no)`` supplies each round's shuffling stream."""
    model = global_model.copy()
    tr = client.train_indices
    features = np.asarray(features)
    labels = np.asarray(labels, dtype=np.int64)
    pers = build_personalization_set(model, features[tr], labels[tr], spec, resample_rng)
    for r in range(1, rounds + 1):
        train_on(model, pers.features, pers.labels, hyper, round_rng_factory(r),
                 head_only=not full_model)
    client.model = model
    return client


@dataclass(frozen=True)
class EvalSummary:
    accuracy: float
    auc: float
    std_accuracy: float
    std_auc: float
    train_loss: float


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = np.asarray(scores, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def evaluate_clients(clients: list[ClientState], test_sets, train_sets) -> EvalSummary:
    """Test metrics over clients, each scored by its own model.

    ``test_sets`` / ``train_sets`` are (features, labels) pairs aligned with
    ``clients``.  Accuracy/AUC are sample-count-weighted means; the std
    columns are unweighted sample standard deviations across clients (0 for
    one client).  A client with an empty test split is excluded with a
    warning; a single-class test split is excluded from AUC only.
    train_loss is the sample-weighted mean forward loss on the clients'
    current training material.
    """
    accs, acc_w, aucs, auc_w, losses, loss_w = [], [], [], [], [], []
    for client, (x_test, y_test), (x_train, y_train) in zip(clients, test_sets, train_sets,
                                                            strict=True):
        y_test = np.asarray(y_test, dtype=np.int64)
        if len(y_test) == 0:
            warnings.warn(f"client {client.client_id} has an empty test split; excluded",
                          stacklevel=2)
            continue
        _, scores, _ = forward(client.model, x_test)
        accs.append(accuracy(np.argmax(scores, axis=1), y_test))
        acc_w.append(len(y_test))
        if len(np.unique(y_test)) < 2:
            warnings.warn(
                f"client {client.client_id} test split is single-class; excluded from AUC",
                stacklevel=2,
            )
        else:
            aucs.append(roc_auc_macro(_softmax(scores), y_test))
            auc_w.append(len(y_test))
        if len(np.asarray(y_train)):
            losses.append(evaluate_loss(client.model, x_train, y_train)[0])
            loss_w.append(len(y_train))
    if not accs:
        raise ValueError("no client had test data")
    if not aucs:
        raise ValueError("no client test split had two classes; AUC undefined")
    if not losses:
        raise ValueError("no client had training material to score")
    return EvalSummary(
        accuracy=float(np.average(accs, weights=acc_w)),
        auc=float(np.average(aucs, weights=auc_w)),
        std_accuracy=sample_std(accs),
        std_auc=sample_std(aucs),
        train_loss=float(np.average(losses, weights=loss_w)),
    )
