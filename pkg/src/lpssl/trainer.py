"""Joint training of the base network and the flow prior.

Per mixed batch the flow first takes one Adam step on relaxed labelled
targets, then the base network takes one Adam step on the supervised loss
plus the lambda-weighted unlabelled term selected by ``TrainConfig.prior``.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import losses
from .base_model import BaseModel, MlpConfig, prediction_accuracy
from .flow import FlowModel
from .nn.optim import Adam
from .nn.tensor import no_grad
from .relaxation import RelaxConfig, relax

PRIORS = ("none", "minent", "mutexc", "semantic", "lp")
LAMBDA_GRID = (0.001, 0.003, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0)
PROFILES = {"desk": {"epochs": 100, "batch_size": 32},
            "paper": {"epochs": 200, "batch_size": 256}}
METRIC_COLUMNS = ("epoch", "loss_sup", "loss_unsup", "flow_nll",
                  "acc_train", "acc_val", "acc_test", "seconds")


class NumericalError(FloatingPointError):
    def __init__(self, term: str, value: float):
        self.term = term
        super().__init__(f"non-finite {term} loss ({value})")


@dataclass
class TrainConfig:
    task: str = "classification"
    prior: str = "lp"
    lam: float = 0.01
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    relaxation: RelaxConfig | None = None  # None: dirichlet or beta by task
    hidden: list = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    base_lr: float = 1e-3
    base_weight_decay: float = 5e-4
    flow_lr: float = 1e-3
    flow_weight_decay: float = 1e-5
    flow_steps: int = 3
    flow_hidden: int = 16
    bins: int = 8
    tail_bound: float = 3.0
    flow_init_scale: float = 1e-2

    def __post_init__(self):
        default_kind = "dirichlet" if self.task == "classification" else "beta"
        if self.relaxation is None:
            self.relaxation = RelaxConfig(kind=default_kind)
        elif isinstance(self.relaxation, dict):
            self.relaxation = RelaxConfig(**{"kind": default_kind, **self.relaxation})
        if self.prior not in PRIORS:
            raise ValueError(f"unknown prior {self.prior!r}; expected one of {PRIORS}")
        if self.task not in ("classification", "attributes"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch_size must be a positive even number")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    @classmethod
    def from_profile(cls, name: str, **overrides) -> "TrainConfig":
        return cls(**{**PROFILES[name], **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass
class MixedBatch:
    x_l: np.ndarray
    y_l: np.ndarray
    x_u: np.ndarray

    def __post_init__(self):
        if len(self.x_l) != len(self.x_u) or len(self.x_l) != len(self.y_l):
            raise ValueError("mixed batch needs equal labelled and unlabelled counts")


@dataclass
class MetricsRecord:
    epoch: int
    loss_sup: float
    loss_unsup: float
    flow_nll: float
    acc_train: float
    acc_val: float
    acc_test: float
    seconds: float


@dataclass
class TrainResult:
    history: list
    base: BaseModel
    flow: FlowModel

    @property
    def final(self) -> MetricsRecord:
        return self.history[-1]


@dataclass
class Trainer:
    """Owns the two networks, their optimizers and the run's RNG streams."""

    cfg: TrainConfig
    base: BaseModel
    flow: FlowModel
    base_opt: Adam
    flow_opt: Adam
    order_rng: np.random.Generator
    relax_rng: np.random.Generator
    n_outputs: int
    valid_set: np.ndarray | None = None

    @classmethod
    def create(cls, cfg: TrainConfig, input_dim: int, n_outputs: int,
               valid_set=None) -> "Trainer":
        base_seed, flow_seed, order_seed, relax_seed = np.random.SeedSequence(cfg.seed).spawn(4)
        head = "softmax" if cfg.task == "classification" else "sigmoid"
        base = BaseModel(MlpConfig(input_dim, n_outputs, list(cfg.hidden), cfg.activation, head),
                         np.random.default_rng(base_seed))
        flow = FlowModel(n_outputs, cfg.flow_steps, cfg.flow_hidden, cfg.bins, cfg.tail_bound,
                         rng=np.random.default_rng(flow_seed), init_scale=cfg.flow_init_scale)
        if valid_set is None and cfg.task == "classification":
            valid_set = np.eye(n_outputs)
        if cfg.prior == "semantic" and valid_set is None:
            raise ValueError("semantic prior needs a valid label set")
        return cls(cfg, base, flow,
                   Adam(base.parameters(), cfg.base_lr, weight_decay=cfg.base_weight_decay),
                   Adam(flow.parameters(), cfg.flow_lr, weight_decay=cfg.flow_weight_decay),
                   np.random.default_rng(order_seed), np.random.default_rng(relax_seed),
                   n_outputs, None if valid_set is None else np.asarray(valid_set, dtype=float))

    @property
    def head(self) -> str:
        return self.base.config.head

    def unlabelled_loss(self, theta_u):
        prior = self.cfg.prior
        if prior == "none":
            return None
        if prior == "minent":
            return losses.min_ent(theta_u, self.head)
        if prior == "mutexc":
            return losses.mut_exc(theta_u)
        if prior == "semantic":
            return losses.semantic(theta_u, self.valid_set)
        return losses.lp_unlabelled(self.flow, theta_u)

    def supervised_loss(self, theta_l, y_l):
        if self.cfg.task == "classification":
            return losses.cross_entropy(theta_l, y_l)
        return losses.binary_cross_entropy(theta_l, y_l)

    def flow_step(self, y_l) -> float:
        targets = relax(y_l, self.cfg.task, self.n_outputs, self.cfg.relaxation, self.relax_rng)
        nll = losses.flow_nll(self.flow, targets)
        _check("flow_nll", nll.item())
        nll.backward()
        self.flow_opt.step()
        return nll.item()

    def base_step(self, batch: MixedBatch) -> tuple[float, float]:
        theta_l = self.base.predict(batch.x_l)
        theta_u = self.base.predict(batch.x_u)
        sup = self.supervised_loss(theta_l, batch.y_l)
        unsup = self.unlabelled_loss(theta_u)
        _check("supervised", sup.item())
        if unsup is not None:
            _check(unsup.tag, unsup.item())
        losses.total_ssl(sup, unsup, self.cfg.lam).backward()
        self.base_opt.step()
        return sup.item(), (unsup.item() if unsup is not None else 0.0)

    def train_step(self, batch: MixedBatch) -> dict:
        """Flow step on relaxed labels, then base step; returns the per-term losses."""
        nll = self.flow_step(batch.y_l)
        sup, unsup = self.base_step(batch)
        return {"supervised": sup, "unsupervised": unsup, "flow_nll": nll}

    def batches(self, x_l, y_l, x_u, stream: dict):
        """One epoch of mixed batches; ``stream`` carries the unlabelled cursor across epochs."""
        half = self.cfg.batch_size // 2
        order = self.order_rng.permutation(len(x_l))
        for start in range(0, len(order), half):
            idx = order[start:start + half]
            take = []
            while len(take) < len(idx):
                if stream["pos"] >= len(stream["perm"]):
                    stream["perm"] = self.order_rng.permutation(len(x_u))
                    stream["pos"] = 0
                need = len(idx) - len(take)
                chunk = stream["perm"][stream["pos"]:stream["pos"] + need]
                stream["pos"] += len(chunk)
                take.extend(chunk.tolist())
            yield MixedBatch(x_l[idx], y_l[idx], x_u[np.array(take)])

    def evaluate(self, x, y) -> float:
        if x is None or len(x) == 0:
            return float("nan")
        with no_grad():
            theta = self.base.predict(x).data
        return prediction_accuracy(theta, y, self.cfg.task)

    def fit(self, labelled, unlabelled_x, val, test=None, on_epoch=None) -> TrainResult:
        x_l, y_l = (np.asarray(a) for a in labelled)
        x_u = np.asarray(unlabelled_x)
        if len(x_l) == 0 or len(x_u) == 0:
            raise ValueError("labelled and unlabelled sets must be non-empty")
        if len(x_u) < len(x_l):
            raise ValueError("unlabelled set must be at least as large as the labelled set")
        stream = {"perm": np.empty(0, dtype=int), "pos": 0}
        history = []
        t0 = time.perf_counter()
        for epoch in range(1, self.cfg.epochs + 1):
            sums = np.zeros(3)
            n_steps = 0
            for batch in self.batches(x_l, y_l, x_u, stream):
                step = self.train_step(batch)
                sums += (step["supervised"], step["unsupervised"], step["flow_nll"])
                n_steps += 1
            sums /= n_steps
            rec = MetricsRecord(epoch, float(sums[0]), float(sums[1]), float(sums[2]),
                                self.evaluate(x_l, y_l), self.evaluate(*val),
                                self.evaluate(*test) if test is not None else float("nan"),
                                time.perf_counter() - t0)
            history.append(rec)
            if on_epoch is not None:
                on_epoch(rec)
        return TrainResult(history, self.base, self.flow)


def fit_flow(flow: FlowModel, data, epochs: int, batch_size: int, rng: np.random.Generator,
             lr: float = 1e-3, weight_decay: float = 1e-5, on_epoch=None) -> list[float]:
    """Maximum-likelihood fit of ``flow`` alone on fixed samples; returns per-epoch mean NLL."""
    data = np.asarray(data, dtype=np.float64)
    if epochs < 1 or batch_size < 1:
        raise ValueError("fit_flow needs epochs >= 1 and batch_size >= 1")
    opt = Adam(flow.parameters(), lr, weight_decay=weight_decay)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(data), batch_size):
            batch = data[order[start:start + batch_size]]
            nll = losses.flow_nll(flow, batch)
            _check("flow_nll", nll.item())
            nll.backward()
            opt.step()
            total += nll.item() * len(batch)
        history.append(total / len(data))
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return history


def _check(term: str, value: float) -> None:
    if not math.isfinite(value):
        raise NumericalError(term, value)


def train(cfg: TrainConfig, labelled, unlabelled_x, val, test=None, valid_set=None,
          on_epoch=None) -> TrainResult:
    """Build fresh networks from ``cfg.seed`` and run ``cfg.epochs`` epochs."""
    x_l, y_l = labelled
    n_out = int(np.max(y_l)) + 1 if cfg.task == "classification" else np.asarray(y_l).shape[1]
    return train_sized(cfg, labelled, unlabelled_x, val, test, valid_set, on_epoch,
                       input_dim=np.asarray(x_l).shape[1], n_outputs=n_out)


def train_sized(cfg: TrainConfig, labelled, unlabelled_x, val, test=None, valid_set=None,
                on_epoch=None, *, input_dim: int, n_outputs: int) -> TrainResult:
    trainer = Trainer.create(cfg, input_dim, n_outputs, valid_set)
    return trainer.fit(labelled, unlabelled_x, val, test, on_epoch)


def train_bundle(cfg: TrainConfig, bundle, on_epoch=None) -> TrainResult:
    """Train on a :class:`~lpssl.datasets.DatasetBundle`; unlabelled labels stay hidden."""
    return train_sized(cfg, bundle.split("labelled"), bundle.x["unlabelled"],
                       bundle.split("val"), bundle.split("test"), bundle.codebook, on_epoch,
                       input_dim=bundle.input_dim, n_outputs=bundle.n_outputs)


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        raise ValueError("need at least two values for a standard error")
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v)))


def sweep(cfg: TrainConfig, bundle, priors=None, n_seeds: int = 5, lambdas: dict | None = None,
          runner=None, mapper=map) -> list[dict]:
    """Train every prior on seeds 0..n_seeds-1; one summary row per prior.

    ``lambdas`` maps prior -> lambda and falls back to ``cfg.lam``.
    ``runner(cfg) -> TrainResult`` can replace the in-process training call,
    and ``mapper`` (e.g. ``Executor.map``) decides how the runs are scheduled.
    Runs are independent, so the rows do not depend on the schedule.
    """
    if n_seeds < 2:
        raise ValueError("sweep needs n_seeds >= 2")
    priors = list(priors or [cfg.prior])
    lambdas = lambdas or {}
    runner = runner or partial(_run_bundle, bundle=bundle)
    plan = [(prior, float(lambdas.get(prior, cfg.lam))) for prior in priors]
    configs = [TrainConfig(**{**asdict(cfg), "prior": prior, "lam": lam, "seed": seed})
               for prior, lam in plan for seed in range(n_seeds)]
    accs = [r.final.acc_test for r in mapper(runner, configs)]
    rows = []
    for i, (prior, lam) in enumerate(plan):
        m, se = mean_stderr(accs[i * n_seeds:(i + 1) * n_seeds])
        rows.append({"prior": prior, "lambda": lam, "mean_acc": m, "stderr_acc": se,
                     "n_seeds": n_seeds})
    return rows


def _run_bundle(cfg: TrainConfig, bundle) -> TrainResult:
    return train_bundle(cfg, bundle)


def write_metrics_csv(path, history: list[MetricsRecord], record_time: bool = False) -> None:
    """Per-epoch metrics; the ``seconds`` column is 0 unless ``record_time``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in history:
            w.writerow([r.epoch, repr(r.loss_sup), repr(r.loss_unsup), repr(r.flow_nll),
                        repr(r.acc_train), repr(r.acc_val), repr(r.acc_test),
                        repr(r.seconds if record_time else 0.0)])


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


SUMMARY_COLUMNS = ("prior", "lambda", "mean_acc", "stderr_acc", "n_seeds")


def write_summary_csv(path, rows: list[dict]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_COLUMNS)
            for r in rows:
                w.writerow([r["prior"], repr(float(r["lambda"])), repr(r["mean_acc"]),
                            repr(r["stderr_acc"]), r["n_seeds"]])
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    tmp.replace(path)
