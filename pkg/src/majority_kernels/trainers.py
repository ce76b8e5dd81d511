"""Training loops: baseline, Majority Kernels, ensemble, distillation and the
two adversarial-probability variants.

Every run draws its randomness from ``RngStream(config.seed)`` through fixed
child labels (``init``, ``batches``, ``probs``), so an (algorithm, config,
seed) triple replays bit for bit. Evaluation always uses the base-size
network: collapsed kernels for MK-style runs.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import adversarial, mk_layer
from .data import BatchIterator, DataSplits, Dataset
from .model import (
    ModelParams,
    NetworkSpec,
    backprop,
    cross_entropy_grad,
    forward,
    init_params,
    log_softmax,
    loss_and_grad,
    softmax,
)
from .numeric import ContractError, RngStream
from .optimizers import make_optimizer

ALGORITHMS = ("baseline", "mk", "ensemble", "distilled", "adv_only", "adv_mk", "subset")
OPTIMIZERS = ("sgd", "adam")


class ConfigError(ContractError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class DistillConfig:
    alpha: float = 0.5
    temperature: float = 2.0
    teacher_learning_rate: float | None = None  # None: same rate as the student


@dataclass
class AdvConfig:
    epsilon_p: float = 0.1


@dataclass
class SubsetConfig:
    t: int = 10
    alpha: float = 1.0
    beta: float = 1.0
    selection_log: str | None = None  # optional CSV of selected indices per step


@dataclass
class TrainConfig:
    spec: NetworkSpec
    algorithm: str = "baseline"
    optimizer: str = "adam"
    learning_rate: float = 0.001
    batch_size: int = 256
    max_steps: int | None = None  # None: epochs * steps per epoch
    epochs: float = 30.0
    seed: int = 0
    eval_every: int | None = None  # None: once per epoch
    eval_train_size: int = 5000
    uniform_probs: bool = False  # MK debug mode: p fixed at 1/e
    bias_learning_rate: float | None = None  # SGD only
    ensemble_same_seed: bool = False
    distill: DistillConfig = field(default_factory=DistillConfig)
    adv: AdvConfig = field(default_factory=AdvConfig)
    subset: SubsetConfig = field(default_factory=SubsetConfig)

    def validate(self) -> "TrainConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigError("algorithm", f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError("optimizer", f"unknown optimizer {self.optimizer!r}; choose from {OPTIMIZERS}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", "must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps", "must be >= 0")
        if self.max_steps is None and not self.epochs > 0:
            raise ConfigError("epochs", "must be > 0")
        if self.seed < 0:
            raise ConfigError("seed", "must be >= 0")
        if self.eval_every is not None and self.eval_every < 1:
            raise ConfigError("eval_every", "must be >= 1")
        if not 0.0 <= self.distill.alpha <= 1.0:
            raise ConfigError("distill.alpha", "must lie in [0, 1]")
        if not self.distill.temperature > 0:
            raise ConfigError("distill.temperature", "must be > 0")
        if self.adv.epsilon_p < 0:
            raise ConfigError("adv.epsilon_p", "must be >= 0")
        if self.subset.t < 1:
            raise ConfigError("subset.t", "must be >= 1")
        if self.algorithm == "ensemble" and self.spec.expansion < 2:
            raise ConfigError("expansion", "ensemble needs expansion >= 2 members")
        if self.bias_learning_rate is not None and self.optimizer != "sgd":
            raise ConfigError("bias_learning_rate", "only supported with sgd")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spec"] = self.spec.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        d["spec"] = NetworkSpec.from_dict(d["spec"])
        d["distill"] = DistillConfig(**d.get("distill", {}))
        d["adv"] = AdvConfig(**d.get("adv", {}))
        d["subset"] = SubsetConfig(**d.get("subset", {}))
        return cls(**d)


@dataclass
class RunRecord:
    step: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    test_acc: float
    gen_gap: float  # train_acc - test_acc
    wall_seconds: float
    learning_rate: float
    algorithm: str
    seed: int


CSV_COLUMNS = ["step", "train_loss", "train_acc", "val_loss", "val_acc", "lr", "algo", "seed",
               "test_acc", "gen_gap", "wall_seconds"]


def write_records_csv(path, records, provenance: str | None = None):
    """RunRecord series as CSV; an optional leading ``# ...`` line carries provenance."""
    with open(path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([r.step, repr(r.train_loss), repr(r.train_acc), repr(r.val_loss),
                             repr(r.val_acc), repr(r.learning_rate), r.algorithm, r.seed,
                             repr(r.test_acc), repr(r.gen_gap), f"{r.wall_seconds:.3f}"])


@dataclass
class TrainResult:
    params: ModelParams | None  # base-size inference network
    records: list
    config: TrainConfig
    extended: ModelParams | None = None  # training-time parameters when they differ
    members: list = field(default_factory=list)
    predictor: object = None
    selections: list = field(default_factory=list)

    @property
    def final(self) -> RunRecord:
        return self.records[-1]


# -- prediction / evaluation ---------------------------------------------------

def network_logits(params: ModelParams):
    return lambda x: forward(params, None, x)[0]


class EnsemblePredictor:
    """Averages the softmax outputs of independently trained members."""

    def __init__(self, members):
        if not members:
            raise ContractError("ensemble needs at least one member")
        self.members = list(members)

    def predict_proba(self, x) -> np.ndarray:
        total = softmax(forward(self.members[0], None, x)[0])
        for member in self.members[1:]:
            total = total + softmax(forward(member, None, x)[0])
        return total / len(self.members)

    def logits(self, x) -> np.ndarray:
        """Log of the averaged probabilities; softmax of this is the ensemble output."""
        return np.log(np.maximum(self.predict_proba(x), 1e-300))

    __call__ = logits


def dataset_metrics(logits_fn, dataset: Dataset, limit: int | None = None, chunk: int = 2048) -> tuple:
    n = len(dataset) if limit is None else min(limit, len(dataset))
    if n == 0:
        return float("nan"), float("nan")
    loss = 0.0
    correct = 0
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        logits = logits_fn(dataset.features[start:stop])
        y = dataset.labels[start:stop]
        loss -= log_softmax(logits)[np.arange(len(y)), y].sum()
        correct += int((logits.argmax(axis=1) == y).sum())
    return float(loss / n), correct / n


# -- the shared loop ---------------------------------------------------------------

class _Run:
    def __init__(self, config: TrainConfig, data: DataSplits):
        config.validate()
        spec = config.spec
        if data.input_dim != spec.input_dim:
            raise ContractError(f"data has {data.input_dim} features, spec expects {spec.input_dim}")
        if data.num_classes > spec.output_dim:
            raise ContractError(f"data has {data.num_classes} classes, spec outputs {spec.output_dim}")
        self.config = config
        self.data = data
        self.root = RngStream(config.seed)
        self.batches = BatchIterator(len(data.train), config.batch_size, self.root.child("batches"))
        per_epoch = self.batches.steps_per_epoch()
        self.max_steps = (
            config.max_steps if config.max_steps is not None else math.ceil(config.epochs * per_epoch)
        )
        self.eval_every = config.eval_every or per_epoch

    def optimizer(self):
        kwargs = {}
        if self.config.bias_learning_rate is not None:
            kwargs["bias_learning_rate"] = self.config.bias_learning_rate
        return make_optimizer(self.config.optimizer, self.config.learning_rate, **kwargs)

    def record(self, step: int, logits_fn, started: float) -> RunRecord:
        c = self.config
        train_loss, train_acc = dataset_metrics(logits_fn, self.data.train, c.eval_train_size)
        val_loss, val_acc = dataset_metrics(logits_fn, self.data.val)
        _, test_acc = dataset_metrics(logits_fn, self.data.test)
        return RunRecord(step, train_loss, train_acc, val_loss, val_acc, test_acc,
                         train_acc - test_acc, time.perf_counter() - started,
                         c.learning_rate, c.algorithm, c.seed)

    def loop(self, step_fn, logits_fn_factory) -> list:
        """Run ``step_fn(x, y, batch_indices)`` for max_steps batches, evaluating periodically."""
        started = time.perf_counter()
        records = []
        train = self.data.train
        for step in range(1, self.max_steps + 1):
            idx = next(self.batches)
            step_fn(train.features[idx], train.labels[idx], idx)
            if step % self.eval_every == 0 or step == self.max_steps:
                records.append(self.record(step, logits_fn_factory(), started))
        if self.max_steps == 0:
            records.append(self.record(0, logits_fn_factory(), started))
        return records


def _expect(config: TrainConfig, *algorithms):
    if config.algorithm not in algorithms:
        raise ContractError(f"trainer for {algorithms} called with algorithm {config.algorithm!r}")


# -- algorithms --------------------------------------------------------------------

def train_baseline(config: TrainConfig, data: DataSplits) -> TrainResult:
    """Standard training of the base-size network."""
    _expect(config, "baseline")
    run = _Run(config, data)
    params = init_params(config.spec, run.root.child("init"), expansion=1)
    opt = run.optimizer()

    def step(x, y, _):
        _, grads = loss_and_grad(params, None, x, y)
        opt.step(params, grads)

    records = run.loop(step, lambda: network_logits(params))
    return TrainResult(params, records, config)


def train_mk(config: TrainConfig, data: DataSplits) -> TrainResult:
    """Majority Kernels: fresh per-entry simplex weights every step, collapse for inference."""
    _expect(config, "mk")
    run = _Run(config, data)
    params = init_params(config.spec, run.root.child("init"))
    prob_rng = run.root.child("probs")
    opt = run.optimizer()

    def step(x, y, _):
        if config.uniform_probs:
            probs = None
        else:
            probs = [mk_layer.sample_probability_tensor(prob_rng, l.n, l.m, l.e) for l in params.layers]
        _, grads = loss_and_grad(params, probs, x, y)
        opt.step(params, grads)

    records = run.loop(step, lambda: network_logits(params.collapsed()))
    return TrainResult(params.collapsed(), records, config, extended=params)


def train_ensemble(config: TrainConfig, data: DataSplits) -> TrainResult:
    """``spec.expansion`` independently seeded baselines; predictions are averaged."""
    _expect(config, "ensemble")
    run = _Run(config, data)
    members = []
    started = time.perf_counter()
    for k in range(config.spec.expansion):
        seed = config.seed if config.ensemble_same_seed else run.root.derive_seed(f"member{k}")
        member_cfg = replace(config, algorithm="baseline", seed=seed)
        members.append(train_baseline(member_cfg, data))
    predictor = EnsemblePredictor([m.params for m in members])
    final = run.record(run.max_steps, predictor.logits, started)
    return TrainResult(None, [final], config, members=members, predictor=predictor)


def distillation_loss(logits, labels, teacher_logits, alpha: float, temperature: float) -> tuple:
    """alpha * CE + (1 - alpha) * T^2 * KL(softmax(t/T) || softmax(s/T)); returns (loss, dloss/dlogits)."""
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[0]
    ce_lp = log_softmax(logits)
    ce = -ce_lp[np.arange(n), labels].mean()
    log_qs = log_softmax(logits / temperature)
    log_qt = log_softmax(np.asarray(teacher_logits) / temperature)
    qt = np.exp(log_qt)
    kl = np.sum(qt * (log_qt - log_qs), axis=1).mean()
    loss = alpha * ce + (1.0 - alpha) * temperature**2 * kl
    grad = alpha * cross_entropy_grad(logits, labels) + (1.0 - alpha) * temperature * (
        np.exp(log_qs) - qt
    ) / n
    return float(loss), grad


def train_distilled(config: TrainConfig, data: DataSplits, teacher=None) -> TrainResult:
    """Base-size student trained against an ensemble teacher's softened outputs.

    ``teacher`` maps features to logits (an :class:`EnsemblePredictor` works).
    When omitted, an ensemble is trained first with the same seed.
    """
    _expect(config, "distilled")
    if teacher is None:
        lr = config.distill.teacher_learning_rate or config.learning_rate
        teacher = train_ensemble(replace(config, algorithm="ensemble", learning_rate=lr), data).predictor
    run = _Run(config, data)
    teacher_logits = np.concatenate(
        [teacher(data.train.features[s : s + 2048]) for s in range(0, len(data.train), 2048)]
    )
    if teacher_logits.shape[1] != config.spec.output_dim:
        raise ContractError("teacher output dim does not match the student")
    params = init_params(config.spec, run.root.child("init"), expansion=1)
    opt = run.optimizer()
    alpha, temp = config.distill.alpha, config.distill.temperature

    def step(x, y, idx):
        logits, cache = forward(params, None, x)
        _, dlogits = distillation_loss(logits, y, teacher_logits[idx], alpha, temp)
        opt.step(params, backprop(params, cache, dlogits))

    records = run.loop(step, lambda: network_logits(params))
    return TrainResult(params, records, config, predictor=teacher)


def adversarial_probs(params: ModelParams, x, y, epsilon_p: float) -> tuple:
    """One ascent step from uniform per-unit probabilities; returns (unit probs, loss at uniform)."""
    uniform = [adversarial.uniform_unit_probs(l.m, l.e) for l in params.layers]
    full = [adversarial.expand_unit_probs(p, l.n) for p, l in zip(uniform, params.layers)]
    loss, grads = loss_and_grad(params, full, x, y)
    ascended = [
        adversarial.ascend(p, adversarial.prob_gradient(l, g), epsilon_p)
        for p, l, g in zip(uniform, params.layers, grads.kernel_grads)
    ]
    return ascended, loss


def _train_adversarial(config: TrainConfig, data: DataSplits, randomize: bool) -> TrainResult:
    run = _Run(config, data)
    params = init_params(config.spec, run.root.child("init"))
    prob_rng = run.root.child("probs")
    opt = run.optimizer()
    eps = config.adv.epsilon_p

    def step(x, y, _):
        unit_probs, _ = adversarial_probs(params, x, y, eps)
        probs = []
        for p, l in zip(unit_probs, params.layers):
            if randomize:
                rand = mk_layer.sample_probability_tensor(prob_rng, l.n, l.m, l.e)
                probs.append(adversarial.blend(p, rand, adversarial.blend_weight(p)))
            else:
                probs.append(adversarial.expand_unit_probs(p, l.n))
        _, grads = loss_and_grad(params, probs, x, y)
        opt.step(params, grads)

    records = run.loop(step, lambda: network_logits(params.collapsed()))
    return TrainResult(params.collapsed(), records, config, extended=params)


def train_adv_only(config: TrainConfig, data: DataSplits) -> TrainResult:
    """min over kernels of the loss at adversarially ascended probabilities."""
    _expect(config, "adv_only")
    return _train_adversarial(config, data, randomize=False)


def train_adv_mk(config: TrainConfig, data: DataSplits) -> TrainResult:
    """Adversarial probabilities blended with fresh random ones by their KL to uniform."""
    _expect(config, "adv_mk")
    return _train_adversarial(config, data, randomize=True)


def train(config: TrainConfig, data: DataSplits, teacher=None) -> TrainResult:
    """Dispatch on ``config.algorithm``."""
    config.validate()
    if config.algorithm == "subset":
        from .subset import train_subset

        return train_subset(config, data)
    if config.algorithm == "distilled":
        return train_distilled(config, data, teacher)
    return {
        "baseline": train_baseline,
        "mk": train_mk,
        "ensemble": train_ensemble,
        "adv_only": train_adv_only,
        "adv_mk": train_adv_mk,
    }[config.algorithm](config, data)
