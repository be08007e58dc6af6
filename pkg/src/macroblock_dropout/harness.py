"""Training harness: LSTM stack + linear readout on the synthetic tasks.

Dropout (either variant) sits on the inputs of every LSTM layer after the
first. Validation always runs in inference mode, so it is deterministic for
fixed parameters.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dropout import DropoutConfig, Method, Mode, PartitionDims, Scaling
from .rnn import (
    LstmParams,
    StackConfig,
    arrays_to_params,
    init_stack_params,
    params_to_arrays,
    save_checkpoint,
    stack_backward,
    stack_forward,
)
from .tasks import Dataset, TaskKind, TaskSpec, generate_task
from .tensor import Rng

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


# -- model -----------------------------------------------------------------------


@dataclass
class SequenceModel:
    kind: TaskKind
    stack: StackConfig
    lstm: list[LstmParams]
    readout_W: np.ndarray
    readout_b: np.ndarray

    def named_arrays(self) -> dict[str, np.ndarray]:
        arrays = params_to_arrays(self.lstm)
        arrays["readout.W"] = self.readout_W
        arrays["readout.b"] = self.readout_b
        return arrays

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.lstm = arrays_to_params(arrays)
        self.readout_W = arrays["readout.W"]
        self.readout_b = arrays["readout.b"]

    def forward(self, x, rng: Rng | None, mode: Mode):
        hs, cache = stack_forward(x, self.lstm, self.stack, rng, mode)
        feats = hs[:, -1] if self.kind is TaskKind.ADDING else hs
        return feats @ self.readout_W + self.readout_b, (hs, feats, cache)

    def backward(self, grad_pred, fwd_cache) -> dict[str, np.ndarray]:
        hs, feats, cache = fwd_cache
        grads = {"readout.b": grad_pred.reshape(-1, grad_pred.shape[-1]).sum(axis=0)}
        grads["readout.W"] = feats.reshape(-1, feats.shape[-1]).T @ grad_pred.reshape(-1, grad_pred.shape[-1])
        grad_feats = grad_pred @ self.readout_W.T
        if self.kind is TaskKind.ADDING:
            grad_hs = np.zeros_like(hs)
            grad_hs[:, -1] = grad_feats
        else:
            grad_hs = grad_feats
        _, lstm_grads = stack_backward(grad_hs, cache, self.lstm)
        grads.update(params_to_arrays(lstm_grads))
        return grads


def build_model(spec: TaskSpec, hidden_sizes, rng: Rng, dropout: DropoutConfig | None = None,
                apply_dropout_from_layer: int = 1) -> SequenceModel:
    stack = StackConfig(list(hidden_sizes), dropout, apply_dropout_from_layer)
    lstm = init_stack_params(rng, spec.input_size, stack.layer_sizes)
    H = stack.layer_sizes[-1]
    bound = 1.0 / math.sqrt(H)
    W = rng.uniform(-bound, bound, (H, spec.output_size))
    return SequenceModel(spec.kind, stack, lstm, W, np.zeros(spec.output_size))


# -- losses ----------------------------------------------------------------------


def mse_loss(pred, target):
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def cross_entropy_loss(logits, labels):
    """Mean softmax cross-entropy over every (batch, step) position."""
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = labels.size
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)
    grad = np.exp(logp)
    np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], axis=-1) - 1.0, axis=-1)
    return float(-picked.sum() / n), grad / n


def task_loss(kind: TaskKind, pred, target):
    return mse_loss(pred, target) if kind is TaskKind.ADDING else cross_entropy_loss(pred, target)


# -- optimisation ----------------------------------------------------------------


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float):
    """Rescale all gradients jointly so their global norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        grads = {k: g * factor for k, g in grads.items()}
    return grads, norm


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, p in params.items():
            p -= self.lr * grads[k]


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m.setdefault(k, np.zeros_like(p))
            v = self.v.setdefault(k, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainConfig:
    learning_rate: float
    epochs: int = 50
    batch_size: int = 32
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip_global_norm: float | None = None
    # multiplicative learning-rate decay applied after each epoch >= lr_decay_start
    lr_decay: float = 1.0
    lr_decay_start: int = 1
    hidden_sizes: tuple[int, ...] = (32, 32)
    apply_dropout_from_layer: int = 1
    dropout: DropoutConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.grad_clip_global_norm is not None and self.grad_clip_global_norm <= 0:
            raise ValueError("grad_clip_global_norm must be positive")

    def make_optimizer(self):
        if self.optimizer == "sgd":
            return Sgd(self.learning_rate)
        return Adam(self.learning_rate, self.beta1, self.beta2, self.eps)

    def to_json(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        d["dropout"] = dropout_to_json(self.dropout)
        return d


def dropout_to_json(cfg: DropoutConfig | None):
    if cfg is None:
        return None
    return {
        "method": cfg.method.value,
        "q": cfg.q,
        "partition": str(cfg.partition),
        "scaling": cfg.scaling.value,
        "seed": cfg.seed,
    }


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    wall_time_s: float


@dataclass
class RunMetrics:
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def final_train_loss(self) -> float:
        return self.records[-1].train_loss

    @property
    def final_val_loss(self) -> float:
        return self.records[-1].val_loss

    def summary(self) -> dict:
        return {
            "epochs": len(self.records),
            "final_train_loss": self.final_train_loss,
            "final_val_loss": self.final_val_loss,
            "best_val_loss": min(r.val_loss for r in self.records),
        }

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "wall_time_s"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), f"{r.wall_time_s:.3f}"])


def evaluate(model: SequenceModel, x, y, batch_size: int = 256) -> float:
    """Inference-mode loss over a whole split, weighted by batch size."""
    total = 0.0
    for start in range(0, len(x), batch_size):
        pred, _ = model.forward(x[start : start + batch_size], None, Mode.INFERENCE)
        loss, _ = task_loss(model.kind, pred, y[start : start + batch_size])
        total += loss * len(pred)
    return total / len(x)


def train(model: SequenceModel, data: Dataset, cfg: TrainConfig, dropout_rng: Rng | None = None,
          shuffle_rng: Rng | None = None, on_step=None) -> RunMetrics:
    """Minibatch training; ``cfg.dropout`` overrides the model's dropout setting.

    ``on_step(grads, clipped_grads)`` is called after every clipping step when given.
    """
    model.stack = replace(model.stack, dropout=cfg.dropout)
    if dropout_rng is None:
        dropout_rng = Rng(cfg.dropout.seed if cfg.dropout is not None else 0)
    if shuffle_rng is None:
        shuffle_rng = Rng(cfg.seed).spawn(2)[1]
    opt = cfg.make_optimizer()
    params = model.named_arrays()
    n = len(data.train_x)
    metrics = RunMetrics()
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            pred, fwd = model.forward(data.train_x[idx], dropout_rng, Mode.TRAIN)
            loss, grad_pred = task_loss(model.kind, pred, data.train_y[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite training loss {loss} in epoch {epoch}")
            total += loss * len(idx)
            grads = model.backward(grad_pred, fwd)
            if cfg.grad_clip_global_norm is not None:
                clipped, _ = clip_by_global_norm(grads, cfg.grad_clip_global_norm)
                if on_step is not None:
                    on_step(grads, clipped)
                grads = clipped
            opt.step(params, grads)
        val = evaluate(model, data.val_x, data.val_y)
        if not math.isfinite(val):
            raise TrainingDiverged(f"non-finite validation loss {val} in epoch {epoch}")
        rec = EpochRecord(epoch, total / n, val, time.perf_counter() - t0)
        metrics.records.append(rec)
        log.info("epoch %d train %.6f val %.6f (%.1fs)", epoch, rec.train_loss, rec.val_loss, rec.wall_time_s)
        if cfg.lr_decay != 1.0 and epoch >= cfg.lr_decay_start:
            opt.lr *= cfg.lr_decay
    return metrics


def run_experiment(task: TaskSpec, cfg: TrainConfig, data: Dataset | None = None):
    """Generate data, build and train a model; returns ``(metrics, model)``.

    Streams: the task seed drives the data, ``cfg.seed`` drives initialisation
    and shuffling, the dropout seed drives the masks.
    """
    data = data if data is not None else generate_task(task)
    init_rng, shuffle_rng = Rng(cfg.seed).spawn(2)
    model = build_model(task, cfg.hidden_sizes, init_rng, cfg.dropout, cfg.apply_dropout_from_layer)
    dropout_rng = Rng(cfg.dropout.seed if cfg.dropout is not None else 0)
    metrics = train(model, data, cfg, dropout_rng=dropout_rng, shuffle_rng=shuffle_rng)
    return metrics, model


def save_model(path, model: SequenceModel) -> None:
    save_checkpoint(path, model.named_arrays())


# -- variant comparison ----------------------------------------------------------


def parse_variant(text: str, seed: int = 0) -> DropoutConfig | None:
    """Parse ``none``, ``baseline:Q`` or ``macro:TxF:Q[:fixed|dynamic]``."""
    parts = text.strip().lower().split(":")
    try:
        if parts[0] == "none" and len(parts) == 1:
            return None
        if parts[0] == "baseline" and len(parts) == 2:
            return DropoutConfig(q=float(parts[1]), method=Method.BASELINE, seed=seed)
        if parts[0] == "macro" and len(parts) in (3, 4):
            scaling = Scaling(parts[3]) if len(parts) == 4 else Scaling.DYNAMIC_SUM
            return DropoutConfig(q=float(parts[2]), partition=PartitionDims.parse(parts[1]),
                                 scaling=scaling, seed=seed)
    except ValueError as exc:
        raise ValueError(f"bad variant {text!r}: {exc}") from exc
    raise ValueError(f"bad variant {text!r}; expected none, baseline:Q or macro:TxF:Q[:fixed]")


def variant_label(cfg: DropoutConfig | None) -> str:
    if cfg is None:
        return "none"
    if cfg.method is Method.BASELINE:
        return f"baseline:{cfg.q:g}"
    label = f"macro:{cfg.partition}:{cfg.q:g}"
    return label if cfg.scaling is Scaling.DYNAMIC_SUM else label + ":fixed"


@dataclass
class ComparisonTable:
    labels: list[str]
    final_val: np.ndarray  # (variants, repeats)
    final_train: np.ndarray

    def mean_std(self, which: str = "val"):
        arr = self.final_val if which == "val" else self.final_train
        # sample std is undefined for a single seed
        std = arr.std(axis=1, ddof=1) if arr.shape[1] > 1 else np.full(arr.shape[0], np.nan)
        return arr.mean(axis=1), std

    @classmethod
    def from_runs(cls, labels, runs) -> "ComparisonTable":
        """Table from ``runs[variant][repeat]`` RunMetrics."""
        val = np.array([[m.final_val_loss for m in row] for row in runs])
        tr = np.array([[m.final_train_loss for m in row] for row in runs])
        return cls(list(labels), val, tr)

    def write_csv(self, path) -> None:
        """Wide layout: one column per variant, one row per statistic."""
        val_mean, val_std = self.mean_std("val")
        tr_mean, tr_std = self.mean_std("train")
        rows = [
            ("mean_val_loss", val_mean),
            ("std_val_loss", val_std),
            ("mean_train_loss", tr_mean),
            ("std_train_loss", tr_std),
        ]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric"] + self.labels)
            for name, vals in rows:
                w.writerow([name] + [repr(float(v)) for v in vals])
            w.writerow(["repeats"] + [self.final_val.shape[1]] * len(self.labels))

    def format(self) -> str:
        val_mean, val_std = self.mean_std("val")
        width = max(len(s) for s in self.labels)
        return "\n".join(
            f"{lab:<{width}}  val {m:.5f} +- {s:.5f}" for lab, m, s in zip(self.labels, val_mean, val_std)
        )


def _one_run(task: TaskSpec, cfg: TrainConfig):
    metrics, _ = run_experiment(task, cfg)
    return metrics.final_val_loss, metrics.final_train_loss


def compare_variants(task: TaskSpec, base_cfg: TrainConfig, variants, repeats: int = 3,
                     workers: int = 1) -> ComparisonTable:
    """Final train/validation loss of each dropout variant over ``repeats`` seeds.

    Repeat ``r`` uses ``base_cfg.seed + r`` for initialisation/shuffling and
    ``variant.seed + r`` for the masks; the dataset is shared.
    """
    if repeats < 3:
        raise ValueError(f"repeats must be >= 3, got {repeats}")
    variants = list(variants)
    jobs = []
    for v in variants:
        for r in range(repeats):
            dcfg = replace(v, seed=v.seed + r) if v is not None else None
            jobs.append((task, replace(base_cfg, seed=base_cfg.seed + r, dropout=dcfg)))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_one_run, *zip(*jobs)))
    else:
        results = [_one_run(*job) for job in jobs]
    res = np.array(results).reshape(len(variants), repeats, 2)
    return ComparisonTable([variant_label(v) for v in variants], res[..., 0], res[..., 1])


def write_config_json(path, task: TaskSpec, cfg: TrainConfig, extra: dict | None = None) -> None:
    doc = {"task": {**asdict(task), "kind": task.kind.value}, "train": cfg.to_json()}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
