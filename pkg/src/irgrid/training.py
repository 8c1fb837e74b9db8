"""Training and evaluation for the drop predictor.

Two phases share one loop: pretraining runs at a constant learning
rate with heavy, depth-graded dropout; finetuning anneals the rate on
a cosine (optionally with warm restarts) under light dropout.  The
loss is an asymmetric L1 that bills underprediction lambda times as
much as overprediction, since missing a hotspot is the expensive
mistake.  It reads the raw head output because the inference-time zero
clamp has no gradient below zero; each phase then ends with a
batchnorm recalibration pass so eval-mode statistics match what the
dropout-free forward actually produces.

Targets are supply-relative drops at model resolution.  evaluate()
undoes both conventions: predictions are rescaled by the supply and
resampled back to each case's die dims before MAE (reported in mV)
and the top-decile F1 are computed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import InputError, TrainingError
from .features import TestCase, resample
from .model import AttUNet, save_checkpoint

PHASES = ("pretrain", "finetune")
_DEFAULTS = {
    "pretrain": {"epochs": 450, "dropout": (0.3, 0.5)},
    "finetune": {"epochs": 600, "dropout": (0.1, 0.1)},
}


@dataclass
class TrainConfig:
    phase: str
    epochs: int | None = None
    learning_rate: float = 5e-4
    lr_min: float = 1e-5
    dropout: tuple[float, float] | None = None
    batch_size: int = 4
    loss_lambda: float = 2.0
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.phase not in PHASES:
            raise InputError(f"unknown phase {self.phase!r}")
        if self.epochs is None:
            self.epochs = _DEFAULTS[self.phase]["epochs"]
        if self.dropout is None:
            self.dropout = _DEFAULTS[self.phase]["dropout"]
        if self.epochs < 1:
            raise InputError("epochs must be positive")
        if self.batch_size < 1:
            raise InputError("batch_size must be positive")
        if self.loss_lambda < 1:
            raise InputError(
                f"loss_lambda {self.loss_lambda!r} must be at least 1")
        if self.restarts < 1:
            raise InputError("restarts must be at least 1")
        if not 0 < self.lr_min <= self.learning_rate:
            raise InputError("need 0 < lr_min <= learning_rate")


@dataclass
class HistoryRow:
    epoch: int
    lr: float
    loss: float
    mae: float  # running train-resolution MAE in mV
    f1: float


@dataclass
class CaseMetrics:
    case_id: str
    mae: float  # mV
    f1: float
    precision: float
    recall: float


@dataclass
class Metrics:
    mae: float
    f1: float
    precision: float
    recall: float
    per_case: list[CaseMetrics] = field(default_factory=list)


def asym_loss(pred: torch.Tensor, truth: torch.Tensor,
              lam: float = 2.0) -> torch.Tensor:
    """Mean absolute error weighted by lam wherever pred < truth."""
    if pred.shape != truth.shape:
        raise InputError(
            f"shape mismatch: pred {tuple(pred.shape)} vs truth {tuple(truth.shape)}")
    if lam < 1:
        raise InputError(f"lambda {lam!r} must be at least 1")
    weight = torch.where(pred >= truth, 1.0, float(lam))
    return (weight * (pred - truth).abs()).mean()


def cosine_lr(t_cur: int, t_max: int, eta_min: float = 1e-5,
              eta_max: float = 5e-4) -> float:
    """Cosine annealing from eta_max at t_cur=0 to eta_min at t_cur=t_max."""
    if t_max < 1:
        raise InputError("t_max must be positive")
    if not 0 <= t_cur <= t_max:
        raise InputError(f"t_cur {t_cur} outside [0, {t_max}]")
    return eta_min + 0.5 * (eta_max - eta_min) * (1 + math.cos(t_cur / t_max * math.pi))


def schedule_lr(epoch: int, config: TrainConfig) -> float:
    """Per-epoch learning rate: constant during pretraining, cosine with
    optional warm restarts during finetuning."""
    if not 0 <= epoch < config.epochs:
        raise InputError(f"epoch {epoch} outside [0, {config.epochs})")
    if config.phase == "pretrain":
        return config.learning_rate
    period = math.ceil(config.epochs / config.restarts)
    return cosine_lr(epoch % period, period, config.lr_min, config.learning_rate)


def mae(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise InputError(
            f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    return float(np.mean(np.abs(pred - truth)))


def f1_score(pred: np.ndarray, truth: np.ndarray,
             percentile: float = 90.0) -> tuple[float, float, float]:
    """(f1, precision, recall) for top-decile hotspot classification.

    The threshold is the truth's 90th percentile and labels both maps,
    so a perfect prediction scores 1.  Degenerate all-equal truth
    labels every pixel positive; that is flagged with a warning.
    """
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise InputError(
            f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    threshold = float(np.percentile(truth, percentile))
    if truth.min() == truth.max():
        warnings.warn("constant ground truth: hotspot threshold labels "
                      "every pixel positive", stacklevel=2)
    actual = truth >= threshold
    flagged = pred >= threshold
    tp = int(np.sum(actual & flagged))
    fp = int(np.sum(~actual & flagged))
    fn = int(np.sum(actual & ~flagged))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return f1, precision, recall


def case_tensors(case: TestCase, size: int) -> tuple[torch.Tensor, torch.Tensor]:
    """(input, target) training pair: float32 features and the ground
    truth resampled to model resolution in supply-relative units."""
    x = torch.as_tensor(case.features.data, dtype=torch.float32)
    y = resample(case.ground_truth.data / case.supply_voltage, size, size)
    return x, torch.as_tensor(y, dtype=torch.float32)[None]


class _TensorCache:
    """Precomputes training pairs when they fit in memory, otherwise
    recomputes on access."""

    LIMIT_BYTES = 2_000_000_000

    def __init__(self, corpus: Sequence[TestCase], size: int):
        self._corpus = corpus
        self._size = size
        per_case = (13 * size * size) * 4
        self._store = ([case_tensors(c, size) for c in corpus]
                       if per_case * len(corpus) <= self.LIMIT_BYTES else None)

    def __len__(self):
        return len(self._corpus)

    def __getitem__(self, i: int):
        if self._store is not None:
            return self._store[i]
        return case_tensors(self._corpus[i], self._size)


def _batch_starts(n: int, batch_size: int) -> list[int]:
    starts = list(range(0, n, batch_size))
    # batchnorm cannot normalize a single sample at a 1x1 bottleneck;
    # fold a trailing singleton into the previous batch
    if len(starts) > 1 and n - starts[-1] == 1:
        starts.pop()
    return starts


def recalibrate_batchnorm(model: AttUNet, corpus, batch_size: int = 4):
    """Re-estimate batchnorm running statistics with dropout off.

    Dropout upstream of a batchnorm layer shifts activation statistics
    between train and eval mode; heavily regularized training can leave
    running estimates so far off that eval-mode outputs collapse.  One
    cumulative-average pass over the data with dropout disabled realigns
    them with what inference actually sees.
    """
    bns = [m for m in model.modules() if isinstance(m, nn.BatchNorm2d)]
    if not bns:
        return
    cache = (corpus if isinstance(corpus, _TensorCache)
             else _TensorCache(corpus, model.config.input_size))
    if len(cache) == 0:
        raise InputError("empty recalibration corpus")
    drops = [m for m in model.modules() if isinstance(m, nn.Dropout)]
    saved_p = [d.p for d in drops]
    saved_momentum = [bn.momentum for bn in bns]
    was_training = model.training
    for d in drops:
        d.p = 0.0
    for bn in bns:
        bn.reset_running_stats()
        bn.momentum = None  # cumulative average over this pass
    model.train()
    starts = _batch_starts(len(cache), batch_size)
    with torch.no_grad():
        for bi, start in enumerate(starts):
            stop = starts[bi + 1] if bi + 1 < len(starts) else len(cache)
            model(torch.stack([cache[i][0] for i in range(start, stop)]))
    for d, p in zip(drops, saved_p):
        d.p = p
    for bn, momentum in zip(bns, saved_momentum):
        bn.momentum = momentum
    if not was_training:
        model.eval()


def _run_phase(model: AttUNet, corpus: Sequence[TestCase], config: TrainConfig,
               checkpoint_dir=None, log=None) -> list[HistoryRow]:
    if len(corpus) == 0:
        raise InputError("empty training corpus")
    size = model.config.input_size
    torch.manual_seed(config.seed)
    order_rng = np.random.default_rng(config.seed)
    cache = _TensorCache(corpus, size)

    model.train()
    model.set_dropout(*config.dropout)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    history: list[HistoryRow] = []

    for epoch in range(config.epochs):
        lr = schedule_lr(epoch, config)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = order_rng.permutation(len(corpus))
        starts = _batch_starts(len(order), config.batch_size)

        loss_sum = 0.0
        mae_sum = 0.0
        f1_sum = 0.0
        seen = 0
        for bi, start in enumerate(starts):
            stop = (starts[bi + 1] if bi + 1 < len(starts) else len(order))
            idx = order[start:stop]
            pairs = [cache[int(i)] for i in idx]
            x = torch.stack([p[0] for p in pairs])
            y = torch.stack([p[1] for p in pairs])
            out, _ = model(x, clamp=False)
            loss = asym_loss(out, y, config.loss_lambda)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {bi}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            loss_sum += loss.item() * len(idx)
            seen += len(idx)
            with torch.no_grad():
                clamped = out.detach().clamp(min=0.0)
                for pi, p in enumerate(pairs):
                    case = corpus[int(idx[pi])]
                    pv = clamped[pi, 0].numpy() * case.supply_voltage
                    tv = p[1][0].numpy() * case.supply_voltage
                    mae_sum += mae(pv, tv) * 1000.0
                    f1_sum += f1_score(pv, tv)[0]

        row = HistoryRow(epoch, lr, loss_sum / seen,
                         mae_sum / seen, f1_sum / seen)
        history.append(row)
        if log:
            log(row)
        if checkpoint_dir is not None:
            save_checkpoint(model, f"{checkpoint_dir}/last.ckpt",
                            config.phase, epoch)
    recalibrate_batchnorm(model, cache, config.batch_size)
    model.eval()
    if checkpoint_dir is not None:
        # the final checkpoint must carry the recalibrated statistics
        save_checkpoint(model, f"{checkpoint_dir}/last.ckpt",
                        config.phase, config.epochs - 1)
    return history


def pretrain(model: AttUNet, corpus: Sequence[TestCase],
             config: TrainConfig | None = None,
             checkpoint_dir=None, log=None) -> list[HistoryRow]:
    config = config or TrainConfig("pretrain")
    if config.phase != "pretrain":
        raise InputError(f"pretrain called with phase {config.phase!r}")
    return _run_phase(model, corpus, config, checkpoint_dir, log)


def finetune(model: AttUNet, corpus: Sequence[TestCase],
             config: TrainConfig | None = None,
             checkpoint_dir=None, log=None) -> list[HistoryRow]:
    config = config or TrainConfig("finetune")
    if config.phase != "finetune":
        raise InputError(f"finetune called with phase {config.phase!r}")
    return _run_phase(model, corpus, config, checkpoint_dir, log)


def predict_case(model: AttUNet, case: TestCase) -> np.ndarray:
    """Predicted drop map in volts at the case's original die dims."""
    x = torch.as_tensor(case.features.data, dtype=torch.float32)[None]
    out = model.predict(x)[0, 0].numpy().astype(float)
    h, w = case.features.original_dims
    return resample(out, h, w) * case.supply_voltage


def evaluate(model: AttUNet, cases: Sequence[TestCase]) -> Metrics:
    """Corpus metrics at original resolution: MAE in mV plus top-decile
    F1/precision/recall, averaged over cases."""
    if len(cases) == 0:
        raise InputError("no cases to evaluate")
    per_case = []
    for i, case in enumerate(cases):
        pred = predict_case(model, case)
        truth = case.ground_truth.data
        err = mae(pred, truth) * 1000.0
        f1, precision, recall = f1_score(pred, truth)
        per_case.append(CaseMetrics(case.case_id or f"case_{i:04d}",
                                    err, f1, precision, recall))
    return Metrics(
        mae=float(np.mean([c.mae for c in per_case])),
        f1=float(np.mean([c.f1 for c in per_case])),
        precision=float(np.mean([c.precision for c in per_case])),
        recall=float(np.mean([c.recall for c in per_case])),
        per_case=per_case)


def write_history(path, rows: Sequence[HistoryRow]):
    with open(path, "w") as f:
        f.write("epoch,lr,loss,mae,f1\n")
        for r in rows:
            f.write(f"{r.epoch},{r.lr!r},{r.loss!r},{r.mae!r},{r.f1!r}\n")
