"""Mini-batch training loop, optimisers and dataset-level evaluation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import head
from .config import RunConfig
from .metrics import MetricsReport, score_dataset
from .model import forward, init_params, to_input
from .params import Params
from .tensor import GradTape

log = logging.getLogger(__name__)

SHUFFLE_STREAM = 2


class SGD:
    def __init__(self, params: Sequence, lr: float):
        self.params, self.lr = list(params), lr

    def step(self, grads) -> None:
        for p, g in zip(self.params, grads):
            p.data = p.data - self.lr * g


class Adam:
    def __init__(self, params: Sequence, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mhat = self.m[i] / c1
            vhat = self.v[i] / c2
            p.data = (p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


def make_optimizer(config: RunConfig, params: Params):
    opt = config.optimizer
    if opt.kind == "sgd":
        return SGD(params.values(), opt.learning_rate)
    return Adam(params.values(), opt.learning_rate, opt.beta1, opt.beta2, opt.eps)


def predict_batches(config: RunConfig, params: Params, images: Sequence[np.ndarray], batch_size: int = 16):
    out = []
    for i in range(0, len(images), batch_size):
        out.append(forward(to_input(np.stack(images[i:i + batch_size])), config, params).classes)
    return np.concatenate(out) if out else np.zeros((0,), dtype=np.uint8)


def evaluate(config: RunConfig, params: Params, items) -> MetricsReport:
    """Score ``(id, image, labels)`` items with the current parameters."""
    ids = [it[0] for it in items]
    preds = predict_batches(config, params, [it[1] for it in items])
    return score_dataset(zip(preds, [it[2] for it in items]), ids)


def split(items: list, val_fraction: float) -> tuple[list, list]:
    """Last ``val_fraction`` of the items validate; an empty split reuses training data."""
    n_val = int(round(len(items) * val_fraction))
    if n_val == 0 or n_val >= len(items):
        return items, items
    return items[:-n_val], items[-n_val:]


@dataclass
class TrainResult:
    params: Params  # best validation parameters
    final_params: Params
    best_f1: float
    best_step: int
    records: list = field(default_factory=list)

    @property
    def losses(self) -> list:
        return [r["loss"] for r in self.records if r["event"] == "step"]


def _snapshot(params: Params) -> Params:
    from .tensor import Tensor

    return {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in params.items()}


def train(config: RunConfig, train_items: list, val_items: list | None = None,
          emit: Callable[[dict], None] | None = None, params: Params | None = None) -> TrainResult:
    """Run ``config.optimizer.steps`` Adam/SGD steps over ``train_items``.

    ``emit`` receives one dict per structured log line.
    """
    config.validate()
    if not train_items:
        raise ValueError("no training items")
    val_items = val_items or train_items
    params = init_params(config) if params is None else params
    opt = make_optimizer(config, params)
    names = list(params)
    tensors = [params[k] for k in names]
    rng = np.random.default_rng([config.seed, SHUFFLE_STREAM])
    bs = min(config.optimizer.batch_size, len(train_items))
    weights = config.loss_weights
    records: list = []

    def note(rec: dict) -> None:
        records.append(rec)
        if emit is not None:
            emit(rec)

    note({"event": "start", "samples": len(train_items), "val_samples": len(val_items),
          "steps": config.optimizer.steps, "ablation": config.ablation,
          "note": "desk-scale schedule"})
    best_f1, best_step, best = -1.0, 0, _snapshot(params)
    order: list = []
    steps = config.optimizer.steps
    every = config.train.val_every
    for step in range(steps):
        if len(order) < bs:
            order.extend(rng.permutation(len(train_items)).tolist())
        idx, order = order[:bs], order[bs:]
        images = to_input(np.stack([train_items[i][1] for i in idx]))
        labels = np.stack([train_items[i][2] for i in idx])
        with GradTape() as tape:
            value = head.loss(forward(images, config, params), labels, weights)
        grads = tape.gradient(value, tensors)
        note({"event": "step", "step": step, "loss": float(value.item())})
        opt.step(grads)
        if (step + 1) % every == 0 or step + 1 == steps:
            f1 = evaluate(config, params, val_items).aggregate["combined"].f1
            note({"event": "val", "step": step + 1, "f1": f1})
            if f1 > best_f1:
                best_f1, best_step, best = f1, step + 1, _snapshot(params)
    if steps == 0:
        best_f1 = evaluate(config, params, val_items).aggregate["combined"].f1
    return TrainResult(best, params, best_f1, best_step, records)


def jsonl_writer(stream) -> Callable[[dict], None]:
    def emit(rec: dict) -> None:
        stream.write(json.dumps(rec, sort_keys=True) + "\n")
        stream.flush()

    return emit
