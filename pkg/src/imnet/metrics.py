"""Pixel-level precision / recall / F1 for 3-class forgery masks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ShapeError, ValidationError

PROTOCOL = "per-image-mean"
GROUPS = ("combined", "class1", "class2")


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float


def prf_from_counts(tp: int, fp: int, fn: int) -> PRF:
    """Scores from confusion counts with explicit empty-set rules.

    Precision is 1 when nothing is predicted and nothing is true, 0 when
    nothing is predicted but positives exist.  Recall is 1 when no true
    positives exist.  F1 is 0 whenever P + R is 0.
    """
    if tp + fp == 0:
        precision = 1.0 if tp + fn == 0 else 0.0
    else:
        precision = tp / (tp + fp)
    recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return PRF(precision, recall, f1)


def _check(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError("score_image", pred.shape, truth.shape)
    for name, a in (("pred", pred), ("truth", truth)):
        if a.size and (not np.issubdtype(a.dtype, np.integer) or a.min() < 0 or a.max() > 2):
            raise ValidationError(f"{name} labels must be integers in {{0, 1, 2}}")
    return pred, truth


def _score_binary(p: np.ndarray, t: np.ndarray) -> PRF:
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return prf_from_counts(tp, fp, fn)


def score_image(pred, truth, mode: str = "combined"):
    """``combined`` -> one PRF with classes {1, 2} as positive.

    ``per-class`` -> dict with PRFs for ``class1`` and ``class2``.
    """
    pred, truth = _check(pred, truth)
    if mode == "combined":
        return _score_binary(pred > 0, truth > 0)
    if mode == "per-class":
        return {f"class{k}": _score_binary(pred == k, truth == k) for k in (1, 2)}
    raise ValueError(f"mode must be 'combined' or 'per-class', got {mode!r}")


@dataclass
class ImageScores:
    id: str
    combined: PRF
    class1: PRF
    class2: PRF


@dataclass
class MetricsReport:
    images: list
    aggregate: dict
    protocol: str = PROTOCOL
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "protocol": self.protocol,
            "aggregate": {g: self.aggregate[g]._asdict() for g in GROUPS},
            "images": [{"id": im.id, **{g: getattr(im, g)._asdict() for g in GROUPS}} for im in self.images],
        }
        if self.meta:
            out["meta"] = self.meta
        return out

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def score_dataset(pairs, ids=None) -> MetricsReport:
    """Score ``(pred, truth)`` pairs and average the per-image results."""
    pairs = list(pairs)
    if not pairs:
        raise ValidationError("score_dataset needs at least one image")
    if ids is None:
        ids = [f"{i:05d}" for i in range(len(pairs))]
    images = []
    for image_id, (pred, truth) in zip(ids, pairs):
        per = score_image(pred, truth, "per-class")
        images.append(ImageScores(str(image_id), score_image(pred, truth), per["class1"], per["class2"]))
    aggregate = {}
    for g in GROUPS:
        rows = np.array([getattr(im, g) for im in images], dtype=np.float64)
        aggregate[g] = PRF(*(float(v) for v in rows.mean(axis=0)))
    return MetricsReport(images, aggregate)
