"""Accuracy metrics, communication accounting, and CSV export.

Traffic is counted in bytes at a configurable wire width per model
parameter (default 4 bytes; weights are float64 in memory but priced at the
width actually sent). Closed forms for one round:

* mediator-free federation: ``2 * c * |w| * width`` --每 each of the c
  participants downloads and uploads the model once.
* mediator rounds: ``2 * (ceil(c / gamma) + c) * |w| * width`` -- every
  mediator exchanges the model with the server once, and every client
  exchanges it with its mediator once; sequential hand-offs inside a
  mediator epoch reuse the already-delivered copy.

The engine increments a ledger at each priced send/receive event, so tests
can reconcile measured bytes against these formulas exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import LabeledDataset
from .errors import ConfigurationError
from .model import ModelArch, predict, top1_accuracy

DEFAULT_WIRE_BYTES_PER_PARAM = 4
DECLARATION_BYTES_PER_CLASS = 8  # one 64-bit count per class, sent once


def traffic_fedavg_round(
    c: int,
    num_params: int,
    wire_bytes_per_param: int = DEFAULT_WIRE_BYTES_PER_PARAM,
) -> int:
    """Bytes moved in one mediator-free communication round."""
    if c < 1 or num_params < 1:
        raise ConfigurationError("traffic: c and num_params must be >= 1")
    return 2 * c * num_params * wire_bytes_per_param


def traffic_astraea_round(
    c: int,
    gamma: int,
    num_params: int,
    wire_bytes_per_param: int = DEFAULT_WIRE_BYTES_PER_PARAM,
) -> int:
    """Bytes moved in one synchronization round with mediators."""
    if c < 1 or num_params < 1:
        raise ConfigurationError("traffic: c and num_params must be >= 1")
    if gamma < 1:
        raise ConfigurationError("traffic: gamma must be >= 1")
    return 2 * (math.ceil(c / gamma) + c) * num_params * wire_bytes_per_param


@dataclass
class LedgerEntry:
    round: int
    down_bytes: int
    up_bytes: int

    @property
    def total(self) -> int:
        return self.down_bytes + self.up_bytes


@dataclass
class TrafficLedger:
    """Append-only per-round byte accounting; single writer per run."""

    wire_bytes_per_param: int = DEFAULT_WIRE_BYTES_PER_PARAM
    entries: list[LedgerEntry] = field(default_factory=list)

    def param_bytes(self, num_params: int) -> int:
        return num_params * self.wire_bytes_per_param

    def record(self, round_index: int, down_bytes: int, up_bytes: int) -> None:
        if down_bytes < 0 or up_bytes < 0:
            raise ConfigurationError("ledger: byte counts must be >= 0")
        self.entries.append(LedgerEntry(round_index, down_bytes, up_bytes))

    def round_total(self, round_index: int) -> int:
        return sum(e.total for e in self.entries if e.round == round_index)

    def cumulative(self) -> list[int]:
        """Prefix sums of entry totals, in append order."""
        out: list[int] = []
        running = 0
        for e in self.entries:
            running += e.total
            out.append(running)
        return out

    @property
    def total_bytes(self) -> int:
        return sum(e.total for e in self.entries)


def cost_to_target(reports: Sequence, target_accuracy: float) -> int | None:
    """Cumulative bytes at the first round reaching the target accuracy.

    Returns None when no round reaches it. Reports must be in round order
    and expose ``accuracy`` and ``bytes_total`` attributes.
    """
    cumulative = 0
    for report in reports:
        cumulative += report.bytes_total
        if report.accuracy >= target_accuracy:
            return cumulative
    return None


def confusion(
    arch: ModelArch,
    params: np.ndarray,
    test_set: LabeledDataset,
) -> np.ndarray:
    """N x N matrix of counts; rows are true classes, columns predictions."""
    if len(test_set) == 0:
        raise ConfigurationError("test_set: must contain at least one sample")
    preds = predict(arch, params, test_set.features)
    n = test_set.num_classes
    matrix = np.zeros((n, n), dtype=np.int64)
    np.add.at(matrix, (test_set.labels, preds), 1)
    return matrix


def accuracy_from_confusion(matrix: np.ndarray) -> float:
    return float(np.trace(matrix) / matrix.sum())


def evaluate(arch: ModelArch, params: np.ndarray, test_set: LabeledDataset) -> float:
    return top1_accuracy(arch, params, test_set.features, test_set.labels)


def write_rounds_csv(path, reports: Sequence) -> None:
    """rounds.csv: round, accuracy, loss, bytes_cum."""
    cumulative = 0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["round", "accuracy", "loss", "bytes_cum"])
        for report in reports:
            cumulative += report.bytes_total
            writer.writerow([report.round, repr(report.accuracy), repr(report.train_loss), cumulative])


def write_kld_csv(path, reports: Sequence) -> None:
    """kld.csv: round, mediator_id, size, kld (one row per scheduled group)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["round", "mediator_id", "size", "kld"])
        for report in reports:
            for mediator_id, size, value in report.mediator_rows or ():
                writer.writerow([report.round, mediator_id, size, repr(value)])


def write_confusion_csv(path, matrix: np.ndarray) -> None:
    """confusion.csv: true, pred, count."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["true", "pred", "count"])
        for true_class in range(matrix.shape[0]):
            for pred_class in range(matrix.shape[1]):
                writer.writerow([true_class, pred_class, int(matrix[true_class, pred_class])])
