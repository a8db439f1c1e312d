"""Greedy grouping of clients into mediators by KL divergence.

A mediator coordinates up to ``gamma`` clients and trains them sequentially,
so what matters for bias is the class mix of the group's pooled data. The
scheduler grows one mediator at a time: at each step it adds the unassigned
client whose counts, added to the mediator's running counts, leave the
normalized mix closest to uniform in KL divergence (natural log). Ties break
toward the lowest client id. Combination is count-wise, so larger clients
weigh more.

Greedy selection is locally optimal per step only; no claim is made about
the globally optimal partition of clients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ClassDistribution
from .errors import ConfigurationError, DivergenceUndefinedError


def kld(p, q) -> float:
    """Kullback-Leibler divergence sum(p * ln(p / q)) in nats.

    Uses the 0 * ln 0 = 0 convention. Both vectors must sum to 1 within
    1e-9; raises ``DivergenceUndefinedError`` if p puts mass where q is 0.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ConfigurationError(f"distributions: shapes differ, {p.shape} vs {q.shape}")
    for name, vec in (("p", p), ("q", q)):
        if np.any(vec < 0) or abs(vec.sum() - 1.0) > 1e-9:
            raise ConfigurationError(f"{name}: entries must be >= 0 and sum to 1 within 1e-9")
    support = p > 0
    if np.any(q[support] == 0):
        c = int(np.flatnonzero(support & (q == 0))[0])
        raise DivergenceUndefinedError(f"p has mass at index {c} where q is zero")
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def uniform_distribution(num_classes: int) -> np.ndarray:
    return np.full(num_classes, 1.0 / num_classes)


def kld_to_uniform(counts: np.ndarray) -> float:
    total = counts.sum()
    if total <= 0:
        raise ConfigurationError("counts: empty distribution")
    return kld(counts / total, uniform_distribution(counts.size))


@dataclass(frozen=True, eq=False)
class Mediator:
    """One mediator: its member clients in assignment order, pooled counts."""

    clients: tuple[int, ...]
    combined: ClassDistribution

    @property
    def size(self) -> int:
        return len(self.clients)

    @property
    def total_samples(self) -> int:
        return self.combined.total

    def kld_to_uniform(self) -> float:
        return kld_to_uniform(self.combined.counts)


@dataclass(frozen=True, eq=False)
class MediatorAssignment:
    """Mediators in creation order; every client appears exactly once."""

    mediators: tuple[Mediator, ...]
    gamma: int

    def client_ids(self) -> list[int]:
        out: list[int] = []
        for m in self.mediators:
            out.extend(m.clients)
        return out

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "mediators": [
                {
                    "clients": list(m.clients),
                    "size": m.size,
                    "total_samples": m.total_samples,
                    "kld": m.kld_to_uniform(),
                }
                for m in self.mediators
            ],
        }


def reschedule(client_dists: dict[int, ClassDistribution], gamma: int) -> MediatorAssignment:
    """Assign every client to a mediator of at most ``gamma`` members.

    Mediators are filled one at a time; each pick minimizes the KL divergence
    of the pooled (mediator + candidate) counts against uniform. A fresh
    mediator starts empty, so its first pick is the unassigned client whose
    own distribution is closest to uniform.
    """
    if gamma < 1:
        raise ConfigurationError("gamma: must be >= 1")
    if not client_dists:
        raise ConfigurationError("client_dists: at least one client required")
    num_classes = next(iter(client_dists.values())).counts.size
    for k, dist in client_dists.items():
        if dist.counts.size != num_classes:
            raise ConfigurationError(f"client {k}: class count differs from other clients")
        if dist.total < 1:
            raise ConfigurationError(f"client {k}: must hold at least one sample")

    unassigned = sorted(client_dists)
    mediators: list[Mediator] = []
    while unassigned:
        members: list[int] = []
        pooled = np.zeros(num_classes, dtype=np.int64)
        while unassigned and len(members) < gamma:
            best_id = None
            best_kld = np.inf
            for k in unassigned:  # ascending id order makes ties pick the lowest id
                candidate = pooled + client_dists[k].counts
                score = kld_to_uniform(candidate)
                if score < best_kld:
                    best_kld = score
                    best_id = k
            members.append(best_id)
            pooled += client_dists[best_id].counts
            unassigned.remove(best_id)
        mediators.append(Mediator(clients=tuple(members), combined=ClassDistribution(pooled)))
    return MediatorAssignment(mediators=tuple(mediators), gamma=gamma)


@dataclass(frozen=True, eq=False)
class KldReport:
    """Equilibrium summary for one assignment.

    Mediator values measure the scheduled groups; client values measure each
    client alone against uniform, which is the figure a mediator-free
    federation would see.
    """

    mediator_values: np.ndarray
    client_values: np.ndarray

    @staticmethod
    def _summary(values: np.ndarray) -> dict[str, float]:
        q1, med, q3 = np.percentile(values, [25, 50, 75])
        return {
            "mean": float(values.mean()),
            "median": float(med),
            "iqr": float(q3 - q1),
        }

    @property
    def mediator_summary(self) -> dict[str, float]:
        return self._summary(self.mediator_values)

    @property
    def client_summary(self) -> dict[str, float]:
        return self._summary(self.client_values)


def kld_report(
    assignment: MediatorAssignment,
    client_dists: dict[int, ClassDistribution],
) -> KldReport:
    """Per-mediator and per-client KL divergences against uniform."""
    if not assignment.mediators:
        raise ConfigurationError("assignment: at least one mediator required")
    mediator_values = np.array([m.kld_to_uniform() for m in assignment.mediators])
    client_values = np.array(
        [kld_to_uniform(client_dists[k].counts) for k in sorted(client_dists)]
    )
    return KldReport(mediator_values=mediator_values, client_values=client_values)
