"""Brute-force ground truth: Hedge over explicit orderings and behavior deduplication.

Only meant for desk-scale instances (K <= 9); every ordering carries its own
log-weight and cumulative loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import DyingSchedule, LossStream, all_orderings, day_plays, enumerate_effective
from .errors import CapacityError, ContractViolation, ScheduleViolation, ValidationError
from .hedge import RateSchedule, hedge_play, simulate

DEFAULT_ORACLE_CAP = 10**6


class OrderingHedge:
    """Hedge with one weight per ordering, speaking the learner protocol.

    ``log_weights`` seeds initial weights, e.g. log multiplicities when an
    ordering stands in for several with the same behavior.
    """

    def __init__(self, orderings, rate: RateSchedule, log_weights=None, cap: int = DEFAULT_ORACLE_CAP):
        self.orderings = np.asarray(orderings, dtype=np.intp)
        if self.orderings.ndim != 2:
            raise ValidationError("orderings must be an n x K array")
        n, self.K = self.orderings.shape
        if n > cap:
            raise CapacityError(f"{n} orderings exceeds the oracle cap {cap}")
        self.log_w = np.zeros(n) if log_weights is None else np.array(log_weights, dtype=float)
        self.log_size = float(logsumexp(self.log_w))
        self.rate = rate
        self.alive = np.ones(self.K, dtype=bool)
        self.current = self.orderings[:, 0].copy()
        self.cum = np.zeros(n)
        self.clock = 0
        self.round = 0

    @property
    def best_loss(self) -> float:
        return float(self.cum.min())

    def leaders(self) -> np.ndarray:
        return np.unique(self.current[self.cum == self.cum.min()])

    def leader(self) -> int:
        return int(self.leaders()[0])

    def next_eta(self) -> float:
        return self.rate.at(self.clock + 1, self.log_size)

    def marginal(self) -> np.ndarray:
        return np.bincount(self.current, weights=hedge_play(self.log_w), minlength=self.K)

    def play(self, eta: float | None = None) -> np.ndarray:
        if eta is None:
            eta = self.next_eta()
        if math.isinf(eta):
            p = np.zeros(self.K)
            p[self.leader()] = 1.0
            return p
        return self.marginal()

    def observe(self, losses, eta: float | None = None, tick: bool = True) -> None:
        losses = np.asarray(losses, dtype=float)
        if eta is None:
            eta = self.next_eta()
        if tick:
            self.clock += 1
        self.round += 1
        ell = losses[self.current]
        self.cum = self.cum + ell
        if math.isfinite(eta) and eta > 0:
            w = self.log_w - eta * ell
            self.log_w = w - w.max()

    def play_block(self, losses, ticks=None) -> np.ndarray:
        losses = np.asarray(losses, dtype=float)
        if ticks is None:
            ticks = np.ones(losses.shape[0], dtype=bool)
        out = np.empty_like(losses)
        for k in range(losses.shape[0]):
            out[k] = self.play()
            self.observe(losses[k], tick=bool(ticks[k]))
        return out

    def kill(self, j: int) -> None:
        if not self.alive[j]:
            raise ContractViolation(f"expert {j} is not alive")
        if self.alive.sum() == 1:
            raise ScheduleViolation("cannot kill the last alive expert")
        self.alive[j] = False
        moved = np.flatnonzero(self.current == j)
        if moved.size:
            rows = self.orderings[moved]
            self.current[moved] = rows[np.arange(moved.size), np.argmax(self.alive[rows], axis=1)]


def hedge_over_orderings(orderings, losses: LossStream, schedule: DyingSchedule, rate: RateSchedule,
                         log_weights=None, cap: int = DEFAULT_ORACLE_CAP) -> np.ndarray:
    """Per-round expert marginals of Hedge run on the given orderings."""
    return simulate(OrderingHedge(orderings, rate, log_weights, cap), losses, schedule)


@dataclass
class Dedup:
    count: int
    representatives: np.ndarray
    multiplicities: np.ndarray


def dedup_behaviors(schedule: DyingSchedule) -> Dedup:
    """Group all ``K!`` orderings by behavior."""
    if schedule.K > 9:
        raise CapacityError("behavior deduplication enumerates K!; K must be <= 9")
    perms = all_orderings(schedule.K)
    keys = day_plays(perms, schedule)
    _, first, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
    order = np.argsort(first)
    return Dedup(int(first.size), perms[first[order]], counts[order])


def serialized_schedule(schedule: DyingSchedule) -> DyingSchedule:
    """Same death order, one death per night (the order used by the dummy-round preprocessor)."""
    order = schedule.dying_order
    deaths = [None] * schedule.K
    for k, e in enumerate(order):
        deaths[e] = k + 1
    return DyingSchedule(tuple(deaths), len(order) + 1)


def known_order_comparators(schedule: DyingSchedule) -> np.ndarray:
    """The ordering multiset a known-order learner simulates for ``schedule``."""
    return np.array(enumerate_effective(serialized_schedule(schedule)), dtype=np.intp)


@dataclass
class CertificationReport:
    max_gap: float
    tol: float
    passed: bool
    first_divergent_round: int | None = None
    snapshot: dict = field(default_factory=dict)

    def summary(self) -> str:
        s = f"max_gap={self.max_gap:.3e} tol={self.tol:.1e} {'PASS' if self.passed else 'FAIL'}"
        if not self.passed:
            s += f" first_divergent_round={self.first_divergent_round} state={self.snapshot}"
        return s


def certify(learner, losses: LossStream, schedule: DyingSchedule, oracle_marginals, tol: float = 1e-9,
            real=None) -> CertificationReport:
    """Drive ``learner`` round by round and compare its play with the oracle's."""
    Q = np.asarray(oracle_marginals, dtype=float)
    if Q.shape != losses.losses.shape or schedule.T != losses.T or schedule.K != losses.K:
        raise ValidationError("oracle marginals, losses and schedule must share T and K")
    max_gap = 0.0
    first = None
    snap: dict = {}
    for t in range(losses.T):
        p = learner.play()
        gap = float(np.max(np.abs(p - Q[t])))
        if gap > tol and first is None:
            first = t
            snap = learner.snapshot() if hasattr(learner, "snapshot") else {}
        max_gap = max(max_gap, gap)
        learner.observe(losses.losses[t], tick=True if real is None else bool(real[t]))
        if t + 1 < schedule.T:
            for j in schedule.deaths_at(t + 1):
                learner.kill(j)
    return CertificationReport(max_gap, tol, first is None, first, snap)
