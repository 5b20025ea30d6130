"""Hedge over permutation experts in O(K) per round.

Orderings that currently play the same expert form one group; the group of
expert ``i`` carries the pair ``(h_i, c_i)`` where ``h_i`` is the group's total
weight as of the last night and ``c_i`` the shared loss factor accrued since.
When an expert dies its group's weight is handed to the surviving groups in
the proportions in which its orderings continue.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import DyingSchedule, LossStream, RunRecord, regret_report
from .errors import ContractViolation, ValidationError
from .hedge import ExpertWeights, RateSchedule, simulate


class GroupedHedge(ExpertWeights):
    """Grouped exponential weights; subclasses decide how a dead group splits."""

    clamp_on_death = True

    def _log_fractions(self, j: int) -> np.ndarray:
        raise NotImplementedError

    def _redistribute(self, j: int) -> None:
        moved = self.log_h[j] + self.log_c[j]
        frac = self._log_fractions(j)
        merged = np.logaddexp(self.log_h + self.log_c, moved + frac)
        self.log_h = np.where(self.alive, merged, -np.inf)
        self.log_c = np.where(self.alive, 0.0, -np.inf)

    @property
    def log_mass(self) -> float:
        """log of the alive groups' total weight, excluding the common scale."""
        return float(logsumexp(self.log_weights[self.alive]))


class HedgePermUnknown(GroupedHedge):
    """Hedge over all ``K!`` orderings; the death order need not be known.

    Each group starts with ``(K-1)!`` orderings; a dead group splits evenly
    over the survivors.
    """

    def __init__(self, K: int, rate: RateSchedule):
        if K < 1:
            raise ValidationError("K must be at least 1")
        super().__init__(np.full(K, gammaln(K)), rate, log_size=float(gammaln(K + 1)))

    def _log_fractions(self, j: int) -> np.ndarray:
        return np.full(self.K, -math.log(self.alive.sum()))


def initial_group_sizes(K: int, dying_order: Sequence[int]) -> np.ndarray:
    """Log head counts of the effective orderings when experts die one per night.

    The ``k``-th expert to die (0-based) heads ``2^(D-k-1) * A`` orderings,
    where ``D = len(dying_order)`` and ``A = K - D``; survivors head one each.
    """
    order = [int(e) for e in dying_order]
    if len(set(order)) != len(order) or any(not 0 <= e < K for e in order):
        raise ValidationError(f"dying order {order} must name distinct experts in 0..{K - 1}")
    D = len(order)
    A = K - D
    if A < 1:
        raise ValidationError("at least one expert must never die")
    log_g = np.zeros(K)
    for k, e in enumerate(order):
        log_g[e] = (D - k - 1) * math.log(2) + math.log(A)
    return log_g


class HedgePermKnown(GroupedHedge):
    """Hedge over the effective orderings for a declared death order.

    A dead group splits over the survivors in proportion to their initial
    group sizes, which is how its orderings continue.
    """

    def __init__(self, K: int, dying_order: Sequence[int], rate: RateSchedule):
        self.log_g = initial_group_sizes(K, dying_order)
        self.dying_order = tuple(int(e) for e in dying_order)
        self._next = 0
        D = len(self.dying_order)
        super().__init__(self.log_g.copy(), rate, log_size=D * math.log(2) + math.log(K - D))

    @classmethod
    def for_schedule(cls, schedule: DyingSchedule, rate: RateSchedule) -> "HedgePermKnown":
        return cls(schedule.K, schedule.dying_order, rate)

    def kill(self, j: int) -> None:
        if self._next >= len(self.dying_order) or self.dying_order[self._next] != j:
            expected = self.dying_order[self._next] if self._next < len(self.dying_order) else None
            raise ContractViolation(f"expert {j} died out of the declared order (expected {expected})")
        super().kill(j)
        self._next += 1

    def _log_fractions(self, j: int) -> np.ndarray:
        g = np.where(self.alive, self.log_g, -np.inf)
        return g - logsumexp(g)


def hpu_default_rate(K: int, T: int) -> RateSchedule:
    return RateSchedule.fixed(math.sqrt(2 * gammaln(K + 1) / T))


def hpk_default_rate(K: int, n_dying: int, T: int) -> RateSchedule:
    return RateSchedule.fixed(math.sqrt(2 * (n_dying * math.log(2) + math.log(K - n_dying)) / T))


def preprocess_dummy_rounds(losses: LossStream, schedule: DyingSchedule):
    """Serialize multi-death nights into one death per night.

    Each extra death on a night gets its own inserted all-zero round, at the
    end of which that expert dies. Returns the expanded loss stream, the
    expanded schedule and ``round_map`` (original round -> expanded round).
    """
    rows = []
    round_map = []
    death = [None] * schedule.K
    for t in range(schedule.T):
        round_map.append(len(rows))
        rows.append(losses.losses[t])
        dying = schedule.deaths_at(t + 1)
        for k, j in enumerate(dying):
            if k > 0:
                rows.append(np.zeros(schedule.K))
            death[j] = len(rows)
    new_T = len(rows)
    return (
        LossStream(np.array(rows)),
        DyingSchedule(tuple(death), new_T),
        np.array(round_map, dtype=np.intp),
    )


def real_rounds(round_map: np.ndarray, T: int) -> np.ndarray:
    real = np.zeros(T, dtype=bool)
    real[round_map] = True
    return real


def run_serialized(learner, losses: LossStream, schedule: DyingSchedule) -> np.ndarray:
    """Run ``learner`` through the dummy-round expansion; distributions on original rounds."""
    big_losses, big_schedule, round_map = preprocess_dummy_rounds(losses, schedule)
    P = simulate(learner, big_losses, big_schedule, real=real_rounds(round_map, big_losses.T))
    return P[round_map]


def run_hpu(losses: LossStream, schedule: DyingSchedule, rate: RateSchedule | None = None,
            preprocess: bool = False) -> RunRecord:
    rate = rate or hpu_default_rate(losses.K, losses.T)
    learner = HedgePermUnknown(losses.K, rate)
    P = run_serialized(learner, losses, schedule) if preprocess else simulate(learner, losses, schedule)
    return regret_report(P, losses, schedule)


def run_hpk(losses: LossStream, schedule: DyingSchedule, rate: RateSchedule | None = None,
            preprocess: bool = False) -> RunRecord:
    rate = rate or hpk_default_rate(losses.K, len(schedule.dying_order), losses.T)
    learner = HedgePermKnown.for_schedule(schedule, rate)
    P = run_serialized(learner, losses, schedule) if preprocess else simulate(learner, losses, schedule)
    return regret_report(P, losses, schedule)
