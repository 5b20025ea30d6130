"""Loss-and-schedule generators, including the lower-bound constructions.

Randomness comes from numpy's Philox counter-based generator. Every
(generator, day, expert) triple owns an independent substream keyed off the
64-bit seed through ``SeedSequence(seed, spawn_key=(tag, day, expert))``, so
which expert dies on one day never shifts the draws of another day.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DyingSchedule, LossStream
from .errors import ValidationError

ADVERSARY_KINDS = ("bernoulli", "unknown_lb", "known_lb", "stochastic_gap")

_TAG = {"bernoulli": 1, "unknown_lb": 2, "known_lb": 3, "stochastic_gap": 4}


@dataclass(frozen=True)
class AdversaryConfig:
    K: int
    T: int
    m: int = 0
    seed: int = 0
    kind: str = "bernoulli"
    p: float = 0.5
    means: tuple[float, ...] | None = None
    schedule: DyingSchedule | None = None

    def __post_init__(self):
        if self.kind not in ADVERSARY_KINDS:
            raise ValidationError(f"unknown adversary {self.kind!r}; expected one of {ADVERSARY_KINDS}")
        if self.K < 1 or self.T < 1 or self.m < 0:
            raise ValidationError("need K >= 1, T >= 1 and m >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must fit in 64 bits")


@dataclass(frozen=True)
class Instance:
    losses: LossStream
    schedule: DyingSchedule
    dying_order: tuple[int, ...] = ()


def substream(seed: int, tag: int, day: int, expert: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(tag, day, expert))))


def split_days(T: int, parts: int) -> list[tuple[int, int]]:
    """``parts`` equal segments of ``range(T)``; leftover rounds go to the last one."""
    size = T // parts
    bounds = [s * size for s in range(parts)] + [T]
    return list(zip(bounds[:-1], bounds[1:]))


def even_schedule(K: int, T: int, m: int, order: Sequence[int] | None = None) -> DyingSchedule:
    """``m`` single-death nights at evenly spaced day boundaries."""
    if m > K - 1 or T < m + 1:
        raise ValidationError(f"cannot place {m} nights with K={K}, T={T}")
    order = list(range(m)) if order is None else list(order)[:m]
    deaths = [None] * K
    for (_, stop), e in zip(split_days(T, m + 1), order):
        deaths[e] = stop
    return DyingSchedule(tuple(deaths), T)


def _check_schedule(cfg: AdversaryConfig) -> DyingSchedule:
    schedule = cfg.schedule or DyingSchedule.never(cfg.K, cfg.T)
    if schedule.K != cfg.K or schedule.T != cfg.T:
        raise ValidationError("supplied schedule does not match K and T")
    return schedule


def gen_bernoulli(cfg: AdversaryConfig) -> Instance:
    """i.i.d. Bernoulli(p) losses; no deaths unless ``cfg.schedule`` is given."""
    if not 0.0 <= cfg.p <= 1.0:
        raise ValidationError("p must lie in [0, 1]")
    cols = [substream(cfg.seed, _TAG["bernoulli"], 0, i).random(cfg.T) < cfg.p for i in range(cfg.K)]
    return Instance(LossStream(np.column_stack(cols).astype(float)), _check_schedule(cfg))


def gen_stochastic_gap(cfg: AdversaryConfig) -> Instance:
    """Expert ``i`` suffers Bernoulli(``means[i]``) losses."""
    means = np.asarray(cfg.means, dtype=float)
    if means.shape != (cfg.K,) or means.min() < 0 or means.max() > 1:
        raise ValidationError("means must be K values in [0, 1]")
    if np.count_nonzero(means == means.min()) > 1:
        warnings.warn("mean losses have no unique minimum: there is no gap", stacklevel=2)
    cols = [
        substream(cfg.seed, _TAG["stochastic_gap"], 0, i).random(cfg.T) < mu
        for i, mu in enumerate(means)
    ]
    return Instance(LossStream(np.column_stack(cols).astype(float)), _check_schedule(cfg))


def gen_unknown_lb(cfg: AdversaryConfig) -> Instance:
    """Decoupled days for the unknown-order lower bound.

    ``m+1`` days; on each, alive experts draw fair coin losses for the first
    half. The expert with the smallest first-half loss (lowest index on ties)
    then suffers nothing, every other alive expert replays ``1 - loss`` of its
    first half, and the chosen expert dies at the end of the day. An odd day
    length leaves one closing round where the chosen expert loses 0 and the
    others 1/2. Dead experts lose 1.
    """
    K, T, m = cfg.K, cfg.T, cfg.m
    if m > K - 1 or T < 2 * (m + 1):
        raise ValidationError(f"infeasible unknown-order construction: K={K}, T={T}, m={m}")
    L = np.ones((T, K))
    alive = list(range(K))
    deaths = [None] * K
    order = []
    for s, (start, stop) in enumerate(split_days(T, m + 1)):
        half = (stop - start) // 2
        first = {
            i: (substream(cfg.seed, _TAG["unknown_lb"], s, i).random(half) < 0.5).astype(float)
            for i in alive
        }
        star = min(alive, key=lambda i: (first[i].sum(), i))
        for i in alive:
            L[start:start + half, i] = first[i]
            L[start + half:start + 2 * half, i] = 0.0 if i == star else 1.0 - first[i]
            if start + 2 * half < stop:
                L[stop - 1, i] = 0.0 if i == star else 0.5
        order.append(star)
        if s < m:
            deaths[star] = stop
            alive.remove(star)
    return Instance(LossStream(L), DyingSchedule(tuple(deaths), T), tuple(order[:m]))


def gen_known_lb(cfg: AdversaryConfig) -> Instance:
    """Pairs of fair-coin experts for the known-order lower bound.

    ``m/2`` days; on day ``s`` experts ``2s`` and ``2s+1`` draw fair coin
    losses and everyone else loses 1. The pair dies at the end of its day,
    except on the last day, whose end is the end of the game.
    """
    K, T, m = cfg.K, cfg.T, cfg.m
    if m < 2 or m % 2 or K < m or T < m // 2:
        raise ValidationError(f"infeasible known-order construction: K={K}, T={T}, m={m}")
    n_days = m // 2
    L = np.ones((T, K))
    deaths = [None] * K
    for s, (start, stop) in enumerate(split_days(T, n_days)):
        for i in (2 * s, 2 * s + 1):
            L[start:stop, i] = substream(cfg.seed, _TAG["known_lb"], s, i).random(stop - start) < 0.5
            if s < n_days - 1:
                deaths[i] = stop
    schedule = DyingSchedule(tuple(deaths), T)
    return Instance(LossStream(L), schedule, schedule.dying_order)


GENERATORS = {
    "bernoulli": gen_bernoulli,
    "unknown_lb": gen_unknown_lb,
    "known_lb": gen_known_lb,
    "stochastic_gap": gen_stochastic_gap,
}


def generate(cfg: AdversaryConfig) -> Instance:
    return GENERATORS[cfg.kind](cfg)
