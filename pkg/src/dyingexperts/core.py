"""Domain types for the dying-experts game, regret accounting, and effective orderings.

Conventions used throughout the package:

* experts are indexed ``0..K-1``;
* rounds are indexed ``0..T-1`` when addressing arrays;
* a death round ``r`` (an integer in ``[1, T-1]``) means the expert is alive
  for array rounds ``0..r-1`` and dead from round ``r`` on, i.e. it dies on
  the night that closes the ``r``-th round.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from itertools import permutations
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, ContractViolation, ScheduleViolation, ValidationError

Ordering = tuple[int, ...]

DEFAULT_ENUMERATION_CAP = 2**20
DEAD_MASS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class LossStream:
    """A ``T x K`` array of per-round expert losses in ``[0, 1]``."""

    losses: np.ndarray

    def __post_init__(self):
        arr = np.array(self.losses, dtype=float, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"losses must be a non-empty T x K array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError("every loss must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "losses", arr)

    @property
    def T(self) -> int:
        return self.losses.shape[0]

    @property
    def K(self) -> int:
        return self.losses.shape[1]

    def __eq__(self, other):
        return isinstance(other, LossStream) and np.array_equal(self.losses, other.losses)

    __hash__ = None


@dataclass(frozen=True)
class DyingSchedule:
    """Per-expert death rounds over a horizon of ``horizon`` rounds.

    ``death_rounds[i]`` is ``None`` for an expert that never dies.
    """

    death_rounds: tuple[int | None, ...]
    horizon: int

    def __post_init__(self):
        rounds = tuple(None if r is None else int(r) for r in self.death_rounds)
        object.__setattr__(self, "death_rounds", rounds)
        if self.horizon < 1:
            raise ScheduleViolation("horizon must be at least 1")
        if not rounds:
            raise ScheduleViolation("a schedule needs at least one expert")
        for i, r in enumerate(rounds):
            if r is not None and not 1 <= r <= self.horizon - 1:
                raise ScheduleViolation(
                    f"expert {i}: death round {r} outside [1, {self.horizon - 1}]"
                )
        if all(r is not None for r in rounds):
            raise ScheduleViolation("at least one expert must stay alive for the whole game")

    @classmethod
    def never(cls, K: int, T: int) -> "DyingSchedule":
        return cls((None,) * K, T)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "DyingSchedule":
        """Build a schedule from a ``T x K`` boolean alive mask."""
        mask = np.asarray(mask, dtype=bool)
        T, K = mask.shape
        if np.any(mask[1:] & ~mask[:-1]):
            raise ScheduleViolation("alive mask must be monotone shrinking")
        if not mask[-1].any():
            raise ScheduleViolation("alive mask leaves no expert alive")
        deaths = []
        for i in range(K):
            col = mask[:, i]
            if col.all():
                deaths.append(None)
            elif not col[0]:
                raise ScheduleViolation(f"expert {i} is dead from the first round")
            else:
                deaths.append(int(np.argmin(col)))
        return cls(tuple(deaths), T)

    @property
    def K(self) -> int:
        return len(self.death_rounds)

    @property
    def T(self) -> int:
        return self.horizon

    @cached_property
    def nights(self) -> tuple[int, ...]:
        """Distinct night rounds, ascending."""
        return tuple(sorted({r for r in self.death_rounds if r is not None}))

    @property
    def m(self) -> int:
        return len(self.nights)

    @cached_property
    def deaths_per_night(self) -> tuple[int, ...]:
        return tuple(sum(1 for r in self.death_rounds if r == n) for n in self.nights)

    @cached_property
    def survivors(self) -> tuple[int, ...]:
        return tuple(i for i, r in enumerate(self.death_rounds) if r is None)

    @property
    def A(self) -> int:
        return len(self.survivors)

    @cached_property
    def dying_order(self) -> tuple[int, ...]:
        """Experts that die, by death round and then by index."""
        dying = [(r, i) for i, r in enumerate(self.death_rounds) if r is not None]
        return tuple(i for _, i in sorted(dying))

    def deaths_at(self, night: int) -> tuple[int, ...]:
        return tuple(i for i, r in enumerate(self.death_rounds) if r == night)

    def is_alive(self, expert: int, t: int) -> bool:
        r = self.death_rounds[expert]
        return r is None or t < r

    def alive_set(self, t: int) -> frozenset[int]:
        """Experts available in array round ``t``."""
        return frozenset(i for i in range(self.K) if self.is_alive(i, t))

    def dead_set(self, t: int) -> frozenset[int]:
        return frozenset(range(self.K)) - self.alive_set(t)

    def last_night_at(self, t: int) -> int:
        """Latest night among rounds ``1..t`` (1-based), or 0 before the first night."""
        return max((n for n in self.nights if n <= t), default=0)

    @cached_property
    def alive_mask(self) -> np.ndarray:
        t = np.arange(self.horizon)[:, None]
        r = np.array([self.horizon if d is None else d for d in self.death_rounds])[None, :]
        mask = t < r
        mask.setflags(write=False)
        return mask

    @cached_property
    def days(self) -> tuple[tuple[int, int], ...]:
        """Half-open array-round segments ``[start, stop)`` separated by nights."""
        bounds = (0, *self.nights, self.horizon)
        return tuple(zip(bounds[:-1], bounds[1:]))


def validate_ordering(perm: Sequence[int], K: int) -> Ordering:
    perm = tuple(int(e) for e in perm)
    if sorted(perm) != list(range(K)):
        raise ValidationError(f"{perm} is not a permutation of 0..{K - 1}")
    return perm


def first_alive(perm: Sequence[int], alive) -> int:
    """First expert of ``perm`` that is in ``alive`` (a set, or a boolean mask)."""
    if isinstance(alive, np.ndarray) and alive.dtype == bool:
        alive = set(np.flatnonzero(alive).tolist())
    for e in perm:
        if e in alive:
            return e
    raise ScheduleViolation("no alive expert in the ordering")


def behavior_of(perm: Sequence[int], schedule: DyingSchedule) -> tuple[int, ...]:
    """The expert played by ``perm`` in every round of ``schedule``."""
    perm = validate_ordering(perm, schedule.K)
    plays = []
    for start, stop in schedule.days:
        e = first_alive(perm, schedule.alive_set(start))
        plays.extend([e] * (stop - start))
    return tuple(plays)


def day_plays(orderings: np.ndarray, schedule: DyingSchedule) -> np.ndarray:
    """``n x (m+1)`` array: the expert each ordering plays on each day."""
    orderings = np.asarray(orderings, dtype=np.intp)
    out = np.empty((orderings.shape[0], len(schedule.days)), dtype=np.intp)
    rows = np.arange(orderings.shape[0])
    for s, (start, _) in enumerate(schedule.days):
        alive = schedule.alive_mask[start][orderings]
        out[:, s] = orderings[rows, np.argmax(alive, axis=1)]
    return out


def behaviors(orderings: np.ndarray, schedule: DyingSchedule) -> np.ndarray:
    """``n x T`` array of plays, one row per ordering."""
    per_day = day_plays(orderings, schedule)
    lengths = [stop - start for start, stop in schedule.days]
    return np.repeat(per_day, lengths, axis=1)


def count_effective(d: Iterable[int], A: int) -> int:
    """Number of behaviorally distinct orderings: ``A * prod(d_s + 1)``."""
    d = list(d)
    if A < 1:
        raise ScheduleViolation("at least one expert must survive (A >= 1)")
    if any(x < 1 for x in d):
        raise ValidationError("every night must have at least one death")
    return A * math.prod(x + 1 for x in d)


def enumerate_effective(schedule: DyingSchedule, cap: int = DEFAULT_ENUMERATION_CAP) -> list[Ordering]:
    """One ordering per distinct behavior, built night by night from the last one.

    Orderings are padded to length K with unused experts in ascending order.
    """
    size = count_effective(schedule.deaths_per_night, schedule.A)
    if size > cap:
        raise CapacityError(f"effective set has {size} orderings, cap is {cap}")
    chains: list[tuple[int, ...]] = [(e,) for e in schedule.survivors]
    for night in reversed(schedule.nights):
        heads = schedule.deaths_at(night)
        chains = [(e, *c) for e in heads for c in chains] + chains
    out = []
    for c in chains:
        used = set(c)
        out.append(c + tuple(e for e in range(schedule.K) if e not in used))
    return out


def all_orderings(K: int) -> np.ndarray:
    return np.array(list(permutations(range(K))), dtype=np.intp).reshape(-1, K)


def best_ordering_loss(losses: LossStream, schedule: DyingSchedule) -> tuple[float, tuple[int, ...]]:
    """Minimum cumulative loss over all orderings, with a minimizing behavior.

    Dynamic program over nights: an optimal ordering plays one expert until it
    dies, then the best continuation among experts alive at that point.
    """
    if losses.K != schedule.K or losses.T != schedule.T:
        raise ValidationError("loss stream and schedule disagree on K or T")
    L = losses.losses
    T, K = L.shape
    prefix = np.vstack([np.zeros(K), np.cumsum(L, axis=0)])
    starts = (0, *schedule.nights)
    index_of = {b: s for s, b in enumerate(starts)}
    best = [math.inf] * len(starts)
    choice = [-1] * len(starts)
    for s in reversed(range(len(starts))):
        b = starts[s]
        for j in range(K):
            r = schedule.death_rounds[j]
            if r is not None and r <= b:
                continue
            end = T if r is None else r
            v = prefix[end, j] - prefix[b, j]
            if r is not None:
                v += best[index_of[r]]
            if v < best[s]:
                best[s], choice[s] = v, j
    plays: list[int] = []
    s = 0
    while True:
        j = choice[s]
        r = schedule.death_rounds[j]
        end = T if r is None else r
        plays.extend([j] * (end - starts[s]))
        if r is None:
            break
        s = index_of[r]
    return float(best[0]), tuple(plays)


@dataclass
class RunRecord:
    """Per-round play and the resulting regret figures."""

    distributions: np.ndarray
    learner_loss: np.ndarray
    cumulative_loss: np.ndarray
    best_ordering_loss: float
    ranking_regret: float
    classical_regret_all: float
    classical_regret_alive: float
    best_behavior: tuple[int, ...] = ()
    extras: dict = field(default_factory=dict)

    @property
    def total_loss(self) -> float:
        return float(self.cumulative_loss[-1])


def regret_report(distributions, losses: LossStream, schedule: DyingSchedule, extras: dict | None = None) -> RunRecord:
    """Score a ``T x K`` sequence of played distributions against ``losses``."""
    P = np.asarray(distributions, dtype=float)
    if P.shape != losses.losses.shape or schedule.K != losses.K or schedule.T != losses.T:
        raise ValidationError("distributions, losses and schedule must share T and K")
    dead_mass = np.where(schedule.alive_mask, 0.0, P)
    if dead_mass.size and dead_mass.max() > DEAD_MASS_TOL:
        t, i = np.unravel_index(np.argmax(dead_mass), P.shape)
        raise ContractViolation(f"round {t}: mass {P[t, i]:.3g} on dead expert {i}")
    per_round = np.einsum("tk,tk->t", P, losses.losses)
    cum = np.cumsum(per_round)
    total = float(cum[-1])
    best, witness = best_ordering_loss(losses, schedule)
    expert_totals = losses.losses.sum(axis=0)
    return RunRecord(
        distributions=P,
        learner_loss=per_round,
        cumulative_loss=cum,
        best_ordering_loss=best,
        ranking_regret=total - best,
        classical_regret_all=total - float(expert_totals.min()),
        classical_regret_alive=total - float(expert_totals[list(schedule.survivors)].min()),
        best_behavior=witness,
        extras=dict(extras or {}),
    )


# -- plain-text instance format -------------------------------------------
#
#   K T
#   d_0 d_1 ... d_{K-1}        (death rounds, '-' for never)
#   T lines of K losses


def format_instance(losses: LossStream, schedule: DyingSchedule) -> str:
    if losses.K != schedule.K or losses.T != schedule.T:
        raise ValidationError("loss stream and schedule disagree on K or T")
    buf = io.StringIO()
    buf.write(f"{losses.K} {losses.T}\n")
    buf.write(" ".join("-" if r is None else str(r) for r in schedule.death_rounds) + "\n")
    for row in losses.losses:
        buf.write(" ".join(repr(float(x)) for x in row) + "\n")
    return buf.getvalue()


def parse_instance(text: str) -> tuple[LossStream, DyingSchedule]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise ValidationError("instance needs a header and a death-round line")
    try:
        K, T = (int(x) for x in lines[0].split())
    except ValueError as exc:
        raise ValidationError(f"bad header line: {lines[0]!r}") from exc
    deaths = lines[1].split()
    if len(deaths) != K:
        raise ValidationError(f"expected {K} death rounds, got {len(deaths)}")
    schedule = DyingSchedule(tuple(None if d == "-" else int(d) for d in deaths), T)
    rows = [ln.split() for ln in lines[2:]]
    if len(rows) != T or any(len(r) != K for r in rows):
        raise ValidationError(f"expected {T} loss rows of {K} values")
    return LossStream(np.array(rows, dtype=float)), schedule


def write_instance(path: str | os.PathLike, losses: LossStream, schedule: DyingSchedule) -> None:
    with open(path, "w") as fh:
        fh.write(format_instance(losses, schedule))


def read_instance(path: str | os.PathLike) -> tuple[LossStream, DyingSchedule]:
    with open(path) as fh:
        return parse_instance(fh.read())
