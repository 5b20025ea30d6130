"""Exponential weights over a finite expert set, in the log domain.

Every learner in the package speaks the same online protocol::

    p = learner.play()                  # distribution for this round
    learner.observe(losses)             # full loss vector for the round
    for j in deaths: learner.kill(j)    # zero or more death notifications

``play_block`` runs the first two steps over a whole day at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DyingSchedule, LossStream, RunRecord, regret_report
from .errors import ContractViolation, ScheduleViolation, ValidationError

RATE_KINDS = ("fixed", "anytime", "adahedge", "infinite")


@dataclass(frozen=True)
class RateSchedule:
    """Learning-rate rule.

    ``fixed``: constant ``eta``. ``anytime``: ``sqrt(c * ln N / t)`` where ``t``
    counts rounds on the learner's clock and ``ln N`` is the log-size of the
    comparator set (overridable through ``log_n``). ``adahedge`` is driven from
    outside by :class:`dyingexperts.adaptive.AdaHedge`. ``infinite`` is the
    follow-the-leader limit.
    """

    kind: str = "fixed"
    eta: float = 1.0
    c: float = 8.0
    log_n: float | None = None

    def __post_init__(self):
        if self.kind not in RATE_KINDS:
            raise ValidationError(f"unknown rate kind {self.kind!r}; expected one of {RATE_KINDS}")
        if self.kind == "fixed" and not (math.isfinite(self.eta) and self.eta >= 0):
            raise ValidationError("fixed rate needs a finite eta >= 0")
        if self.kind == "anytime" and not self.c > 0:
            raise ValidationError("anytime rate needs c > 0")

    @classmethod
    def fixed(cls, eta: float) -> "RateSchedule":
        return cls("fixed", eta=float(eta))

    @classmethod
    def anytime(cls, c: float = 8.0, log_n: float | None = None) -> "RateSchedule":
        return cls("anytime", c=float(c), log_n=log_n)

    @classmethod
    def adahedge(cls) -> "RateSchedule":
        return cls("adahedge")

    @classmethod
    def infinite(cls) -> "RateSchedule":
        return cls("infinite")

    @property
    def precomputable(self) -> bool:
        return self.kind in ("fixed", "anytime")

    def at(self, t: int, log_n: float) -> float:
        """Rate for the ``t``-th clock round (1-based)."""
        if self.kind == "fixed":
            return self.eta
        if self.kind == "anytime":
            ln = self.log_n if self.log_n is not None else log_n
            return math.sqrt(self.c * max(ln, 0.0) / max(t, 1))
        if self.kind == "infinite":
            return math.inf
        raise ContractViolation("adahedge rates are set by the AdaHedge driver")


def log_softmax(log_w: np.ndarray) -> np.ndarray:
    log_w = np.asarray(log_w, dtype=float)
    top = np.max(log_w, axis=-1, keepdims=True)
    z = log_w - top
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def hedge_play(log_w) -> np.ndarray:
    """Normalized weights ``w_i / sum_j w_j`` from log-weights (max-shifted)."""
    log_w = np.asarray(log_w, dtype=float)
    z = np.exp(log_w - np.max(log_w, axis=-1, keepdims=True))
    return z / np.sum(z, axis=-1, keepdims=True)


def hedge_update(log_w, losses, eta: float) -> np.ndarray:
    """One multiplicative step ``w_i <- w_i exp(-eta l_i)``, shifted so the max is 0."""
    if not math.isfinite(eta):
        raise ContractViolation("infinite rates are follow-the-leader steps, not weight updates")
    if eta < 0:
        raise ValidationError("learning rate must be non-negative")
    out = np.asarray(log_w, dtype=float) - eta * np.asarray(losses, dtype=float)
    return out - np.max(out)


def _check_losses(losses: np.ndarray, K: int) -> np.ndarray:
    losses = np.asarray(losses, dtype=float)
    if losses.shape[-1] != K:
        raise ValidationError(f"expected {K} losses per round, got {losses.shape[-1]}")
    if losses.size and (losses.min() < 0.0 or losses.max() > 1.0 or not np.all(np.isfinite(losses))):
        raise ValidationError("losses must lie in [0, 1]")
    return losses


class ExpertWeights:
    """Shared machinery for learners whose play is a softmax over per-expert log-weights.

    The weight of expert ``i`` is ``exp(log_h[i] + log_c[i] + log_scale)``;
    ``log_c`` collects losses since the last reset point and ``log_scale`` the
    common shifts applied to keep numbers near zero. Dead experts sit at -inf.
    Cumulative losses ``cum`` back the infinite-rate (leader) play.
    """

    clamp_on_death = False

    def __init__(self, log_h, rate: RateSchedule, log_size: float):
        self.log_h = np.array(log_h, dtype=float)
        self.K = self.log_h.size
        if self.K < 1:
            raise ValidationError("need at least one expert")
        self.log_c = np.zeros(self.K)
        self.log_scale = 0.0
        self.alive = np.ones(self.K, dtype=bool)
        self.rate = rate
        self.log_size = float(log_size)
        self.clock = 0
        self.round = 0
        self.last_night = 0
        self.cum = np.zeros(self.K)

    # -- queries -----------------------------------------------------------

    @property
    def log_weights(self) -> np.ndarray:
        return self.log_h + self.log_c

    def weight_distribution(self) -> np.ndarray:
        return hedge_play(self.log_weights)

    def leaders(self) -> np.ndarray:
        return np.flatnonzero(self.alive & (self.cum == self.best_loss))

    def leader(self) -> int:
        return int(self.leaders()[0])

    @property
    def best_loss(self) -> float:
        return float(self.cum[self.alive].min())

    def next_eta(self) -> float:
        return self.rate.at(self.clock + 1, self.log_size)

    def play(self, eta: float | None = None) -> np.ndarray:
        if eta is None:
            eta = self.next_eta()
        if math.isinf(eta):
            p = np.zeros(self.K)
            p[self.leader()] = 1.0
            return p
        return self.weight_distribution()

    # -- updates -----------------------------------------------------------

    def observe(self, losses, eta: float | None = None, tick: bool = True) -> None:
        losses = _check_losses(losses, self.K)
        if eta is None:
            eta = self.next_eta()
        if tick:
            self.clock += 1
        self.round += 1
        self.cum = np.where(self.alive, self.cum + losses, np.inf)
        if math.isfinite(eta) and eta > 0:
            self._absorb(-eta * losses)

    def _absorb(self, delta: np.ndarray) -> None:
        log_c = self.log_c + delta
        shift = np.max(log_c[self.alive])
        self.log_c = log_c - shift
        self.log_scale += shift

    def play_block(self, losses, ticks=None) -> np.ndarray:
        """Play and observe every row of ``losses`` (a death-free stretch)."""
        losses = _check_losses(losses, self.K)
        n = losses.shape[0]
        if ticks is None:
            ticks = np.ones(n, dtype=bool)
        if not self.rate.precomputable:
            out = np.empty_like(losses)
            for k in range(n):
                out[k] = self.play()
                self.observe(losses[k], tick=bool(ticks[k]))
            return out
        clocks = self.clock + np.cumsum(ticks)
        etas = np.array([self.rate.at(int(c), self.log_size) for c in clocks])
        steps = etas[:, None] * losses
        offsets = np.vstack([np.zeros(self.K), np.cumsum(steps, axis=0)])
        out = hedge_play(self.log_weights[None, :] - offsets[:-1])
        self.clock = int(clocks[-1]) if n else self.clock
        self.round += n
        self.cum = np.where(self.alive, self.cum + losses.sum(axis=0), np.inf)
        self._absorb(-offsets[-1])
        return out

    def kill(self, j: int) -> None:
        if not 0 <= j < self.K or not self.alive[j]:
            raise ContractViolation(f"expert {j} is not alive")
        if self.alive.sum() == 1:
            raise ScheduleViolation("cannot kill the last alive expert")
        self.alive[j] = False
        self.last_night = self.round
        if self.clamp_on_death:
            self.cum = np.where(self.alive, np.minimum(self.cum, self.cum[j]), np.inf)
        else:
            self.cum[j] = np.inf
        self._redistribute(j)

    def _redistribute(self, j: int) -> None:
        self.log_h[j] = -np.inf
        self.log_c[j] = -np.inf

    def snapshot(self) -> dict:
        return {
            "round": self.round,
            "alive": np.flatnonzero(self.alive).tolist(),
            "log_h": self.log_h.tolist(),
            "log_c": self.log_c.tolist(),
            "log_scale": self.log_scale,
        }


class Hedge(ExpertWeights):
    """Hedge over ``n`` experts; a dead expert is dropped and the rest renormalized."""

    def __init__(self, n: int, rate: RateSchedule, log_weights=None):
        log_w = np.zeros(n) if log_weights is None else np.asarray(log_weights, dtype=float)
        super().__init__(log_w, rate, log_size=float(np.log(np.sum(np.exp(log_w)))))


def simulate(learner, losses: LossStream, schedule: DyingSchedule, real=None) -> np.ndarray:
    """Drive ``learner`` through an instance; returns the ``T x K`` played distributions.

    ``real`` (optional boolean per round) marks rounds that advance the rate
    clock; inserted dummy rounds leave it frozen.
    """
    if losses.K != schedule.K or losses.T != schedule.T:
        raise ValidationError("loss stream and schedule disagree on K or T")
    L = losses.losses
    P = np.empty_like(L)
    for start, stop in schedule.days:
        ticks = None if real is None else np.asarray(real[start:stop], dtype=bool)
        P[start:stop] = learner.play_block(L[start:stop], ticks)
        if stop < schedule.T:
            for j in schedule.deaths_at(stop):
                learner.kill(j)
    return P


def run_hedge(losses: LossStream, rate: RateSchedule, alive_mask=None) -> RunRecord:
    """Hedge over the K experts, restricted each round to the alive ones."""
    schedule = (
        DyingSchedule.never(losses.K, losses.T)
        if alive_mask is None
        else DyingSchedule.from_mask(alive_mask)
    )
    learner = Hedge(losses.K, rate)
    if rate.kind == "adahedge":
        from .adaptive import AdaHedge

        learner = AdaHedge(learner)
    P = simulate(learner, losses, schedule)
    return regret_report(P, losses, schedule, extras=getattr(learner, "trace", None))


def resetting_hedge(losses: LossStream, schedule: DyingSchedule, rate: RateSchedule | None = None) -> RunRecord:
    """Fresh Hedge on every day over that day's alive experts.

    The default rate is ``sqrt(8 ln K / t')`` with ``t'`` counted from the last reset.
    """
    if rate is None:
        rate = RateSchedule.anytime(8.0, log_n=math.log(losses.K))
    L = losses.losses
    P = np.empty_like(L)
    for start, stop in schedule.days:
        alive = schedule.alive_mask[start]
        learner = Hedge(losses.K, rate, log_weights=np.where(alive, 0.0, -np.inf))
        learner.alive = alive.copy()
        if rate.kind == "adahedge":
            from .adaptive import AdaHedge

            learner = AdaHedge(learner)
        P[start:stop] = learner.play_block(L[start:stop])
    return regret_report(P, losses, schedule)
