"""Adaptive learners built on the grouped ordering weights.

* :class:`FtlState` follows the leader over orderings and tracks the best
  ordering's cumulative loss ``L*_t`` by clamping survivors when an expert dies.
* :class:`AdaHedge` and :class:`FlipFlop` wrap any learner from
  :mod:`dyingexperts.hedge`, :mod:`dyingexperts.learners` or
  :mod:`dyingexperts.oracle` and set its rate each round.
* :func:`quantile_meta` mixes several HPU copies tuned for different quantiles.

Rates vary from round to round, so the wrapped weights are the product of
per-round factors ``exp(-eta_t l_t)``; this is the form that the grouped
representation can carry exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .core import DyingSchedule, LossStream, RunRecord, regret_report
from .hedge import RateSchedule, hedge_play, simulate
from .learners import HedgePermKnown, HedgePermUnknown

ZERO_RATE = 1e-12


class FtlState:
    """Follow-the-leader over all orderings via clamped per-expert cumulative losses."""

    def __init__(self, K: int):
        self.K = K
        self.cum = np.zeros(K)
        self.alive = np.ones(K, dtype=bool)

    def leader(self) -> int:
        return int(np.flatnonzero(self.alive & (self.cum == self.best_loss))[0])

    @property
    def best_loss(self) -> float:
        return float(self.cum[self.alive].min())

    def kill(self, j: int) -> None:
        self.alive[j] = False
        self.cum = np.where(self.alive, np.minimum(self.cum, self.cum[j]), np.inf)

    def step(self, losses, deaths=()) -> int:
        played = self.leader()
        self.cum = np.where(self.alive, self.cum + np.asarray(losses, dtype=float), np.inf)
        for j in deaths:
            self.kill(j)
        return played


def ftl_dying_step(state: FtlState, losses, deaths=()) -> int:
    """Play the leader, absorb ``losses``, then apply each death's clamp."""
    return state.step(losses, deaths)


def run_ftl(losses: LossStream, schedule: DyingSchedule) -> RunRecord:
    state = FtlState(losses.K)
    P = np.zeros_like(losses.losses)
    best = np.empty(losses.T)
    for t in range(losses.T):
        deaths = schedule.deaths_at(t + 1) if t + 1 < losses.T else ()
        P[t, state.step(losses.losses[t], deaths)] = 1.0
        best[t] = state.best_loss
    return regret_report(P, losses, schedule, extras={"best_loss": best})


def mix_loss(p, losses, eta: float) -> float:
    """``-(1/eta) ln sum_i p_i exp(-eta l_i)``, always within ``[min l, p.l]``.

    ``eta`` below 1e-12 gives ``p.l``; ``eta = inf`` gives the smallest loss
    among the highest-weight experts.
    """
    p = np.asarray(p, dtype=float)
    losses = np.asarray(losses, dtype=float)
    support = p > 0
    lin = float(p @ losses)
    lo = float(losses[support].min())
    if eta < ZERO_RATE:
        return lin
    if math.isinf(eta):
        return float(losses[p == p.max()].min())
    if lo == float(losses[support].max()):
        return lo
    z = np.log(p[support]) - eta * losses[support]
    top = z.max()
    m = -(top + math.log(np.exp(z - top).sum())) / eta
    # rounding can push the value a hair outside the interval
    return min(max(m, lo), lin)


@dataclass
class AdaHedgeState:
    """Cumulative learner loss, cumulative mix loss, and their gap."""

    log_n: float
    learner_loss: float = 0.0
    mix: float = 0.0
    gap: float = 0.0

    def update(self, learner_loss: float, mix: float) -> float:
        delta = max(0.0, learner_loss - mix)
        self.learner_loss += learner_loss
        self.mix += mix
        self.gap += delta
        return delta


def adahedge_rate(state: AdaHedgeState) -> float:
    """``ln N / gap``; infinite while the gap is still zero."""
    return state.log_n / state.gap if state.gap > 0 else math.inf


def _leader_mix(base, p, losses, update_eta) -> float:
    """Growth of ``L*`` over one leader round, kept inside ``[min alive l, p.l]``.

    The weights absorb ``losses`` at ``update_eta`` (skipped when infinite).
    """
    lo = float(losses[base.alive].min())
    hi = float(p @ losses)
    before = base.best_loss
    base.observe(losses, eta=update_eta)
    return min(max(base.best_loss - before, lo), hi)


def _round_mix(base, p, losses, eta):
    """Mix loss for one round; at infinite rate it is the growth of ``L*``."""
    if math.isinf(eta):
        return _leader_mix(base, p, losses, eta)
    m = mix_loss(p, losses, eta)
    base.observe(losses, eta=eta)
    return m


class AdaHedge:
    """AdaHedge driving a weighted learner: ``eta_t = ln N / gap_{t-1}``."""

    def __init__(self, base):
        self.base = base
        self.state = AdaHedgeState(base.log_size)
        self.trace = {"eta": [], "mix": [], "delta": [], "gap": []}
        self._played = None

    @property
    def K(self) -> int:
        return self.base.K

    def play(self) -> np.ndarray:
        self._played = self.base.play(adahedge_rate(self.state))
        return self._played

    def observe(self, losses, tick: bool = True) -> None:
        losses = np.asarray(losses, dtype=float)
        eta = adahedge_rate(self.state)
        p = self._played if self._played is not None else self.base.play(eta)
        self._played = None
        lhat = float(p @ losses)
        m = _round_mix(self.base, p, losses, eta)
        self.state.update(lhat, m)
        self.trace["eta"].append(eta)
        self.trace["mix"].append(m)
        self.trace["delta"].append(lhat - m)
        self.trace["gap"].append(self.state.gap)

    def play_block(self, losses, ticks=None) -> np.ndarray:
        losses = np.asarray(losses, dtype=float)
        out = np.empty_like(losses)
        for k in range(losses.shape[0]):
            out[k] = self.play()
            self.observe(losses[k])
        return out

    def kill(self, j: int) -> None:
        self._played = None
        self.base.kill(j)

    def snapshot(self) -> dict:
        return {**getattr(self.base, "snapshot", dict)(), "gap": self.state.gap}


FLIPFLOP_PHI = 2.37
FLIPFLOP_ALPHA = 1.243


@dataclass
class FlipFlopState:
    phi: float = FLIPFLOP_PHI
    alpha: float = FLIPFLOP_ALPHA
    regime: str = "ftl"
    gap: dict = field(default_factory=lambda: {"ftl": 0.0, "ah": 0.0})

    def update(self, delta: float) -> bool:
        """Add ``delta`` to the active regime's gap; returns True on a regime switch."""
        self.gap[self.regime] += delta
        if self.regime == "ftl" and self.gap["ftl"] > (self.phi / self.alpha) * self.gap["ah"]:
            self.regime = "ah"
            return True
        if self.regime == "ah" and self.gap["ah"] > self.alpha * self.gap["ftl"]:
            self.regime = "ftl"
            return True
        return False


class FlipFlop:
    """Alternate between follow-the-leader and AdaHedge on the same weights.

    The AdaHedge rate is ``ln N / gap_ah``. The weights keep absorbing losses at
    that rate during leader rounds whenever it is finite.
    """

    def __init__(self, base, phi: float = FLIPFLOP_PHI, alpha: float = FLIPFLOP_ALPHA):
        self.base = base
        self.state = FlipFlopState(phi, alpha)
        self.log_n = base.log_size
        self.trace = {"regime": [], "delta_ftl": [], "delta_ah": [], "switch": []}
        self._played = None

    @property
    def K(self) -> int:
        return self.base.K

    def _ah_rate(self) -> float:
        g = self.state.gap["ah"]
        return self.log_n / g if g > 0 else math.inf

    def _play_rate(self) -> float:
        return math.inf if self.state.regime == "ftl" else self._ah_rate()

    def play(self) -> np.ndarray:
        self._played = self.base.play(self._play_rate())
        return self._played

    def observe(self, losses, tick: bool = True) -> None:
        losses = np.asarray(losses, dtype=float)
        eta = self._play_rate()
        p = self._played if self._played is not None else self.base.play(eta)
        self._played = None
        lhat = float(p @ losses)
        if math.isinf(eta):
            m = _leader_mix(self.base, p, losses, self._ah_rate())
        else:
            m = mix_loss(p, losses, eta)
            self.base.observe(losses, eta=eta)
        self.trace["regime"].append(self.state.regime)
        switched = self.state.update(max(0.0, lhat - m))
        self.trace["delta_ftl"].append(self.state.gap["ftl"])
        self.trace["delta_ah"].append(self.state.gap["ah"])
        self.trace["switch"].append(switched)

    def play_block(self, losses, ticks=None) -> np.ndarray:
        losses = np.asarray(losses, dtype=float)
        out = np.empty_like(losses)
        for k in range(losses.shape[0]):
            out[k] = self.play()
            self.observe(losses[k])
        return out

    def kill(self, j: int) -> None:
        self._played = None
        self.base.kill(j)


def _base_learner(kind: str, schedule: DyingSchedule, rate: RateSchedule):
    if kind == "hpu":
        return HedgePermUnknown(schedule.K, rate)
    if kind == "hpk":
        return HedgePermKnown.for_schedule(schedule, rate)
    raise ValueError(f"unknown base learner {kind!r}; expected 'hpu' or 'hpk'")


def run_adahedge(losses: LossStream, schedule: DyingSchedule, learner: str = "hpu") -> RunRecord:
    wrapped = AdaHedge(_base_learner(learner, schedule, RateSchedule.adahedge()))
    P = simulate(wrapped, losses, schedule)
    return regret_report(P, losses, schedule, extras=wrapped.trace)


def flipflop_run(losses: LossStream, schedule: DyingSchedule, learner: str = "hpu",
                 phi: float = FLIPFLOP_PHI, alpha: float = FLIPFLOP_ALPHA) -> RunRecord:
    wrapped = FlipFlop(_base_learner(learner, schedule, RateSchedule.adahedge()), phi, alpha)
    P = simulate(wrapped, losses, schedule)
    return regret_report(P, losses, schedule, extras=wrapped.trace)


def quantile_grid(K: int, full: bool = False) -> list[int]:
    """Quantile indices ``r``: ``1, 2, 4, ...`` below ``K-1``, plus ``K-1`` itself."""
    if full:
        return list(range(1, K))
    grid = {K - 1}
    r = 1
    while r < K - 1:
        grid.add(r)
        r *= 2
    return sorted(grid)


def quantile_log_inv_eps(K: int, r: int) -> float:
    """``ln(1/eps_r) = ln(K! / (K-r)!)``."""
    return float(gammaln(K + 1) - gammaln(K - r + 1))


def quantile_meta(losses: LossStream, schedule: DyingSchedule, full_grid: bool = False) -> RunRecord:
    """Anytime Hedge over HPU copies, copy ``r`` using ``sqrt(8 ln(1/eps_r) / t)``."""
    K = losses.K
    if K < 2:
        raise ValueError("the quantile meta-learner needs K >= 2")
    grid = quantile_grid(K, full_grid)
    copies = []
    for r in grid:
        learner = HedgePermUnknown(K, RateSchedule.anytime(8.0, log_n=quantile_log_inv_eps(K, r)))
        copies.append(simulate(learner, losses, schedule))
    P_copies = np.stack(copies)  # C x T x K
    copy_loss = np.einsum("ctk,tk->tc", P_copies, losses.losses)
    t = np.arange(1, losses.T + 1)
    etas = np.sqrt(8 * math.log(len(grid)) / t)
    offsets = np.vstack([np.zeros(len(grid)), np.cumsum(etas[:, None] * copy_loss, axis=0)])[:-1]
    top = hedge_play(-offsets)  # T x C
    P = np.einsum("tc,ctk->tk", top, P_copies)
    return regret_report(P, losses, schedule, extras={"grid": grid, "top_weights": top})
