"""Experiment runner, verification suites and scaling fits behind the ``dyexp`` CLI."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import adaptive, adversaries, core, hedge, learners, oracle
from .core import DyingSchedule, LossStream, RunRecord
from .hedge import RateSchedule

LEARNERS = ("hedge", "resetting", "hpu", "hpk", "ftl", "adahedge", "flipflop", "quantile")
ADVERSARIES = ("bernoulli", "unknown-lb", "known-lb", "gap", "file")
SUITES = ("thm1", "thm7", "thm8", "dummy", "ftl-lstar")

RUN_COLUMNS = ("seed", "T", "K", "m", "learner_loss", "best_ordering_loss", "ranking_regret",
               "classical_regret_all", "classical_regret_alive")
SWEEP_COLUMNS = ("seed", "param", "T", "K", "m", "learner_loss", "best_ordering_loss", "ranking_regret")


def parse_eta(text: str | None) -> RateSchedule | None:
    """``fixed:x``, ``anytime`` (or ``anytime:c``), ``adahedge``; None keeps the learner default."""
    if text is None:
        return None
    kind, _, arg = text.partition(":")
    if kind == "fixed" and arg:
        return RateSchedule.fixed(float(arg))
    if kind == "anytime":
        return RateSchedule.anytime(float(arg) if arg else 8.0)
    if kind == "adahedge" and not arg:
        return RateSchedule.adahedge()
    raise ValueError(f"bad --eta value {text!r}; expected fixed:x, anytime[:c] or adahedge")


@dataclass(frozen=True)
class RunSpec:
    learner: str
    adversary: str
    K: int = 8
    T: int = 1000
    m: int = 0
    eta: str | None = None
    p: float = 0.5
    means: tuple[float, ...] | None = None
    base: str = "hpu"
    instance: str | None = None

    def __post_init__(self):
        if self.learner not in LEARNERS:
            raise ValueError(f"unknown learner {self.learner!r}; valid: {', '.join(LEARNERS)}")
        if self.adversary not in ADVERSARIES:
            raise ValueError(f"unknown adversary {self.adversary!r}; valid: {', '.join(ADVERSARIES)}")
        if self.adversary == "file" and not self.instance:
            raise ValueError("--adversary file needs --instance FILE")
        parse_eta(self.eta)


def make_instance(spec: RunSpec, seed: int) -> adversaries.Instance:
    if spec.adversary == "file":
        losses, schedule = core.read_instance(spec.instance)
        return adversaries.Instance(losses, schedule, schedule.dying_order)
    K, T, m = spec.K, spec.T, spec.m
    if spec.adversary == "unknown-lb":
        return adversaries.gen_unknown_lb(adversaries.AdversaryConfig(K, T, m, seed, "unknown_lb"))
    if spec.adversary == "known-lb":
        return adversaries.gen_known_lb(adversaries.AdversaryConfig(K, T, m, seed, "known_lb"))
    schedule = adversaries.even_schedule(K, T, m) if m else None
    if spec.adversary == "bernoulli":
        cfg = adversaries.AdversaryConfig(K, T, m, seed, "bernoulli", p=spec.p, schedule=schedule)
        return adversaries.gen_bernoulli(cfg)
    means = spec.means or (0.2,) + (0.8,) * (K - 1)
    cfg = adversaries.AdversaryConfig(K, T, m, seed, "stochastic_gap", means=tuple(means), schedule=schedule)
    return adversaries.gen_stochastic_gap(cfg)


def switch_once_instance(seed: int, K: int = 16, T: int = 10_000, m: int = 10) -> adversaries.Instance:
    """Stochastic losses where the best ordering switches experts exactly once.

    Expert 0 (mean 0.2) is best until it dies on the middle night, then expert
    1 (mean 0.3) takes over; everyone else has mean 0.8 and the other nights
    kill bad experts.
    """
    if K < m + 2 or m < 1:
        raise ValueError("need m >= 1 and K >= m + 2")
    bad = list(range(2, m + 1))
    order = bad[: m // 2] + [0] + bad[m // 2:]
    schedule = adversaries.even_schedule(K, T, m, order)
    means = (0.2, 0.3) + (0.8,) * (K - 2)
    cfg = adversaries.AdversaryConfig(K, T, m, seed, "stochastic_gap", means=means, schedule=schedule)
    return adversaries.gen_stochastic_gap(cfg)


def run_learner(spec: RunSpec, losses: LossStream, schedule: DyingSchedule) -> RunRecord:
    rate = parse_eta(spec.eta)
    K, T = losses.K, losses.T
    adaptive_rate = rate is not None and rate.kind == "adahedge"
    if spec.learner == "hedge":
        return hedge.run_hedge(losses, rate or RateSchedule.fixed(math.sqrt(2 * math.log(K) / T)),
                               alive_mask=schedule.alive_mask)
    if spec.learner == "resetting":
        return hedge.resetting_hedge(losses, schedule, rate)
    if spec.learner in ("hpu", "hpk"):
        if adaptive_rate:
            return adaptive.run_adahedge(losses, schedule, spec.learner)
        run = learners.run_hpu if spec.learner == "hpu" else learners.run_hpk
        return run(losses, schedule, rate)
    if spec.learner == "ftl":
        return adaptive.run_ftl(losses, schedule)
    if spec.learner == "adahedge":
        return adaptive.run_adahedge(losses, schedule, spec.base)
    if spec.learner == "flipflop":
        return adaptive.flipflop_run(losses, schedule, spec.base)
    return adaptive.quantile_meta(losses, schedule)


def run_one(spec: RunSpec, seed: int) -> tuple[dict, RunRecord]:
    inst = make_instance(spec, seed)
    rec = run_learner(spec, inst.losses, inst.schedule)
    row = {
        "seed": seed,
        "T": inst.losses.T,
        "K": inst.losses.K,
        "m": inst.schedule.m if spec.adversary == "file" else spec.m,
        "learner_loss": rec.total_loss,
        "best_ordering_loss": rec.best_ordering_loss,
        "ranking_regret": rec.ranking_regret,
        "classical_regret_all": rec.classical_regret_all,
        "classical_regret_alive": rec.classical_regret_alive,
    }
    return row, rec


def _row_only(args):
    spec, seed = args
    return run_one(spec, seed)[0]


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("DYEXP_THREADS", "1")))
    except ValueError:
        return 1


def run_replicas(spec: RunSpec, seeds) -> list[dict]:
    """One row per seed, in seed order, parallel across ``DYEXP_THREADS`` processes."""
    jobs = [(spec, int(s)) for s in seeds]
    workers = min(worker_count(), len(jobs))
    if workers <= 1:
        return [_row_only(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_row_only, jobs))


def sweep(spec: RunSpec, param: str, values, seeds) -> list[dict]:
    if param not in ("t", "k", "m"):
        raise ValueError(f"cannot sweep {param!r}; expected t, k or m")
    rows = []
    for v in values:
        field_name = {"t": "T", "k": "K", "m": "m"}[param]
        sub = RunSpec(**{**spec.__dict__, field_name: int(v)})
        for row in run_replicas(sub, seeds):
            rows.append({**row, "param": v})
    return rows


def format_value(v) -> str:
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def write_csv(rows, columns, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_value(r[c]) for c in columns])


def csv_text(rows, columns) -> str:
    buf = io.StringIO()
    write_csv(rows, columns, buf)
    return buf.getvalue()


def write_trace(rec: RunRecord, fh) -> None:
    """Per-round diagnostics: learner loss plus any learner-specific traces."""
    extra = {k: v for k, v in rec.extras.items() if isinstance(v, (list, np.ndarray)) and np.ndim(v) == 1 and len(v) == len(rec.learner_loss)}
    cols = ["round", "learner_loss", "cumulative_loss", *extra]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(cols)
    for t in range(len(rec.learner_loss)):
        vals = [t + 1, rec.learner_loss[t], rec.cumulative_loss[t]]
        vals += [extra[k][t] for k in extra]
        w.writerow([format_value(float(v)) if isinstance(v, (float, np.floating)) else v for v in vals])


# -- scaling fit ------------------------------------------------------------


@dataclass
class ExponentFit:
    slope: float
    low: float
    high: float
    testable: bool = True
    note: str = ""


def fit_exponent(groups: dict, resamples: int = 1000, seed: int = 0) -> ExponentFit:
    """Least-squares slope of ``ln mean-regret`` against ``ln T``.

    ``groups`` maps each horizon to its per-seed regrets; the 95% interval
    comes from resampling seeds within each horizon.
    """
    Ts = sorted(groups)
    samples = [np.asarray(groups[T], dtype=float) for T in Ts]
    if len(Ts) < 3:
        raise ValueError("need at least three horizons")
    x = np.log(np.asarray(Ts, dtype=float))
    means = np.array([s.mean() for s in samples])
    if np.any(means <= 0):
        return ExponentFit(math.nan, math.nan, math.nan, testable=False, note="non-positive mean regret")
    slope = float(np.polyfit(x, np.log(means), 1)[0])
    rng = np.random.default_rng(seed)
    boot = []
    for _ in range(resamples):
        bm = np.array([s[rng.integers(0, s.size, s.size)].mean() for s in samples])
        if np.all(bm > 0):
            boot.append(np.polyfit(x, np.log(bm), 1)[0])
    lo, hi = (np.percentile(boot, [2.5, 97.5]) if boot else (math.nan, math.nan))
    return ExponentFit(slope, float(lo), float(hi))


def group_rows(rows, key: str = "T", value: str = "ranking_regret") -> dict:
    out: dict = {}
    for r in rows:
        out.setdefault(int(float(r[key])), []).append(float(r[value]))
    return out


# -- verification suites ----------------------------------------------------


@dataclass
class SuiteReport:
    suite: str
    passed: bool = True
    lines: list = field(default_factory=list)

    def add(self, ok: bool, line: str) -> None:
        self.passed &= bool(ok)
        self.lines.append(("ok   " if ok else "FAIL ") + line)

    def text(self) -> str:
        return "\n".join([f"suite={self.suite}", *self.lines, f"result={'PASS' if self.passed else 'FAIL'}"]) + "\n"


def random_schedule(rng: np.random.Generator, K: int, T: int, single: bool = True, min_alive: int = 1) -> DyingSchedule:
    """Random deaths: up to ``K - min_alive`` experts, on distinct nights when ``single``."""
    n_dying = int(rng.integers(0, K - min_alive + 1))
    n_dying = min(n_dying, T - 1) if single else n_dying
    dying = rng.permutation(K)[:n_dying]
    if single:
        nights = rng.choice(np.arange(1, T), size=n_dying, replace=False)
    else:
        nights = rng.integers(1, T, size=n_dying) if T > 1 else np.array([], dtype=int)
    deaths = [None] * K
    for e, n in zip(dying, nights):
        deaths[int(e)] = int(n)
    return DyingSchedule(tuple(deaths), T)


def random_rate(rng: np.random.Generator) -> RateSchedule:
    if rng.random() < 0.5:
        return RateSchedule.fixed(float(rng.uniform(0.05, 2.0)))
    return RateSchedule.anytime(float(rng.uniform(1.0, 8.0)))


def verify_thm1(k_max: int = 7, trials: int = 200, seed: int = 0) -> SuiteReport:
    rep = SuiteReport("thm1")
    rng = np.random.default_rng(seed)
    for trial in range(trials):
        K = int(rng.integers(1, k_max + 1))
        T = int(rng.integers(2, 3 * K + 3))
        sch = random_schedule(rng, K, T, single=rng.random() < 0.5)
        f = core.count_effective(sch.deaths_per_night, sch.A)
        dd = oracle.dedup_behaviors(sch)
        eff = core.enumerate_effective(sch)
        distinct = len({core.behavior_of(o, sch) for o in eff})
        ok = f == dd.count == len(eff) == distinct
        rep.add(ok, f"trial={trial} K={K} d={list(sch.deaths_per_night)} A={sch.A} f={f} dedup={dd.count} enum={len(eff)}")
    return rep


def _certify_trials(kind: str, k_max: int, trials: int, tol: float, seed: int) -> SuiteReport:
    rep = SuiteReport("thm7" if kind == "hpu" else "thm8")
    rng = np.random.default_rng(seed)
    for K in range(2, k_max + 1):
        perms = core.all_orderings(K) if kind == "hpu" else None
        for trial in range(trials):
            T = int(rng.integers(K, 51))
            sch = random_schedule(rng, K, T, single=True)
            losses = LossStream(rng.random((T, K)))
            rate = random_rate(rng)
            if kind == "hpu":
                learner, orders = learners.HedgePermUnknown(K, rate), perms
            else:
                learner, orders = learners.HedgePermKnown.for_schedule(sch, rate), oracle.known_order_comparators(sch)
            Q = oracle.hedge_over_orderings(orders, losses, sch, rate)
            res = oracle.certify(learner, losses, sch, Q, tol)
            rep.add(res.passed, f"K={K} trial={trial} T={T} A={sch.A} {res.summary()}")
    return rep


def verify_thm7(k_max: int = 7, trials: int = 50, tol: float = 1e-9, seed: int = 0) -> SuiteReport:
    return _certify_trials("hpu", k_max, trials, tol, seed)


def verify_thm8(k_max: int = 7, trials: int = 50, tol: float = 1e-9, seed: int = 0) -> SuiteReport:
    return _certify_trials("hpk", k_max, trials, tol, seed)


def verify_dummy(k_max: int = 6, trials: int = 50, tol: float = 1e-12, seed: int = 0) -> SuiteReport:
    """Dummy-round serialization reproduces Hedge with simultaneous deaths handled directly."""
    rep = SuiteReport("dummy")
    rng = np.random.default_rng(seed)
    for K in range(2, k_max + 1):
        perms = core.all_orderings(K)
        for trial in range(trials):
            T = int(rng.integers(2, 31))
            sch = random_schedule(rng, K, T, single=False)
            losses = LossStream(rng.random((T, K)))
            rate = random_rate(rng)
            for kind in ("hpu", "hpk"):
                if kind == "hpu":
                    learner, orders = learners.HedgePermUnknown(K, rate), perms
                else:
                    learner, orders = learners.HedgePermKnown.for_schedule(sch, rate), oracle.known_order_comparators(sch)
                P = learners.run_serialized(learner, losses, sch)
                Q = oracle.hedge_over_orderings(orders, losses, sch, rate)
                gap = float(np.abs(P - Q).max())
                direct = learners.run_hpu(losses, sch, rate) if kind == "hpu" else learners.run_hpk(losses, sch, rate)
                reg = learners.run_hpu(losses, sch, rate, preprocess=True) if kind == "hpu" else learners.run_hpk(losses, sch, rate, preprocess=True)
                same_regret = abs(direct.ranking_regret - reg.ranking_regret) <= 1e-9
                rep.add(gap <= tol and same_regret,
                        f"{kind} K={K} trial={trial} d={list(sch.deaths_per_night)} gap={gap:.3e} tol={tol:.1e}")
    return rep


def brute_force_best_path(losses: LossStream, schedule: DyingSchedule) -> np.ndarray:
    """``L*_t`` after each round by accumulating every ordering's loss."""
    plays = core.behaviors(core.all_orderings(schedule.K), schedule)
    cum = np.zeros(plays.shape[0])
    out = np.empty(losses.T)
    for t in range(losses.T):
        cum = cum + losses.losses[t, plays[:, t]]
        out[t] = cum.min()
    return out


def verify_ftl_lstar(k_max: int = 6, trials: int = 100, seed: int = 0) -> SuiteReport:
    rep = SuiteReport("ftl-lstar")
    rng = np.random.default_rng(seed)
    for trial in range(trials):
        K = int(rng.integers(1, k_max + 1))
        T = int(rng.integers(2, 41))
        sch = random_schedule(rng, K, T, single=rng.random() < 0.5)
        losses = LossStream(rng.random((T, K)))
        tracked = adaptive.run_ftl(losses, sch).extras["best_loss"]
        truth = brute_force_best_path(losses, sch)
        ok = bool(np.array_equal(tracked, truth))
        rep.add(ok, f"trial={trial} K={K} T={T} max_diff={float(np.abs(tracked - truth).max()):.3e}")
    return rep


def run_suite(name: str, k_max: int | None = None, trials: int | None = None, tol: float | None = None,
              seed: int = 0) -> SuiteReport:
    if name == "thm1":
        return verify_thm1(k_max or 7, trials or 200, seed)
    if name == "thm7":
        return verify_thm7(k_max or 7, trials or 50, tol if tol is not None else 1e-9, seed)
    if name == "thm8":
        return verify_thm8(k_max or 7, trials or 50, tol if tol is not None else 1e-9, seed)
    if name == "dummy":
        return verify_dummy(k_max or 6, trials or 50, tol if tol is not None else 1e-12, seed)
    if name == "ftl-lstar":
        return verify_ftl_lstar(k_max or 6, trials or 100, seed)
    raise ValueError(f"unknown suite {name!r}; valid: {', '.join(SUITES)}")
