import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dyingexperts import core, learners, oracle
from dyingexperts.core import DyingSchedule, LossStream
from dyingexperts.errors import ContractViolation
from dyingexperts.hedge import RateSchedule
from dyingexperts.learners import HedgePermKnown, HedgePermUnknown


def weights(learner) -> np.ndarray:
    """Group weights h*c, including the common scale."""
    return np.exp(learner.log_h + learner.log_c + learner.log_scale)


# -- HPU ----------------------------------------------------------------------


def test_hpu_init_three():
    hpu = HedgePermUnknown(3, RateSchedule.fixed(1.0))
    assert np.allclose(np.exp(hpu.log_h), [2, 2, 2])
    assert np.allclose(np.exp(hpu.log_c), [1, 1, 1])


def test_hpu_init_single():
    assert np.allclose(np.exp(HedgePermUnknown(1, RateSchedule.fixed(1.0)).log_h), [1])


def test_hpu_init_twenty_in_log_space():
    assert HedgePermUnknown(20, RateSchedule.fixed(1.0)).log_h[0] == pytest.approx(math.log(math.factorial(19)))
    assert HedgePermUnknown(20, RateSchedule.fixed(1.0)).log_h[0] == pytest.approx(39.33988, abs=1e-5)


def test_hpu_fresh_play_uniform():
    assert np.allclose(HedgePermUnknown(4, RateSchedule.fixed(1.0)).play(), 0.25)


def test_hpu_play_after_one_round():
    hpu = HedgePermUnknown(2, RateSchedule.fixed(math.log(2)))
    hpu.observe([0.0, 1.0])
    assert np.allclose(hpu.play(), [2 / 3, 1 / 3])


def test_hpu_play_dominance():
    hpu = HedgePermUnknown(3, RateSchedule.fixed(1.0))
    hpu.log_c = np.array([50.0, 0.0, 0.0])
    assert hpu.play()[0] >= 1 - 1e-20


def test_hpu_zero_rate_and_uniform_losses_leave_play_unchanged():
    hpu = HedgePermUnknown(3, RateSchedule.fixed(0.0))
    hpu.observe([0.2, 0.9, 0.1])
    assert np.allclose(hpu.play(), 1 / 3)
    hpu = HedgePermUnknown(3, RateSchedule.fixed(0.8))
    hpu.observe([0.0, 1.0, 0.5])
    before = hpu.play()
    hpu.observe([0.4, 0.4, 0.4])
    assert np.allclose(hpu.play(), before)


def test_hpu_symmetric_rounds():
    eta = 0.7
    hpu = HedgePermUnknown(2, RateSchedule.fixed(eta))
    hpu.observe([0.0, 1.0])
    hpu.observe([1.0, 0.0])
    c = np.exp(hpu.log_c + hpu.log_scale)
    assert np.allclose(c, [math.exp(-eta)] * 2)


def test_hpu_death_fresh_state():
    hpu = HedgePermUnknown(3, RateSchedule.fixed(1.0))
    hpu.kill(0)
    w = weights(hpu)
    assert w[0] == 0.0
    assert np.allclose(w[1:], [3, 3])
    assert np.all(hpu.log_c[hpu.alive] == 0.0)


def test_hpu_death_two_experts():
    hpu = HedgePermUnknown(2, RateSchedule.fixed(1.0))
    hpu.observe([1.0, 0.0])
    hpu.kill(1)
    assert np.array_equal(hpu.play(), [1.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_hpu_death_conserves_mass(K, seed):
    rng = np.random.default_rng(seed)
    hpu = HedgePermUnknown(K, RateSchedule.fixed(float(rng.uniform(0.1, 2))))
    for _ in range(3):
        hpu.observe(rng.random(K))
    j = int(rng.integers(K))
    before = weights(hpu).sum()
    hpu.kill(j)
    assert weights(hpu).sum() == pytest.approx(before, rel=1e-12)
    assert np.all(hpu.log_c[hpu.alive] == 0.0)


# -- HPK ----------------------------------------------------------------------


def test_hpk_init_all_die():
    hpk = HedgePermKnown(4, (0, 1, 2), RateSchedule.fixed(1.0))
    assert np.allclose(np.exp(hpk.log_h), [4, 2, 1, 1])


def test_hpk_init_one_dies():
    hpk = HedgePermKnown(3, (0,), RateSchedule.fixed(1.0))
    assert np.allclose(np.exp(hpk.log_h), [2, 1, 1])
    assert math.exp(hpk.log_size) == pytest.approx(4)


def test_hpk_init_single():
    assert np.allclose(np.exp(HedgePermKnown(1, (), RateSchedule.fixed(1.0)).log_h), [1])


def test_hpk_death_three():
    hpk = HedgePermKnown(3, (0, 1), RateSchedule.fixed(1.0))
    hpk.kill(0)
    assert np.allclose(weights(hpk)[1:], [2, 2])


def test_hpk_death_four():
    hpk = HedgePermKnown(4, (0, 1, 2), RateSchedule.fixed(1.0))
    hpk.kill(0)
    assert np.allclose(weights(hpk)[1:], [4, 2, 2])


def test_hpk_rejects_out_of_order_death():
    hpk = HedgePermKnown(4, (0, 1, 2), RateSchedule.fixed(1.0))
    with pytest.raises(ContractViolation):
        hpk.kill(1)


@pytest.mark.parametrize("K", range(2, 10))
def test_hpk_fractions_sum_to_one_exactly(K):
    for D in range(1, K):
        A = K - D
        g = [Fraction(2 ** (D - k - 1) * A) for k in range(D)] + [Fraction(1)] * A
        for j in range(D):
            receivers = g[j + 1:]
            assert sum(receivers) == g[j]
            assert sum(x / sum(receivers) for x in receivers) == 1


def test_hpk_head_counts_match_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(30):
        K = int(rng.integers(2, 8))
        D = int(rng.integers(0, K))
        order = tuple(int(e) for e in rng.permutation(K)[:D])
        deaths = [None] * K
        for k, e in enumerate(order):
            deaths[e] = k + 1
        eff = core.enumerate_effective(DyingSchedule(tuple(deaths), D + 1))
        heads = np.bincount([o[0] for o in eff], minlength=K)
        assert np.allclose(np.exp(learners.initial_group_sizes(K, order)), heads)


# -- equivalence with brute force ------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(2, 20), st.data())
def test_hpu_matches_ordering_oracle(K, T, data):
    nights = data.draw(st.lists(st.integers(1, T - 1), unique=True, max_size=min(K - 1, T - 1)))
    dying = data.draw(st.permutations(range(K)))[: len(nights)]
    deaths = [None] * K
    for e, n in zip(dying, nights):
        deaths[e] = n
    sch = DyingSchedule(tuple(deaths), T)
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    ls = LossStream(rng.random((T, K)))
    rate = RateSchedule.anytime(float(rng.uniform(1, 8)))
    Q = oracle.hedge_over_orderings(core.all_orderings(K), ls, sch, rate)
    rep = oracle.certify(HedgePermUnknown(K, rate), ls, sch, Q, 1e-9)
    assert rep.passed, rep.summary()


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(2, 20), st.data())
def test_hpk_matches_effective_oracle(K, T, data):
    nights = data.draw(st.lists(st.integers(1, T - 1), unique=True, max_size=min(K - 1, T - 1)))
    dying = data.draw(st.permutations(range(K)))[: len(nights)]
    deaths = [None] * K
    for e, n in zip(dying, nights):
        deaths[e] = n
    sch = DyingSchedule(tuple(deaths), T)
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    ls = LossStream(rng.random((T, K)))
    rate = RateSchedule.fixed(float(rng.uniform(0.05, 2)))
    Q = oracle.hedge_over_orderings(oracle.known_order_comparators(sch), ls, sch, rate)
    rep = oracle.certify(HedgePermKnown.for_schedule(sch, rate), ls, sch, Q, 1e-9)
    assert rep.passed, rep.summary()


def test_play_is_softmax_of_group_weights():
    rng = np.random.default_rng(5)
    hpu = HedgePermUnknown(5, RateSchedule.fixed(0.9))
    for t in range(6):
        hpu.observe(rng.random(5))
        if t == 2:
            hpu.kill(3)
    w = weights(hpu)
    assert np.allclose(hpu.play(), w / w.sum(), atol=1e-15)


def test_numerically_stable_for_long_runs():
    rng = np.random.default_rng(6)
    hpu = HedgePermUnknown(12, RateSchedule.fixed(5.0))
    hpu.play_block(rng.random((20_000, 12)))
    p = hpu.play()
    assert np.all(np.isfinite(p)) and p.sum() == pytest.approx(1.0)


# -- dummy rounds ------------------------------------------------------------------


def test_preprocess_identity_for_single_deaths():
    ls = LossStream(np.random.default_rng(7).random((6, 3)))
    sch = DyingSchedule((2, None, 4), 6)
    big, big_sch, round_map = learners.preprocess_dummy_rounds(ls, sch)
    assert np.array_equal(big.losses, ls.losses)
    assert big_sch == sch
    assert np.array_equal(round_map, np.arange(6))


def test_preprocess_triple_night():
    ls = LossStream(np.random.default_rng(8).random((5, 4)))
    sch = DyingSchedule((2, 2, 2, None), 5)
    big, big_sch, round_map = learners.preprocess_dummy_rounds(ls, sch)
    assert big.T == 7
    extra = np.setdiff1d(np.arange(7), round_map)
    assert np.all(big.losses[extra] == 0.0)
    assert big_sch.deaths_per_night == (1, 1, 1)
    assert np.array_equal(big.losses[round_map], ls.losses)


@pytest.mark.parametrize("K", range(2, 7))
def test_dummy_rounds_preserve_regret(K):
    rng = np.random.default_rng(K)
    for _ in range(10):
        T = int(rng.integers(3, 15))
        deaths = [int(rng.integers(1, T)) if rng.random() < 0.7 else None for _ in range(K)]
        if all(d is not None for d in deaths):
            deaths[0] = None
        sch = DyingSchedule(tuple(deaths), T)
        ls = LossStream(rng.random((T, K)))
        rate = RateSchedule.anytime(8.0)
        for run in (learners.run_hpu, learners.run_hpk):
            a = run(ls, sch, rate, preprocess=True)
            Q = oracle.hedge_over_orderings(
                core.all_orderings(K) if run is learners.run_hpu else oracle.known_order_comparators(sch),
                ls, sch, rate)
            assert np.max(np.abs(a.distributions - Q)) <= 1e-12
            b = run(ls, sch, rate)
            assert a.ranking_regret == pytest.approx(b.ranking_regret, abs=1e-9)


def test_default_rates():
    assert learners.hpu_default_rate(4, 100).eta == pytest.approx(math.sqrt(2 * math.log(24) / 100))
    assert learners.hpk_default_rate(4, 3, 100).eta == pytest.approx(math.sqrt(2 * math.log(8) / 100))
