import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings, strategies as st

from clustersched.configs import Configuration, TypedSystem, enumerate_maximal, k_red
from clustersched.oracle import (
    WorkloadProblem,
    kred_problem,
    lr_bar_bound,
    prop1_campaign,
    prop1_check,
    prop2_instance,
    random_prop1_instance,
    rho_star,
    rho_star_restricted,
    rounded_bounds,
)
from clustersched.partition import intervals, quantile_partition, refine, universal_partition
from clustersched.workload import Discrete, Uniform, UnitUniform

HALF = (F(1, 2), F(1, 2))


def P(sizes, probs, L=1, restriction=None):
    return WorkloadProblem(TypedSystem(tuple(sizes), tuple(probs)), L, restriction)


def test_rho_star_examples():
    assert rho_star(P([F(2, 5), F(3, 5)], HALF)) == 2
    assert rho_star(P([F(9, 20), F(11, 20)], HALF)) == 2
    assert rho_star(P([F(3, 10)], [1])) == 3


def test_rho_star_rejects_oversized_type():
    with pytest.raises(ValueError):
        rho_star(P([F(6, 5)], [1]))


def test_restricted_examples():
    sups = (1, F(2, 3), F(1, 2), F(1, 3))
    prob = (0, F(1, 2), F(1, 2), 0)
    assert rho_star_restricted(P(sups, prob, restriction=k_red(2))) == F(4, 3)
    assert rho_star(kred_problem([0.4, 0.6], HALF, 2)) == F(4, 3)
    full, restricted = prop2_instance(F(1, 20))
    assert rho_star_restricted(restricted) == F(4, 3)
    sizes = [F(2, 5), F(3, 5)]
    assert rho_star_restricted(P(sizes, HALF, restriction=enumerate_maximal(sizes))) == rho_star(P(sizes, HALF))
    with pytest.raises(ValueError):
        rho_star_restricted(P(sizes, HALF, restriction=()))
    with pytest.raises(ValueError):
        rho_star(P(sizes, HALF, restriction=[Configuration((0, 2))]))


@pytest.mark.parametrize("eps", [F(1, 20), F(1, 10), F(1, 4)])
def test_prop2_values(eps):
    full, restricted = prop2_instance(eps)
    assert rho_star(full) == 2
    assert rho_star(restricted) == F(4, 3)


def test_prop2_precondition():
    with pytest.raises(ValueError):
        prop2_instance(F(2, 5))


def test_rounded_bounds_extremes():
    b = rounded_bounds(intervals([]), UnitUniform(), 1)
    assert b.upper_rounded == 1 and b.lower_unbounded and b.ordered()


def test_rounded_bounds_quantile_n0():
    b = rounded_bounds(quantile_partition(UnitUniform(), 0), UnitUniform(), 1)
    assert b.upper_rounded == rho_star(P([F(1, 2), 1], HALF))
    # lower: the (0, 1/2] type rounds to 0 and is dropped; 1/2 keeps mass 1/2
    assert b.lower_rounded == F(4)
    assert b.gap == F(8, 3)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 99), max_size=4))
def test_sandwich_under_refinement(raw):
    law = Uniform(F(1, 20), F(19, 20))
    X = quantile_partition(law, 0)
    Xf = refine(X, [F(r, 100) for r in raw])
    b, bf = rounded_bounds(X, law), rounded_bounds(Xf, law)
    assert b.ordered() and bf.ordered()
    assert b.upper_rounded <= bf.upper_rounded
    assert bf.lower_rounded <= b.lower_rounded


def _random_system(rng):
    n = rng.randint(1, 4)
    sizes = [F(rng.randint(10, 100), 100) for _ in range(n)]
    w = [rng.randint(1, 9) for _ in range(n)]
    return sizes, [F(x, sum(w)) for x in w]


@pytest.mark.parametrize("seed", range(15))
def test_oracle_invariants(seed):
    rng = random.Random(seed)
    sizes, probs = _random_system(rng)
    r1 = rho_star(P(sizes, probs, 1))
    r3 = rho_star(P(sizes, probs, 3))
    assert r3 == 3 * r1
    mean = sum(s * p for s, p in zip(sizes, probs))
    assert r1 <= lr_bar_bound(1, mean)
    c = F(rng.randint(2, 9))
    scaled = [s * c for s in sizes]
    assert rho_star(P([s / c for s in scaled], probs)) == r1
    maximal = enumerate_maximal(sizes)
    sub = maximal[: max(1, len(maximal) // 2)]
    assert rho_star(P(sizes, probs, restriction=sub)) <= r1


def test_lr_bar_bound():
    assert lr_bar_bound(5, F(1, 10)) == 50
    assert lr_bar_bound(5, F(1, 2)) == 10
    assert lr_bar_bound(1, 1) == 1
    with pytest.raises(ValueError):
        lr_bar_bound(1, 0)


def test_prop1_examples():
    r = prop1_check(2, [F(2, 5)] * 3)
    assert r.holds and r.best_weight == 6 and r.witness == Configuration((0, 0, 2, 0)) and r.ratio == 1
    r = prop1_check(2, [F(3, 5)] * 5 + [F(3, 10)] * 4)
    # 3e3 reaches Q3 * 3 = 12, which is also the refined optimum
    assert r.holds and r.witness == Configuration((0, 0, 0, 3)) and r.witness_weight == 12 and r.ratio == 1


def test_prop1_rejects_non_refinement_and_small_jobs():
    with pytest.raises(ValueError):
        prop1_check(2, [F(1, 5)])
    with pytest.raises(ValueError):
        prop1_check(2, [F(1, 2)], intervals([F(3, 5)]))


def test_prop1_campaign_deterministic():
    a = prop1_campaign(3, trials=30, seed=5)
    b = prop1_campaign(3, trials=30, seed=5)
    assert a.passed and a.to_dict() == b.to_dict()
    assert a.min_ratio >= F(2, 3)


def test_random_instance_sizes_in_range():
    rng = random.Random(1)
    for _ in range(20):
        jobs, fine = random_prop1_instance(3, rng)
        assert all(F(1, 8) < j <= 1 for j in jobs)


def test_prop1_tight_refinement_at_J2():
    # refined sups 0.35 and 0.3 admit {2 x 0.35, 1 x 0.3}; K_RED reaches only 3/4 of it
    fine = refine(universal_partition(2), [F(35, 100), F(3, 10)])
    res = prop1_check(2, [F(34, 100)] * 3 + [F(26, 100)] * 2, fine)
    assert res.holds and res.best_weight == 8 and res.witness_weight == 6 and res.ratio == F(3, 4)
