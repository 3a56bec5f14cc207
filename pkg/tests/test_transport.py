import itertools

import numpy as np
import pytest

from plmx import transport
from plmx.transport import EmpiricalMeasure


def _random_measure(gen, n=None, dim=2, shift=0.0):
    n = n or int(gen.integers(2, 9))
    return EmpiricalMeasure(gen.normal(size=(n, dim)) + shift)


def _brute(a: EmpiricalMeasure, b: EmpiricalMeasure, r: float) -> float:
    d = np.linalg.norm(a.samples[:, None, :] - b.samples[None, :, :], axis=2) ** r
    best = min(
        sum(d[i, perm[i]] for i in range(a.n))
        for perm in itertools.permutations(range(a.n))
    )
    return (best / a.n) ** (1.0 / r)


def test_wasserstein_1d_examples():
    assert transport.wasserstein_1d([3, 1, 2], [2, 3, 1], 2.0) == 0.0
    assert transport.wasserstein_1d([0.0], [1.0], 1.0) == 1.0
    assert transport.wasserstein_1d([0.0], [1.0], 3.7) == 1.0
    # brute force over both pairings: monotone beats crossed
    assert transport.wasserstein_1d([0, 2], [1, 3], 1.0) == pytest.approx(1.0, abs=0)


def test_wasserstein_1d_guards():
    with pytest.raises(ValueError):
        transport.wasserstein_1d([1, 2], [1], 1.0)
    with pytest.raises(ValueError):
        transport.wasserstein_1d([1], [1], 0.5)


def test_assignment_examples():
    a = EmpiricalMeasure(np.array([[0.0, 0.0]]))
    b = EmpiricalMeasure(np.array([[3.0, 4.0]]))
    assert transport.wasserstein_assignment(a, b, 2.0) == pytest.approx(5.0, abs=1e-14)
    same = EmpiricalMeasure(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert transport.wasserstein_assignment(same, same, 1.0) == 0.0
    # crossing pair: optimal matching is the swap with zero cost
    e1 = np.array([1.0, 0.0])
    cross_a = EmpiricalMeasure(np.array([[0.0, 0.0], e1]))
    cross_b = EmpiricalMeasure(np.array([e1, [0.0, 0.0]]))
    assert transport.wasserstein_assignment(cross_a, cross_b, 2.0) == 0.0


def test_assignment_cap_error_mentions_fallback():
    gen = np.random.default_rng(0)
    a = EmpiricalMeasure(gen.normal(size=(10, 1)))
    b = EmpiricalMeasure(gen.normal(size=(10, 1)))
    with pytest.raises(ValueError, match="coupling_upper"):
        transport.wasserstein_assignment(a, b, 2.0, cap=8)


def test_assignment_matches_bruteforce():
    gen = np.random.default_rng(5)
    for _ in range(40):
        n = int(gen.integers(2, 8))
        r = float(gen.choice([1.0, 2.0, 2.5]))
        a = _random_measure(gen, n=n)
        b = _random_measure(gen, n=n, shift=gen.normal(scale=0.5))
        got = transport.wasserstein_assignment(a, b, r)
        assert got == pytest.approx(_brute(a, b, r), abs=1e-12)


def test_coupling_upper_dominates_assignment():
    gen = np.random.default_rng(6)
    for _ in range(100):
        n = int(gen.integers(2, 65))
        a = _random_measure(gen, n=n, dim=3)
        b = _random_measure(gen, n=n, dim=3, shift=0.3)
        r = float(gen.choice([1.0, 2.0]))
        up = transport.coupling_upper(a, b, r)
        w = transport.wasserstein_assignment(a, b, r)
        assert w <= up + 1e-12


def test_independent_pairing_dominates_sorted_1d():
    gen = np.random.default_rng(7)
    for _ in range(50):
        n = int(gen.integers(2, 40))
        a = gen.normal(size=n)
        b = gen.normal(size=n) + 0.5
        paired = float(np.mean(np.abs(a - b) ** 2) ** 0.5)
        assert transport.wasserstein_1d(a, b, 2.0) <= paired + 1e-12


def test_mean_lower():
    gen = np.random.default_rng(8)
    a = _random_measure(gen, n=6)
    assert transport.mean_lower(a, a) == 0.0
    da = EmpiricalMeasure(np.array([[0.0, 0.0]]))
    db = EmpiricalMeasure(np.array([[3.0, 4.0]]))
    assert transport.mean_lower(da, db) == pytest.approx(5.0, abs=1e-14)
    for _ in range(100):
        x = _random_measure(gen, n=7)
        y = _random_measure(gen, n=7, shift=0.8)
        assert transport.mean_lower(x, y) <= transport.wasserstein_assignment(x, y, 2.0) + 1e-12


def test_metric_properties():
    gen = np.random.default_rng(9)
    for _ in range(60):
        n = int(gen.integers(2, 10))
        a = _random_measure(gen, n=n)
        b = _random_measure(gen, n=n, shift=0.4)
        c = _random_measure(gen, n=n, shift=-0.4)
        r = float(gen.choice([1.0, 2.0]))
        wab = transport.wasserstein_assignment(a, b, r)
        wba = transport.wasserstein_assignment(b, a, r)
        assert wab == pytest.approx(wba, abs=1e-12)
        wac = transport.wasserstein_assignment(a, c, r)
        wcb = transport.wasserstein_assignment(c, b, r)
        assert wab <= wac + wcb + 1e-10


def test_order_monotonicity():
    gen = np.random.default_rng(10)
    for _ in range(60):
        n = int(gen.integers(2, 12))
        a = _random_measure(gen, n=n)
        b = _random_measure(gen, n=n, shift=0.6)
        w1 = transport.wasserstein_assignment(a, b, 1.0)
        w2 = transport.wasserstein_assignment(a, b, 2.0)
        w4 = transport.wasserstein_assignment(a, b, 4.0)
        assert w1 <= w2 + 1e-12
        assert w2 <= w4 + 1e-12


def test_1d_consistency():
    gen = np.random.default_rng(11)
    for _ in range(40):
        n = int(gen.integers(2, 30))
        a = gen.normal(size=n)
        b = gen.normal(size=n) + 1.0
        r = float(gen.choice([1.0, 2.0, 3.0]))
        w_sort = transport.wasserstein_1d(a, b, r)
        w_assign = transport.wasserstein_assignment(
            EmpiricalMeasure(a), EmpiricalMeasure(b), r
        )
        assert abs(w_sort - w_assign) < 1e-12


def test_scaling_homogeneity():
    gen = np.random.default_rng(12)
    a = _random_measure(gen, n=9)
    b = _random_measure(gen, n=9, shift=0.5)
    for s in (-2.5, 0.3, 7.0):
        sa = EmpiricalMeasure(s * a.samples)
        sb = EmpiricalMeasure(s * b.samples)
        assert transport.wasserstein_assignment(sa, sb, 2.0) == pytest.approx(
            abs(s) * transport.wasserstein_assignment(a, b, 2.0), rel=1e-12
        )


def test_norm_weight_enters_distances():
    a = EmpiricalMeasure(np.array([[0.0], [1.0]]), weight=0.25)
    b = EmpiricalMeasure(np.array([[2.0], [3.0]]), weight=0.25)
    # distances scale with sqrt(weight)
    assert transport.wasserstein_assignment(a, b, 1.0) == pytest.approx(1.0, abs=1e-14)


def test_pooled_lp_agrees_with_assignment():
    gen = np.random.default_rng(13)
    for _ in range(20):
        n = int(gen.integers(2, 10))
        a = _random_measure(gen, n=n)
        b = _random_measure(gen, n=n, shift=0.5)
        r = float(gen.choice([1.0, 2.0]))
        via_lp = transport.wasserstein_pooled(a, b.samples, np.full(n, 1.0 / n), r)
        via_lsa = transport.wasserstein_assignment(a, b, r)
        assert via_lp == pytest.approx(via_lsa, abs=1e-10)


# --- disintegration checker --------------------------------------------------


def test_disintegration_degenerate_mixture():
    gen = np.random.default_rng(14)
    x = _random_measure(gen, n=6)
    comp = _random_measure(gen, n=5, shift=1.0)
    rep = transport.disintegration_check(x, [comp], [1.0], 2.0)
    assert rep.lhs == pytest.approx(rep.rhs, abs=1e-12)
    assert rep.holds


def test_disintegration_x_equals_mixture():
    gen = np.random.default_rng(15)
    c1 = gen.normal(size=(4, 2))
    c2 = gen.normal(size=(4, 2)) + 1.0
    x = EmpiricalMeasure(np.vstack([c1, c2]))
    rep = transport.disintegration_check(
        x, [EmpiricalMeasure(c1), EmpiricalMeasure(c2)], [0.5, 0.5], 2.0
    )
    assert rep.lhs == pytest.approx(0.0, abs=1e-9)
    assert rep.holds


def test_disintegration_weight_validation():
    gen = np.random.default_rng(16)
    x = _random_measure(gen, n=4)
    comps = [_random_measure(gen, n=4), _random_measure(gen, n=4)]
    with pytest.raises(ValueError):
        transport.disintegration_check(x, comps, [0.6, 0.5], 1.0)


def test_disintegration_r1_always_holds():
    # order 1: the distance is jointly convex, so the mixture inequality is a
    # theorem; every random instance must satisfy it
    from plmx.experiments import random_disintegration_instance

    gen = np.random.default_rng(17)
    for _ in range(100):
        x, comps, w = random_disintegration_instance(gen)
        rep = transport.disintegration_check(x, comps, w, 1.0)
        assert rep.holds


def test_disintegration_power_form_always_holds():
    # the r-power form follows from mixing the per-component optimal
    # couplings, for any instance and any order
    from plmx.experiments import random_disintegration_instance

    gen = np.random.default_rng(18)
    for _ in range(60):
        x, comps, w = random_disintegration_instance(gen)
        for r in (1.0, 2.0):
            rep = transport.disintegration_check(x, comps, w, r)
            assert rep.holds_pow_r


def test_disintegration_r2_counterexample_is_reported():
    # a concentrated first measure against two separated components violates
    # the unpowered order-2 inequality: lhs is the root-mean-square of the
    # component distances while rhs is their mean; the checker must report
    # the violation (holds=False) while the power form still holds
    x = EmpiricalMeasure(np.zeros((4, 1)))
    comps = [
        EmpiricalMeasure(np.full((3, 1), 1.0)),
        EmpiricalMeasure(np.full((3, 1), 3.0)),
    ]
    rep = transport.disintegration_check(x, comps, [0.5, 0.5], 2.0)
    assert rep.lhs == pytest.approx(np.sqrt(5.0), rel=1e-9)
    assert rep.rhs == pytest.approx(2.0, rel=1e-9)
    assert not rep.holds
    assert rep.holds_pow_r
