import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnnlqr.filters import (
    FilterBank,
    apply_filter,
    default_interval,
    filter_lipschitz,
    filter_size,
    freq_response,
)
from gnnlqr.network import random_system
from gnnlqr.numerics import PreconditionError, RngStream, l21_norm

from oracles import grid_abs_max, naive_filter


def scalar_bank(*taps, interval=(-1.0, 1.0)):
    return FilterBank(np.asarray(taps, dtype=float), interval)


def test_two_term_filter():
    s = np.array([[0.0, 1.0], [1.0, 0.0]])
    y = apply_filter(scalar_bank(1.0, 2.0), s, np.array([[1.0], [0.0]]))
    np.testing.assert_array_equal(y, [[1.0], [2.0]])


def test_zero_order_ignores_support():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 3))
    h0 = rng.standard_normal((1, 3, 2))
    fb = FilterBank(h0)
    for s in (np.zeros((5, 5)), rng.standard_normal((5, 5))):
        np.testing.assert_array_equal(apply_filter(fb, s, x), x @ h0[0])


def test_filter_against_naive_powers():
    rng = np.random.default_rng(1)
    d = random_system(10, 3, rng=RngStream(1))
    taps = rng.standard_normal((4, 3, 2))
    x = rng.standard_normal((10, 3))
    y = apply_filter(FilterBank(taps), d.support, x)
    np.testing.assert_allclose(y, naive_filter(d.support, x, taps), atol=1e-10)


def test_filter_batched_matches_single():
    rng = np.random.default_rng(2)
    s = random_system(8, 3, rng=RngStream(2)).support
    fb = FilterBank(rng.standard_normal((3, 2, 2)))
    xs = rng.standard_normal((4, 8, 2))
    ys = apply_filter(fb, s, xs)
    for x, y in zip(xs, ys):
        np.testing.assert_allclose(apply_filter(fb, s, x), y, atol=1e-14)


def test_filter_dimension_mismatch():
    with pytest.raises(PreconditionError):
        apply_filter(FilterBank(np.ones((2, 3, 1))), np.eye(4), np.ones((4, 2)))


def test_freq_response():
    fb = scalar_bank(1.0, 2.0)
    assert freq_response(fb, 0, 0, 1.0) == 3.0
    assert freq_response(fb, 0, 0, -1.0) == -1.0
    assert freq_response(scalar_bank(0.5, -0.3, 0.1), 0, 0, 2.0) == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(IndexError):
        freq_response(fb, 1, 0, 0.0)


def test_size_and_lipschitz_simple():
    fb = scalar_bank(1.0, 2.0)
    assert filter_size(fb) == pytest.approx(3.0)
    assert filter_lipschitz(fb) == pytest.approx(2.0)
    assert filter_size(scalar_bank(-0.7)) == pytest.approx(0.7)
    assert filter_lipschitz(scalar_bank(-0.7)) == 0.0


def test_size_interior_extremum_against_grid():
    # λ² − 0.5 on [−1, 1]: the interior minimum and the endpoints tie at 0.5
    fb = scalar_bank(-0.5, 0.0, 1.0)
    assert filter_size(fb) == pytest.approx(0.5, abs=1e-15)
    assert filter_size(fb) == pytest.approx(grid_abs_max([-0.5, 0.0, 1.0], -1, 1), abs=1e-9)


def test_lipschitz_cubic_against_grid():
    fb = scalar_bank(0.0, 0.0, 0.0, 1.0)
    assert filter_lipschitz(fb) == pytest.approx(3.0, abs=1e-12)
    assert filter_lipschitz(fb) == pytest.approx(grid_abs_max([0.0, 0.0, 3.0], -1, 1), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 5))
def test_size_and_lipschitz_against_grid(seed, order):
    rng = np.random.default_rng(seed)
    lo = float(rng.uniform(-1.5, 0.0))
    hi = lo + float(rng.uniform(0.1, 2.5))
    taps = rng.standard_normal((order + 1, 2, 3))
    fb = FilterBank(taps, (lo, hi))
    size = np.array([[grid_abs_max(taps[:, f, g], lo, hi, 20001) for g in range(3)] for f in range(2)])
    deriv = np.array([[grid_abs_max(np.polynomial.polynomial.polyder(taps[:, f, g]), lo, hi, 20001)
                       if order else 0.0 for g in range(3)] for f in range(2)])
    # the exact maxima dominate any grid and the grid gets within its resolution
    assert filter_size(fb) >= size.sum(1).max() - 1e-12
    assert filter_size(fb) == pytest.approx(size.sum(1).max(), rel=1e-5)
    assert filter_lipschitz(fb) >= deriv.sum(1).max() - 1e-12
    assert filter_lipschitz(fb) == pytest.approx(deriv.sum(1).max(), rel=1e-5, abs=1e-12)


def test_filter_output_bounded_by_size():
    # ‖H(X; S)‖ ≤ C_H ‖X‖ when the interval holds the spectrum of S
    rng = np.random.default_rng(4)
    d = random_system(15, 4, rng=RngStream(4))
    fb = FilterBank(rng.standard_normal((4, 2, 3)), default_interval([d.support]))
    x = rng.standard_normal((15, 2))
    assert l21_norm(apply_filter(fb, d.support, x)) <= filter_size(fb) * l21_norm(x) + 1e-9


def test_default_interval():
    s1 = np.diag([-0.5, 0.2, 1.0])
    s2 = np.diag([-0.8, 0.0, 0.9])
    assert default_interval([s1]) == pytest.approx((-0.5, 1.0))
    assert default_interval([s1, s2]) == pytest.approx((-0.8, 1.0))
    with pytest.raises(PreconditionError):
        default_interval([])


def test_filterbank_validation_and_json():
    with pytest.raises(PreconditionError):
        FilterBank(np.ones((2, 2, 2)), (1.0, 0.0))
    with pytest.raises(PreconditionError):
        FilterBank(np.full((1, 1, 1), np.inf))
    fb = FilterBank(np.random.default_rng(0).standard_normal((3, 2, 4)), (-0.9, 1.0))
    fb2 = FilterBank.from_json(fb.to_json())
    np.testing.assert_array_equal(fb2.taps, fb.taps)
    assert fb2.interval == fb.interval
    assert (fb.order, fb.in_dim, fb.out_dim) == (2, 2, 4)
