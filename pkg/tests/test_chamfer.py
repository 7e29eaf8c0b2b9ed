import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthcomp.chamfer import (
    chamfer_bruteforce,
    chamfer_fast,
    chamfer_grad,
    mutual_nearest_bruteforce,
    mutual_nearest_screened,
    nearest_bruteforce,
    nearest_hash,
)
from depthcomp.errors import EmptyInputError
from depthcomp.geometry import PointCloud
from depthcomp.tensor import Tensor, grad_check


def cloud(rng, n, scale=5.0):
    return rng.uniform(-scale, scale, (n, 3))


def test_identity_is_zero():
    p = cloud(np.random.default_rng(0), 30)
    assert chamfer_bruteforce(p, p).value == 0.0
    assert chamfer_fast(p, p).value == 0.0


def test_singletons():
    r = chamfer_bruteforce([[0, 0, 0]], [[3, 0, 0]])
    assert (r.value, r.term1, r.term2) == (6.0, 3.0, 3.0)


def test_hand_enumeration():
    r = chamfer_bruteforce([[0, 0, 0], [2, 0, 0]], [[1, 0, 0]])
    assert (r.term1, r.term2, r.value) == (1.0, 1.0, 2.0)


def test_accepts_point_clouds():
    a = PointCloud([[0.0, 0.0, 0.0]])
    b = PointCloud([[0.0, 4.0, 0.0]])
    assert chamfer_fast(a, b).value == 8.0


@pytest.mark.parametrize("fn", [chamfer_bruteforce, chamfer_fast])
def test_empty_rejected(fn):
    with pytest.raises(EmptyInputError):
        fn(np.zeros((0, 3)), np.zeros((4, 3)))


@pytest.mark.parametrize("seed", range(100))
def test_fast_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    a, b = cloud(rng, rng.integers(1, 201)), cloud(rng, rng.integers(1, 201))
    fast, brute = chamfer_fast(a, b), chamfer_bruteforce(a, b)
    assert abs(fast.value - brute.value) <= 1e-12
    assert abs(fast.term1 - brute.term1) <= 1e-12


@given(st.integers(0, 2**31), st.floats(0.01, 20.0))
@settings(max_examples=50, deadline=None)
def test_hash_exact_for_any_cell_size(seed, cell):
    rng = np.random.default_rng(seed)
    q, p = cloud(rng, 40), cloud(rng, 60)
    d_h, i_h = nearest_hash(q, p, cell)
    d_b, i_b = nearest_bruteforce(q, p)
    np.testing.assert_array_equal(d_h, d_b)
    np.testing.assert_array_equal(i_h, i_b)


def test_clustered_and_far_apart_clouds():
    rng = np.random.default_rng(4)
    a = np.vstack([cloud(rng, 50, 0.01), cloud(rng, 50, 0.01) + 100.0])
    b = cloud(rng, 30, 0.5) + [50.0, 0, 0]
    assert chamfer_fast(a, b).value == chamfer_bruteforce(a, b).value


def test_ties_break_to_lowest_index():
    q = np.array([[0.0, 0.0, 0.0]])
    p = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]])
    assert nearest_bruteforce(q, p)[1][0] == 0
    assert nearest_hash(q, p, 0.3)[1][0] == 0


def test_screened_matches_bruteforce_on_grid_ties():
    g = np.stack(np.meshgrid(*[np.arange(5.0)] * 3), -1).reshape(-1, 3)
    h = g[::3] + 0.5
    for got, want in zip(mutual_nearest_screened(g, h), mutual_nearest_bruteforce(g, h)):
        np.testing.assert_array_equal(got, want)


@given(st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_metric_invariants(seed):
    rng = np.random.default_rng(seed)
    a, b = cloud(rng, rng.integers(1, 80)), cloud(rng, rng.integers(1, 80))
    ab, ba = chamfer_fast(a, b), chamfer_fast(b, a)
    assert ab.value >= 0
    assert ab.value == ba.value
    assert (ab.term1, ab.term2) == (ba.term2, ba.term1)
    t = rng.uniform(-10, 10, 3)
    assert chamfer_fast(a + t, b + t).value == pytest.approx(ab.value, rel=1e-12, abs=1e-12)


# --- gradient ------------------------------------------------------------


def test_grad_zero_for_identical_clouds():
    p = cloud(np.random.default_rng(1), 12)
    x = Tensor(p.copy(), requires_grad=True)
    loss = chamfer_grad(x, p)
    loss.backward()
    assert loss.item() == 0.0
    np.testing.assert_array_equal(x.grad, 0.0)


def test_singleton_gradient():
    x = Tensor(np.array([[1.0, 0.0, 0.0]]), requires_grad=True)
    loss = chamfer_grad(x, np.zeros((1, 3)))
    loss.backward()
    assert loss.item() == 2.0
    np.testing.assert_array_equal(x.grad, [[2.0, 0.0, 0.0]])


@pytest.mark.parametrize("method", ["auto", "screened", "bruteforce", "hash"])
def test_methods_agree(method):
    rng = np.random.default_rng(2)
    a, b = cloud(rng, 50), cloud(rng, 70)
    ref = Tensor(a.copy(), requires_grad=True)
    chamfer_grad(ref, b, "bruteforce").backward()
    x = Tensor(a.copy(), requires_grad=True)
    loss = chamfer_grad(x, b, method)
    loss.backward()
    assert loss.item() == pytest.approx(chamfer_bruteforce(a, b).value, rel=1e-14)
    np.testing.assert_array_equal(x.grad, ref.grad)


def test_unknown_method():
    with pytest.raises(ValueError, match="kdtree"):
        chamfer_grad(Tensor(np.zeros((1, 3)), requires_grad=True), np.ones((1, 3)), "kdtree")


@pytest.mark.parametrize("seed", range(10))
def test_grad_finite_difference(seed):
    rng = np.random.default_rng(seed)
    target = cloud(rng, 10)
    x = Tensor(cloud(rng, 10), requires_grad=True)
    assert grad_check(lambda: chamfer_grad(x, target), x, eps=1e-5) < 1e-4
