import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp
from scipy.optimize import minimize

from vqmargin import geometry as geo

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def test_tie_goes_to_smallest_index():
    a = geo.nearest_index([[-1.0], [1.0]], [0.0])
    assert a.index == 0 and a.distance_sq == 1.0


def test_nearest_index_simple():
    a = geo.nearest_index([[0, 0], [1, 0]], [0.75, 0])
    assert a.index == 1
    assert a.distance_sq == pytest.approx(0.0625, abs=1e-15)


def test_single_code_point():
    x = np.array([0.3, -2.0])
    a = geo.nearest_index([[0, 0]], x)
    assert a.index == 0 and a.distance_sq == pytest.approx(x @ x)


def test_dimension_mismatch_and_nonfinite():
    with pytest.raises(geo.GeometryError):
        geo.nearest_index([[0, 0], [1, 0]], [1, 2, 3])
    with pytest.raises(geo.GeometryError):
        geo.nearest_index([[0, 0]], [np.nan, 0])
    with pytest.raises(geo.GeometryError):
        geo.nearest_index([[np.inf, 0]], [0, 0])


def test_contrast_examples():
    assert geo.contrast([[0, 0], [1, 0]], [0.75, 0]) == pytest.approx(0.0625)
    assert geo.contrast([[0, 0], [1, 0]], [1, 0]) == 0.0


def test_contrast_brute_force_d3(rng):
    for _ in range(50):
        c = rng.normal(size=(4, 3))
        x = rng.normal(size=3)
        brute = min(sum((x[i] - cj[i]) ** 2 for i in range(3)) for cj in c)
        assert geo.contrast(c, x) == pytest.approx(brute, rel=1e-13)


@given(hnp.arrays(float, (5, 2), elements=st.integers(-2, 2).map(float)),
       hnp.arrays(float, (2,), elements=st.integers(-2, 2).map(float)),
       st.permutations(range(5)))
def test_tiebreak_total_under_permutation(c, x, perm):
    d2 = ((c - x) ** 2).sum(axis=1)
    assert geo.nearest_index(c, x).index == int(np.flatnonzero(d2 == d2.min())[0])
    cp = c[list(perm)]
    dp = d2[list(perm)]
    j = geo.nearest_index(cp, x).index
    assert j == int(np.flatnonzero(dp == dp.min())[0])
    assert dp[j] == d2.min()


def test_assign_matches_nearest_index(rng):
    c = rng.normal(size=(4, 2))
    X = rng.normal(size=(100, 2))
    idx, d2 = geo.assign(c, X)
    for x, i, v in zip(X, idx, d2):
        a = geo.nearest_index(c, x)
        assert a.index == i and a.distance_sq == v


def test_bisector_examples():
    assert geo.bisector_distance([[0.0], [2.0]], 0, 1, [0.25]) == pytest.approx(0.75)
    assert geo.bisector_distance([[0, 0], [2, 0]], 0, 1, [1, 5]) == 0.0
    with pytest.raises(geo.DegenerateBisectorError):
        geo.bisector_distance([[1, 1], [1, 1]], 0, 1, [0, 0])
    with pytest.raises(geo.GeometryError):
        geo.bisector_distance([[0, 0], [1, 1]], 1, 1, [0, 0])


def test_bisector_distance_against_numerical_projection(rng):
    # oracle: minimize |y - x|^2 subject to |y - c_i|^2 = |y - c_j|^2
    for _ in range(20):
        c = rng.normal(size=(2, 2))
        x = rng.normal(size=2) * 2
        cons = {"type": "eq", "fun": lambda y: np.sum((y - c[0]) ** 2) - np.sum((y - c[1]) ** 2)}
        res = minimize(lambda y: np.sum((y - x) ** 2), 0.5 * (c[0] + c[1]), constraints=[cons],
                       method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
        assert geo.bisector_distance(c, 0, 1, x) == pytest.approx(np.sqrt(res.fun), abs=1e-6)


def test_bisector_batch_matches_single(rng):
    c = rng.normal(size=(3, 2))
    X = rng.normal(size=(10, 2))
    batch = geo.bisector_distance(c, 0, 2, X)
    assert np.allclose(batch, [geo.bisector_distance(c, 0, 2, x) for x in X])


def test_critical_membership_examples():
    opt = [[[-1.0], [1.0]]]
    assert geo.critical_membership(opt, 0.2, [0.1])
    assert not geo.critical_membership(opt, 0.2, [0.5])
    assert not geo.critical_membership(opt, 0.0, [0.5])
    with pytest.raises(geo.GeometryError):
        geo.critical_membership([], 0.1, [0.0])
    with pytest.raises(geo.GeometryError):
        geo.critical_membership(opt, -1.0, [0.0])


@given(st.floats(0, 2), st.floats(0, 2), hnp.arrays(float, (2,), elements=finite))
def test_critical_membership_monotone(t1, t2, x):
    lo, hi = sorted((t1, t2))
    opt = [np.array([[-1.0, 0.0], [1.0, 0.5], [0.0, 2.0]])]
    if geo.critical_membership(opt, lo, x):
        assert geo.critical_membership(opt, hi, x)


def test_face_distance_skips_duplicates():
    c = np.array([[0.0], [0.0], [2.0]])
    fd = geo.face_distance(c, [[0.5]])
    assert fd[0] == pytest.approx(0.5)
    assert np.isinf(geo.face_distance([[1.0], [1.0]], [[0.0]])[0])


def test_boundary_closeness_audit_no_violations():
    a = geo.boundary_closeness_audit(20_000, k=3, d=2, M=1.0, seed=3)
    assert a.triples == 20_000
    assert a.vor1_violations == 0 and a.vor2_violations == 0
    b = geo.boundary_closeness_audit(5_000, k=4, d=3, M=2.0, seed=4)
    assert b.vor1_violations == 0 and b.vor2_violations == 0


def test_codebook_json_roundtrip():
    c = np.array([[0.1, 0.2], [3.0, -1.0]])
    assert np.array_equal(geo.codebook_from_json(geo.codebook_to_json(c)), c)


def test_sample_coercion():
    assert geo.as_sample([0.0, 1.0, 10.0]).shape == (3, 1)
    assert geo.as_points([0.0, 1.0, 10.0]).shape == (1, 3)
    assert geo.as_codebook([0.0, 1.0]).shape == (2, 1)
