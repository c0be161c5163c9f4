import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from matchcal.errors import FitError, InfeasibleError, ParameterError, StateError
from matchcal.matching import nn_match, propensity_match, transfer_weights, write_matched_csv
from matchcal.sampling import DesignSample


def _greedy_oracle(t, p, replace):
    # brute force over all pairs, written independently of the library
    used = set()
    out = []
    for i in range(len(t)):
        best, bj = np.inf, -1
        for j in range(len(p)):
            if not replace and j in used:
                continue
            d = float(np.sqrt(np.sum((t[i] - p[j]) ** 2)))
            if d < best:
                best, bj = d, j
        used.add(bj)
        out.append((bj, best))
    return out


def test_identity_pairing():
    x = np.array([3.0, 1.0, 2.0])
    sk = nn_match(x, x)
    np.testing.assert_array_equal(sk.np_index, [0, 1, 2])
    np.testing.assert_array_equal(sk.distance, 0.0)


def test_small_scalar_fixture():
    sk = nn_match(np.array([1.0, 5.0]), np.array([0.9, 1.2, 4.7]))
    np.testing.assert_array_equal(sk.np_index, [0, 2])
    np.testing.assert_allclose(sk.distance, [0.1, 0.3], atol=1e-12)


def test_without_replacement_second_choice():
    sk = nn_match(np.array([1.0, 1.1]), np.array([1.05, 3.0]))
    np.testing.assert_array_equal(sk.np_index, [0, 1])
    sk = nn_match(np.array([1.0, 1.1]), np.array([1.05, 3.0]), with_replacement=True)
    np.testing.assert_array_equal(sk.np_index, [0, 0])


def test_ties_go_to_smallest_index():
    sk = nn_match(np.array([2.0]), np.array([1.0, 3.0]))
    assert sk.np_index[0] == 0


@pytest.mark.parametrize("replace", [False, True])
def test_brute_force_oracle_two_covariates(replace):
    rng = np.random.default_rng(7)
    t = rng.normal(size=(6, 2))
    p = rng.normal(size=(20, 2))
    sk = nn_match(t, p, with_replacement=replace, standardize=False)
    oracle = _greedy_oracle(t, p, replace)
    np.testing.assert_array_equal(sk.np_index, [j for j, _ in oracle])
    np.testing.assert_allclose(sk.distance, [d for _, d in oracle], rtol=1e-12)


@given(
    arrays(float, 8, elements=st.floats(-100, 100)),
    arrays(float, 15, elements=st.floats(-100, 100)),
)
def test_replacement_never_farther_and_bijection(t, p):
    a = nn_match(t, p)
    b = nn_match(t, p, with_replacement=True)
    assert np.all(b.distance <= a.distance + 1e-12)
    assert len(set(a.np_index.tolist())) == len(t)


def test_standardized_match_is_affine_invariant():
    rng = np.random.default_rng(8)
    t = rng.normal(size=(10, 3))
    p = rng.normal(size=(30, 3))
    scale = np.array([100.0, 0.01, 3.0])
    shift = np.array([5.0, -2.0, 40.0])
    a = nn_match(t, p, standardize=True)
    b = nn_match(t * scale + shift, p * scale + shift, standardize=True)
    np.testing.assert_array_equal(a.np_index, b.np_index)


def test_infeasible_and_shape_errors():
    with pytest.raises(InfeasibleError):
        nn_match(np.arange(5.0), np.arange(3.0))
    with pytest.raises(InfeasibleError):
        nn_match(np.arange(2.0), np.empty(0), with_replacement=True)
    with pytest.raises(ParameterError):
        nn_match(np.ones((2, 2)), np.ones((3, 3)))


def test_random_order_is_seeded():
    rng = np.random.default_rng(9)
    t, p = rng.normal(size=12), rng.normal(size=14)
    a = nn_match(t, p, order="random", seed=5)
    b = nn_match(t, p, order="random", seed=5)
    np.testing.assert_array_equal(a.np_index, b.np_index)
    assert len(set(a.np_index.tolist())) == 12


def _logit_oracle(x, label, w):
    b = np.zeros(x.shape[1])
    for _ in range(100):
        p = 1 / (1 + np.exp(-x @ b))
        b += np.linalg.solve((x * (w * p * (1 - p))[:, None]).T @ x, x.T @ (w * (label - p)))
    return b


def test_propensity_match_against_newton_oracle():
    rng = np.random.default_rng(30)
    px = rng.normal(0.5, 1, size=(10, 1))
    qx = rng.normal(0, 1, size=(20, 1))
    w = rng.uniform(1, 3, size=10)
    sk = propensity_match(px, w, qx)
    design = np.column_stack([np.ones(30), np.vstack([px, qx])])
    label = np.r_[np.ones(10), np.zeros(20)]
    b = _logit_oracle(design, label, np.r_[w, np.ones(20)])
    lp = design @ b
    np.testing.assert_allclose(sk.scores[0], lp[:10], atol=1e-8)
    oracle = _greedy_oracle(lp[:10, None], lp[10:, None], False)
    np.testing.assert_array_equal(sk.np_index, [j for j, _ in oracle])


def test_propensity_monotone_single_covariate_equals_scalar_match():
    rng = np.random.default_rng(31)
    px = rng.normal(0.3, 1, size=15)
    qx = rng.normal(0, 1, size=40)
    sk = propensity_match(px, None, qx)
    direct = nn_match(px, qx)
    np.testing.assert_array_equal(sk.np_index, direct.np_index)


def test_propensity_duplicate_pool_rows_take_smallest_index():
    px = np.array([[0.0], [1.0], [2.0]])
    qx = np.array([[1.0], [1.0], [0.0], [2.0], [3.0]])
    sk = propensity_match(px, None, qx)
    assert sk.np_index[1] == 0
    assert sorted(sk.np_index.tolist()) == sorted(set(sk.np_index.tolist()))


def test_propensity_separation_raises():
    with pytest.raises(FitError):
        propensity_match(np.array([5.0, 6.0, 7.0]), None, np.array([0.0, 1.0, 2.0, 3.0]))


def _donor():
    return DesignSample(unit_ids=np.array([10, 11]), pi=np.array([0.1, 0.25]), stratum=np.ones(2, dtype=np.int64))


def test_transfer_weights_and_csv(tmp_path):
    donor = _donor()
    sk = nn_match(np.array([1.0, 5.0]), np.array([0.9, 1.2, 4.7]))
    m = transfer_weights(sk, donor, pool_y=np.array([1.0, 2.0, 3.0]), pool_x=np.array([0.9, 1.2, 4.7]))
    np.testing.assert_allclose(m.transferred_weight, [10.0, 4.0])
    np.testing.assert_allclose(m.y, [1.0, 3.0])
    np.testing.assert_array_equal(m.p_ids, [10, 11])
    with pytest.raises(StateError):
        transfer_weights(sk, donor, "greg_weight")
    out = tmp_path / "m.csv"
    write_matched_csv(m, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "p_id,np_id,distance,weight,pi"
    assert lines[1].startswith("10,0,") and lines[1].endswith(",10,0.10000000000000001")
    assert len(lines) == 3
