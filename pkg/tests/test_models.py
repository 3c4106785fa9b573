import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from monomer.models import (LmtParams, MonomerParams, WnnParams, classify, ct_fit, ct_predict, expert_distance,
                            from_vector, gate, link_probability, lmt_distance, load_model, log_link_probability,
                            monomer_distance, param_count, save_model, score_pairs, to_vector, wnn_distance)


def mono(anchor, experts, gating, bias=0.0):
    return MonomerParams(np.array(anchor, float), np.array(experts, float), np.array(gating, float), bias)


def random_monomer(rng, F=6, K=3, N=3, scale=1.0):
    return MonomerParams(rng.normal(size=(F, K)) * scale, rng.normal(size=(N, F, K)) * scale,
                         rng.normal(size=(F, N)), rng.normal())


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


# --- lmt / wnn ---------------------------------------------------------------

def test_lmt_identity_is_zero():
    p = LmtParams(np.eye(2))
    assert lmt_distance(p, [1.0, 2.0], [1.0, 2.0]) == 0.0


def test_lmt_identity_embedding():
    assert lmt_distance(LmtParams(np.eye(2)), [1.0, 2.0], [3.0, 4.0]) == pytest.approx(8.0)


def test_lmt_distinct_items_zero_distance():
    p = LmtParams(np.array([[1.0], [1.0]]))
    assert lmt_distance(p, [1.0, 0.0], [0.0, 1.0]) == 0.0


def test_lmt_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        lmt_distance(LmtParams(np.eye(2)), [1.0, 2.0, 3.0], [1.0, 2.0])


def test_wnn_examples():
    fx, fy = np.array([3.0, -1.0, 2.0]), np.array([1.0, 1.0, 0.5])
    assert wnn_distance(WnnParams(np.ones(3)), fx, fy) == pytest.approx(np.sum((fx - fy) ** 2))
    assert wnn_distance(WnnParams(np.zeros(3)), fx, fy) == 0.0
    assert wnn_distance(WnnParams([1.0, 2.0]), [2.0, 3.0], [1.0, 2.0]) == pytest.approx(5.0)


# --- expert distance, gate, mixture -----------------------------------------------

def test_expert_degenerate_metric():
    rng = np.random.default_rng(0)
    E0 = rng.normal(size=(4, 2))
    p = mono(E0, [E0, E0], rng.normal(size=(4, 2)))
    f = rng.normal(size=4)
    assert expert_distance(p, 1, f, f) == 0.0
    assert expert_distance(p, 2, f, f) == 0.0


def test_expert_nonzero_for_identical_features():
    p = mono([[1.0]], [[[2.0]]], [[0.0]])
    assert expert_distance(p, 1, [1.0], [1.0]) == pytest.approx(1.0)


def test_expert_asymmetric_scalar():
    p = mono([[1.0]], [[[3.0]]], [[0.0]])
    assert expert_distance(p, 1, [1.0], [2.0]) == pytest.approx(25.0)
    assert expert_distance(p, 1, [2.0], [1.0]) == pytest.approx(1.0)


def test_expert_index_range():
    p = mono([[1.0]], [[[2.0]]], [[0.0]])
    with pytest.raises(IndexError):
        expert_distance(p, 0, [1.0], [1.0])
    with pytest.raises(IndexError):
        expert_distance(p, 2, [1.0], [1.0])


def test_gate_uniform_at_zero():
    p = mono(np.ones((3, 2)), np.ones((4, 3, 2)), np.zeros((3, 4)))
    np.testing.assert_allclose(gate(p, [1.0, -2.0, 0.5]), [0.25] * 4)


def test_gate_softmax_oracle():
    p = mono([[1.0]], [[[1.0]], [[1.0]]], [[math.log(2.0), 0.0]])
    np.testing.assert_allclose(gate(p, [1.0]), [2 / 3, 1 / 3], rtol=0, atol=1e-15)


def test_gate_large_logits_stable():
    p = mono([[1.0]], [[[1.0]], [[1.0]]], [[1000.0, 999.0]])
    g = gate(p, [1.0])
    assert np.all(np.isfinite(g))
    assert g.sum() == pytest.approx(1.0, abs=1e-12)


def test_single_expert_mixture_ignores_gate():
    rng = np.random.default_rng(1)
    p = random_monomer(rng, N=1)
    fx, fy = rng.normal(size=6), rng.normal(size=6)
    assert monomer_distance(p, fx, fy) == pytest.approx(float(expert_distance(p, 1, fx, fy)), rel=1e-14)


def test_mixture_scalar_oracle():
    p = mono([[1.0]], [[[2.0]], [[3.0]]], [[0.0, 0.0]])
    assert monomer_distance(p, [1.0], [1.0]) == pytest.approx(2.5)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=arrays(np.float64, 5, elements=finite))
def test_gate_sums_to_one_and_is_shift_invariant(seed, shift):
    rng = np.random.default_rng(seed)
    p = random_monomer(rng, F=5, N=4)
    f = rng.normal(size=(7, 5))
    g = gate(p, f)
    assert np.all(np.abs(g.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all((g > 0) & (g < 1))
    shifted = MonomerParams(p.anchor, p.experts, p.gating + shift[:, None], p.bias)
    np.testing.assert_allclose(gate(shifted, f), g, rtol=1e-9, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_metric_recovery(seed):
    rng = np.random.default_rng(seed)
    F, K, N = 5, 3, 4
    E0 = rng.normal(size=(F, K))
    p = MonomerParams(E0, np.stack([E0] * N), rng.normal(size=(F, N)) * 3)
    fx, fy = rng.normal(size=(20, F)), rng.normal(size=(20, F))
    assert np.max(np.abs(monomer_distance(p, fx, fy) - lmt_distance(LmtParams(E0), fx, fy))) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_expert_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    p = random_monomer(rng, N=4)
    perm = rng.permutation(4)
    q = MonomerParams(p.anchor, p.experts[perm], p.gating[:, perm], p.bias)
    fx, fy = rng.normal(size=(10, 6)), rng.normal(size=(10, 6))
    np.testing.assert_allclose(monomer_distance(q, fx, fy), monomer_distance(p, fx, fy), rtol=1e-13)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_monomer_distance_non_negative(seed):
    rng = np.random.default_rng(seed)
    p = random_monomer(rng)
    assert np.all(monomer_distance(p, rng.normal(size=(30, 6)), rng.normal(size=(30, 6))) >= 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_lmt_pseudo_metric(seed):
    rng = np.random.default_rng(seed)
    p = LmtParams(rng.normal(size=(6, 3)))
    x, y, z = rng.normal(size=(3, 6))
    dxy, dyx = lmt_distance(p, x, y), lmt_distance(p, y, x)
    assert dxy == pytest.approx(dyx, rel=1e-12)
    assert lmt_distance(p, x, x) == 0.0
    assert math.sqrt(lmt_distance(p, x, z)) <= math.sqrt(dxy) + math.sqrt(lmt_distance(p, y, z)) + 1e-9


def test_monomer_is_asymmetric():
    rng = np.random.default_rng(5)
    p = random_monomer(rng)
    fx, fy = rng.normal(size=(50, 6)), rng.normal(size=(50, 6))
    assert np.max(np.abs(monomer_distance(p, fx, fy) - monomer_distance(p, fy, fx))) > 1e-3


# --- link probability and classification --------------------------------------------

def test_link_probability_examples():
    assert link_probability(3.0, 3.0) == pytest.approx(0.5)
    assert link_probability(3.0 + math.log(3.0), 3.0) == pytest.approx(0.25)


def test_link_probability_saturates():
    with np.errstate(over="raise", invalid="raise"):
        assert link_probability(1e6, 0.0) == 0.0
        lp = log_link_probability(1e6, 0.0)
    assert np.isfinite(lp) and lp == pytest.approx(-1e6)
    assert link_probability(-1e6, 0.0) == 1.0


@given(d=st.floats(-1e8, 1e8), c=st.floats(-1e3, 1e3))
def test_link_probability_bounds(d, c):
    p = link_probability(d, c)
    assert 0.0 <= p <= 1.0
    assert np.isfinite(log_link_probability(d, c))


@given(d1=st.floats(-50, 50), d2=st.floats(-50, 50))
def test_link_probability_monotone(d1, d2):
    if d1 <= d2:
        assert link_probability(d1, 0.0) >= link_probability(d2, 0.0)


def test_classify_tie_is_unrelated():
    assert classify(1.0, 2.0) == "related"
    assert classify(2.0, 2.0) == "unrelated"
    assert classify(3.0, 2.0) == "unrelated"
    assert list(classify(np.array([1.0, 2.0, 3.0]), 2.0)) == ["related", "unrelated", "unrelated"]


# --- category tree ------------------------------------------------------------------

def test_ct_top_half():
    m = ct_fit(["A"] * 6, ["B"] * 5 + ["C"])
    assert m.allowed["A"] == {"B"}
    assert ct_predict(m, "A", "B") == "related"
    assert ct_predict(m, "A", "C") == "unrelated"


def test_ct_unseen_source():
    m = ct_fit(["A"], ["B"])
    assert ct_predict(m, "Z", "B") == "unrelated"


def test_ct_tie_lexicographic():
    m = ct_fit(["A"] * 7, ["C", "C", "C", "B", "B", "B", "D"])
    assert m.allowed["A"] == {"B", "C"}


def test_ct_tie_broken_by_name():
    m = ct_fit(["A"] * 4, ["D", "D", "B", "B"])
    assert m.allowed["A"] == {"B"}


# --- vectors, batch scoring, files -----------------------------------------------------

def test_param_count_formula():
    assert param_count("monomer", 4096, 20, 4) == 425_985
    assert param_count("lmt", 10, 3) == 31
    assert param_count("wnn", 10) == 11


@pytest.mark.parametrize("kind,dims", [("monomer", (5, 3, 2)), ("lmt", (5, 4, 0)), ("wnn", (5, 1, 0))])
def test_vector_round_trip(kind, dims):
    F, K, N = dims
    theta = np.random.default_rng(0).normal(size=param_count(kind, F, K, N))
    p = from_vector(kind, theta, F, K, N)
    assert p.dims == dims
    np.testing.assert_array_equal(to_vector(p), theta)


def test_from_vector_length_check():
    with pytest.raises(ValueError, match="expected"):
        from_vector("lmt", np.zeros(5), 2, 3)


@pytest.mark.parametrize("kind", ["monomer", "lmt", "wnn"])
def test_model_file_round_trip(tmp_path, kind):
    rng = np.random.default_rng(3)
    F, K, N = 4, 3, 2
    p = from_vector(kind, rng.normal(size=param_count(kind, F, K if kind != "wnn" else 1, N)), F,
                    K if kind != "wnn" else 1, N)
    path = tmp_path / "m.mnmp"
    save_model(p, path)
    assert path.read_bytes()[:4] == b"MNMP"
    q = load_model(path)
    assert type(q) is type(p)
    np.testing.assert_array_equal(to_vector(q), to_vector(p))


def test_model_file_column_major_layout(tmp_path):
    p = LmtParams(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]), 7.0)
    path = tmp_path / "m.mnmp"
    save_model(p, path)
    body = np.frombuffer(path.read_bytes()[17:], dtype="<f8")
    np.testing.assert_array_equal(body, [1, 3, 5, 2, 4, 6, 7])


def test_truncated_model_file(tmp_path):
    path = tmp_path / "m.mnmp"
    save_model(WnnParams(np.ones(3), 1.0), path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ValueError):
        load_model(path)


def test_non_finite_params_rejected():
    with pytest.raises(ValueError, match="finite"):
        LmtParams(np.array([[np.nan]]))


@pytest.mark.parametrize("kind", ["monomer", "lmt", "wnn"])
def test_score_pairs_matches_direct(kind):
    rng = np.random.default_rng(9)
    F, K, N = 6, 3, 2
    K = 1 if kind == "wnn" else K
    p = from_vector(kind, rng.normal(size=param_count(kind, F, K, N)), F, K, N)
    feats = rng.normal(size=(20, F)).astype(np.float32)
    src, dst = rng.integers(0, 20, 40), rng.integers(0, 20, 40)
    from monomer.models import distance
    expected = distance(p, feats[src].astype(np.float64), feats[dst].astype(np.float64))
    np.testing.assert_allclose(score_pairs(p, feats, src, dst), expected, rtol=1e-12, atol=1e-12)
