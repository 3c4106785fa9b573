import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monomer.corpus import RelationSet
from monomer.evaluation import evaluate
from monomer.models import MonomerParams, from_vector, param_count, to_vector
from monomer.sampling import RewireConfig, sample_negatives
from monomer.synthetic import SyntheticSpec, generate_synthetic
from monomer.training import (CHUNK, Objective, TrainConfig, finite_difference_gradient, init_params,
                              objective_gradient, objective_value, relative_error, train)


def random_instance(kind, seed, F=10, K=3, N=2, pairs=50, items=40):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(items, F))
    src = rng.integers(0, items, pairs)
    dst = (src + rng.integers(1, items, pairs)) % items
    rel = RelationSet(src, dst, rng.integers(0, 2, pairs).astype(np.int8))
    obj = Objective(kind, float(rng.choice([0.0, 0.1])), rel, feats, k=K, n=N)
    return obj, rng.normal(size=obj.n_params) * 0.3


def one_pair(label):
    return RelationSet(np.array([0]), np.array([1]), np.array([label], dtype=np.int8))


# --- objective values ---------------------------------------------------------------

def test_positive_at_threshold():
    feats = np.array([[1.0, 0.0], [0.0, 1.0]])
    obj = Objective("lmt", 0.0, one_pair(1), feats, k=1)
    theta = np.array([1.0, 0.0, 1.0])  # E = (1, 0): d = 1 = c
    assert objective_value(theta, obj) == pytest.approx(math.log(2.0), abs=1e-12)
    assert objective_value(theta, obj) == pytest.approx(0.693147, abs=1e-6)


def test_zero_params_two_pairs():
    feats = np.random.default_rng(0).normal(size=(3, 4))
    rel = RelationSet(np.array([0, 1]), np.array([1, 2]), np.array([1, 0], dtype=np.int8))
    for kind in ("monomer", "lmt", "wnn"):
        obj = Objective(kind, 0.0, rel, feats, k=2, n=3)
        assert objective_value(np.zeros(obj.n_params), obj) == pytest.approx(1.386294, abs=1e-6)


def test_penalty_zero_at_zero_params():
    feats = np.random.default_rng(0).normal(size=(3, 4))
    rel = RelationSet(np.array([0, 1]), np.array([1, 2]), np.array([1, 0], dtype=np.int8))
    a = Objective("monomer", 0.0, rel, feats, k=2, n=3)
    b = Objective("monomer", 5.0, rel, feats, k=2, n=3)
    z = np.zeros(a.n_params)
    assert objective_value(z, a) == objective_value(z, b)


def test_bias_not_regularized():
    feats = np.zeros((2, 3))
    obj0 = Objective("wnn", 0.0, one_pair(1), feats)
    obj1 = Objective("wnn", 10.0, one_pair(1), feats)
    theta = np.zeros(obj0.n_params)
    theta[-1] = 4.0
    assert objective_value(theta, obj0) == objective_value(theta, obj1)


def test_huge_distance_stays_finite():
    feats = np.array([[1e3, 0.0], [0.0, 1e3]])
    obj = Objective("lmt", 0.0, one_pair(1), feats, k=2)
    theta = np.array([10.0, 0.0, 0.0, 10.0, 0.0])
    v = objective_value(theta, obj)
    assert math.isfinite(v) and v == pytest.approx(2e8)


def test_theta_length_checked():
    obj, _ = random_instance("lmt", 0)
    with pytest.raises(ValueError, match="expected"):
        objective_value(np.zeros(3), obj)


def test_empty_pairs_rejected():
    empty = RelationSet(np.array([], dtype=np.int64), np.array([], dtype=np.int64), np.array([], dtype=np.int8))
    with pytest.raises(ValueError, match="empty"):
        Objective("lmt", 0.0, empty, np.zeros((2, 2)))


# --- gradients -----------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["monomer", "lmt", "wnn"])
@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(kind, seed):
    obj, theta = random_instance(kind, seed)
    err = relative_error(objective_gradient(theta, obj), finite_difference_gradient(theta, obj, 1e-5))
    assert err.max() < 1e-5


def test_lmt_gradient_structure():
    # dL/dE = sum_p g_p * 2 delta_p (E^T delta_p)^T
    obj, theta = random_instance("lmt", 11)
    E = theta[:-1].reshape(10, 3)
    c = theta[-1]
    delta = obj.features[obj.pairs.src] - obj.features[obj.pairs.dst]
    proj = delta @ E
    d = np.sum(proj ** 2, axis=1)
    t = obj.pairs.label
    g = 1 / (1 + np.exp(-(d - c))) - (1 - t)
    expected = sum(2 * gi * np.outer(dl, pr) for gi, dl, pr in zip(g, delta, proj)) + 2 * obj.lam * E
    grad = objective_gradient(theta, obj)
    np.testing.assert_allclose(grad[:-1].reshape(10, 3), expected, rtol=1e-10, atol=1e-12)
    assert relative_error(grad, finite_difference_gradient(theta, obj)).max() < 1e-6


def test_gradient_across_chunks():
    rng = np.random.default_rng(2)
    feats = rng.normal(size=(200, 5))
    m = CHUNK + 300
    src = rng.integers(0, 200, m)
    rel = RelationSet(src, (src + 1) % 200, rng.integers(0, 2, m).astype(np.int8))
    obj = Objective("lmt", 0.1, rel, feats, k=2)
    theta = rng.normal(size=obj.n_params) * 0.2
    assert len(obj.chunks()) == 2
    err = relative_error(objective_gradient(theta, obj), finite_difference_gradient(theta, obj))
    assert err.max() < 1e-5


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_objective_invariant_to_expert_permutation(seed):
    obj, theta = random_instance("monomer", seed % 1000, N=3)
    p = obj.unpack(theta)
    perm = np.random.default_rng(seed).permutation(3)
    q = MonomerParams(p.anchor, p.experts[perm], p.gating[:, perm], p.bias)
    assert objective_value(to_vector(q), obj) == pytest.approx(objective_value(theta, obj), rel=1e-12)


# --- init and parameter counts -------------------------------------------------------

def test_init_deterministic_and_scaled():
    a = init_params("monomer", 8, 3, 2, TrainConfig(seed=4))
    b = init_params("monomer", 8, 3, 2, TrainConfig(seed=4))
    np.testing.assert_array_equal(a, b)
    bound = math.sqrt(6 / (8 + 3))
    assert np.all(np.abs(a[:-1]) < bound) and a[-1] == 0.0


def test_init_scale_zero():
    theta = init_params("lmt", 8, 3, config=TrainConfig(init_scale=0.0))
    assert not theta.any()


def test_parameter_count_and_budget_parity():
    F = 4096
    assert init_params("monomer", F, 20, 4, TrainConfig(init_scale=0.0)).size == 425_985
    mono = from_vector("monomer", np.zeros(param_count("monomer", 7, 20, 4)), 7, 20, 4)
    lmt = from_vector("lmt", np.zeros(param_count("lmt", 7, 100)), 7, 100)
    assert mono.n_embedding_params == lmt.n_embedding_params == 100 * 7


# --- training ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def separable():
    spec = SyntheticSpec(n_items=120, n_categories=2, style_dim=3, n_positives=10**6, n_maps=1, n_families=20,
                         noise=0.0, identity_maps=True, seed=1)
    corpus, pos, _ = generate_synthetic(spec)
    neg = sample_negatives(pos, corpus.category_codes, RewireConfig(seed=1))
    return corpus, RelationSet.concat([pos, neg])


def test_separable_instance_reaches_zero_error(separable):
    corpus, pairs = separable
    params, report = train(Objective("lmt", 0.0, pairs, corpus.features, k=3), TrainConfig(seed=0))
    assert report.objective[-1] < report.objective[0]
    assert evaluate(params, corpus, pairs, "train").error_rate == 0.0


def test_objective_trace_non_increasing(separable):
    corpus, pairs = separable
    _, report = train(Objective("monomer", 0.1, pairs, corpus.features, k=2, n=2), TrainConfig(max_iterations=50))
    assert all(b <= a for a, b in zip(report.objective, report.objective[1:]))
    assert len(report.objective) == len(report.grad_norm) == len(report.step) == report.iterations + 1


def test_max_iterations_zero_returns_init(separable):
    corpus, pairs = separable
    cfg = TrainConfig(max_iterations=0, seed=3)
    params, report = train(Objective("lmt", 0.0, pairs, corpus.features, k=2), cfg)
    assert report.status == "max-iter" and report.iterations == 0
    np.testing.assert_array_equal(to_vector(params), init_params("lmt", corpus.dim, 2, config=cfg))


def test_training_deterministic(separable):
    corpus, pairs = separable
    runs = [train(Objective("monomer", 0.01, pairs, corpus.features, k=2, n=2), TrainConfig(max_iterations=30))
            for _ in range(2)]
    assert runs[0][1].objective == runs[1][1].objective
    np.testing.assert_array_equal(to_vector(runs[0][0]), to_vector(runs[1][0]))


def test_thread_count_does_not_change_results():
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(300, 6))
    m = 3 * CHUNK + 17
    src = rng.integers(0, 300, m)
    rel = RelationSet(src, (src + 7) % 300, rng.integers(0, 2, m).astype(np.int8))
    reports = []
    for threads in (1, 4):
        _, rep = train(Objective("monomer", 0.1, rel, feats, k=2, n=2),
                       TrainConfig(max_iterations=15, threads=threads))
        reports.append(rep.objective)
    assert reports[0] == reports[1]


def test_report_serialization(separable):
    corpus, pairs = separable
    _, report = train(Objective("wnn", 0.0, pairs, corpus.features), TrainConfig(max_iterations=5))
    lines = list(report.lines())
    assert len(lines) == report.iterations + 1
    summary = report.summary()
    assert summary["status"] in ("converged", "max-iter", "line-search-failure")
    assert summary["final_objective"] == report.objective[-1]


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(gtol=0)
    with pytest.raises(ValueError):
        TrainConfig(lbfgs_history=0)
