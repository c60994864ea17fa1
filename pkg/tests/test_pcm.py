import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_argmin, brute_rarities
from posetrans import pcm
from posetrans.errors import DegenerateComponent, EmptyPool, InsufficientData, MalformedFile
from posetrans.pcm import GmmModel, PcmConfig


def random_model(rng, n, d):
    w = rng.dirichlet(np.ones(n))
    means = rng.normal(0, 2, (n, d))
    covs = []
    for _ in range(n):
        a = rng.normal(size=(d, d))
        covs.append(a @ a.T / d + 0.5 * np.eye(d))
    return GmmModel(w, means, np.array(covs))


def blobs(rng, centres, counts, std=1.0):
    return np.concatenate([rng.normal(c, std, (k, len(c))) for c, k in zip(centres, counts)])


def test_single_component_is_closed_form(rng):
    X = rng.normal(size=(200, 3)) @ np.diag([1.0, 2.0, 0.5]) + 4
    m = pcm.fit_gmm(X, 1, PcmConfig(n_components=1), rng)
    assert np.allclose(m.means[0], X.mean(axis=0))
    cov = np.cov(X.T, bias=True) + 1e-6 * np.eye(3)
    assert np.allclose(m.covariances[0], cov)
    assert m.converged and m.n_iter <= 2


def test_density_examples():
    d = 34
    m = GmmModel([1.0], np.zeros((1, d)), np.eye(d)[None])
    assert pcm.density(m, np.zeros(d)) == pytest.approx((2 * math.pi) ** -17, rel=1e-12)
    sym = GmmModel([0.5, 0.5], [[-1.0, 0.0], [1.0, 0.0]], np.array([np.eye(2)] * 2))
    single = GmmModel([1.0], [[-1.0, 0.0]], np.eye(2)[None])
    assert pcm.density(sym, [0.0, 3.0]) == pytest.approx(pcm.density(single, [0.0, 3.0]), rel=1e-12)


def test_density_matches_two_term_sum():
    means = np.array([[0.2, 0.6], [0.5, 0.5]])
    covs = np.array([[[0.02, 0.005], [0.005, 0.03]], [[0.05, 0.0], [0.0, 0.01]]])
    m = GmmModel([0.3, 0.7], means, covs)
    y = np.array([0.3, 0.7])

    def pdf(mu, c):
        det = c[0, 0] * c[1, 1] - c[0, 1] ** 2
        inv = np.array([[c[1, 1], -c[0, 1]], [-c[0, 1], c[0, 0]]]) / det
        z = y - mu
        return math.exp(-0.5 * z @ inv @ z) / (2 * math.pi * math.sqrt(det))

    direct = 0.3 * pdf(means[0], covs[0]) + 0.7 * pdf(means[1], covs[1])
    assert pcm.density(m, y) == pytest.approx(direct, rel=1e-12)
    a = pcm.responsibilities(m, y)
    assert a.posterior[0] == pytest.approx(0.3 * pdf(means[0], covs[0]) / direct, rel=1e-12)


def test_responsibility_examples():
    one = GmmModel([1.0], [[0.0, 0.0]], np.eye(2)[None])
    assert pcm.responsibilities(one, [5.0, 5.0]).posterior.tolist() == [1.0]
    assert pcm.assign_cluster(one, [1.0, 1.0]) == 0
    sym = GmmModel([0.5, 0.5], [[-1.0, 0.0], [1.0, 0.0]], np.array([np.eye(2)] * 2))
    a = pcm.responsibilities(sym, [0.0, 0.0])
    assert a.posterior[0] == a.posterior[1] == pytest.approx(0.5, abs=1e-15)
    assert a.label == 0
    sep = GmmModel([0.5, 0.5], [[-10.0, 0.0], [10.0, 0.0]], np.array([np.eye(2)] * 2))
    assert pcm.assign_cluster(sep, [10.0, 0.0]) == 1


def test_select_rarest_examples():
    m = GmmModel([0.7, 0.2, 0.1], [[-50.0], [0.0], [50.0]], np.ones((3, 1, 1)))
    pool = [[-50.0], [0.0], [50.0]]
    assert pcm.pool_rarities(m, pool) == pytest.approx([0.7, 0.2, 0.1])
    assert pcm.select_rarest(m, pool) == 2
    assert pcm.select_rarest(m, [[3.0]]) == 0
    assert pcm.select_rarest(m, [[1.0]] * 4) == 0
    with pytest.raises(EmptyPool):
        pcm.select_rarest(m, [])


@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 4))
def test_posterior_and_rarity_bounds(seed, n, d):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n, d)
    for y in rng.normal(0, 3, (5, d)):
        a = pcm.responsibilities(m, y)
        assert abs(a.posterior.sum() - 1.0) <= 1e-9
        assert m.weights.min() - 1e-15 <= a.rarity <= m.weights.max() + 1e-15
        assert a.label == int(np.argmax(a.posterior))


@given(st.integers(0, 2**32 - 1))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 4, 3)
    order = rng.permutation(4)
    p = m.permuted(order)
    pool = list(rng.normal(0, 2, (6, 3)))
    assert pcm.select_rarest(m, pool) == pcm.select_rarest(p, pool)
    for y in pool:
        a, b = pcm.responsibilities(m, y), pcm.responsibilities(p, y)
        assert np.allclose(b.posterior, a.posterior[order], atol=1e-12)
        assert b.rarity == pytest.approx(a.rarity, rel=1e-12)
        assert pcm.density(p, y) == pytest.approx(pcm.density(m, y), rel=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_select_rarest_matches_scipy_scan(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, int(rng.integers(1, 5)), int(rng.integers(1, 4)))
    pool = list(rng.normal(0, 2, (int(rng.integers(1, 7)), m.dim)))
    ref = brute_rarities(m.weights, m.means, m.covariances, pool)
    assert pcm.select_rarest(m, pool) == brute_argmin(ref)


@given(st.integers(0, 2**32 - 1))
def test_em_log_likelihood_never_decreases(seed):
    rng = np.random.default_rng(seed)
    X = blobs(rng, rng.normal(0, 4, (3, 2)), [40, 30, 30])
    m = pcm.fit_gmm(X, 3, rng=rng)
    assert all(b >= a - 1e-8 for a, b in zip(m.ll_trace, m.ll_trace[1:]))
    assert abs(m.weights.sum() - 1.0) <= 1e-9
    for c in m.covariances:
        assert np.abs(c - c.T).max() <= 1e-9
        assert np.linalg.eigvalsh(c).min() >= 1e-6 * (1 - 1e-6)


def test_insufficient_data(rng):
    with pytest.raises(InsufficientData) as e:
        pcm.fit_gmm(rng.normal(size=(29, 2)), 3)
    assert e.value.count == 29 and e.value.required == 30


def test_collapse_reseeds_once_then_raises(rng):
    X = rng.normal(size=(100, 2))
    with pytest.raises(DegenerateComponent):
        pcm.fit_gmm(X, 2, PcmConfig(min_weight=0.6), rng)


def test_refit_properties(rng):
    centres = [[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]]
    X = blobs(rng, centres, [300, 150, 50])
    m = pcm.fit_gmm(X, 3, rng=np.random.default_rng(1))
    same = pcm.refit(m, X, [])
    assert pcm.mean_log_likelihood(same, X) >= pcm.mean_log_likelihood(m, X) - 1e-12
    rare = int(np.argmin(m.weights))
    extra = X[pcm.predict_labels(m, X) == rare]
    grown = pcm.refit(m, X, extra)
    assert grown.weights[rare] > m.weights[rare]
    with pytest.raises(InsufficientData):
        pcm.refit(pcm.fit_gmm(X, 3, rng=rng), X[:10], X[10:20])


def test_model_file_round_trip(tmp_path, rng):
    m = pcm.fit_gmm(blobs(rng, [[0, 0], [5, 5]], [50, 50]), 2, rng=rng)
    path = tmp_path / "m.json"
    pcm.save_model(m, path)
    back = pcm.load_model(path)
    for a, b in ((m.weights, back.weights), (m.means, back.means), (m.covariances, back.covariances)):
        assert np.array_equal(a, b)
    assert back.ll_trace == m.ll_trace and back.n_iter == m.n_iter
    path.write_text('{"format": "other"}')
    with pytest.raises(MalformedFile):
        pcm.load_model(path)


def test_vectorized_and_single_queries_agree(rng):
    m = random_model(rng, 5, 4)
    Y = rng.normal(0, 2, (50, 4))
    P = pcm.predict_proba(m, Y)
    for y, p in zip(Y, P):
        assert np.allclose(p, pcm.responsibilities(m, y).posterior, atol=1e-12)
