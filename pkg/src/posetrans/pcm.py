"""Pose clustering: full-covariance Gaussian mixture fitted by EM.

The mixture doubles as a rarity model. For a pose with posterior ``w`` the
rarity is ``sum_n alpha_n * w_n``; small values mean the pose falls in
low-weight (rare) components. Candidate pools are reduced to the member with
the smallest rarity.

Single-query functions (``density``, ``responsibilities``, ``select_rarest``)
use correctly rounded sums, so their outputs do not depend on component order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AllZeroDensity, DegenerateComponent, EmptyPool, InsufficientData, MalformedFile
from .types import NormalizedPose

MODEL_FORMAT = "posetrans-gmm"
MODEL_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PcmConfig:
    n_components: int = 20
    reg_eps: float = 1e-6
    tol: float = 1e-6
    max_iter: int = 500
    min_weight: float = 1e-8
    min_samples_per_component: int = 10


@dataclass(eq=False)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    reg_eps: float = 1e-6
    ll_trace: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    n_reseeds: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        n, d = self.means.shape
        if self.weights.shape != (n,) or self.covariances.shape != (n, d, d):
            raise ValueError(f"inconsistent GMM shapes: weights {self.weights.shape}, "
                             f"means {self.means.shape}, covariances {self.covariances.shape}")
        chol = np.linalg.cholesky(self.covariances)
        self._prec_chol = np.linalg.inv(chol)  # L^-1, so maha = ||L^-1 (x - mu)||^2
        self._log_norm = -0.5 * d * LOG_2PI - np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        with np.errstate(divide="ignore"):
            self._log_weights = np.log(self.weights)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def permuted(self, order: Sequence[int]) -> GmmModel:
        order = list(order)
        return GmmModel(self.weights[order], self.means[order], self.covariances[order], self.reg_eps)


def _as_matrix(poses) -> np.ndarray:
    if isinstance(poses, np.ndarray):
        return np.atleast_2d(poses).astype(np.float64)
    rows = [p.as_vector() if isinstance(p, NormalizedPose) else np.asarray(p, dtype=np.float64) for p in poses]
    if not rows:
        return np.zeros((0, 0))
    return np.stack(rows)


def _as_vector(y) -> np.ndarray:
    if isinstance(y, NormalizedPose):
        return y.as_vector()
    return np.asarray(y, dtype=np.float64).reshape(-1)


def _log_gauss(model: GmmModel, X: np.ndarray) -> np.ndarray:
    """(n, N) matrix of log N(x_i; mu_k, Sigma_k)."""
    diff = X[:, None, :] - model.means[None, :, :]
    z = np.einsum("kij,nkj->nki", model._prec_chol, diff)
    return model._log_norm[None, :] - 0.5 * np.einsum("nki,nki->nk", z, z)


def _log_gauss_one(model: GmmModel, y: np.ndarray) -> np.ndarray:
    out = np.empty(model.n_components)
    for k in range(model.n_components):
        z = model._prec_chol[k] @ (y - model.means[k])
        out[k] = model._log_norm[k] - 0.5 * float(z @ z)
    return out


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def _logsumexp_exact(a: np.ndarray) -> float:
    m = float(a.max())
    if not math.isfinite(m):
        return m
    return m + math.log(math.fsum(np.exp(a - m).tolist()))


def _joint_log_one(model: GmmModel, y) -> np.ndarray:
    y = _as_vector(y)
    if y.shape[0] != model.dim:
        raise ValueError(f"query has dimension {y.shape[0]}, model expects {model.dim}")
    return model._log_weights + _log_gauss_one(model, y)


def log_density(model: GmmModel, y) -> float:
    return _logsumexp_exact(_joint_log_one(model, y))


def density(model: GmmModel, y) -> float:
    """Mixture density P(y) = sum_n alpha_n N(y; mu_n, Sigma_n)."""
    return math.exp(log_density(model, y))


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    posterior: np.ndarray
    label: int
    rarity: float


def rarity_of(weights: np.ndarray, posterior: np.ndarray) -> float:
    return math.fsum((np.asarray(weights) * np.asarray(posterior)).tolist())


def responsibilities(model: GmmModel, y) -> ClusterAssignment:
    """Posterior over components, hard label (lowest index on ties) and rarity."""
    joint = _joint_log_one(model, y)
    lse = _logsumexp_exact(joint)
    if not math.isfinite(lse):
        raise AllZeroDensity("every component density underflows for this query")
    w = np.exp(joint - lse)
    return ClusterAssignment(w, int(np.argmax(w)), rarity_of(model.weights, w))


def assign_cluster(model: GmmModel, y) -> int:
    return responsibilities(model, y).label


def predict_proba(model: GmmModel, poses) -> np.ndarray:
    """Vectorized posteriors for many poses (row i sums to 1)."""
    X = _as_matrix(poses)
    joint = model._log_weights[None, :] + _log_gauss(model, X)
    return np.exp(joint - _logsumexp_rows(joint)[:, None])


def predict_labels(model: GmmModel, poses) -> np.ndarray:
    return np.argmax(predict_proba(model, poses), axis=1)


def pool_rarities(model: GmmModel, pool) -> list[float]:
    return [responsibilities(model, y).rarity for y in pool]


def select_rarest(model: GmmModel, pool) -> int:
    """Index of the pool member with minimal rarity; ties go to the lowest index."""
    if len(pool) == 0:
        raise EmptyPool("candidate pool is empty")
    rarities = pool_rarities(model, pool)
    best = 0
    for i, r in enumerate(rarities):
        if r < rarities[best]:
            best = i
    return best


def mean_log_likelihood(model: GmmModel, poses) -> float:
    X = _as_matrix(poses)
    joint = model._log_weights[None, :] + _log_gauss(model, X)
    return float(_logsumexp_rows(joint).mean())


def kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new centre is drawn with probability ~ D^2."""
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    d2 = ((X - X[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            c = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            c = min(c, n - 1)
        else:
            c = int(rng.integers(n))
        idx.append(c)
        d2 = np.minimum(d2, ((X - X[c]) ** 2).sum(axis=1))
    return X[idx].copy()


def _pooled_cov(X: np.ndarray, eps: float) -> np.ndarray:
    diff = X - X.mean(axis=0)
    return diff.T @ diff / X.shape[0] + eps * np.eye(X.shape[1])


def _check_count(n: int, n_components: int, config: PcmConfig):
    need = config.min_samples_per_component * n_components
    if n < need:
        raise InsufficientData("too few poses to fit the mixture", count=n, required=need)


def _em(X, weights, means, covs, config: PcmConfig, rng) -> GmmModel:
    n, d = X.shape
    eye = np.eye(d)
    eps = config.reg_eps
    trace: list[float] = []
    reseeds = 0
    converged = False
    it = 0
    while True:
        model = GmmModel(weights, means, covs, eps)
        joint = model._log_weights[None, :] + _log_gauss(model, X)
        lse = _logsumexp_rows(joint)
        ll = float(lse.mean())
        if not math.isfinite(ll):
            raise DegenerateComponent("log-likelihood is not finite")
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= config.tol * abs(trace[-2]):
            converged = True
            break
        if it >= config.max_iter:
            break
        it += 1

        resp = np.exp(joint - lse[:, None])
        nk = resp.sum(axis=0)
        weights = nk / n
        dead = np.flatnonzero(weights < config.min_weight)
        if dead.size:
            if reseeds:
                raise DegenerateComponent(f"component(s) {dead.tolist()} collapsed again after reseeding")
            reseeds += 1
            # put collapsed components on the worst-explained poses
            order = np.argsort(lse, kind="stable")
            pooled = _pooled_cov(X, eps)
            means = means.copy()
            covs = covs.copy()
            for j, k in enumerate(dead):
                means[k] = X[order[j]]
                covs[k] = pooled
            weights = np.where(weights < config.min_weight, 1.0 / weights.size, weights)
            weights = weights / weights.sum()
            trace = []
            continue
        means = (resp.T @ X) / nk[:, None]
        covs = np.empty((weights.size, d, d))
        for k in range(weights.size):
            diff = X - means[k]
            c = (resp[:, k, None] * diff).T @ diff / nk[k]
            covs[k] = 0.5 * (c + c.T) + eps * eye
    model.ll_trace = trace
    model.n_iter = it
    model.converged = converged
    model.n_reseeds = reseeds
    return model


def fit_gmm(poses, n_components: int | None = None, config: PcmConfig | None = None,
            rng: np.random.Generator | None = None) -> GmmModel:
    """Fit by EM from k-means++ means, uniform weights and the pooled covariance.

    Stops when the relative change of the mean log-likelihood drops below
    ``config.tol`` or after ``config.max_iter`` iterations.
    """
    config = config or PcmConfig()
    n_components = config.n_components if n_components is None else n_components
    rng = rng if rng is not None else np.random.default_rng(0)
    X = _as_matrix(poses)
    _check_count(X.shape[0], n_components, config)
    means = kmeans_pp(X, n_components, rng)
    weights = np.full(n_components, 1.0 / n_components)
    covs = np.repeat(_pooled_cov(X, config.reg_eps)[None], n_components, axis=0)
    return _em(X, weights, means, covs, config, rng)


def refit(model: GmmModel, original, selected_augmented, config: PcmConfig | None = None,
          rng: np.random.Generator | None = None) -> GmmModel:
    """Warm-start EM from ``model`` on the original plus selected augmented poses."""
    config = config or PcmConfig(reg_eps=model.reg_eps)
    rng = rng if rng is not None else np.random.default_rng(0)
    parts = [_as_matrix(original)]
    if len(selected_augmented):
        parts.append(_as_matrix(selected_augmented))
    X = np.concatenate(parts, axis=0)
    _check_count(X.shape[0], model.n_components, config)
    return _em(X, model.weights.copy(), model.means.copy(), model.covariances.copy(), config, rng)


def model_to_dict(model: GmmModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "n_components": model.n_components,
        "dim": model.dim,
        "reg_eps": model.reg_eps,
        "weights": model.weights.tolist(),
        "means": model.means.reshape(-1).tolist(),
        "covariances": model.covariances.reshape(-1).tolist(),
        "fit": {
            "ll_trace": list(model.ll_trace),
            "n_iter": model.n_iter,
            "converged": model.converged,
            "n_reseeds": model.n_reseeds,
        },
    }


def model_from_dict(d: dict) -> GmmModel:
    if d.get("format") != MODEL_FORMAT:
        raise MalformedFile(f"not a {MODEL_FORMAT} record")
    if d.get("version") != MODEL_VERSION:
        raise MalformedFile(f"unsupported model version {d.get('version')}")
    n, dim = int(d["n_components"]), int(d["dim"])
    fit = d.get("fit", {})
    return GmmModel(
        np.asarray(d["weights"]),
        np.asarray(d["means"]).reshape(n, dim),
        np.asarray(d["covariances"]).reshape(n, dim, dim),
        float(d["reg_eps"]),
        list(fit.get("ll_trace", [])),
        int(fit.get("n_iter", 0)),
        bool(fit.get("converged", False)),
        int(fit.get("n_reseeds", 0)),
    )


def save_model(model: GmmModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> GmmModel:
    try:
        return model_from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as e:
        raise MalformedFile(f"{path}: {e}") from None
