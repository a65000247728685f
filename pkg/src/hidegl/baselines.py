"""Reference semi-supervised methods: dense LGC and anchor-graph regression.

These are the comparison baselines: label propagation with a dense K-NN
Gaussian affinity solved in closed form, and anchor graphs whose assignment
matrix comes either from Nadaraya-Watson kernel weights or from local anchor
embedding (simplex-constrained least squares per point).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .data import Dataset, LabelState
from .graph import build_anchor_factor
from .hdp import HdpConfig, KMeansConfig, kmeans_init, squared_distances
from .infer import InferConfig, Prediction, SolverStats, agr_closed_form_solve, predict_labels

LGC_DENSE_CAP = 5000


@dataclass(frozen=True)
class AnchorSet:
    """k-means anchors (d x k) with the neighbor count and kernel bandwidth."""

    U: np.ndarray
    s_hat: int
    h: float

    def __post_init__(self):
        if not 1 <= self.s_hat <= self.U.shape[1]:
            raise ValueError(f"s_hat must lie in [1, k={self.U.shape[1]}], got {self.s_hat}")
        if self.h <= 0:
            raise ValueError("bandwidth h must be > 0")

    @property
    def k(self) -> int:
        return self.U.shape[1]


def make_anchor_set(ds: Dataset, k: int, s_hat: int, h: float,
                    kmeans: KMeansConfig = KMeansConfig()) -> AnchorSet:
    """Anchors are k-means centroids of the data."""
    cfg = HdpConfig(k=k, sigma=1.0, kmeans=kmeans)
    return AnchorSet(U=kmeans_init(ds, cfg), s_hat=s_hat, h=h)


def knn_affinity(ds: Dataset, K: int, sigma: float) -> np.ndarray:
    """Symmetric K-NN Gaussian affinity with zero diagonal.

    An edge exists when either endpoint lists the other among its K nearest
    neighbors (union symmetrization).
    """
    n = ds.n
    if not 1 <= K < n:
        raise ValueError(f"K must lie in [1, n), got {K}")
    d2 = squared_distances(ds.features, ds.features)
    np.fill_diagonal(d2, np.inf)
    nbrs = np.argpartition(d2, K - 1, axis=1)[:, :K]
    mask = np.zeros((n, n), dtype=bool)
    mask[np.arange(n)[:, None], nbrs] = True
    mask |= mask.T
    with np.errstate(under="ignore"):
        W = np.exp(d2 / (-2.0 * sigma * sigma))
    W[~mask] = 0.0
    np.fill_diagonal(W, 0.0)
    degrees = W.sum(axis=1)
    isolated = np.flatnonzero(degrees == 0)
    if isolated.size:
        raise ValueError(f"vertex {int(isolated[0])} is isolated (zero degree); "
                         "increase sigma or K")
    return W


def lgc_dense_scores(ds: Dataset, labels: LabelState, K: int, sigma: float,
                     mu: float, cap: int = LGC_DENSE_CAP) -> np.ndarray:
    """Closed-form LGC scores F = mu ((1+mu) I - S)^-1 Y over the K-NN graph."""
    if ds.n > cap:
        raise ValueError(f"dense LGC is capped at n <= {cap}, got {ds.n}")
    W = knn_affinity(ds, K, sigma)
    inv_sqrt_deg = 1.0 / np.sqrt(W.sum(axis=1))
    S = inv_sqrt_deg[:, None] * W * inv_sqrt_deg[None, :]
    A = -S
    A[np.diag_indices_from(A)] += 1.0 + mu
    return mu * scipy.linalg.solve(A, labels.Y, assume_a="pos")


def lgc_dense(ds: Dataset, labels: LabelState, K: int, sigma: float,
              mu: float, cap: int = LGC_DENSE_CAP) -> Prediction:
    """Dense LGC baseline restricted to the unlabeled points."""
    F = lgc_dense_scores(ds, labels, K, sigma, mu, cap)
    F_u = F[labels.unlabeled_idx]
    stats = SolverStats(method="lgc_dense",
                        iterations=(0,) * labels.num_classes,
                        residuals=(0.0,) * labels.num_classes)
    return Prediction(F_u=F_u, labels_u=predict_labels(F_u), solver_stats=stats)


def _nearest_anchors(ds: Dataset, anchors: AnchorSet) -> tuple[np.ndarray, np.ndarray]:
    d2 = squared_distances(ds.features, anchors.U)
    s = anchors.s_hat
    if s == anchors.k:
        nbrs = np.tile(np.arange(anchors.k), (ds.n, 1))
    else:
        nbrs = np.argpartition(d2, s - 1, axis=1)[:, :s]
    return nbrs, d2[np.arange(ds.n)[:, None], nbrs]


def agr_gauss_z(ds: Dataset, anchors: AnchorSet) -> np.ndarray:
    """Kernel-regression assignments: Gaussian weights over the s_hat nearest
    anchors, renormalized to sum to one; all other entries are exactly zero."""
    nbrs, nd2 = _nearest_anchors(ds, anchors)
    logits = nd2 / (-2.0 * anchors.h * anchors.h)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    Z = np.zeros((ds.n, anchors.k))
    np.put_along_axis(Z, nbrs, w, axis=1)
    return Z


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.flatnonzero(u * np.arange(1, v.size + 1) > css - 1.0)[-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def lae_coordinates(x: np.ndarray, anchors: np.ndarray, max_iters: int = 200,
                    tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Simplex-constrained least-squares coefficients for one point.

    Minimizes 0.5 * ||x - anchors @ z||^2 over the simplex by projected
    gradient descent with the fixed step 1/L, L being the largest eigenvalue
    of the anchor Gram matrix.  Returns the coefficients and the objective
    trace (non-increasing).  Stops on relative objective change <= tol.
    """
    s = anchors.shape[1]
    gram = anchors.T @ anchors
    atx = anchors.T @ x
    lip = float(scipy.linalg.eigvalsh(gram)[-1])
    step = 1.0 / lip if lip > 0 else 1.0
    z = np.full(s, 1.0 / s)

    def objective(zz):
        return 0.5 * float(zz @ gram @ zz) - float(atx @ zz) + 0.5 * float(x @ x)

    trace = [objective(z)]
    for _ in range(max_iters):
        z = project_simplex(z - step * (gram @ z - atx))
        trace.append(objective(z))
        prev, cur = trace[-2], trace[-1]
        if abs(prev - cur) <= tol * max(abs(prev), 1.0):
            break
    return z, np.asarray(trace)


def agr_lae_z(ds: Dataset, anchors: AnchorSet, max_iters: int = 200,
              tol: float = 1e-9) -> np.ndarray:
    """Local-anchor-embedding assignments, one simplex problem per point."""
    nbrs, _ = _nearest_anchors(ds, anchors)
    Z = np.zeros((ds.n, anchors.k))
    for i in range(ds.n):
        cols = nbrs[i]
        z, _ = lae_coordinates(ds.features[:, i], anchors.U[:, cols], max_iters, tol)
        Z[i, cols] = z
    return Z


def agr_predict(Z: np.ndarray, labels: LabelState, gamma: float) -> Prediction:
    """Anchor-graph label inference via the reduced closed-form solve.

    Anchors that received zero total assignment mass contribute nothing to
    the scores and are dropped before building the factor.
    """
    Z = np.asarray(Z, dtype=np.float64)
    used = Z.sum(axis=0) > 0
    factor = build_anchor_factor(Z[:, used])
    cfg = InferConfig(lambda2=gamma, method="agr_closed_form")
    return agr_closed_form_solve(factor, labels, cfg)
