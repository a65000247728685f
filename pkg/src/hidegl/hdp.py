"""Learning high-dense points, soft assignments, and a spanning tree.

The model alternates three steps until the centers stop moving: fit a
minimum spanning tree over the current centers, update the centers in closed
form, and recompute the soft assignments.  Centers are pulled toward the
high-density regions of the data by a kernel-density objective, while the
tree penalty keeps connected centers close.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .data import Dataset

# Clamp for shifted log-kernel exponents: keeps every assignment entry
# strictly positive in float64 (exp(-700) ~ 1e-304) without disturbing the
# row normalization at any meaningful precision.
_LOG_KERNEL_FLOOR = -700.0


class FactorizationError(ValueError):
    """A symmetric positive-definite factorization failed."""


@dataclass(frozen=True)
class KMeansConfig:
    max_iters: int = 100
    n_restarts: int = 3
    seed: int = 0


@dataclass(frozen=True)
class HdpConfig:
    """Hyperparameters of the high-dense point learner.

    ``sigma`` is the Gaussian kernel bandwidth in feature-space distance
    units (the kernel exponent is ``-||x - c||^2 / (2 sigma^2)``);
    ``lambda1`` weighs the tree penalty against the density objective.
    """

    k: int
    sigma: float
    lambda1: float = 1.0
    max_outer_iters: int = 50
    tol: float = 1e-4
    kmeans: KMeansConfig = field(default_factory=KMeansConfig)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be >= 0")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be >= 0")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")


@dataclass(frozen=True)
class HdpModel:
    """Learned factors: centers (d x k), row-stochastic Z (n x k), tree (k x k).

    The tree adjacency is symmetric 0/1 with zero diagonal and exactly k-1
    edges forming a connected graph.  ``objective_trace`` records the joint
    objective once per outer iteration.
    """

    centers: np.ndarray
    Z: np.ndarray
    tree: np.ndarray
    objective_trace: np.ndarray

    @property
    def k(self) -> int:
        return self.centers.shape[1]


def squared_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances between columns: (n x k), >= 0."""
    xx = np.einsum("ij,ij->j", X, X)
    cc = np.einsum("ij,ij->j", C, C)
    d2 = xx[:, None] + cc[None, :] - 2.0 * (X.T @ C)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _kmeans_pp_seed(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[1]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    d2 = squared_distances(X, X[:, chosen[:1]])[:, 0]
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            chosen[j] = rng.choice(n, p=probs)
        else:
            # all remaining points coincide with a chosen center
            remaining = np.setdiff1d(np.arange(n), chosen[:j])
            chosen[j] = rng.choice(remaining)
        d2 = np.minimum(d2, squared_distances(X, X[:, chosen[j:j + 1]])[:, 0])
    return chosen


def _lloyd(X: np.ndarray, k: int, rng: np.random.Generator,
           max_iters: int) -> tuple[np.ndarray, float]:
    n = X.shape[1]
    C = X[:, _kmeans_pp_seed(X, k, rng)].copy()
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        d2 = squared_distances(X, C)
        new_assign = np.argmin(d2, axis=1)
        point_d2 = d2[np.arange(n), new_assign]
        # empty clusters grab the point currently farthest from its center
        for s in range(k):
            if not np.any(new_assign == s):
                far = int(np.argmax(point_d2))
                new_assign[far] = s
                point_d2[far] = 0.0
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for s in range(k):
            C[:, s] = X[:, assign == s].mean(axis=1)
    d2 = squared_distances(X, C)
    sse = float(d2[np.arange(n), np.argmin(d2, axis=1)].sum())
    return C, sse


def kmeans_init(ds: Dataset, cfg: HdpConfig) -> np.ndarray:
    """k-means centers (d x k): k-means++ seeding, best SSE over restarts."""
    if cfg.k > ds.n:
        raise ValueError(f"k={cfg.k} exceeds number of samples n={ds.n}")
    rng = np.random.default_rng(cfg.kmeans.seed)
    best_C, best_sse = None, np.inf
    for _ in range(max(1, cfg.kmeans.n_restarts)):
        C, sse = _lloyd(ds.features, cfg.k, rng, cfg.kmeans.max_iters)
        if sse < best_sse:
            best_C, best_sse = C, sse
    return best_C


def update_assignments(ds: Dataset, C: np.ndarray, sigma: float) -> np.ndarray:
    """Row-stochastic soft assignments of each point to each center.

    Computes the row softmax of ``-||x_i - c_s||^2 / (2 sigma^2)`` with the
    usual max-shift stabilization; exponents are floored so that every entry
    stays strictly positive in float64 even for tiny bandwidths.
    """
    if C.shape[0] != ds.d:
        raise ValueError(f"center dimension {C.shape[0]} != data dimension {ds.d}")
    logits = squared_distances(ds.features, C) / (-2.0 * sigma * sigma)
    logits -= logits.max(axis=1, keepdims=True)
    np.maximum(logits, _LOG_KERNEL_FLOOR, out=logits)
    Z = np.exp(logits)
    Z /= Z.sum(axis=1, keepdims=True)
    return Z


def fit_spanning_tree(C: np.ndarray) -> np.ndarray:
    """Minimum spanning tree over center columns as a symmetric 0/1 adjacency.

    Edge cost is the squared Euclidean distance; Kruskal with union-find and
    a deterministic tie-break (lexicographically smaller pair wins).
    """
    k = C.shape[1]
    G = np.zeros((k, k))
    if k == 1:
        return G
    d2 = squared_distances(C, C)
    iu, ju = np.triu_indices(k, 1)
    order = np.lexsort((ju, iu, d2[iu, ju]))

    parent = np.arange(k)

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    added = 0
    for e in order:
        r, s = int(iu[e]), int(ju[e])
        ra, rb = find(r), find(s)
        if ra != rb:
            parent[ra] = rb
            G[r, s] = G[s, r] = 1.0
            added += 1
            if added == k - 1:
                break
    return G


def tree_laplacian(G: np.ndarray) -> np.ndarray:
    """Graph Laplacian diag(G 1) - G of a 0/1 adjacency."""
    return np.diag(G.sum(axis=1)) - G


def update_centers(ds: Dataset, Z: np.ndarray, G: np.ndarray,
                   lambda1: float) -> np.ndarray:
    """Closed-form center update C = X Z (Xi + lambda1 L)^-1.

    ``Xi = diag(Z^T 1)`` has strictly positive diagonal for strictly positive
    Z and the tree Laplacian ``L`` is positive semi-definite, so the system
    is solved through a Cholesky factorization.  With ``lambda1 = 0`` the
    update reduces exactly to the per-center weighted mean.
    """
    col_mass = Z.sum(axis=0)
    XZ = ds.features @ Z
    if lambda1 == 0:
        return XZ / col_mass
    A = lambda1 * tree_laplacian(G)
    A[np.diag_indices_from(A)] += col_mass
    try:
        cho = scipy.linalg.cho_factor(A)
    except scipy.linalg.LinAlgError as exc:
        pivot = re.search(r"\d+", str(exc))
        where = f"pivot {pivot.group()}" if pivot else "unknown pivot"
        raise FactorizationError(
            f"(Xi + lambda1*L) is not positive definite at {where}; "
            "assignment matrix is numerically degenerate") from exc
    return scipy.linalg.cho_solve(cho, XZ.T).T


def joint_objective(ds: Dataset, C: np.ndarray, G: np.ndarray,
                    cfg: HdpConfig) -> float:
    """Density log-likelihood minus the weighted tree-length penalty."""
    logits = squared_distances(ds.features, C) / (-2.0 * cfg.sigma * cfg.sigma)
    density = float(logsumexp(logits, axis=1).sum())
    penalty = 0.25 * cfg.lambda1 * float((G * squared_distances(C, C)).sum())
    return density - penalty


def fit_hdp(ds: Dataset, cfg: HdpConfig,
            init_centers: np.ndarray | None = None) -> HdpModel:
    """Alternate tree fitting, the center update, and the assignment update.

    Stops when the relative Frobenius change of the centers drops below
    ``cfg.tol`` or after ``cfg.max_outer_iters`` iterations.  The returned
    tree is the spanning tree of the returned centers.  ``init_centers``
    replaces the k-means initialization when given (callers that time the
    fit separately from its initialization pass it precomputed).
    """
    C = kmeans_init(ds, cfg) if init_centers is None else np.array(init_centers, dtype=np.float64)
    if C.shape != (ds.d, cfg.k):
        raise ValueError(f"init centers must be d x k = {(ds.d, cfg.k)}, got {C.shape}")
    Z = update_assignments(ds, C, cfg.sigma)
    trace = []
    for _ in range(cfg.max_outer_iters):
        G = fit_spanning_tree(C)
        C_new = update_centers(ds, Z, G, cfg.lambda1)
        Z = update_assignments(ds, C_new, cfg.sigma)
        trace.append(joint_objective(ds, C_new, G, cfg))
        rel_change = np.linalg.norm(C_new - C) / max(np.linalg.norm(C), np.finfo(float).tiny)
        C = C_new
        if rel_change < cfg.tol:
            break
    G = fit_spanning_tree(C)
    return HdpModel(centers=C, Z=Z, tree=G, objective_trace=np.asarray(trace))


def save_model(model: HdpModel, cfg: HdpConfig, path: str | Path) -> None:
    """Serialize a fitted model plus its config to a .npz bundle."""
    np.savez_compressed(
        path,
        centers=model.centers,
        Z=model.Z,
        tree=model.tree,
        objective_trace=model.objective_trace,
        config_json=np.array(json.dumps(asdict(cfg))),
    )


def load_model(path: str | Path) -> tuple[HdpModel, HdpConfig]:
    """Inverse of :func:`save_model`."""
    with np.load(path, allow_pickle=False) as bundle:
        cfg_dict = json.loads(str(bundle["config_json"]))
        cfg = HdpConfig(**{**cfg_dict, "kmeans": KMeansConfig(**cfg_dict["kmeans"])})
        model = HdpModel(
            centers=bundle["centers"],
            Z=bundle["Z"],
            tree=bundle["tree"],
            objective_trace=bundle["objective_trace"],
        )
    return model, cfg
