"""Transductive label inference over an implicit affinity factor.

Two routes: an LGC-style solve of the unlabeled block of the regularized
Laplacian system by conjugate gradients (one independent system per class,
all matrix-free), and an AGR-style reduced solve that restricts the score
matrix to the span of the assignments and solves a single k x k system.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg

from .data import LabelState
from .graph import GraphFactor, apply_w, reduced_laplacian, row_sums


class CgConvergenceError(RuntimeError):
    """CG failed to reach the target residual; carries the final residuals."""

    def __init__(self, message: str, residuals: np.ndarray):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class CgConfig:
    tol: float = 1e-8
    max_iters: int = 1000

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("cg tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("cg max_iters must be >= 1")


@dataclass(frozen=True)
class InferConfig:
    lambda2: float
    method: str = "lgc_cg"
    cg: CgConfig = field(default_factory=CgConfig)

    def __post_init__(self):
        if self.lambda2 <= 0:
            raise ValueError("lambda2 must be > 0")
        if self.method not in ("lgc_cg", "agr_closed_form"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class SolverStats:
    method: str
    iterations: tuple[int, ...]
    residuals: tuple[float, ...]


@dataclass(frozen=True)
class Prediction:
    """Scores and decisions for the unlabeled points only."""

    F_u: np.ndarray
    labels_u: np.ndarray
    solver_stats: SolverStats


def predict_labels(F_u: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties break to the lowest class index."""
    F_u = np.asarray(F_u)
    if F_u.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmax(F_u, axis=1).astype(np.int64)


def assemble_rhs(factor: GraphFactor, labels: LabelState, lambda2: float) -> np.ndarray:
    """Right-hand side of the unlabeled-block system, per class column.

    The cross-term is obtained matrix-free: the labeled scores are embedded
    into a full n-vector (zeros at unlabeled positions), the Laplacian of W
    is applied, and the result is restricted to the unlabeled indices.
    """
    if labels.l == 0:
        raise ValueError("labeled set is empty")
    if labels.n != factor.n:
        raise ValueError(f"label state has n={labels.n}, factor has n={factor.n}")
    u = labels.unlabeled_idx
    emb = np.zeros_like(labels.Y)
    emb[labels.labeled_idx] = labels.Y[labels.labeled_idx]
    lap = row_sums(factor)[:, None] * emb - apply_w(factor, emb)
    return lambda2 * labels.Y[u] - 2.0 * lap[u]


def lgc_operator(factor: GraphFactor, unlabeled_idx: np.ndarray,
                 lambda2: float) -> Callable[..., np.ndarray]:
    """Matrix-free coefficient operator 2 L3 + lambda2 I on unlabeled columns."""
    d_u = row_sums(factor)[unlabeled_idx]

    def apply_coeff(V: np.ndarray, cols: np.ndarray | None = None) -> np.ndarray:
        emb = np.zeros((factor.n, V.shape[1]))
        emb[unlabeled_idx] = V
        WV = apply_w(factor, emb)[unlabeled_idx]
        return 2.0 * (d_u[:, None] * V - WV) + lambda2 * V

    return apply_coeff


def conjugate_gradient(apply_A: Callable[..., np.ndarray],
                       B: np.ndarray, tol: float, max_iters: int,
                       callback: Callable[[int, np.ndarray], None] | None = None,
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Plain CG on each column of B with a shared SPD operator.

    Columns iterate independently (per-column step sizes) and stop
    individually at relative residual <= tol; zero columns return zero
    immediately.  ``apply_A(V, cols)`` receives the active column indices so
    that operators with per-column structure can subset their state.
    Returns (X, iterations, final relative residuals) and raises
    CgConvergenceError if any column is still active at max_iters.
    """
    B = np.asarray(B, dtype=np.float64)
    m, c = B.shape
    X = np.zeros_like(B)
    R = B.copy()
    D = B.copy()
    b_norm = np.linalg.norm(B, axis=0)
    scale = np.where(b_norm > 0, b_norm, 1.0)
    rs = np.einsum("ij,ij->j", R, R)
    iters = np.zeros(c, dtype=np.int64)
    active = np.sqrt(rs) > tol * scale
    it = 0
    while active.any():
        if it >= max_iters:
            resid = np.sqrt(rs) / scale
            raise CgConvergenceError(
                f"CG did not converge in {max_iters} iterations "
                f"(worst relative residual {resid.max():.3e}); "
                "check lambda2/alpha conditioning", resid)
        cols = np.flatnonzero(active)
        AD = apply_A(D[:, cols], cols)
        dad = np.einsum("ij,ij->j", D[:, cols], AD)
        if np.any(dad <= 0):
            raise CgConvergenceError("operator is not positive definite", np.sqrt(rs) / scale)
        step = rs[cols] / dad
        X[:, cols] += step[None, :] * D[:, cols]
        R[:, cols] -= step[None, :] * AD
        rs_new = np.einsum("ij,ij->j", R[:, cols], R[:, cols])
        D[:, cols] = R[:, cols] + (rs_new / rs[cols])[None, :] * D[:, cols]
        rs[cols] = rs_new
        it += 1
        iters[cols] = it
        active[cols] = np.sqrt(rs_new) > tol * scale[cols]
        if callback is not None:
            callback(it, X.copy())
    return X, iters, np.sqrt(rs) / scale


def lgc_cg_solve(factor: GraphFactor, labels: LabelState, cfg: InferConfig,
                 callback: Callable[[int, np.ndarray], None] | None = None) -> Prediction:
    """Solve the unlabeled-block system per class by matrix-free CG."""
    if cfg.method != "lgc_cg":
        raise ValueError(f"config method is {cfg.method!r}, expected 'lgc_cg'")
    u = labels.unlabeled_idx
    b = assemble_rhs(factor, labels, cfg.lambda2)
    apply_coeff = lgc_operator(factor, u, cfg.lambda2)
    F_u, iters, resid = conjugate_gradient(apply_coeff, b, cfg.cg.tol,
                                           cfg.cg.max_iters, callback)
    stats = SolverStats(method="lgc_cg", iterations=tuple(int(i) for i in iters),
                        residuals=tuple(float(r) for r in resid))
    return Prediction(F_u=F_u, labels_u=predict_labels(F_u), solver_stats=stats)


def lgc_cg_solve_many(factor: GraphFactor, labels_list: list[LabelState],
                      cfg: InferConfig) -> list[Prediction]:
    """Solve several label draws against one factor in a single batched CG.

    Each draw's system is iterated in its embedded form: vectors live on all
    n points, the coefficient operator is applied globally, and a per-column
    mask confines every column to its draw's unlabeled subspace.  Column
    iterates then coincide with the per-draw restricted CG, so results match
    :func:`lgc_cg_solve` within the solver tolerance while all draws share
    the same matrix products.
    """
    if cfg.method != "lgc_cg":
        raise ValueError(f"config method is {cfg.method!r}, expected 'lgc_cg'")
    if not labels_list:
        return []
    n = factor.n
    c = labels_list[0].num_classes
    for labels in labels_list:
        if labels.n != n or labels.num_classes != c:
            raise ValueError("all label states must share the factor's n and c")
        if labels.l == 0:
            raise ValueError("labeled set is empty")
    d = row_sums(factor)
    lam2 = cfg.lambda2

    mask = np.ones((n, len(labels_list) * c))
    stacked_y = np.empty((n, len(labels_list) * c))
    for j, labels in enumerate(labels_list):
        block = slice(j * c, (j + 1) * c)
        mask[labels.labeled_idx, block] = 0.0
        stacked_y[:, block] = labels.Y
    lap = d[:, None] * stacked_y - apply_w(factor, stacked_y)
    B = (lam2 * stacked_y - 2.0 * lap) * mask

    def apply_masked(V: np.ndarray, cols: np.ndarray) -> np.ndarray:
        out = 2.0 * (d[:, None] * V - apply_w(factor, V)) + lam2 * V
        out *= mask[:, cols]
        return out

    X, iters, resid = conjugate_gradient(apply_masked, B, cfg.cg.tol, cfg.cg.max_iters)
    preds = []
    for j, labels in enumerate(labels_list):
        block = slice(j * c, (j + 1) * c)
        F_u = X[labels.unlabeled_idx, block]
        stats = SolverStats(method="lgc_cg",
                            iterations=tuple(int(i) for i in iters[block]),
                            residuals=tuple(float(r) for r in resid[block]))
        preds.append(Prediction(F_u=F_u, labels_u=predict_labels(F_u),
                                solver_stats=stats))
    return preds


def reduced_coefficients(factor: GraphFactor, labels: LabelState,
                         lambda2: float) -> tuple[np.ndarray, np.ndarray]:
    """Optimal k x c coefficients of the reduced system, plus class residuals.

    Solves (2 Z^T L(W) Z + lambda2 Z^T Z) A = lambda2 Z^T Y through a
    symmetric factorization with a residual guard against near-singular
    systems (lambda2 too small or rank-deficient Z).
    """
    S = factor.ZtZ
    M = 2.0 * reduced_laplacian(factor) + lambda2 * S
    M = 0.5 * (M + M.T)
    rhs = factor.Z.T @ labels.Y
    try:
        sol = scipy.linalg.solve(M, rhs, assume_a="sym")
    except scipy.linalg.LinAlgError as exc:
        raise ValueError("reduced k x k system is singular; lambda2 may be too "
                         "small or Z rank-deficient") from exc
    residual = M @ sol - rhs
    scale = np.linalg.norm(M, ord="fro") * np.linalg.norm(sol) + np.linalg.norm(rhs) + 1.0
    if not np.all(np.isfinite(sol)) or np.linalg.norm(residual) > 1e-8 * scale:
        raise ValueError("reduced k x k solve is unreliable (residual "
                         f"{np.linalg.norm(residual):.3e}); lambda2 may be too "
                         "small or Z rank-deficient")
    per_class_res = np.linalg.norm(residual, axis=0) / np.maximum(
        np.linalg.norm(rhs, axis=0), 1.0)
    return lambda2 * sol, per_class_res


def agr_closed_form_solve(factor: GraphFactor, labels: LabelState,
                          cfg: InferConfig) -> Prediction:
    """Reduced solve: scores constrained to F = Z A, with A from a k x k system."""
    if cfg.method != "agr_closed_form":
        raise ValueError(f"config method is {cfg.method!r}, expected 'agr_closed_form'")
    if labels.l == 0:
        raise ValueError("labeled set is empty")
    if labels.n != factor.n:
        raise ValueError(f"label state has n={labels.n}, factor has n={factor.n}")
    A, per_class_res = reduced_coefficients(factor, labels, cfg.lambda2)
    F_u = factor.Z[labels.unlabeled_idx] @ A
    stats = SolverStats(method="agr_closed_form",
                        iterations=(0,) * labels.num_classes,
                        residuals=tuple(float(r) for r in per_class_res))
    return Prediction(F_u=F_u, labels_u=predict_labels(F_u), solver_stats=stats)


def solve(factor: GraphFactor, labels: LabelState, cfg: InferConfig) -> Prediction:
    """Dispatch on cfg.method."""
    if cfg.method == "lgc_cg":
        return lgc_cg_solve(factor, labels, cfg)
    return agr_closed_form_solve(factor, labels, cfg)


def prediction_to_csv(pred: Prediction, unlabeled_idx: np.ndarray,
                      path: str | Path) -> None:
    """Write ``index,predicted_class,max_score`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for idx, cls, row in zip(unlabeled_idx, pred.labels_u, pred.F_u):
            writer.writerow([int(idx), int(cls), f"{row.max():.17g}"])


def prediction_to_json(pred: Prediction, unlabeled_idx: np.ndarray) -> str:
    payload = {
        "index": [int(i) for i in unlabeled_idx],
        "predicted_class": [int(c) for c in pred.labels_u],
        "max_score": [float(r.max()) for r in pred.F_u],
        "solver_stats": {
            "method": pred.solver_stats.method,
            "iterations": list(pred.solver_stats.iterations),
            "residuals": list(pred.solver_stats.residuals),
        },
    }
    return json.dumps(payload, indent=2)
