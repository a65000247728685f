"""Implicit affinity graphs over all input points from learned factors.

The n x n affinity W is never materialized: it is represented by the
assignment matrix Z, the tree adjacency G, the column-mass diagonal E, and a
small k x k core, so that W @ v costs O(nk + k^2).  Two variants exist: the
exact factor (resolvent form, via an SPD solve of the k x k core) and the
approximate factor (two-term series truncation, explicit k x k core).  Dense
materialization is available only behind a size cap, for diagnostics and
oracle tests.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
import scipy.linalg

from .hdp import FactorizationError, HdpModel

DENSE_CAP_DEFAULT = 2000
SPECTRAL_CAP = 300

# Column masses below this are numerically meaningless and poison E^-1.
_E_FLOOR = 1e-300
_ROW_STOCHASTIC_ATOL = 1e-8


class GraphFactor:
    """Implicit representation of the affinity W (or its truncation).

    Fields: Z (n x k assignments), tree (k x k adjacency), e_diag (diagonal
    of E = diag(Z^T 1 + eta G 1)), alpha, eta, variant, and the k x k core.
    For the exact variant the core is a Cholesky factorization of
    N = E - alpha*eta*G - alpha^2 Z^T Z; for the approximate variant it is
    the explicit symmetric matrix (I + alpha*eta*E^-1 G + alpha^2 E^-1 Z^T Z) E^-1.
    Instances are immutable after build; applying W is reentrant.
    """

    def __init__(self, Z, tree, e_diag, alpha, eta, variant, core, ZtZ):
        self.Z = Z
        self.tree = tree
        self.e_diag = e_diag
        self.alpha = float(alpha)
        self.eta = float(eta)
        self.variant = variant
        self.core = core
        self.ZtZ = ZtZ
        self._row_sums: np.ndarray | None = None
        self._reduced_laplacian: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def k(self) -> int:
        return self.Z.shape[1]

    def core_apply(self, B: np.ndarray) -> np.ndarray:
        """Apply the k x k core to B: N^-1 B (exact) or M~ B (approx)."""
        if self.variant == "exact":
            return scipy.linalg.cho_solve(self.core, B)
        return self.core @ B


def _column_mass(Z: np.ndarray, G: np.ndarray, eta: float) -> np.ndarray:
    e = Z.sum(axis=0) + eta * G.sum(axis=1)
    bad = np.flatnonzero(e < _E_FLOOR)
    if bad.size:
        raise ValueError(f"column mass underflow at columns {bad[:5].tolist()}; "
                         "assignments are numerically degenerate")
    return e


def _check_row_stochastic(Z: np.ndarray, strict_positive: bool) -> None:
    if np.abs(Z.sum(axis=1) - 1.0).max() > _ROW_STOCHASTIC_ATOL:
        raise ValueError("Z rows must sum to 1")
    if Z.min() < 0:
        raise ValueError("Z must be nonnegative")
    if strict_positive and Z.min() <= 0:
        raise ValueError("Z must be strictly positive for the general builders")


def _check_params(alpha: float, eta: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta}")


def build_exact_factor(model: HdpModel, alpha: float, eta: float) -> GraphFactor:
    """Factor for the exact affinity W = Z N^-1 Z^T with N = E - a*eta*G - a^2 Z^T Z.

    N is symmetric positive definite for alpha in (0, 1), so it is Cholesky
    factorized once; every subsequent apply reuses the factorization.
    """
    _check_params(alpha, eta)
    Z, G = model.Z, model.tree
    _check_row_stochastic(Z, strict_positive=True)
    e = _column_mass(Z, G, eta)
    ZtZ = Z.T @ Z
    N = (-alpha * eta) * G - (alpha * alpha) * ZtZ
    N = 0.5 * (N + N.T)
    N[np.diag_indices_from(N)] += e
    try:
        core = scipy.linalg.cho_factor(N)
    except scipy.linalg.LinAlgError as exc:
        pivot = re.search(r"\d+", str(exc))
        where = f"pivot {pivot.group()}" if pivot else "unknown pivot"
        raise FactorizationError(
            f"core matrix is not positive definite at {where}; "
            "alpha may be too close to 1 for this Z") from exc
    return GraphFactor(Z, G, e, alpha, eta, "exact", core, ZtZ)


def build_approx_factor(model: HdpModel, alpha: float, eta: float) -> GraphFactor:
    """Factor for the two-term truncation W~ = Z (I + P~) E^-1 Z^T."""
    _check_params(alpha, eta)
    Z, G = model.Z, model.tree
    _check_row_stochastic(Z, strict_positive=True)
    e = _column_mass(Z, G, eta)
    ZtZ = Z.T @ Z
    inv_e = 1.0 / e
    core = (np.diag(inv_e)
            + (alpha * eta) * (inv_e[:, None] * G * inv_e[None, :])
            + (alpha * alpha) * (inv_e[:, None] * ZtZ * inv_e[None, :]))
    core = 0.5 * (core + core.T)
    return GraphFactor(Z, G, e, alpha, eta, "approx", core, ZtZ)


def build_anchor_factor(Z: np.ndarray) -> GraphFactor:
    """Degenerate factor W = Z E^-1 Z^T (eta = 0, alpha = 0).

    This is the anchor-graph special case; Z may contain zeros here as long
    as every column carries positive mass.
    """
    Z = np.asarray(Z, dtype=np.float64)
    _check_row_stochastic(Z, strict_positive=False)
    k = Z.shape[1]
    G = np.zeros((k, k))
    e = _column_mass(Z, G, 0.0)
    core = scipy.linalg.cho_factor(np.diag(e))
    return GraphFactor(Z, G, e, 0.0, 0.0, "exact", core, Z.T @ Z)


def apply_w(factor: GraphFactor, v: np.ndarray) -> np.ndarray:
    """W @ v (or W~ @ v) without materializing W; v may be a vector or n x m."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != factor.n:
        raise ValueError(f"vector length {v.shape[0]} != n={factor.n}")
    return factor.Z @ factor.core_apply(factor.Z.T @ v)


def row_sum_bound(factor: GraphFactor) -> float:
    """Theoretical upper bound on the row sums of this factor's affinity."""
    if factor.variant == "exact":
        return 1.0 / (1.0 - factor.alpha)
    return 1.0 + factor.alpha


def row_sums(factor: GraphFactor, check_atol: float = 1e-8) -> np.ndarray:
    """Row sums W @ 1, cached on the factor and checked against their bound.

    The check validates (never clamps): values must lie in
    [-check_atol, bound + check_atol].
    """
    if factor._row_sums is None:
        r = apply_w(factor, np.ones(factor.n))
        bound = row_sum_bound(factor)
        if r.min() < -check_atol or r.max() > bound + check_atol:
            raise ValueError(
                f"row sums outside [0, {bound:.6g}] beyond tolerance: "
                f"min={r.min():.6g}, max={r.max():.6g}")
        factor._row_sums = r
    return factor._row_sums


def reduced_laplacian(factor: GraphFactor) -> np.ndarray:
    """The k x k matrix Z^T L(W) Z, assembled without any n x n array.

    Label-independent, so it is computed once and cached on the factor.
    """
    if factor._reduced_laplacian is None:
        Z, S = factor.Z, factor.ZtZ
        d = row_sums(factor)
        weighted = Z.T @ (d[:, None] * Z)
        zwz = S @ factor.core_apply(S)
        out = weighted - zwz
        factor._reduced_laplacian = 0.5 * (out + out.T)
    return factor._reduced_laplacian


def dense_w(factor: GraphFactor, cap: int = DENSE_CAP_DEFAULT) -> np.ndarray:
    """Materialize the n x n affinity. Diagnostic only; refuses n > cap."""
    if factor.n > cap:
        raise ValueError(f"refusing to materialize {factor.n} x {factor.n} affinity "
                         f"(cap {cap}); use apply_w instead")
    return factor.Z @ factor.core_apply(factor.Z.T)


def anchor_graph_equivalence_check(Z: np.ndarray) -> dict:
    """Compare the degenerate factor against the anchor graph Z Lambda^-1 Z^T."""
    Z = np.asarray(Z, dtype=np.float64)
    factor = build_anchor_factor(Z)
    W_special = dense_w(factor, cap=max(DENSE_CAP_DEFAULT, Z.shape[0]))
    lam = Z.sum(axis=0)
    W_anchor = (Z / lam) @ Z.T
    diff = float(np.abs(W_special - W_anchor).max())
    return {"n": int(Z.shape[0]), "k": int(Z.shape[1]), "max_abs_diff": diff}


def dense_transition(factor: GraphFactor) -> np.ndarray:
    """Dense (n+k) x (n+k) row-stochastic transition matrix of the factor."""
    Z, G, e = factor.Z, factor.tree, factor.e_diag
    n, k = factor.n, factor.k
    P = np.zeros((n + k, n + k))
    P[:n, n:] = Z
    P[n:, :n] = Z.T / e[:, None]
    P[n:, n:] = factor.eta * (G / e[:, None])
    return P


def spectral_diagnostics(factor: GraphFactor) -> dict:
    """Spectrum and identity checks on the dense transition system (small n only).

    Verifies that the transition matrix has a real spectrum inside [-1, 1]
    and unit row sums, that the k x k series core has spectrum strictly
    inside (-1, 1), that the resolvent commutes with the squared transition
    matrix, and that the affinity's Laplacian is PSD with the variant's
    spectral upper bound.  Report-only: returns a JSON-serializable dict.
    """
    n, k = factor.n, factor.k
    if n + k > SPECTRAL_CAP:
        raise ValueError(f"spectral diagnostics capped at n+k <= {SPECTRAL_CAP}, got {n + k}")
    alpha = factor.alpha
    P = dense_transition(factor)
    eigs = np.linalg.eigvals(P)
    max_imag = float(np.abs(eigs.imag).max())
    lam = eigs.real
    ones = np.ones(n + k)
    row_stochastic_err = float(np.abs(P @ ones - ones).max())

    inv_e = 1.0 / factor.e_diag
    ptilde = (alpha * factor.eta) * (inv_e[:, None] * factor.tree) \
        + (alpha * alpha) * (inv_e[:, None] * factor.ZtZ)
    pt_eigs = np.linalg.eigvals(ptilde)
    pt_max_abs = float(np.abs(pt_eigs.real).max()) if k else 0.0
    pt_max_imag = float(np.abs(pt_eigs.imag).max()) if k else 0.0

    A = np.eye(n + k) - alpha * P
    P2 = P @ P
    left = np.linalg.solve(A.T, P2.T).T   # P^2 (I - alpha P)^-1
    right = np.linalg.solve(A, P2)        # (I - alpha P)^-1 P^2
    commutation_err = float(np.abs(left - right).max())

    W = dense_w(factor, cap=SPECTRAL_CAP)
    L = np.diag(W.sum(axis=1)) - W
    L_eigs = np.linalg.eigvalsh(0.5 * (L + L.T))
    lap_bound = 2.0 * row_sum_bound(factor)

    tol = 1e-8
    report = {
        "n": n,
        "k": k,
        "alpha": alpha,
        "eta": factor.eta,
        "variant": factor.variant,
        "p_spectrum_max_imag": max_imag,
        "p_spectrum_min": float(lam.min()),
        "p_spectrum_max": float(lam.max()),
        "p_row_stochastic_err": row_stochastic_err,
        "ptilde_spectrum_max_abs": pt_max_abs,
        "ptilde_spectrum_max_imag": pt_max_imag,
        "ptilde_margin": float(1.0 - pt_max_abs),
        "commutation_err": commutation_err,
        "laplacian_min_eig": float(L_eigs.min()),
        "laplacian_max_eig": float(L_eigs.max()),
        "laplacian_bound": lap_bound,
    }
    report["checks"] = {
        "p_real": bool(max_imag <= tol),
        "p_in_unit_interval": bool(lam.min() >= -1.0 - tol and lam.max() <= 1.0 + tol),
        "p_row_stochastic": bool(row_stochastic_err <= 1e-10),
        "ptilde_strictly_inside": bool(pt_max_abs < 1.0 and pt_max_imag <= tol),
        "commutation": bool(commutation_err <= 1e-10),
        "laplacian_psd": bool(L_eigs.min() >= -tol),
        "laplacian_bounded": bool(L_eigs.max() <= lap_bound + tol),
    }
    report["all_passed"] = all(report["checks"].values())
    return report


def save_factor(factor: GraphFactor, path: str | Path) -> None:
    """Serialize the factor's defining arrays; the core is rebuilt on load."""
    np.savez_compressed(
        path,
        Z=factor.Z,
        tree=factor.tree,
        meta=np.array(json.dumps({"alpha": factor.alpha, "eta": factor.eta,
                                  "variant": factor.variant})),
    )


def load_factor(path: str | Path) -> GraphFactor:
    with np.load(path, allow_pickle=False) as bundle:
        meta = json.loads(str(bundle["meta"]))
        model = HdpModel(centers=np.zeros((1, bundle["Z"].shape[1])),
                         Z=bundle["Z"], tree=bundle["tree"],
                         objective_trace=np.zeros(0))
        if meta["alpha"] == 0.0 and meta["eta"] == 0.0:
            return build_anchor_factor(model.Z)
        if meta["variant"] == "exact":
            return build_exact_factor(model, meta["alpha"], meta["eta"])
        return build_approx_factor(model, meta["alpha"], meta["eta"])
