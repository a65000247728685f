import os

# This suite times matvec-heavy solves whose GEMMs are small; OpenBLAS
# thread spin-waiting slows them by an order of magnitude on small boxes.
# Must be set before numpy loads.  Explicit user settings win.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from hidegl import data, hdp


def random_dataset(n, d, seed, labels=True):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(d, n))
    labs = rng.integers(0, 3, size=n) if labels else None
    if labels:  # keep every class populated
        labs[:3] = [0, 1, 2]
    return data.Dataset(features=feats, labels=labs)


def random_model(n, k, seed, sigma=0.8):
    """Strictly positive row-stochastic Z plus a spanning tree, for factor tests."""
    rng = np.random.default_rng(seed)
    ds = random_dataset(n, 3, seed)
    C = rng.normal(size=(3, k))
    Z = hdp.update_assignments(ds, C, sigma)
    G = hdp.fit_spanning_tree(C)
    return hdp.HdpModel(centers=C, Z=Z, tree=G, objective_trace=np.zeros(0))


def full_system_affinity(Z, G, alpha, eta):
    """Independent dense oracle: top-left n x n block of P^2 (I - alpha P)^-1.

    Built directly from the block definitions, without touching the library's
    factor machinery.
    """
    n, k = Z.shape
    Q = np.zeros((n + k, n + k))
    Q[:n, n:] = Z
    Q[n:, :n] = Z.T
    Q[n:, n:] = eta * G
    gamma = Q.sum(axis=1)
    P = Q / gamma[:, None]
    M = np.linalg.inv(np.eye(n + k) - alpha * P)
    full = P @ P @ M
    return full[:n, :n]


def approx_affinity_terms(Z, G, alpha, eta):
    """Independent dense oracle for the two-term truncation, term by term."""
    e = Z.sum(axis=0) + eta * G.sum(axis=1)
    Einv = np.diag(1.0 / e)
    t0 = Z @ Einv @ Z.T
    t1 = alpha * eta * (Z @ Einv @ G @ Einv @ Z.T)
    t2 = alpha * alpha * (Z @ Einv @ Z.T @ Z @ Einv @ Z.T)
    return t0 + t1 + t2


@pytest.fixture
def tiny_moons():
    return data.gen_three_moon(data.ThreeMoonSpec(n_per_class=40, ambient_dim=6,
                                                  noise_sd=0.08, seed=11))
