"""Acceptance suite: one test per criterion, one printed PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they complete.  The three-moon grid and the scalability timing are
the slow parts (several minutes together).
"""

import itertools
import time

import numpy as np
import pytest

from hidegl import baselines, cli, data, graph, hdp, infer

from conftest import approx_affinity_terms, full_system_affinity, random_model
from test_hdp import _is_spanning_tree, _mst_cost_bruteforce

DATA_SEED = 7
MASTER_SEED = 2024

# sample points for the interval-valued grid dimensions
GRID_SIGMA = (0.05, 0.1)
GRID_LAMBDA1 = (0.1, 1.0, 10.0, 100.0)
GRID_ALPHA = (0.5, 0.9)
GRID_ETA = (0.01, 0.1, 1.0)
GRID_LAMBDA2 = (0.001, 0.01, 0.05)
GRID_K = 200

VARIANTS = ("hidegl-l-accurate", "hidegl-l-approx",
            "hidegl-a-accurate", "hidegl-a-approx")


def _report(name: str, ok: bool, detail: str = "") -> None:
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def moons():
    return data.gen_three_moon(data.ThreeMoonSpec(seed=DATA_SEED))


@pytest.fixture(scope="module")
def label_draws(moons):
    return {l: [data.draw_label_set(moons, l, cli.derive_seed(MASTER_SEED, l, r))
                for r in range(10)]
            for l in (3, 10)}


def _mean_accuracy(preds, draws, truth):
    return float(np.mean([cli.transductive_accuracy(p.labels_u, truth, d.unlabeled_idx)
                          for p, d in zip(preds, draws)]))


@pytest.fixture(scope="module")
def hidegl_grid_best(moons, label_draws):
    """Exhaustive k=200 grid; best mean accuracy per (variant, l)."""
    best = {(v, l): -1.0 for v in VARIANTS for l in (3, 10)}
    for sigma, lam1 in itertools.product(GRID_SIGMA, GRID_LAMBDA1):
        model = hdp.fit_hdp(moons, hdp.HdpConfig(k=GRID_K, sigma=sigma, lambda1=lam1))
        for alpha, eta in itertools.product(GRID_ALPHA, GRID_ETA):
            factors = {"accurate": graph.build_exact_factor(model, alpha, eta),
                       "approx": graph.build_approx_factor(model, alpha, eta)}
            for lam2 in GRID_LAMBDA2:
                cg_cfg = infer.InferConfig(
                    lambda2=lam2, cg=infer.CgConfig(tol=1e-5, max_iters=2500))
                cf_cfg = infer.InferConfig(lambda2=lam2, method="agr_closed_form")
                for wkind, factor in factors.items():
                    for l, draws in label_draws.items():
                        try:
                            l_preds = infer.lgc_cg_solve_many(factor, draws, cg_cfg)
                            a_preds = [infer.agr_closed_form_solve(factor, d, cf_cfg)
                                       for d in draws]
                        except (infer.CgConvergenceError, ValueError):
                            continue  # failed cell: excluded from the search
                        l_key = (f"hidegl-l-{wkind}", l)
                        a_key = (f"hidegl-a-{wkind}", l)
                        best[l_key] = max(best[l_key],
                                          _mean_accuracy(l_preds, draws, moons.labels))
                        best[a_key] = max(best[a_key],
                                          _mean_accuracy(a_preds, draws, moons.labels))
    return best


def test_criterion_three_moon_accuracy(hidegl_grid_best):
    detail = "; ".join(f"{v} l={l}: {hidegl_grid_best[(v, l)]:.2f}"
                       for v in VARIANTS for l in (3, 10))
    ok = all(hidegl_grid_best[(v, l)] >= 99.0 for v in VARIANTS for l in (3, 10))
    _report("three-moon accuracy >= 99.0 (grid best, all variants, l in {3,10})",
            ok, detail)


def test_criterion_baseline_ordering(moons, label_draws, hidegl_grid_best):
    draws = label_draws[3]
    agr_best = -1.0
    for s_hat, h in itertools.product((2, 3, 5, 10), (0.05, 0.1, 0.2, 0.5)):
        anchors = baselines.make_anchor_set(moons, GRID_K, s_hat, h)
        Z = baselines.agr_gauss_z(moons, anchors)
        for gamma in (0.001, 0.01, 0.1, 1.0):
            preds = [baselines.agr_predict(Z, d, gamma) for d in draws]
            agr_best = max(agr_best, _mean_accuracy(preds, draws, moons.labels))
    lgc_best = -1.0
    for K, sigma, mu in itertools.product((10, 20), (0.2, 0.5, 1.0, 2.0),
                                          (0.01, 0.1, 1.0)):
        preds = [baselines.lgc_dense(moons, d, K, sigma, mu) for d in draws]
        lgc_best = max(lgc_best, _mean_accuracy(preds, draws, moons.labels))
    hidegl_best = max(hidegl_grid_best[(v, 3)] for v in VARIANTS)
    ok = hidegl_best > agr_best and hidegl_best > lgc_best
    _report("baseline ordering at l=3",
            ok, f"HiDeGL={hidegl_best:.3f} > AGR(Gauss)={agr_best:.3f}, "
                f"LGC={lgc_best:.3f}")


def _oracle_fixtures():
    """20 random fixtures spanning the alpha/eta grid (n <= 50, k <= 8)."""
    combos = list(itertools.product((0.1, 0.5, 0.9), (0.0, 0.1, 1.0)))
    fixtures = []
    rng = np.random.default_rng(123)
    for i in range(20):
        alpha, eta = combos[i % len(combos)]
        n = int(rng.integers(10, 51))
        k = int(rng.integers(2, 9))
        fixtures.append((random_model(n=n, k=k, seed=1000 + i), alpha, eta))
    return fixtures


def test_criterion_dense_oracle_equivalence():
    worst_exact, worst_approx = 0.0, 0.0
    for model, alpha, eta in _oracle_fixtures():
        exact = graph.build_exact_factor(model, alpha, eta)
        W = graph.dense_w(exact)
        ref = full_system_affinity(model.Z, model.tree, alpha, eta)
        worst_exact = max(worst_exact,
                          np.linalg.norm(W - ref) / np.linalg.norm(ref))
        approx = graph.build_approx_factor(model, alpha, eta)
        Wt = graph.dense_w(approx)
        ref_t = approx_affinity_terms(model.Z, model.tree, alpha, eta)
        worst_approx = max(worst_approx, np.abs(Wt - ref_t).max())
    ok = worst_exact <= 1e-10 and worst_approx <= 1e-12
    _report("dense-oracle equivalence (20 fixtures)",
            ok, f"exact rel err {worst_exact:.2e} <= 1e-10, "
                f"approx abs err {worst_approx:.2e} <= 1e-12")


def test_criterion_proposition_suite():
    failures = []
    for model, alpha, eta in _oracle_fixtures():
        for build in (graph.build_exact_factor, graph.build_approx_factor):
            factor = build(model, alpha, eta)
            W = graph.dense_w(factor)
            if np.abs(W - W.T).max() > 1e-10:
                failures.append("symmetry")
            if W.min() < -1e-12:
                failures.append("nonnegativity")
            r = W.sum(axis=1)
            bound = graph.row_sum_bound(factor)
            if r.min() < -1e-8 or r.max() > bound + 1e-8:
                failures.append(f"row sums [{r.min():.3g}, {r.max():.3g}] "
                                f"vs bound {bound:.3g}")
        rep = graph.spectral_diagnostics(graph.build_exact_factor(model, alpha, eta))
        if rep["p_spectrum_max_imag"] > 1e-8:
            failures.append("transition spectrum not real")
        if rep["p_spectrum_min"] < -1 - 1e-8 or rep["p_spectrum_max"] > 1 + 1e-8:
            failures.append("transition spectrum outside [-1, 1]")
        if not (rep["ptilde_spectrum_max_abs"] < 1.0
                and rep["ptilde_spectrum_max_imag"] <= 1e-8):
            failures.append("series core spectrum not strictly inside (-1, 1)")
        if rep["commutation_err"] > 1e-10:
            failures.append("resolvent commutation")
        # anchor special case: eta = 0, alpha = 0 coincides with Z Lambda^-1 Z^T
        anchor = graph.anchor_graph_equivalence_check(model.Z)
        if anchor["max_abs_diff"] > 1e-13:
            failures.append("anchor special case")
    _report("proposition suite (symmetry, spectra, commutation, bounds, anchor case)",
            not failures, "; ".join(failures[:5]) if failures else "all fixtures clean")


def test_criterion_solver_equivalence():
    rng_ds = data.gen_three_moon(data.ThreeMoonSpec(n_per_class=60, ambient_dim=8,
                                                    noise_sd=0.1, seed=3))
    worst_cg, worst_cf = 0.0, 0.0
    bound_ok = True
    for variant, build in (("exact", graph.build_exact_factor),
                           ("approx", graph.build_approx_factor)):
        alpha, eta, lam2 = 0.5, 0.2, 0.7
        model = hdp.fit_hdp(rng_ds, hdp.HdpConfig(k=10, sigma=0.3, lambda1=1.0,
                                                  max_outer_iters=5))
        factor = build(model, alpha, eta)
        labels = data.draw_label_set(rng_ds, 9, seed=4)
        u = labels.unlabeled_idx
        W = graph.dense_w(factor)
        L = np.diag(W.sum(axis=1)) - W
        A = 2.0 * L[np.ix_(u, u)] + lam2 * np.eye(u.size)
        b = infer.assemble_rhs(factor, labels, lam2)
        x_star = np.linalg.solve(A, b)

        cfg = infer.InferConfig(lambda2=lam2, cg=infer.CgConfig(tol=1e-12,
                                                                max_iters=1000))
        iterates = []
        pred = infer.lgc_cg_solve(factor, labels, cfg,
                                  callback=lambda it, X: iterates.append(X))
        worst_cg = max(worst_cg, float(np.abs(pred.F_u - x_star).max()))

        # weakened CG bound from the condition-number cap, every iteration
        if variant == "exact":
            kappa_cap = 1.0 + 4.0 / ((1.0 - alpha) * lam2)
        else:
            kappa_cap = 1.0 + 4.0 * (1.0 + alpha) / lam2
        rho = (np.sqrt(kappa_cap) - 1.0) / (np.sqrt(kappa_cap) + 1.0)

        def a_norm(E):
            return np.sqrt(np.einsum("ij,ij->j", E, A @ E))

        err0 = a_norm(-x_star)
        for t, X in enumerate(iterates, start=1):
            if not np.all(a_norm(X - x_star) <= 2.0 * rho ** t * err0 + 1e-12):
                bound_ok = False

        A_got, _ = infer.reduced_coefficients(factor, labels, lam2)
        Z = factor.Z
        M = 2.0 * Z.T @ L @ Z + lam2 * Z.T @ Z
        A_ref = lam2 * np.linalg.solve(M, Z.T @ labels.Y)
        worst_cf = max(worst_cf, float(np.abs(A_got - A_ref).max()))
    ok = worst_cg <= 1e-8 and worst_cf <= 1e-9 and bound_ok
    _report("solver equivalence (CG vs dense 1e-8, reduced vs dense 1e-9, CG bound)",
            ok, f"cg err {worst_cg:.2e}, reduced err {worst_cf:.2e}, "
                f"bound {'held' if bound_ok else 'VIOLATED'}")


def test_criterion_hdp_learning():
    failures = []
    # spanning tree vs exhaustive enumeration
    rng = np.random.default_rng(9)
    for _ in range(10):
        k = int(rng.integers(2, 8))
        C = rng.normal(size=(3, k))
        G = hdp.fit_spanning_tree(C)
        cost = hdp.squared_distances(C, C)
        got = 0.5 * float((G * cost).sum())
        ref = _mst_cost_bruteforce(cost)
        if not (_is_spanning_tree(G) and abs(got - ref) <= 1e-12 * max(1.0, ref)):
            failures.append(f"tree cost {got} != {ref}")

    # center update vs dense inverse
    ds = data.gen_three_moon(data.ThreeMoonSpec(n_per_class=30, ambient_dim=5,
                                                noise_sd=0.1, seed=5))
    Z = hdp.update_assignments(ds, ds.features[:, ::10], 0.4)
    G = hdp.fit_spanning_tree(ds.features[:, ::10])
    lam1 = 2.5
    C = hdp.update_centers(ds, Z, G, lam1)
    Xi = np.diag(Z.sum(axis=0))
    ref = ds.features @ Z @ np.linalg.inv(Xi + lam1 * hdp.tree_laplacian(G))
    rel = np.abs(C - ref).max() / np.abs(ref).max()
    if rel > 1e-12:
        failures.append(f"center update rel err {rel:.2e}")

    # iteration invariants and the lambda1 = 0 weighted-mean identity
    cfg = hdp.HdpConfig(k=9, sigma=0.3, lambda1=1.5)
    Ci = hdp.kmeans_init(ds, cfg)
    Zi = hdp.update_assignments(ds, Ci, cfg.sigma)
    for _ in range(6):
        Gi = hdp.fit_spanning_tree(Ci)
        Ci = hdp.update_centers(ds, Zi, Gi, cfg.lambda1)
        Zi = hdp.update_assignments(ds, Ci, cfg.sigma)
        if np.abs(Zi.sum(axis=1) - 1.0).max() > 1e-12:
            failures.append("Z rows drifted from 1")
            break
    C0 = hdp.update_centers(ds, Zi, Gi, lambda1=0.0)
    mean_ref = (ds.features @ Zi) / Zi.sum(axis=0)
    if not np.array_equal(C0, mean_ref):
        failures.append("lambda1=0 update is not the exact weighted mean")
    _report("hdp learning (MST oracle, center solve, Z rows, weighted mean)",
            not failures, "; ".join(failures) if failures else "all checks clean")


def _timed_pipeline(n_per_class: int) -> float:
    """Seconds for graph build + inference at k=500 (fit/init excluded)."""
    ds = data.gen_three_moon(data.ThreeMoonSpec(n_per_class=n_per_class, seed=1))
    rng = np.random.default_rng(2)
    C = ds.features[:, rng.choice(ds.n, size=500, replace=False)]
    Z = hdp.update_assignments(ds, C, 0.3)
    G = hdp.fit_spanning_tree(C)
    model = hdp.HdpModel(centers=C, Z=Z, tree=G, objective_trace=np.zeros(0))
    labels = data.draw_label_set(ds, 10, seed=3)
    cfg = infer.InferConfig(lambda2=0.05,
                            cg=infer.CgConfig(tol=1e-6, max_iters=2000))
    t0 = time.perf_counter()
    factor = graph.build_exact_factor(model, 0.5, 0.1)
    graph.row_sums(factor)
    infer.lgc_cg_solve(factor, labels, cfg)
    return time.perf_counter() - t0


def test_criterion_scalability():
    times = {}
    for n_per_class in (3334, 6667, 13334):
        times[n_per_class] = min(_timed_pipeline(n_per_class) for _ in range(2))
    ratio = times[13334] / times[3334]
    # the capped diagnostic path is the only way to materialize W
    ds = data.gen_three_moon(data.ThreeMoonSpec(n_per_class=3334, seed=1))
    rng = np.random.default_rng(2)
    C = ds.features[:, rng.choice(ds.n, size=500, replace=False)]
    model = hdp.HdpModel(centers=C, Z=hdp.update_assignments(ds, C, 0.3),
                         tree=hdp.fit_spanning_tree(C), objective_trace=np.zeros(0))
    factor = graph.build_exact_factor(model, 0.5, 0.1)
    try:
        graph.dense_w(factor)
        cap_enforced = False
    except ValueError:
        cap_enforced = True
    ok = ratio <= 5.0 and cap_enforced
    _report("scalability (time(40k)/time(10k) <= 5 at k=500; dense cap enforced)",
            ok, f"times {dict((k, round(v, 2)) for k, v in times.items())}, "
                f"ratio {ratio:.2f}, cap {'enforced' if cap_enforced else 'MISSING'}")


def test_criterion_baseline_correctness():
    failures = []
    ds = data.gen_three_moon(data.ThreeMoonSpec(n_per_class=40, ambient_dim=6,
                                                noise_sd=0.08, seed=6))
    labels = data.draw_label_set(ds, 6, seed=7)
    K, sigma, mu = 8, 0.5, 0.2
    F = baselines.lgc_dense_scores(ds, labels, K, sigma, mu)
    W = baselines.knn_affinity(ds, K, sigma)
    inv_sqrt = 1.0 / np.sqrt(W.sum(axis=1))
    S = inv_sqrt[:, None] * W * inv_sqrt[None, :]
    res = np.abs(((1 + mu) * np.eye(ds.n) - S) @ F - mu * labels.Y).max()
    if res > 1e-10:
        failures.append(f"LGC residual {res:.2e}")

    rng = np.random.default_rng(8)
    anchors = rng.uniform(-1.0, 1.0, size=(3, 3))
    x = rng.uniform(-1.0, 1.0, size=3)
    _, trace = baselines.lae_coordinates(x, anchors, max_iters=2000, tol=1e-14)
    steps = 1000
    i, j = np.meshgrid(np.arange(steps + 1), np.arange(steps + 1), indexing="ij")
    keep = (i + j) <= steps
    zg = np.stack([i[keep], j[keep], steps - i[keep] - j[keep]], axis=0) / steps
    resid = x[:, None] - anchors @ zg
    grid_min = 0.5 * float(np.min(np.einsum("ij,ij->j", resid, resid)))
    if abs(trace[-1] - grid_min) > 1e-5:
        failures.append(f"LAE objective gap {abs(trace[-1] - grid_min):.2e}")

    aset = baselines.make_anchor_set(ds, 10, 4, 0.3)
    Z = baselines.agr_gauss_z(ds, aset)
    used = Z.sum(axis=0) > 0
    anchor_factor = graph.build_anchor_factor(Z[:, used])
    rsums = graph.row_sums(anchor_factor)
    if np.abs(rsums - 1.0).max() > 1e-12:
        failures.append(f"anchor row sums off by {np.abs(rsums - 1.0).max():.2e}")
    _report("baseline correctness (LGC residual, LAE oracle, anchor row sums)",
            not failures, "; ".join(failures) if failures else "all checks clean")
