"""Benchmark harness: dataset generation, repeated label draws, grid search.

Runs are reproducible from (config, master seed): the seed of each label
draw is derived from (master_seed, l, repeat) through a stable counter-based
hash, so any single cell can be rerun independently of grid iteration order.
Label-independent work (model fitting, graph construction) is shared across
the repeated draws; its wall time is measured once and counted into every
repeat, while k-means / anchor initialization is excluded from timing.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import baselines, graph, hdp, infer
from .data import (Dataset, LabelState, ThreeMoonSpec, draw_label_set,
                   gen_three_moon, load_csv, load_libsvm, save_csv, save_libsvm)

HIDEGL_METHODS = ("hidegl-l-accurate", "hidegl-l-approx",
                  "hidegl-a-accurate", "hidegl-a-approx")
METHODS = HIDEGL_METHODS + ("lgc", "agr-gauss", "agr-lae")

_HIDEGL_VARIANTS = {
    "hidegl-l-accurate": ("exact", "lgc_cg"),
    "hidegl-l-approx": ("approx", "lgc_cg"),
    "hidegl-a-accurate": ("exact", "agr_closed_form"),
    "hidegl-a-approx": ("approx", "agr_closed_form"),
}

_INT_PARAMS = {"k", "K", "s_hat", "max_outer_iters", "cg_max_iters",
               "kmeans_restarts", "kmeans_iters", "lae_iters", "cap"}

_METHOD_PARAMS = {
    "lgc": ({"K", "sigma", "mu"}, {"cap"}),
    "agr-gauss": ({"k", "s_hat", "h", "gamma"}, {"kmeans_restarts", "kmeans_iters"}),
    "agr-lae": ({"k", "s_hat", "gamma"}, {"kmeans_restarts", "kmeans_iters",
                                          "lae_iters", "lae_tol"}),
}
for _m in HIDEGL_METHODS:
    _METHOD_PARAMS[_m] = ({"k", "sigma", "lambda1", "lambda2", "alpha", "eta"},
                          {"max_outer_iters", "hdp_tol", "kmeans_restarts",
                           "kmeans_iters", "cg_tol", "cg_max_iters"})


class UsageError(ValueError):
    """Bad method/hyperparameter combination, reported before any compute."""


@dataclass(frozen=True)
class RunConfig:
    """One benchmark run: dataset, method, hyperparameters, label protocol."""

    method: str
    params: dict = field(default_factory=dict)
    dataset: str = "three-moon"
    label_counts: tuple[int, ...] = (3,)
    repeats: int = 10
    master_seed: int = 0
    n_per_class: int = 500
    ambient_dim: int = 100
    noise_sd: float = 0.14
    data_seed: int = 0


@dataclass(frozen=True)
class BenchCell:
    method: str
    l: int
    accuracies: tuple[float, ...]
    times: tuple[float, ...]
    seeds: tuple[int, ...]
    params: dict

    @property
    def acc_mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def acc_sd(self) -> float:
        return float(np.std(self.accuracies, ddof=1)) if len(self.accuracies) > 1 else 0.0

    @property
    def time_mean(self) -> float:
        return float(np.mean(self.times))

    @property
    def time_sd(self) -> float:
        return float(np.std(self.times, ddof=1)) if len(self.times) > 1 else 0.0


@dataclass(frozen=True)
class BenchReport:
    dataset: str
    repeats: int
    master_seed: int
    cells: tuple[BenchCell, ...]

    def mean_accuracy(self) -> float:
        """Average of per-l mean accuracies (the grid-search score)."""
        return float(np.mean([cell.acc_mean for cell in self.cells]))


def derive_seed(master_seed: int, l: int, repeat: int) -> int:
    """Stable per-draw seed; independent of evaluation order."""
    return int(np.random.SeedSequence([int(master_seed), int(l), int(repeat)])
               .generate_state(1)[0])


def transductive_accuracy(pred_labels_u: np.ndarray, truth: np.ndarray,
                          unlabeled_idx: np.ndarray) -> float:
    """Percentage of unlabeled points predicted correctly."""
    return 100.0 * float(np.mean(pred_labels_u == truth[unlabeled_idx]))


def validate_run_config(cfg: RunConfig) -> None:
    """Usage-error checks done before any compute."""
    if cfg.method not in METHODS:
        raise UsageError(f"unknown method {cfg.method!r}; choose from {', '.join(METHODS)}")
    if cfg.repeats < 1:
        raise UsageError("repeats must be >= 1")
    if not cfg.label_counts:
        raise UsageError("at least one label count is required")
    required, optional = _METHOD_PARAMS[cfg.method]
    given = set(cfg.params)
    missing = required - given
    if missing:
        raise UsageError(f"{cfg.method}: missing parameters {sorted(missing)}")
    unknown = given - required - optional
    if unknown:
        raise UsageError(f"{cfg.method}: unknown parameters {sorted(unknown)}")
    p = cfg.params
    for name in ("sigma", "h", "gamma", "mu", "lambda2", "cg_tol", "hdp_tol", "lae_tol"):
        if name in p and not p[name] > 0:
            raise UsageError(f"{name} must be > 0, got {p[name]}")
    for name in ("lambda1", "eta"):
        if name in p and p[name] < 0:
            raise UsageError(f"{name} must be >= 0, got {p[name]}")
    if "alpha" in p and not 0.0 < p["alpha"] < 1.0:
        raise UsageError(f"alpha must lie in (0, 1), got {p['alpha']}")
    for name in ("k", "K", "s_hat"):
        if name in p and p[name] < 1:
            raise UsageError(f"{name} must be >= 1, got {p[name]}")


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset == "three-moon":
        return gen_three_moon(ThreeMoonSpec(n_per_class=cfg.n_per_class,
                                            ambient_dim=cfg.ambient_dim,
                                            noise_sd=cfg.noise_sd,
                                            seed=cfg.data_seed))
    path = Path(cfg.dataset)
    if not path.exists():
        raise UsageError(f"dataset file not found: {path}")
    if path.suffix == ".csv":
        return load_csv(path)
    return load_libsvm(path)


class BenchSession:
    """Runs methods on one dataset, caching label-independent stages."""

    def __init__(self, ds: Dataset):
        self.ds = ds
        self._cache: dict = {}

    def _hdp_model(self, params: dict) -> tuple[hdp.HdpModel, float]:
        key = ("hdp", params["k"], params["sigma"], params["lambda1"],
               params.get("max_outer_iters", 50), params.get("hdp_tol", 1e-4),
               params.get("kmeans_restarts", 3), params.get("kmeans_iters", 100))
        if key not in self._cache:
            cfg = hdp.HdpConfig(
                k=int(params["k"]), sigma=params["sigma"], lambda1=params["lambda1"],
                max_outer_iters=int(params.get("max_outer_iters", 50)),
                tol=params.get("hdp_tol", 1e-4),
                kmeans=hdp.KMeansConfig(max_iters=int(params.get("kmeans_iters", 100)),
                                        n_restarts=int(params.get("kmeans_restarts", 3)),
                                        seed=0))
            init = hdp.kmeans_init(self.ds, cfg)  # excluded from timing
            t0 = time.perf_counter()
            model = hdp.fit_hdp(self.ds, cfg, init_centers=init)
            self._cache[key] = (model, time.perf_counter() - t0)
        return self._cache[key]

    def _factor(self, params: dict, variant: str) -> tuple[graph.GraphFactor, float]:
        key = ("factor", variant, params["k"], params["sigma"], params["lambda1"],
               params["alpha"], params["eta"],
               params.get("max_outer_iters", 50), params.get("hdp_tol", 1e-4))
        if key not in self._cache:
            model, fit_secs = self._hdp_model(params)
            build = graph.build_exact_factor if variant == "exact" else graph.build_approx_factor
            t0 = time.perf_counter()
            factor = build(model, params["alpha"], params["eta"])
            graph.row_sums(factor)  # degree cache belongs to construction cost
            self._cache[key] = (factor, fit_secs + (time.perf_counter() - t0))
        return self._cache[key]

    def _anchor_z(self, method: str, params: dict) -> tuple[np.ndarray, float]:
        key = ("anchor-z", method, params["k"], params["s_hat"], params.get("h"),
               params.get("lae_iters"), params.get("lae_tol"))
        if key not in self._cache:
            kmeans = hdp.KMeansConfig(max_iters=int(params.get("kmeans_iters", 100)),
                                      n_restarts=int(params.get("kmeans_restarts", 3)),
                                      seed=0)
            anchors = baselines.make_anchor_set(  # k-means excluded from timing
                self.ds, int(params["k"]), int(params["s_hat"]),
                params.get("h", 1.0), kmeans)
            t0 = time.perf_counter()
            if method == "agr-gauss":
                Z = baselines.agr_gauss_z(self.ds, anchors)
            else:
                Z = baselines.agr_lae_z(self.ds, anchors,
                                        int(params.get("lae_iters", 200)),
                                        params.get("lae_tol", 1e-9))
            self._cache[key] = (Z, time.perf_counter() - t0)
        return self._cache[key]

    def run(self, method: str, params: dict,
            labels: LabelState) -> tuple[float, np.ndarray, np.ndarray]:
        """Returns (seconds excluding init, predicted labels, unlabeled indices)."""
        u = labels.unlabeled_idx
        if method in HIDEGL_METHODS:
            variant, infer_method = _HIDEGL_VARIANTS[method]
            factor, shared_secs = self._factor(params, variant)
            cfg = infer.InferConfig(
                lambda2=params["lambda2"], method=infer_method,
                cg=infer.CgConfig(tol=params.get("cg_tol", 1e-8),
                                  max_iters=int(params.get("cg_max_iters", 1000))))
            t0 = time.perf_counter()
            pred = infer.solve(factor, labels, cfg)
            return shared_secs + (time.perf_counter() - t0), pred.labels_u, u
        if method == "lgc":
            t0 = time.perf_counter()
            pred = baselines.lgc_dense(self.ds, labels, int(params["K"]),
                                       params["sigma"], params["mu"],
                                       int(params.get("cap", baselines.LGC_DENSE_CAP)))
            return time.perf_counter() - t0, pred.labels_u, u
        if method in ("agr-gauss", "agr-lae"):
            Z, z_secs = self._anchor_z(method, params)
            t0 = time.perf_counter()
            pred = baselines.agr_predict(Z, labels, params["gamma"])
            return z_secs + (time.perf_counter() - t0), pred.labels_u, u
        raise UsageError(f"unknown method {method!r}")


def run_bench(cfg: RunConfig, session: BenchSession | None = None) -> BenchReport:
    """Evaluate one configuration over the repeated label draws."""
    validate_run_config(cfg)
    if session is None:
        session = BenchSession(load_dataset(cfg))
    ds = session.ds
    cells = []
    for l in cfg.label_counts:
        accs, times, seeds = [], [], []
        for r in range(cfg.repeats):
            seed = derive_seed(cfg.master_seed, l, r)
            labels = draw_label_set(ds, l, seed)
            secs, pred_u, u = session.run(cfg.method, cfg.params, labels)
            accs.append(transductive_accuracy(pred_u, ds.labels, u))
            times.append(secs)
            seeds.append(seed)
        cells.append(BenchCell(method=cfg.method, l=int(l), accuracies=tuple(accs),
                               times=tuple(times), seeds=tuple(seeds),
                               params=dict(cfg.params)))
    return BenchReport(dataset=cfg.dataset, repeats=cfg.repeats,
                       master_seed=cfg.master_seed, cells=tuple(cells))


@dataclass(frozen=True)
class GridResult:
    best_config: RunConfig
    best_report: BenchReport
    cells: tuple[dict, ...]  # one summary per grid cell, in grid order


def grid_search(base: RunConfig, grids: dict[str, tuple]) -> GridResult:
    """Exhaustive search over the Cartesian product of the grid values.

    Cells are visited in lexicographic order (keys in the order given, each
    value list in the order given); the best mean accuracy wins and ties go
    to the earliest cell.  Cells whose solver fails are recorded as failed
    and skipped.
    """
    if not grids or any(len(v) == 0 for v in grids.values()):
        raise UsageError("grid must be nonempty along every dimension")
    keys = list(grids)
    session = BenchSession(load_dataset(base))
    best_score, best_cfg, best_report = -np.inf, None, None
    summaries = []
    for values in itertools.product(*(grids[k] for k in keys)):
        cell_params = dict(base.params)
        cell_params.update(dict(zip(keys, values)))
        cfg = replace(base, params=cell_params)
        summary = {"params": {k: v for k, v in zip(keys, values)}}
        try:
            report = run_bench(cfg, session=session)
        except (UsageError, ValueError, RuntimeError) as exc:
            summary.update(score=None, error=f"{type(exc).__name__}: {exc}")
            summaries.append(summary)
            continue
        score = report.mean_accuracy()
        summary.update(score=score, error=None)
        summaries.append(summary)
        if score > best_score:
            best_score, best_cfg, best_report = score, cfg, report
    if best_cfg is None:
        raise RuntimeError("every grid cell failed; see cell summaries")
    return GridResult(best_config=best_cfg, best_report=best_report,
                      cells=tuple(summaries))


# ---------------------------------------------------------------------------
# serialization

def report_to_dict(report: BenchReport) -> dict:
    return {
        "dataset": report.dataset,
        "repeats": report.repeats,
        "master_seed": report.master_seed,
        "cells": [{
            "method": c.method, "l": c.l,
            "accuracies": list(c.accuracies), "times": list(c.times),
            "seeds": list(c.seeds), "params": c.params,
            "acc_mean": c.acc_mean, "acc_sd": c.acc_sd,
            "time_mean": c.time_mean, "time_sd": c.time_sd,
        } for c in report.cells],
    }


def report_from_dict(payload: dict) -> BenchReport:
    cells = tuple(BenchCell(method=c["method"], l=int(c["l"]),
                            accuracies=tuple(c["accuracies"]),
                            times=tuple(c["times"]), seeds=tuple(c["seeds"]),
                            params=dict(c["params"]))
                  for c in payload["cells"])
    return BenchReport(dataset=payload["dataset"], repeats=int(payload["repeats"]),
                       master_seed=int(payload["master_seed"]), cells=cells)


def report_to_csv(report: BenchReport) -> str:
    """One row per method x l: mean, sd, time_mean, time_sd."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["method", "l", "acc_mean", "acc_sd", "time_mean", "time_sd"])
    for c in report.cells:
        writer.writerow([c.method, c.l, f"{c.acc_mean:.6f}", f"{c.acc_sd:.6f}",
                         f"{c.time_mean:.6f}", f"{c.time_sd:.6f}"])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# config files and flags

_LIST_KEYS = {"l"}
_INT_KEYS = {"repeats", "seed", "n_per_class", "ambient_dim", "data_seed"}
_FLOAT_KEYS = {"noise_sd"}
_STR_KEYS = {"dataset", "method", "out", "format", "variant"}
_PARAM_KEYS = sorted({name for req, opt in _METHOD_PARAMS.values() for name in req | opt})


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment, blank lines ignored."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not key or not value:
                raise UsageError(f"{path}:{lineno}: empty key or value")
            values[key] = value
    return values


def _parse_number(key: str, text: str) -> float | int:
    try:
        if key in _INT_PARAMS or key in _INT_KEYS:
            return int(text)
        return float(text)
    except ValueError:
        raise UsageError(f"{key}: expected a number, got {text!r}") from None


def _parse_number_list(key: str, text: str) -> list:
    return [_parse_number(key, part.strip()) for part in str(text).split(",")]


def resolve_options(config_values: dict[str, str], args: argparse.Namespace) -> dict:
    """Merge config file values with flag overrides (flags win).

    Hyperparameter values are kept as lists; bench requires singletons while
    grid treats multi-valued entries as grid dimensions.  The master seed
    falls back to the HIDEGL_SEED environment variable when unset.
    """
    merged = dict(config_values)
    for key in list(merged):
        if key not in _STR_KEYS | _INT_KEYS | _FLOAT_KEYS | _LIST_KEYS | set(_PARAM_KEYS):
            raise UsageError(f"unknown config key {key!r}")
    for key in _STR_KEYS | _INT_KEYS | _FLOAT_KEYS | _LIST_KEYS | set(_PARAM_KEYS):
        flag_val = getattr(args, key.replace("-", "_"), None)
        if flag_val is not None:
            merged[key] = flag_val
    out: dict = {}
    for key, value in merged.items():
        if key in _STR_KEYS:
            out[key] = str(value)
        elif key in _INT_KEYS:
            out[key] = int(_parse_number(key, value))
        elif key in _FLOAT_KEYS:
            out[key] = float(_parse_number(key, value))
        elif key in _LIST_KEYS:
            out[key] = [int(v) for v in _parse_number_list(key, value)]
        else:
            out[key] = _parse_number_list(key, value)
    if "seed" not in out:
        env = os.environ.get("HIDEGL_SEED")
        out["seed"] = int(env) if env else 0
    return out


def _build_run_config(options: dict, singleton_params: bool) -> tuple[RunConfig, dict]:
    """Split resolved options into a RunConfig and (for grid) the grid dims."""
    if "method" not in options:
        raise UsageError("a method is required (config key or --method)")
    params: dict = {}
    grids: dict = {}
    for key in _PARAM_KEYS:
        if key not in options:
            continue
        values = options[key]
        if len(values) == 1:
            params[key] = values[0]
        elif singleton_params:
            raise UsageError(f"{key}: bench takes a single value, got {values} "
                             "(use the grid subcommand for lists)")
        else:
            grids[key] = tuple(values)
    cfg = RunConfig(
        method=options["method"],
        params=params,
        dataset=options.get("dataset", "three-moon"),
        label_counts=tuple(options.get("l", [3])),
        repeats=options.get("repeats", 10),
        master_seed=options.get("seed", 0),
        n_per_class=options.get("n_per_class", 500),
        ambient_dim=options.get("ambient_dim", 100),
        noise_sd=options.get("noise_sd", 0.14),
        data_seed=options.get("data_seed", 0),
    )
    return cfg, grids


def _write_or_print(text: str, out: str | None) -> None:
    if out is None:
        print(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _cmd_gen_threemoon(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else int(os.environ.get("HIDEGL_SEED", "0"))
    spec = ThreeMoonSpec(n_per_class=args.n_per_class, ambient_dim=args.ambient_dim,
                         noise_sd=args.noise_sd, seed=int(seed))
    ds = gen_three_moon(spec)
    if args.format == "csv":
        save_csv(ds, args.out)
    else:
        save_libsvm(ds, args.out)
    print(f"wrote {ds.n} points ({ds.d} dims, {ds.num_classes} classes) to {args.out}")
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    config_values = parse_config_file(args.config) if args.config else {}
    options = resolve_options(config_values, args)
    cfg, _ = _build_run_config(options, singleton_params=True)
    report = run_bench(cfg)
    payload = json.dumps(report_to_dict(report), indent=2)
    out = options.get("out")
    _write_or_print(payload, out)
    if out:
        Path(out).with_suffix(".csv").write_text(report_to_csv(report), encoding="utf-8")
    for cell in report.cells:
        print(f"{cell.method} l={cell.l}: {cell.acc_mean:.2f} +- {cell.acc_sd:.2f} "
              f"({cell.time_mean:.3f}s per repeat)", file=sys.stderr)
    return 0


def _cmd_grid(args: argparse.Namespace) -> int:
    config_values = parse_config_file(args.config) if args.config else {}
    options = resolve_options(config_values, args)
    base, grids = _build_run_config(options, singleton_params=False)
    if not grids:
        grids = {key: (base.params[key],) for key in list(base.params)[:1]}
    result = grid_search(base, grids)
    payload = json.dumps({
        "best_params": result.best_config.params,
        "best_report": report_to_dict(result.best_report),
        "cells": list(result.cells),
    }, indent=2)
    _write_or_print(payload, options.get("out"))
    best = result.best_report
    print(f"best {base.method}: params={result.best_config.params} "
          f"mean={best.mean_accuracy():.2f}", file=sys.stderr)
    return 0


def _cmd_diagnose(args: argparse.Namespace) -> int:
    config_values = parse_config_file(args.config) if args.config else {}
    options = resolve_options(config_values, args)
    cfg, _ = _build_run_config(options, singleton_params=True)
    validate_run_config(cfg)
    if cfg.method not in HIDEGL_METHODS:
        raise UsageError("diagnose requires a hidegl-* method")
    session = BenchSession(load_dataset(cfg))
    variant, _ = _HIDEGL_VARIANTS[cfg.method]
    factor, _ = session._factor(cfg.params, variant)
    report = graph.spectral_diagnostics(factor)
    _write_or_print(json.dumps(report, indent=2), options.get("out"))
    status = "all checks passed" if report["all_passed"] else "CHECK FAILURES"
    print(f"spectral diagnostics ({variant}, n={report['n']}, k={report['k']}): {status}",
          file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hidegl",
        description="Graph-based semi-supervised learning benchmarks over "
                    "high-dense-point graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-threemoon", help="generate the three-moon dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=None,
                     help="generator seed (falls back to HIDEGL_SEED, then 0)")
    gen.add_argument("--n-per-class", type=int, default=500)
    gen.add_argument("--ambient-dim", type=int, default=100)
    gen.add_argument("--noise-sd", type=float, default=0.14)
    gen.add_argument("--format", choices=("csv", "libsvm"), default="csv")
    gen.set_defaults(func=_cmd_gen_threemoon)

    def add_common(p):
        p.add_argument("--config", default=None, help="flat key = value config file")
        for key in sorted(_STR_KEYS | _INT_KEYS | _FLOAT_KEYS | _LIST_KEYS):
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)
        for key in _PARAM_KEYS:
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None,
                           help=f"hyperparameter {key}"
                                + (" (AGR's regularizer, maps onto lambda2)"
                                   if key == "gamma" else ""))

    bench = sub.add_parser("bench", help="run one configuration over repeated draws")
    add_common(bench)
    bench.set_defaults(func=_cmd_bench)

    grid = sub.add_parser("grid", help="exhaustive grid search (comma lists = grid dims)")
    add_common(grid)
    grid.set_defaults(func=_cmd_grid)

    diag = sub.add_parser("diagnose", help="spectral checks on a small factor")
    add_common(diag)
    diag.set_defaults(func=_cmd_diagnose)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
