"""Dataset handling: LIBSVM ingestion, synthetic three-moon data, label draws.

Features are stored column-oriented: one sample per column of a dense
``d x n`` float64 array.  All randomness is per-call via an explicit seed,
so every operation here is pure given its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Fixed three-moon geometry: one upper half circle and two lower half circles.
UPPER_MOON_CENTER = (1.5, 0.4)
UPPER_MOON_RADIUS = 1.5
LOWER_MOON_CENTERS = ((0.0, 0.0), (3.0, 0.0))
LOWER_MOON_RADIUS = 1.0

_MAX_DRAW_ATTEMPTS = 10_000


class LibsvmParseError(ValueError):
    """Malformed LIBSVM input; carries the offending 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class Dataset:
    """Column-oriented feature matrix with optional integer class labels.

    ``features`` holds one sample per column (``d`` rows, ``n`` columns) and
    must be finite.  ``labels``, when present, are contiguous ids in
    ``[0, num_classes)``.
    """

    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        feats = np.asfortranarray(np.asarray(self.features, dtype=np.float64))
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D (d x n), got shape {feats.shape}")
        d, n = feats.shape
        if n < 1 or d < 1:
            raise ValueError(f"need at least one sample and one feature, got d={d}, n={n}")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain NaN or Inf")
        object.__setattr__(self, "features", feats)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (n,):
                raise ValueError(f"labels must have length n={n}, got shape {labels.shape}")
            if labels.min() < 0:
                raise ValueError("labels must be nonnegative class ids")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def d(self) -> int:
        return self.features.shape[0]

    @property
    def num_classes(self) -> int:
        if self.labels is None:
            raise ValueError("dataset has no labels")
        return int(self.labels.max()) + 1


@dataclass(frozen=True)
class LabelState:
    """One-hot label encoding plus the current score matrix.

    Rows of ``Y`` at labeled indices are one-hot; rows at unlabeled indices
    are all zero, so unlabeled points carry no bias toward any class.  ``F``
    starts as a copy of ``Y`` (the labeled block of ``F`` always equals
    ``Y``); solvers fill in the unlabeled block.
    """

    num_classes: int
    labeled_idx: np.ndarray
    Y: np.ndarray
    F: np.ndarray

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def l(self) -> int:
        return self.labeled_idx.shape[0]

    @property
    def unlabeled_idx(self) -> np.ndarray:
        """Ascending indices of the unlabeled points."""
        mask = np.ones(self.n, dtype=bool)
        mask[self.labeled_idx] = False
        return np.flatnonzero(mask)


@dataclass(frozen=True)
class ThreeMoonSpec:
    """Parameters of the synthetic three-moon generator."""

    n_per_class: int = 500
    ambient_dim: int = 100
    noise_sd: float = 0.14
    seed: int = 0

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        if self.ambient_dim < 2:
            raise ValueError("ambient_dim must be >= 2")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")


def make_label_state(labels: np.ndarray, labeled_idx: np.ndarray,
                     num_classes: int | None = None) -> LabelState:
    """Build a LabelState from ground-truth labels and a labeled index list."""
    labels = np.asarray(labels, dtype=np.int64)
    labeled_idx = np.asarray(labeled_idx, dtype=np.int64)
    n = labels.shape[0]
    if labeled_idx.ndim != 1 or labeled_idx.size == 0:
        raise ValueError("labeled_idx must be a nonempty 1-D index list")
    if np.unique(labeled_idx).size != labeled_idx.size:
        raise ValueError("labeled_idx entries must be distinct")
    if labeled_idx.min() < 0 or labeled_idx.max() >= n:
        raise ValueError("labeled_idx entries must lie in [0, n)")
    c = int(labels.max()) + 1 if num_classes is None else int(num_classes)
    Y = np.zeros((n, c))
    Y[labeled_idx, labels[labeled_idx]] = 1.0
    return LabelState(num_classes=c, labeled_idx=labeled_idx, Y=Y, F=Y.copy())


def load_libsvm(path: str | Path) -> Dataset:
    """Parse a LIBSVM text file (``label idx:val ...``) into a dense Dataset.

    Indices are 1-based and strictly ascending within a line; the feature
    dimension is the largest index seen anywhere in the file.  Raw labels are
    remapped to contiguous ids ``0..c-1`` preserving their sorted order.
    """
    raw_labels: list[float] = []
    rows: list[list[tuple[int, float]]] = []
    max_idx = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            try:
                label = float(tokens[0])
            except ValueError:
                raise LibsvmParseError(lineno, f"bad label token {tokens[0]!r}") from None
            if not np.isfinite(label):
                raise LibsvmParseError(lineno, f"non-finite label {tokens[0]!r}")
            entries: list[tuple[int, float]] = []
            prev = 0
            for tok in tokens[1:]:
                idx_str, _, val_str = tok.partition(":")
                if not val_str:
                    raise LibsvmParseError(lineno, f"expected idx:val, got {tok!r}")
                try:
                    idx = int(idx_str)
                    val = float(val_str)
                except ValueError:
                    raise LibsvmParseError(lineno, f"bad feature token {tok!r}") from None
                if idx < 1:
                    raise LibsvmParseError(lineno, f"indices are 1-based, got {idx}")
                if idx <= prev:
                    raise LibsvmParseError(lineno, f"indices must be ascending, got {idx} after {prev}")
                if not np.isfinite(val):
                    raise LibsvmParseError(lineno, f"non-finite value in token {tok!r}")
                entries.append((idx, val))
                prev = idx
            max_idx = max(max_idx, prev)
            raw_labels.append(label)
            rows.append(entries)
    if not rows:
        raise ValueError(f"{path}: no samples")
    if max_idx == 0:
        raise ValueError(f"{path}: no features")
    n, d = len(rows), max_idx
    feats = np.zeros((d, n), order="F")
    for j, entries in enumerate(rows):
        for idx, val in entries:
            feats[idx - 1, j] = val
    classes = np.unique(raw_labels)
    remap = {cls: i for i, cls in enumerate(classes)}
    labels = np.array([remap[lab] for lab in raw_labels], dtype=np.int64)
    return Dataset(features=feats, labels=labels)


def save_libsvm(ds: Dataset, path: str | Path) -> None:
    """Write a Dataset as LIBSVM text; all d indices are written explicitly.

    Writing zeros keeps load -> save -> load idempotent even when trailing
    features are identically zero.
    """
    if ds.labels is None:
        raise ValueError("dataset has no labels to serialize")
    with open(path, "w", encoding="utf-8") as fh:
        for j in range(ds.n):
            feats = " ".join(f"{i + 1}:{ds.features[i, j]:.17g}" for i in range(ds.d))
            fh.write(f"{ds.labels[j]} {feats}\n")


def save_csv(ds: Dataset, path: str | Path, header: bool = False) -> None:
    """Write ``label,f1,...,fd`` rows (no header unless requested)."""
    if ds.labels is None:
        raise ValueError("dataset has no labels to serialize")
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write("label," + ",".join(f"f{i + 1}" for i in range(ds.d)) + "\n")
        for j in range(ds.n):
            vals = ",".join(f"{v:.17g}" for v in ds.features[:, j])
            fh.write(f"{ds.labels[j]},{vals}\n")


def load_csv(path: str | Path) -> Dataset:
    """Read ``label,f1,...,fd`` rows written by :func:`save_csv`."""
    raw = np.loadtxt(path, delimiter=",", ndmin=2)
    if raw.size == 0:
        raise ValueError(f"{path}: no samples")
    raw_labels = raw[:, 0]
    feats = np.asfortranarray(raw[:, 1:].T)
    classes = np.unique(raw_labels)
    remap = {cls: i for i, cls in enumerate(classes)}
    labels = np.array([remap[lab] for lab in raw_labels], dtype=np.int64)
    return Dataset(features=feats, labels=labels)


def gen_three_moon(spec: ThreeMoonSpec = ThreeMoonSpec()) -> Dataset:
    """Generate the three-moon dataset.

    Class 0 lies on the upper half circle centered at (1.5, 0.4) with radius
    1.5; classes 1 and 2 lie on the lower half unit circles centered at (0, 0)
    and (3, 0).  Angles are sampled uniformly over each half circle.  The 2-D
    coordinates occupy the first two dimensions, the remaining dimensions are
    zero, and i.i.d. Gaussian noise is added to every ambient dimension.
    """
    rng = np.random.default_rng(spec.seed)
    m = spec.n_per_class
    n = 3 * m
    feats = np.zeros((spec.ambient_dim, n), order="F")

    theta = rng.uniform(0.0, np.pi, size=m)
    feats[0, :m] = UPPER_MOON_CENTER[0] + UPPER_MOON_RADIUS * np.cos(theta)
    feats[1, :m] = UPPER_MOON_CENTER[1] + UPPER_MOON_RADIUS * np.sin(theta)
    for i, center in enumerate(LOWER_MOON_CENTERS):
        theta = rng.uniform(np.pi, 2.0 * np.pi, size=m)
        sl = slice((i + 1) * m, (i + 2) * m)
        feats[0, sl] = center[0] + LOWER_MOON_RADIUS * np.cos(theta)
        feats[1, sl] = center[1] + LOWER_MOON_RADIUS * np.sin(theta)

    if spec.noise_sd > 0:
        feats += rng.normal(0.0, spec.noise_sd, size=(spec.ambient_dim, n))

    labels = np.repeat(np.arange(3, dtype=np.int64), m)
    return Dataset(features=feats, labels=labels)


def draw_label_set(ds: Dataset, l: int, seed: int) -> LabelState:
    """Sample ``l`` labeled indices uniformly without replacement.

    Draws are rejected and resampled until every class has at least one
    labeled point, so accuracy is well defined even at tiny ``l``.
    """
    if ds.labels is None:
        raise ValueError("dataset has no labels to draw from")
    c = ds.num_classes
    if l < c:
        raise ValueError(f"need l >= {c} labeled points to cover all classes, got {l}")
    if l > ds.n:
        raise ValueError(f"l={l} exceeds dataset size n={ds.n}")
    rng = np.random.default_rng(seed)
    for _ in range(_MAX_DRAW_ATTEMPTS):
        idx = rng.choice(ds.n, size=l, replace=False)
        if np.unique(ds.labels[idx]).size == c:
            return make_label_state(ds.labels, idx, num_classes=c)
    raise RuntimeError(f"could not cover all {c} classes in {_MAX_DRAW_ATTEMPTS} draws")
