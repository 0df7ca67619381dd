"""Dataset containers, synthetic generators, label corruption and re-partitioning.

All generators are pure functions of their arguments: the same ``seed`` always
yields the same matrix.  Sub-streams are derived with :func:`derive_seed`
rather than by reusing one generator across trials.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from .errors import InvalidArgument

Side = Literal["P", "Q"]

BLOB_SPACING = 5.0
BLOB_GRID = 3
BLOB_Q_EIGENVALUES = (1.0, 4.0)

HDGM_SHIFT = 2.0
HDGM_CORRELATION = 0.5


def derive_seed(master: int, *keys: int) -> int:
    """Derive an independent 64-bit seed from ``master`` and a counter path.

    Uses :class:`numpy.random.SeedSequence` hashing, so ``derive_seed(s, k, z)``
    streams are statistically independent for distinct ``(k, z)``.
    """
    if master < 0 or any(k < 0 for k in keys):
        raise InvalidArgument("seeds and counter keys must be non-negative")
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """``N`` samples of dimension ``d`` with optional integer labels."""

    values: np.ndarray
    labels: Optional[np.ndarray] = None
    n_classes: Optional[int] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise InvalidArgument(f"values must be a non-empty N x d matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("values must be finite")
        object.__setattr__(self, "values", _readonly(values))

        if self.labels is None:
            if self.n_classes is not None:
                raise InvalidArgument("n_classes given without labels")
            return
        labels = np.asarray(self.labels)
        if labels.shape != (values.shape[0],):
            raise InvalidArgument("labels must have one entry per row")
        if labels.size and not np.all(np.equal(np.mod(labels, 1), 0)):
            raise InvalidArgument("labels must be integers")
        labels = labels.astype(np.int64)
        n_classes = self.n_classes if self.n_classes is not None else int(labels.max()) + 1
        if labels.min() < 0 or labels.max() >= n_classes:
            raise InvalidArgument(f"labels must lie in [0, {n_classes})")
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "n_classes", int(n_classes))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def take(self, idx) -> "DataMatrix":
        idx = np.asarray(idx, dtype=np.intp)
        labels = None if self.labels is None else self.labels[idx]
        return DataMatrix(self.values[idx], labels, self.n_classes)

    def with_labels(self, labels, n_classes=None) -> "DataMatrix":
        return DataMatrix(self.values, labels, n_classes if n_classes is not None else self.n_classes)

    def same_rows(self, other: "DataMatrix") -> bool:
        """Row-for-row equality of values and labels."""
        if self.values.shape != other.values.shape:
            return False
        if not np.array_equal(self.values, other.values):
            return False
        if self.has_labels != other.has_labels:
            return False
        return not self.has_labels or np.array_equal(self.labels, other.labels)

    def __len__(self):
        return self.rows


def concat(parts: Sequence[DataMatrix]) -> DataMatrix:
    labeled = {p.has_labels for p in parts}
    if len(labeled) != 1:
        raise InvalidArgument("cannot concatenate labeled and unlabeled matrices")
    values = np.concatenate([p.values for p in parts], axis=0)
    if not parts[0].has_labels:
        return DataMatrix(values)
    labels = np.concatenate([p.labels for p in parts])
    n_classes = max(p.n_classes for p in parts)
    return DataMatrix(values, labels, n_classes)


def canonical_order(data: DataMatrix) -> np.ndarray:
    """Row indices sorting ``data`` lexicographically (first column is the primary key)."""
    keys = [data.values[:, j] for j in range(data.dim - 1, -1, -1)]
    if data.has_labels:
        keys.insert(0, data.labels)
    return np.lexsort(keys)


@dataclass(frozen=True, eq=False)
class DatasetPair:
    """Two equally sized samples; the union is derived on demand."""

    p_hat: DataMatrix
    q_hat: DataMatrix

    def __post_init__(self):
        if self.p_hat.rows != self.q_hat.rows:
            raise InvalidArgument(f"p_hat and q_hat sizes differ: {self.p_hat.rows} vs {self.q_hat.rows}")
        if self.p_hat.dim != self.q_hat.dim:
            raise InvalidArgument(f"p_hat and q_hat dimensions differ: {self.p_hat.dim} vs {self.q_hat.dim}")
        if self.p_hat.has_labels != self.q_hat.has_labels:
            raise InvalidArgument("either both or neither of p_hat, q_hat carry labels")

    @property
    def n(self) -> int:
        return self.p_hat.rows

    @property
    def dim(self) -> int:
        return self.p_hat.dim

    def pooled(self) -> DataMatrix:
        """The 2N rows of ``p_hat`` followed by ``q_hat``."""
        return concat([self.p_hat, self.q_hat])

    def swapped(self) -> "DatasetPair":
        return DatasetPair(self.q_hat, self.p_hat)

    def identical(self) -> bool:
        return self.p_hat.same_rows(self.q_hat)


@dataclass(frozen=True, eq=False)
class FlipMask:
    flipped: np.ndarray
    original_labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "flipped", _readonly(np.asarray(self.flipped, dtype=bool)))
        object.__setattr__(self, "original_labels", _readonly(np.asarray(self.original_labels, dtype=np.int64)))

    @property
    def n_flipped(self) -> int:
        return int(self.flipped.sum())


def _check_side(side: str) -> str:
    s = str(side).upper()
    if s not in ("P", "Q"):
        raise InvalidArgument(f"side must be 'P' or 'Q', got {side!r}")
    return s


def _check_count(name, n, minimum=1):
    if int(n) != n or n < minimum:
        raise InvalidArgument(f"{name} must be an integer >= {minimum}, got {n}")
    return int(n)


def _rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def blob_centers() -> np.ndarray:
    g = np.arange(BLOB_GRID) * BLOB_SPACING
    return np.array([(a, b) for a in g for b in g])


def blob_components(n: int, seed: int, side: Side):
    """Draw Blob samples and return ``(values, component_index)`` before shuffling."""
    n = _check_count("n", n)
    side = _check_side(side)
    rng = np.random.default_rng(seed)
    centers = blob_centers()
    comp = rng.integers(0, len(centers), size=n)
    z = rng.standard_normal((n, 2))
    if side == "P":
        x = centers[comp] + z
    else:
        # eigenvalues 1 and 4, axes alternately rotated by +45 and -45 degrees
        scale = np.sqrt(np.asarray(BLOB_Q_EIGENVALUES))
        roots = np.stack([_rotation(np.pi / 4 if k % 2 == 0 else -np.pi / 4) * scale for k in range(len(centers))])
        x = centers[comp] + np.einsum("nij,nj->ni", roots[comp], z)
    return x, comp


def gen_blob(n: int, seed: int, side: Side) -> DataMatrix:
    """Sample the 3x3 Gaussian grid ("Blob") benchmark.

    ``P`` components are isotropic with unit variance; ``Q`` components have
    covariance eigenvalues 1 and 4 with alternating 45 degree rotations.
    """
    x, _ = blob_components(n, seed, side)
    rng = np.random.default_rng(derive_seed(seed, 1))
    return DataMatrix(x[rng.permutation(len(x))])


def hdgm_components(n: int, d: int, seed: int, side: Side):
    """Draw HDGM samples and return ``(values, component_index)`` before shuffling."""
    n = _check_count("n", n)
    d = _check_count("d", d, minimum=2)
    if d % 2:
        raise InvalidArgument(f"d must be even, got {d}")
    side = _check_side(side)
    rng = np.random.default_rng(seed)
    comp = rng.integers(0, 2, size=n)
    x = rng.standard_normal((n, d))
    # component 1 is shifted along the first two coordinates
    x[comp == 1, :2] += HDGM_SHIFT
    if side == "Q":
        rho = HDGM_CORRELATION
        sel = comp == 1
        centered = x[sel, :2] - HDGM_SHIFT
        chol = np.linalg.cholesky(np.array([[1.0, rho], [rho, 1.0]]))
        x[sel, :2] = centered @ chol.T + HDGM_SHIFT
    return x, comp


def gen_hdgm(n: int, d: int, seed: int, side: Side) -> DataMatrix:
    """Sample the high-dimensional Gaussian mixture benchmark.

    Two equally weighted components; the second is shifted by ``HDGM_SHIFT``
    in coordinates 0 and 1.  On side ``Q`` that component's first two
    coordinates are correlated with coefficient ``HDGM_CORRELATION``.
    Coordinates 2 and above are standard normal on both sides.
    """
    x, _ = hdgm_components(n, d, seed, side)
    rng = np.random.default_rng(derive_seed(seed, 1))
    return DataMatrix(x[rng.permutation(len(x))])


def gen_gauss_classes(n: int, classes: int, d: int, separation: float, seed: int) -> DataMatrix:
    """Labeled isotropic Gaussian classes centered at ``separation * e_c``."""
    n = _check_count("n", n)
    classes = _check_count("classes", classes, minimum=2)
    d = _check_count("d", d)
    if not separation > 0:
        raise InvalidArgument(f"separation must be positive, got {separation}")
    if classes > d:
        raise InvalidArgument(f"need classes <= d for distinct axis centers, got {classes} > {d}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes)
    x = rng.standard_normal((n, d))
    x[np.arange(n), labels] += separation
    return DataMatrix(x, labels, classes)


def gen_normal(n: int, d: int, seed: int, loc: float = 0.0, scale: float = 1.0) -> DataMatrix:
    n = _check_count("n", n)
    d = _check_count("d", d)
    rng = np.random.default_rng(seed)
    return DataMatrix(loc + scale * rng.standard_normal((n, d)))


def flip_labels(data: DataMatrix, rate: float, mode: str, seed: int):
    """Corrupt exactly ``floor(rate * N)`` uniformly chosen labels.

    ``mode="symmetry"`` moves a label to one of the other ``C - 1`` classes
    uniformly at random; ``mode="pair"`` moves ``y`` to ``(y + 1) mod C``.

    Returns
    -------
    (DataMatrix, FlipMask)
    """
    if not data.has_labels:
        raise InvalidArgument("flip_labels requires labeled data")
    if not 0 <= rate < 1:
        raise InvalidArgument(f"rate must lie in [0, 1), got {rate}")
    mode = str(mode).lower()
    if mode not in ("symmetry", "pair"):
        raise InvalidArgument(f"mode must be 'symmetry' or 'pair', got {mode!r}")
    n, c = data.rows, data.n_classes
    k = int(np.floor(rate * n))
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=k, replace=False)
    labels = np.array(data.labels)
    if mode == "symmetry":
        labels[idx] = (labels[idx] + rng.integers(1, c, size=k)) % c
    else:
        labels[idx] = (labels[idx] + 1) % c
    flipped = np.zeros(n, dtype=bool)
    flipped[idx] = True
    return data.with_labels(labels), FlipMask(flipped, data.labels)


def partition_indices(n: int, seed: int) -> np.ndarray:
    """A uniformly random ordering of ``2n`` pooled rows; the first ``n`` form the new p."""
    return np.random.default_rng(seed).permutation(2 * n)


def permute_pair(pair: DatasetPair, seed: int) -> DatasetPair:
    """Uniformly re-partition the pooled ``2N`` rows into two new sets of ``N``."""
    pooled = pair.pooled()
    perm = partition_indices(pair.n, seed)
    return DatasetPair(pooled.take(perm[: pair.n]), pooled.take(perm[pair.n :]))


def _pair_from(make_p, make_q, seed):
    return DatasetPair(make_p(derive_seed(seed, 0)), make_q(derive_seed(seed, 1)))


@dataclass(frozen=True)
class Scenario:
    """A named pair generator ``(n, seed) -> DatasetPair``.

    ``null`` marks scenarios whose two sides share one distribution.
    """

    name: str
    dim: int
    null: bool = False
    params: dict = field(default_factory=dict)

    def __call__(self, n: int, seed: int) -> DatasetPair:
        p = self.params
        if self.name == "blob":
            return _pair_from(lambda s: gen_blob(n, s, "P"), lambda s: gen_blob(n, s, "Q"), seed)
        if self.name == "blob-null":
            return _pair_from(lambda s: gen_blob(n, s, "P"), lambda s: gen_blob(n, s, "P"), seed)
        if self.name == "hdgm":
            return _pair_from(
                lambda s: gen_hdgm(n, self.dim, s, "P"), lambda s: gen_hdgm(n, self.dim, s, "Q"), seed
            )
        if self.name == "hdgm-null":
            return _pair_from(
                lambda s: gen_hdgm(n, self.dim, s, "P"), lambda s: gen_hdgm(n, self.dim, s, "P"), seed
            )
        if self.name == "normal-null":
            # halves of one standard-normal sample of size 2n
            both = gen_normal(2 * n, self.dim, seed)
            return DatasetPair(both.take(np.arange(n)), both.take(np.arange(n, 2 * n)))
        if self.name == "normal-shift":
            shift = float(p.get("shift", 1.0))
            return _pair_from(
                lambda s: gen_normal(n, self.dim, s), lambda s: gen_normal(n, self.dim, s, loc=shift), seed
            )
        raise InvalidArgument(f"unknown scenario {self.name!r}")


SCENARIOS = ("blob", "blob-null", "hdgm", "hdgm-null", "normal-null", "normal-shift")


def make_scenario(name: str, d: Optional[int] = None, **params) -> Scenario:
    if name not in SCENARIOS:
        raise InvalidArgument(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    if name.startswith("blob"):
        if d not in (None, 2):
            raise InvalidArgument("blob scenarios are 2-dimensional")
        return Scenario(name, 2, name.endswith("null"), params)
    if name.startswith("hdgm"):
        d = 10 if d is None else int(d)
        if d < 2 or d % 2:
            raise InvalidArgument(f"hdgm needs an even d >= 2, got {d}")
        return Scenario(name, d, name.endswith("null"), params)
    return Scenario(name, 1 if d is None else int(d), name.endswith("null"), params)
