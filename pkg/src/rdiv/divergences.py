"""Discrepancy statistics between two datasets.

:func:`r_div` fits one minimum hypothesis on the merged data and reports the
absolute gap between its empirical risks on the two sets.  :func:`h_div`,
:func:`mmd_o` and :func:`c2st` are the comparison baselines.

The ``*Statistic`` classes adapt each estimator to the permutation harness:
they are called as ``statistic(pair, seed) -> float``.  A statistic may also
offer ``pooled(pair)``, returning a function of a re-partition permutation,
when its replicas can share work computed once on the pooled rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .data import DataMatrix, DatasetPair, canonical_order, derive_seed
from .errors import InvalidArgument
from .models import ModelSpec, empirical_risk, fit, predict_proba, resolve_bandwidth, sample_losses

ESTIMATORS = ("rdiv", "hdiv", "mmd", "c2st-s", "c2st-l")


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    risk_p: Optional[float]
    risk_q: Optional[float]
    estimator: str
    fit_seed: int


def _check_compatible(pair: DatasetPair, spec: ModelSpec):
    if spec.supervised and not pair.p_hat.has_labels:
        raise InvalidArgument(f"{spec.family} needs labeled data")
    if not spec.supervised and pair.p_hat.has_labels:
        raise InvalidArgument(f"{spec.family} is unsupervised but the data carry labels")


def canonical(data: DataMatrix, spec: ModelSpec, seed: int) -> DataMatrix:
    """Sort rows lexicographically, then shuffle with ``seed`` for seed-dependent trainers.

    The result depends only on the multiset of rows, so fits on it are
    invariant to the order in which the rows were supplied.
    """
    ordered = data.take(canonical_order(data))
    if spec.deterministic:
        return ordered
    return ordered.take(np.random.default_rng(derive_seed(seed, 7)).permutation(ordered.rows))


def fit_union(pair: DatasetPair, spec: ModelSpec, seed: int):
    """Fit the minimum hypothesis on the merged data; returns ``(hypothesis, resolved spec)``."""
    union = canonical(pair.pooled(), spec, seed)
    spec = resolve_bandwidth(spec, union)
    return fit(spec, union, seed), spec


def r_div(pair: DatasetPair, spec: ModelSpec, seed: int = 0) -> DivergenceEstimate:
    """Empirical R-divergence ``|risk_p(h_u) - risk_q(h_u)|``."""
    _check_compatible(pair, spec)
    h, _ = fit_union(pair, spec, seed)
    rp = empirical_risk(h, pair.p_hat)
    rq = empirical_risk(h, pair.q_hat)
    return DivergenceEstimate(abs(rp - rq), rp, rq, "rdiv", seed)


def h_div(pair: DatasetPair, spec: ModelSpec, phi: str = "mean", seed: int = 0) -> DivergenceEstimate:
    """H-divergence: ``phi`` of the risk drops from the mixture fit to each per-set fit.

    ``risk_p`` and ``risk_q`` report each set's risk under its own minimum
    hypothesis.  A KDE bandwidth left unset is resolved once on the merged
    data and shared by all three fits.  A negative ``phi`` is reported as 0.
    """
    if phi not in ("mean", "max"):
        raise InvalidArgument(f"phi must be 'mean' or 'max', got {phi!r}")
    _check_compatible(pair, spec)
    union = pair.pooled()
    spec = resolve_bandwidth(spec, canonical(union, spec, seed))
    if pair.identical():
        # two copies of one empirical distribution mix to that same distribution
        s = derive_seed(seed, 1)
        h = fit(spec, canonical(pair.p_hat, spec, s), s)
        e = empirical_risk(h, pair.p_hat)
        return DivergenceEstimate(0.0, e, e, "hdiv", seed)
    su, sp, sq = (derive_seed(seed, k) for k in range(3))
    h_u = fit(spec, canonical(union, spec, su), su)
    h_p = fit(spec, canonical(pair.p_hat, spec, sp), sp)
    h_q = fit(spec, canonical(pair.q_hat, spec, sq), sq)
    eu = empirical_risk(h_u, union)
    ep = empirical_risk(h_p, pair.p_hat)
    eq = empirical_risk(h_q, pair.q_hat)
    drops = (eu - ep, eu - eq)
    value = 0.5 * (drops[0] + drops[1]) if phi == "mean" else max(drops)
    return DivergenceEstimate(max(value, 0.0), ep, eq, "hdiv", seed)


def median_heuristic(values: np.ndarray) -> float:
    """Median pairwise Euclidean distance; falls back to 1 when all rows coincide."""
    if len(values) < 2:
        return 1.0
    med = float(np.median(pdist(values)))
    return med if med > 0 else 1.0


def _mmd_from_kernel(k: np.ndarray, ip: np.ndarray, iq: np.ndarray) -> float:
    n, m = len(ip), len(iq)
    kxx = k[np.ix_(ip, ip)]
    kyy = k[np.ix_(iq, iq)]
    kxy = k[np.ix_(ip, iq)]
    xx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    yy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    return float(xx + yy - 2.0 * kxy.mean())


def gaussian_kernel(a: np.ndarray, b: np.ndarray, bandwidth: float) -> np.ndarray:
    """``exp(-||x - y||^2 / bandwidth^2)``."""
    return np.exp(-cdist(a, b, "sqeuclidean") / bandwidth**2)


def mmd_o(pair: DatasetPair, bandwidth: Optional[float] = None) -> float:
    """Unbiased MMD^2 U-statistic with a fixed Gaussian kernel.

    The bandwidth defaults to the median pairwise distance over the pooled
    rows.  The statistic can be negative.
    """
    if pair.n < 2:
        raise InvalidArgument("mmd_o needs at least 2 samples per set")
    if bandwidth is not None and not bandwidth > 0:
        raise InvalidArgument("bandwidth must be positive")
    z = pair.pooled().values
    bw = median_heuristic(z) if bandwidth is None else bandwidth
    k = gaussian_kernel(z, z, bw)
    idx = np.arange(2 * pair.n)
    return _mmd_from_kernel(k, idx[: pair.n], idx[pair.n :])


def c2st(pair: DatasetPair, spec: ModelSpec, variant: str = "l", seed: int = 0) -> float:
    """Classifier two-sample statistic.

    Samples of ``p_hat`` are labeled 0 and of ``q_hat`` 1; each set is split
    in half, a classifier is trained on the two training halves and scored
    on the held-out halves.  Variant ``"s"`` returns the absolute gap between
    the mean predicted probability of class 1 on the two test halves,
    variant ``"l"`` the held-out accuracy.
    """
    variant = variant.lower()
    if variant not in ("s", "l"):
        raise InvalidArgument(f"variant must be 's' or 'l', got {variant!r}")
    if spec.family != "mlp_classifier":
        raise InvalidArgument("c2st needs an mlp_classifier spec")
    n = pair.n
    if n < 4:
        raise InvalidArgument("c2st needs at least 4 samples per set")
    rng = np.random.default_rng(derive_seed(seed, 0))
    perm_p, perm_q = rng.permutation(n), rng.permutation(n)
    half = n // 2
    xp, xq = pair.p_hat.values, pair.q_hat.values
    x_tr = np.concatenate([xp[perm_p[:half]], xq[perm_q[:half]]])
    y_tr = np.concatenate([np.zeros(half, dtype=int), np.ones(half, dtype=int)])
    h = fit(spec, DataMatrix(x_tr, y_tr, 2), derive_seed(seed, 1))
    prob_p = predict_proba(h, xp[perm_p[half:]])[:, 1]
    prob_q = predict_proba(h, xq[perm_q[half:]])[:, 1]
    if variant == "s":
        return float(abs(prob_p.mean() - prob_q.mean()))
    correct = np.count_nonzero(prob_p <= 0.5) + np.count_nonzero(prob_q > 0.5)
    return correct / (len(prob_p) + len(prob_q))


# ---------------------------------------------------------------- harness adapters


class RDivStatistic:
    name = "rdiv"

    def __init__(self, spec: ModelSpec):
        self.spec = spec

    def __call__(self, pair: DatasetPair, seed: int) -> float:
        return r_div(pair, self.spec, seed).value

    def pooled(self, pair: DatasetPair) -> Optional[Callable[[np.ndarray], float]]:
        # a seed-free fit on the merged rows is shared by every re-partition
        if not self.spec.deterministic:
            return None
        _check_compatible(pair, self.spec)
        h, _ = fit_union(pair, self.spec, 0)
        losses = sample_losses(h, pair.pooled())
        n = pair.n

        def stat(perm):
            return abs(float(np.mean(losses[perm[:n]])) - float(np.mean(losses[perm[n:]])))

        return stat


class HDivStatistic:
    name = "hdiv"

    def __init__(self, spec: ModelSpec, phi: str = "mean"):
        self.spec, self.phi = spec, phi

    def __call__(self, pair, seed):
        return h_div(pair, self.spec, self.phi, seed).value


class MmdStatistic:
    name = "mmd"

    def __init__(self, bandwidth: Optional[float] = None):
        self.bandwidth = bandwidth

    def __call__(self, pair, seed):
        return mmd_o(pair, self.bandwidth)

    def pooled(self, pair):
        if pair.n < 2:
            raise InvalidArgument("mmd_o needs at least 2 samples per set")
        z = pair.pooled().values
        bw = median_heuristic(z) if self.bandwidth is None else self.bandwidth
        k = gaussian_kernel(z, z, bw)
        n = pair.n
        return lambda perm: _mmd_from_kernel(k, perm[:n], perm[n:])


class C2stStatistic:
    def __init__(self, spec: ModelSpec, variant: str = "l"):
        self.spec, self.variant = spec, variant.lower()
        self.name = f"c2st-{self.variant}"

    def __call__(self, pair, seed):
        return c2st(pair, self.spec, self.variant, seed)


def make_statistic(estimator: str, spec: Optional[ModelSpec] = None, phi: str = "mean", bandwidth=None):
    if estimator == "rdiv":
        return RDivStatistic(_need_spec(spec, estimator))
    if estimator == "hdiv":
        return HDivStatistic(_need_spec(spec, estimator), phi)
    if estimator == "mmd":
        return MmdStatistic(bandwidth)
    if estimator in ("c2st-s", "c2st-l"):
        return C2stStatistic(_need_spec(spec, estimator), estimator[-1])
    raise InvalidArgument(f"unknown estimator {estimator!r}; choose from {', '.join(ESTIMATORS)}")


def _need_spec(spec, estimator):
    if spec is None:
        raise InvalidArgument(f"estimator {estimator} needs a model spec")
    return spec


def estimate(pair: DatasetPair, estimator: str, spec=None, seed: int = 0, phi="mean", bandwidth=None) -> DivergenceEstimate:
    """Run any estimator and wrap the result as a :class:`DivergenceEstimate`."""
    if estimator == "rdiv":
        return r_div(pair, _need_spec(spec, estimator), seed)
    if estimator == "hdiv":
        return h_div(pair, _need_spec(spec, estimator), phi, seed)
    if estimator == "mmd":
        return DivergenceEstimate(mmd_o(pair, bandwidth), None, None, "mmd", seed)
    if estimator in ("c2st-s", "c2st-l"):
        return DivergenceEstimate(c2st(pair, _need_spec(spec, estimator), estimator[-1], seed), None, None, estimator, seed)
    raise InvalidArgument(f"unknown estimator {estimator!r}; choose from {', '.join(ESTIMATORS)}")
