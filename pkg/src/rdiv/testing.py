"""Permutation tests and the average-test-power harness.

The decision rule rejects when at most ``floor(alpha * Z)`` entries of the
permutation set ``G`` (which includes the observed statistic) are ``>=`` the
observed value.  Ties therefore count against rejection, and under
exchangeability the false-rejection rate is at most ``alpha``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from .data import DatasetPair, derive_seed, partition_indices
from .errors import InvalidArgument, ReplicaError

# counter keys for derived sub-seeds
_PERM, _FIT, _DATA, _TEST = 0, 1, 2, 3


@dataclass(frozen=True)
class PermutationTestResult:
    observed: float
    permuted: Tuple[float, ...]
    alpha: float
    reject: bool
    rank: int


@dataclass(frozen=True)
class PowerReport:
    K: int
    Z: int
    alpha: float
    power: float
    std_err: float
    per_trial: Tuple[bool, ...]
    estimator: str = ""
    scenario: str = ""
    N: int = 0
    d: int = 0


def rejection_threshold(alpha: float, z: int) -> int:
    # the small offset keeps e.g. 0.05 * 100 from flooring to 4
    return int(math.floor(alpha * z + 1e-9))


def _validate(z, alpha):
    if int(z) != z or z < 2:
        raise InvalidArgument(f"Z must be an integer >= 2, got {z}")
    if not 0 < alpha < 1:
        raise InvalidArgument(f"alpha must lie in (0, 1), got {alpha}")


def permutation_test(pair: DatasetPair, estimator: Callable, Z: int, alpha: float, seed: int) -> PermutationTestResult:
    """Compare the observed statistic against ``Z - 1`` random re-partitions.

    Replica ``z`` (1-based, ``z = 1`` is the original pair) is re-partitioned
    with ``derive_seed(seed, 0, z)`` and the estimator is called with fit
    seed ``derive_seed(seed, 1, z)``.  Estimators exposing ``pooled(pair)``
    are evaluated through that shortcut instead; the partitions are the same.
    """
    _validate(Z, alpha)
    n = pair.n
    fast = estimator.pooled(pair) if hasattr(estimator, "pooled") else None
    pooled = pair.pooled()

    def replica(z):
        try:
            if z == 1:
                return fast(np.arange(2 * n)) if fast else estimator(pair, derive_seed(seed, _FIT, z))
            perm = partition_indices(n, derive_seed(seed, _PERM, z))
            if fast:
                return fast(perm)
            rep = DatasetPair(pooled.take(perm[:n]), pooled.take(perm[n:]))
            return estimator(rep, derive_seed(seed, _FIT, z))
        except Exception as exc:
            raise ReplicaError(z, exc) from exc

    g = [float(replica(z)) for z in range(1, Z + 1)]
    observed = g[0]
    rank = sum(1 for v in g if v >= observed)
    return PermutationTestResult(observed, tuple(g), alpha, rank <= rejection_threshold(alpha, Z), rank)


def test_power(scenario, estimator, N, K, Z, alpha, master_seed, threads=1) -> PowerReport:
    """Rejection rate of :func:`permutation_test` over ``K`` freshly generated pairs.

    ``scenario(N, seed)`` returns a :class:`DatasetPair`.  Trial ``k`` draws
    its data with ``derive_seed(master_seed, 2, k)`` and tests with
    ``derive_seed(master_seed, 3, k)``, so results do not depend on ``threads``.
    """
    if int(K) != K or K < 1:
        raise InvalidArgument(f"K must be a positive integer, got {K}")
    _validate(Z, alpha)

    def trial(k):
        pair = scenario(N, derive_seed(master_seed, _DATA, k))
        return permutation_test(pair, estimator, Z, alpha, derive_seed(master_seed, _TEST, k)).reject

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_trial = tuple(pool.map(trial, range(K)))
    else:
        per_trial = tuple(trial(k) for k in range(K))
    power = float(np.mean(per_trial))
    return PowerReport(
        K=K,
        Z=Z,
        alpha=alpha,
        power=power,
        std_err=math.sqrt(power * (1 - power) / K),
        per_trial=per_trial,
        estimator=getattr(estimator, "name", ""),
        scenario=getattr(scenario, "name", ""),
        N=N,
        d=getattr(scenario, "dim", 0),
    )


test_power.__test__ = False  # keep pytest from collecting it


def type1_calibration(null_scenario, estimator, N, K, Z, alpha, master_seed, threads=1) -> PowerReport:
    """Empirical Type-I error: :func:`test_power` on a scenario whose sides share one distribution."""
    if getattr(null_scenario, "null", True) is False:
        raise InvalidArgument(f"scenario {null_scenario.name!r} is not a null scenario")
    return test_power(null_scenario, estimator, N, K, Z, alpha, master_seed, threads)


def binomial_band(alpha: float, K: int, width: float = 2.0) -> float:
    """Upper edge ``alpha + width * sqrt(alpha (1 - alpha) / K)`` of the null rejection band."""
    return alpha + width * math.sqrt(alpha * (1 - alpha) / K)
