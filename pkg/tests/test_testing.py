import numpy as np
import pytest

from rdiv.data import DatasetPair, gen_normal, make_scenario
from rdiv.divergences import make_statistic
from rdiv.errors import InvalidArgument, ReplicaError
from rdiv.models import ModelSpec
from rdiv.testing import (
    binomial_band,
    permutation_test,
    rejection_threshold,
    test_power as power_of,
    type1_calibration,
)


def _pair(seed=0, shift=0.0, n=20):
    return DatasetPair(gen_normal(n, 1, seed), gen_normal(n, 1, seed + 1000, loc=shift))


class Constant:
    name = "constant"

    def __call__(self, pair, seed):
        return 1.0


class MeanGap:
    """Oracle statistic: absolute gap between the set means."""

    name = "meangap"

    def __call__(self, pair, seed):
        return abs(pair.p_hat.values.mean() - pair.q_hat.values.mean())


class FailsOnThird:
    name = "flaky"

    def __init__(self):
        self.calls = 0

    def __call__(self, pair, seed):
        self.calls += 1
        if self.calls == 3:
            raise ValueError("boom")
        return 0.0


@pytest.mark.parametrize("alpha,z,expected", [(0.05, 100, 5), (0.05, 20, 1), (0.1, 30, 3), (0.01, 50, 0)])
def test_rejection_threshold(alpha, z, expected):
    assert rejection_threshold(alpha, z) == expected


def test_constant_statistic_never_rejects():
    res = permutation_test(_pair(), Constant(), 100, 0.05, 0)
    assert res.rank == 100
    assert not res.reject
    assert len(res.permuted) == 100 and res.permuted[0] == res.observed


def test_oracle_rejects_separated_sets():
    res = permutation_test(_pair(shift=10.0), MeanGap(), 100, 0.05, 1)
    assert res.reject and res.rank == 1


def test_oracle_power_one():
    scenario = make_scenario("normal-shift", shift=5.0)
    report = power_of(scenario, MeanGap(), 30, 10, 50, 0.05, 3)
    assert report.power == 1.0 and report.std_err == 0.0


def test_single_trial():
    report = power_of(make_scenario("blob"), MeanGap(), 20, 1, 20, 0.05, 0)
    assert report.K == 1 and report.power in (0.0, 1.0)


def test_null_calibration_within_band():
    stat = make_statistic("rdiv", ModelSpec("gaussian"))
    report = type1_calibration(make_scenario("normal-null"), stat, 50, 100, 50, 0.05, 7)
    assert report.power <= binomial_band(0.05, 100)


def test_calibration_rejects_alternative():
    with pytest.raises(InvalidArgument):
        type1_calibration(make_scenario("blob"), MeanGap(), 10, 2, 10, 0.05, 0)


def test_reproducible_and_thread_independent():
    stat = make_statistic("mmd")
    scenario = make_scenario("normal-shift", shift=0.4)
    a = power_of(scenario, stat, 30, 12, 30, 0.05, 5)
    b = power_of(scenario, stat, 30, 12, 30, 0.05, 5)
    c = power_of(scenario, stat, 30, 12, 30, 0.05, 5, threads=4)
    assert a == b == c


def test_fast_path_matches_replica_refits():
    # hiding pooled() forces one refit per replica
    class Slow:
        name = "rdiv"

        def __init__(self, inner):
            self.inner = inner

        def __call__(self, pair, seed):
            return self.inner(pair, seed)

    fast = make_statistic("rdiv", ModelSpec("kde"))
    pair = _pair(3, 0.5, n=15)
    a = permutation_test(pair, fast, 40, 0.05, 9)
    b = permutation_test(pair, Slow(fast), 40, 0.05, 9)
    np.testing.assert_allclose(a.permuted, b.permuted, atol=1e-12)
    assert a.rank == b.rank


def test_replica_error_names_replica():
    with pytest.raises(ReplicaError) as info:
        permutation_test(_pair(), FailsOnThird(), 10, 0.05, 0)
    assert info.value.replica == 3
    assert isinstance(info.value.cause, ValueError)


@pytest.mark.parametrize("kwargs", [dict(Z=1), dict(alpha=0.0), dict(alpha=1.5)])
def test_invalid_arguments(kwargs):
    args = dict(Z=10, alpha=0.05)
    args.update(kwargs)
    with pytest.raises(InvalidArgument):
        permutation_test(_pair(), Constant(), args["Z"], args["alpha"], 0)


def test_bad_trial_count():
    with pytest.raises(InvalidArgument):
        power_of(make_scenario("blob"), Constant(), 10, 0, 10, 0.05, 0)


def test_binomial_band():
    assert binomial_band(0.05, 200) == pytest.approx(0.05 + 2 * np.sqrt(0.05 * 0.95 / 200))
