import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdiv.data import DataMatrix, DatasetPair, gen_gauss_classes, gen_normal, partition_indices
from rdiv.divergences import (
    MmdStatistic,
    RDivStatistic,
    c2st,
    estimate,
    h_div,
    make_statistic,
    median_heuristic,
    mmd_o,
    r_div,
)
from rdiv.errors import InvalidArgument
from rdiv.models import ModelSpec


def _pair(p, q):
    col = lambda v: DataMatrix(np.array(v, dtype=float).reshape(-1, 1))
    return DatasetPair(col(p), col(q))


def _mmd_oracle(x, y, bw):
    # plain double loops, no shared code with the estimator
    def k(a, b):
        return math.exp(-sum((ai - bi) ** 2 for ai, bi in zip(a, b)) / bw**2)

    n, m = len(x), len(y)
    xx = sum(k(x[i], x[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    yy = sum(k(y[i], y[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    xy = sum(k(x[i], y[j]) for i in range(n) for j in range(m)) / (n * m)
    return xx + yy - 2 * xy


def _median_oracle(rows):
    d = [math.dist(a, b) for a, b in itertools.combinations(rows, 2)]
    return float(np.median(d))


class TestHandCases:
    def test_mean_single_points(self):
        pair = _pair([0], [2])
        assert r_div(pair, ModelSpec("mean")).value == 0.0
        assert h_div(pair, ModelSpec("mean")).value == pytest.approx(1.0, abs=1e-12)

    def test_mean_unequal_spread(self):
        est = r_div(_pair([0, 0], [1, 3]), ModelSpec("mean"))
        assert est.value == pytest.approx(1.0, abs=1e-12)
        assert (est.risk_p, est.risk_q) == pytest.approx((1.0, 2.0))

    def test_hdiv_max_phi(self):
        # union risk 1.5, own-fit risks 0 and 1
        est = h_div(_pair([0, 0], [1, 3]), ModelSpec("mean"), "max")
        assert est.value == pytest.approx(1.5, abs=1e-12)

    def test_unknown_phi(self):
        with pytest.raises(InvalidArgument):
            h_div(_pair([0], [1]), ModelSpec("mean"), "median")


SPECS = [
    (ModelSpec("mean"), False),
    (ModelSpec("gaussian"), False),
    (ModelSpec("kde"), False),
    (ModelSpec("mlp_autoencoder", hidden=(4,), epochs=2), False),
    (ModelSpec("mlp_classifier", hidden=(4,), epochs=2), True),
]


@pytest.mark.parametrize("spec,labeled", SPECS, ids=lambda v: getattr(v, "family", ""))
def test_zero_on_identical_pairs(spec, labeled):
    data = gen_gauss_classes(40, 2, 2, 2.0, 3) if labeled else gen_normal(40, 2, 3)
    pair = DatasetPair(data, data)
    assert r_div(pair, spec, 5).value == 0.0
    assert h_div(pair, spec, "mean", 5).value == 0.0
    assert h_div(pair, spec, "max", 5).value == 0.0


@pytest.mark.parametrize("spec,labeled", SPECS, ids=lambda v: getattr(v, "family", ""))
def test_rdiv_symmetric(spec, labeled):
    if labeled:
        p, q = gen_gauss_classes(30, 2, 2, 2.0, 1), gen_gauss_classes(30, 2, 2, 1.0, 2)
    else:
        p, q = gen_normal(30, 2, 1), gen_normal(30, 2, 2, loc=0.5)
    pair = DatasetPair(p, q)
    a, b = r_div(pair, spec, 9), r_div(pair.swapped(), spec, 9)
    assert a.value == b.value
    assert (a.risk_p, a.risk_q) == (b.risk_q, b.risk_p)


def test_rdiv_invariant_to_row_order():
    p, q = gen_normal(25, 2, 1), gen_normal(25, 2, 2, loc=1.0)
    spec = ModelSpec("mlp_autoencoder", hidden=(4,), epochs=3)
    rev = lambda m: m.take(np.arange(m.rows)[::-1])
    assert r_div(DatasetPair(p, q), spec, 4).value == r_div(DatasetPair(rev(p), rev(q)), spec, 4).value


def test_label_mismatch_rejected():
    pair = DatasetPair(gen_normal(4, 2, 0), gen_normal(4, 2, 1))
    with pytest.raises(InvalidArgument):
        r_div(pair, ModelSpec("mlp_classifier"))


class TestMmd:
    @pytest.mark.parametrize("n", [2, 3, 4, 5])
    @pytest.mark.parametrize("d", [1, 3])
    def test_matches_oracle(self, n, d):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            x, y = rng.normal(size=(n, d)), rng.normal(1, 2, size=(n, d))
            pair = DatasetPair(DataMatrix(x), DataMatrix(y))
            bw = _median_oracle(np.vstack([x, y]).tolist())
            assert mmd_o(pair) == pytest.approx(_mmd_oracle(x.tolist(), y.tolist(), bw), abs=1e-12)
            assert mmd_o(pair, 0.7) == pytest.approx(_mmd_oracle(x.tolist(), y.tolist(), 0.7), abs=1e-12)

    def test_median_heuristic(self):
        rows = np.random.default_rng(0).normal(size=(9, 2))
        assert median_heuristic(rows) == pytest.approx(_median_oracle(rows.tolist()), abs=1e-15)

    def test_identical_sets_non_positive(self):
        x = gen_normal(20, 2, 0)
        assert mmd_o(DatasetPair(x, x)) <= 0.0

    def test_separation_ladder(self):
        vals = [mmd_o(DatasetPair(gen_normal(200, 2, 0), gen_normal(200, 2, 1, loc=s)), 1.0) for s in (0.0, 0.5, 1, 2)]
        assert vals == sorted(vals)

    def test_too_small(self):
        with pytest.raises(InvalidArgument):
            mmd_o(_pair([0], [1]))


class TestC2st:
    SPEC = ModelSpec("mlp_classifier", hidden=(16,), epochs=100)

    def test_null_accuracy_near_half(self):
        accs = [c2st(DatasetPair(gen_normal(100, 2, 2 * s), gen_normal(100, 2, 2 * s + 1)), self.SPEC, "l", s) for s in range(20)]
        assert abs(np.mean(accs) - 0.5) <= 0.15

    def test_separated_accuracy_high(self):
        pair = DatasetPair(gen_normal(200, 2, 0), gen_normal(200, 2, 1, loc=6.0))
        assert c2st(pair, self.SPEC, "l", 0) >= 0.95

    def test_s_variant_bounds(self):
        pair = DatasetPair(gen_normal(40, 2, 0), gen_normal(40, 2, 1, loc=1.0))
        assert 0.0 <= c2st(pair, self.SPEC, "s", 0) <= 1.0

    def test_bad_variant(self):
        pair = DatasetPair(gen_normal(8, 1, 0), gen_normal(8, 1, 1))
        with pytest.raises(InvalidArgument):
            c2st(pair, self.SPEC, "x")


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), family=st.sampled_from(["mean", "gaussian", "kde"]))
def test_rdiv_pooled_path_matches_direct(seed, family):
    pair = DatasetPair(gen_normal(15, 2, seed), gen_normal(15, 2, seed + 1, loc=0.3))
    stat = RDivStatistic(ModelSpec(family))
    fast = stat.pooled(pair)
    pooled = pair.pooled()
    for z in range(3):
        perm = partition_indices(pair.n, seed + z)
        rep = DatasetPair(pooled.take(perm[:15]), pooled.take(perm[15:]))
        assert fast(perm) == pytest.approx(stat(rep, 0), abs=1e-12)


def test_mmd_pooled_path_matches_direct():
    pair = DatasetPair(gen_normal(12, 3, 0), gen_normal(12, 3, 1, loc=0.5))
    stat, pooled = MmdStatistic(), pair.pooled()
    fast = stat.pooled(pair)
    for s in range(5):
        perm = partition_indices(12, s)
        # the median of pooled distances is partition-invariant
        rep = DatasetPair(pooled.take(perm[:12]), pooled.take(perm[12:]))
        assert fast(perm) == pytest.approx(stat(rep, 0), abs=1e-12)


def test_estimate_dispatch():
    pair = _pair([0, 0], [1, 3])
    assert estimate(pair, "rdiv", ModelSpec("mean")).value == pytest.approx(1.0)
    assert estimate(pair, "mmd").risk_p is None
    with pytest.raises(InvalidArgument):
        make_statistic("energy")
    with pytest.raises(InvalidArgument):
        make_statistic("rdiv")
