import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdiv.data import FlipMask
from rdiv.errors import InvalidArgument
from rdiv.models import ModelSpec, accuracy
from rdiv.noisy import (
    CaseStudyConfig,
    NoisySplit,
    batch_splits,
    detection_metrics,
    discrepancy_from_losses,
    fixed_batches,
    make_case_data,
    pretrain,
    retrain_robust,
    run_case_study,
    split_losses,
    sweep_gammas,
)

TINY = CaseStudyConfig(
    n_train=200,
    n_test=200,
    classes=3,
    dim=3,
    separation=4.0,
    gammas=(0.2, 0.4),
    spec=ModelSpec("mlp_classifier", hidden=(16,), epochs=5, batch=32),
)


class TestSplit:
    LOSSES = np.array([0.1, 0.2, 0.9, 1.5])

    def test_half(self):
        s = split_losses(self.LOSSES, 0.5)
        assert s.clean_idx.tolist() == [0, 1] and s.noisy_idx.tolist() == [2, 3]

    def test_quarter(self):
        assert split_losses(self.LOSSES, 0.25).noisy_idx.tolist() == [3]

    def test_ties_favour_lower_index_as_clean(self):
        s = split_losses(np.ones(5), 0.4)
        assert s.clean_idx.tolist() == [0, 1, 2] and s.noisy_idx.tolist() == [3, 4]

    @pytest.mark.parametrize("gamma", [0.0, 1.0, -0.1])
    def test_gamma_range(self, gamma):
        with pytest.raises(InvalidArgument):
            split_losses(self.LOSSES, gamma)

    @settings(max_examples=60, deadline=None)
    @given(
        losses=st.lists(st.floats(0, 20), min_size=1, max_size=200),
        gamma=st.floats(0.01, 0.99),
    )
    def test_partition_exact(self, losses, gamma):
        s = split_losses(np.array(losses), gamma)
        b = len(losses)
        assert len(s.noisy_idx) == int(np.floor(gamma * b))
        assert sorted(np.concatenate([s.clean_idx, s.noisy_idx]).tolist()) == list(range(b))
        if len(s.noisy_idx) and len(s.clean_idx):
            assert np.max(np.array(losses)[s.clean_idx]) <= np.min(np.array(losses)[s.noisy_idx])


class TestDetectionMetrics:
    def _mask(self, flipped):
        flipped = np.array(flipped, dtype=bool)
        return FlipMask(flipped, np.zeros(len(flipped), dtype=int))

    def test_perfect(self):
        m = detection_metrics(NoisySplit(np.array([0, 1]), np.array([2, 3]), 0.5), self._mask([0, 0, 1, 1]))
        assert (m.precision_clean, m.recall_clean, m.precision_noisy, m.recall_noisy) == (1.0, 1.0, 1.0, 1.0)

    def test_mixed(self):
        m = detection_metrics(NoisySplit(np.array([0, 2]), np.array([1, 3]), 0.5), self._mask([0, 0, 1, 1]))
        assert m.precision_noisy == 0.5 and m.recall_noisy == 0.5

    def test_empty_denominators_are_zero(self):
        m = detection_metrics(NoisySplit(np.array([0, 1]), np.array([], dtype=int), 0.1), self._mask([0, 0]))
        assert m.precision_noisy == 0.0 and m.recall_noisy == 0.0 and m.recall_clean == 1.0

    def test_random_split_precision_is_noise_rate(self):
        rng = np.random.default_rng(0)
        flipped = np.zeros(10_000, dtype=bool)
        flipped[rng.choice(10_000, 2000, replace=False)] = True
        order = rng.permutation(10_000)
        m = detection_metrics(NoisySplit(np.sort(order[2000:]), np.sort(order[:2000]), 0.2), self._mask(flipped))
        assert m.precision_noisy == pytest.approx(0.2, abs=0.03)

    def test_incomplete_split_rejected(self):
        with pytest.raises(InvalidArgument):
            detection_metrics(NoisySplit(np.array([0]), np.array([1]), 0.5), self._mask([0, 0, 1]))


class TestDiscrepancy:
    def test_two_points(self):
        assert discrepancy_from_losses(np.array([0.0, 4.0]), 0.5) == 4.0

    def test_equal_losses(self):
        assert discrepancy_from_losses(np.full(10, 0.7), 0.3) == 0.0


def test_fixed_batches_cover_rows():
    batches = fixed_batches(100, 32, 3)
    assert [len(b) for b in batches] == [32, 32, 32, 4]
    assert sorted(np.concatenate(batches).tolist()) == list(range(100))


def test_batch_splits_sizes():
    corrupted, _, _ = make_case_data(TINY)
    h = pretrain(corrupted, TINY.spec, 0)
    batches, splits, agg = batch_splits(corrupted, h, 0.25, 32, 1)
    for idx, (c, n) in zip(batches, splits):
        assert len(n) == int(np.floor(0.25 * len(idx)))
        assert sorted(np.concatenate([c, n]).tolist()) == sorted(idx.tolist())
    assert len(agg.clean_idx) + len(agg.noisy_idx) == corrupted.rows


def test_pretrain_deterministic():
    corrupted, _, _ = make_case_data(TINY)
    a, b = pretrain(corrupted, TINY.spec, 4), pretrain(corrupted, TINY.spec, 4)
    for (wa, _), (wb, _) in zip(a.params, b.params):
        np.testing.assert_array_equal(wa, wb)


def test_pretrain_clean_accuracy():
    cfg = dataclasses.replace(TINY, noise_rate=0.0, n_train=600, spec=dataclasses.replace(TINY.spec, epochs=30))
    corrupted, _, test = make_case_data(cfg)
    assert accuracy(pretrain(corrupted, cfg.spec, 0), test) >= 0.95


def test_retrain_rejects_other_families():
    corrupted, _, _ = make_case_data(TINY)
    h = pretrain(corrupted, TINY.spec, 0)
    with pytest.raises(InvalidArgument):
        retrain_robust(corrupted, h, 0.2, ModelSpec("mlp_autoencoder"), 0)


def test_case_study_reports():
    cfg = dataclasses.replace(TINY, gammas=sweep_gammas())
    result = run_case_study(cfg)
    assert [r.gamma for r in result.reports] == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]
    for r in result.reports:
        for v in (r.pretrained_acc, r.retrained_acc, r.precision_clean, r.recall_clean, r.precision_noisy, r.recall_noisy):
            assert 0.0 <= v <= 1.0
        assert r.discrepancy >= 0.0
    recall = [r.recall_noisy for r in result.reports]
    assert recall == sorted(recall)
    phases = {c[0] for c in result.curves}
    assert phases == {"pretrain", "retrain"}


def test_case_study_deterministic():
    a, b = run_case_study(TINY), run_case_study(TINY)
    assert [r.row() for r in a.reports] == [r.row() for r in b.reports]


# ---------------------------------------------------------------- default-configuration examples, 5 seeds


@pytest.fixture(scope="module")
def seed_runs():
    """Default case study at noise 0.2 and noise 0 for seeds 0..4, gammas 0.1 and 0.4."""
    out = {}
    for noise in (0.2, 0.0):
        cfg = dataclasses.replace(CaseStudyConfig(), noise_rate=noise, gammas=(0.1, 0.4))
        out[noise] = [run_case_study(dataclasses.replace(cfg, seed=s)).reports for s in range(5)]
    return out


def _mean(runs, idx, field):
    return float(np.mean([getattr(r[idx], field) for r in runs]))


def test_default_clean_pretrain_accuracy(seed_runs):
    assert _mean(seed_runs[0.0], 0, "pretrained_acc") >= 0.95


def test_default_noise_lowers_pretrained_accuracy(seed_runs):
    gap = _mean(seed_runs[0.0], 0, "pretrained_acc") - _mean(seed_runs[0.2], 0, "pretrained_acc")
    assert gap >= 0.01


def test_default_retrain_at_gamma_04_not_worse(seed_runs):
    runs = seed_runs[0.2]
    assert _mean(runs, 1, "retrained_acc") >= _mean(runs, 1, "pretrained_acc")


def test_default_clean_data_small_gamma_is_harmless(seed_runs):
    runs = seed_runs[0.0]
    assert abs(_mean(runs, 0, "retrained_acc") - _mean(runs, 0, "pretrained_acc")) <= 0.05
