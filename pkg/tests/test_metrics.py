import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthood.errors import InputError, UsageError
from depthood.metrics import aupr, auroc, depth_metrics, fpr_at_tpr, mean_depth_metrics, ood_metrics

from oracles import aupr_sweep, auroc_pairs, depth_metrics_loop, fpr_sweep


def random_instance(rng, n, ties=True):
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[-1] = 1, 0
    if ties:
        scores = rng.integers(0, max(2, n // 3), size=n) / 7.0
    else:
        scores = rng.random(n)
    return scores, labels


# -- AUROC -------------------------------------------------------------------

def test_auroc_perfect_separation():
    assert auroc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 1.0


def test_auroc_all_tied():
    assert auroc([0.3] * 6, [1, 1, 1, 0, 0, 0]) == 0.5


def test_auroc_hand_instance():
    # pairs: (0.1,0.3) (0.1,0.6) (0.4,0.6) are ID-lower; (0.4,0.3) is not
    s, y = [0.1, 0.4, 0.3, 0.6], [1, 1, 0, 0]
    assert auroc_pairs(s, y) == 0.75
    assert auroc(s, y) == 0.75


def test_auroc_single_class_rejected():
    with pytest.raises(UsageError):
        auroc([0.1, 0.2], [1, 1])


def test_bad_labels_rejected():
    with pytest.raises(InputError):
        auroc([0.1, 0.2], [1, 2])
    with pytest.raises(InputError):
        auroc([0.1], [1, 0])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 120))
def test_auroc_matches_pairwise_oracle(seed, n):
    s, y = random_instance(np.random.default_rng(seed), n)
    assert abs(auroc(s, y) - auroc_pairs(list(s), list(y))) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 80))
def test_auroc_invariant_under_increasing_transform(seed, n):
    s, y = random_instance(np.random.default_rng(seed), n)
    assert auroc(np.exp(3 * s) + 7, y) == pytest.approx(auroc(s, y), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 80))
def test_auroc_negation_complements_without_ties(seed, n):
    s, y = random_instance(np.random.default_rng(seed), n, ties=False)
    assert auroc(-s, y) == pytest.approx(1 - auroc(s, y), abs=1e-12)


# -- AUPR --------------------------------------------------------------------

@pytest.mark.parametrize("positive", ["ID", "OOD"])
def test_aupr_perfect_separation(positive):
    assert aupr([0.1, 0.2, 0.3, 0.7, 0.8], [1, 1, 1, 0, 0], positive) == 1.0


def test_aupr_all_positive():
    assert aupr([0.5, 0.1, 0.9], [1, 1, 1], "ID") == 1.0
    assert aupr([0.5, 0.1, 0.9], [0, 0, 0], "OOD") == 1.0


def test_aupr_no_positive_rejected():
    with pytest.raises(UsageError):
        aupr([0.5, 0.1], [0, 0], "ID")


def test_aupr_six_sample_instance():
    s = [0.2, 0.5, 0.5, 0.1, 0.9, 0.3]
    y = [1, 0, 1, 1, 0, 0]
    for positive in ("ID", "OOD"):
        assert abs(aupr(s, y, positive) - aupr_sweep(s, y, positive)) <= 1e-9
    # worked by hand, ID positive: thresholds .1 .2 .3 .5 .9 -> (r, p) =
    # (1/3, 1) (2/3, 1) (2/3, 2/3) (1, 3/5) (1, 1/2)
    assert aupr(s, y, "ID") == pytest.approx(1 / 3 + 1 / 3 + (1 / 3) * (3 / 5))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 120), st.sampled_from(["ID", "OOD"]))
def test_aupr_matches_sweep_oracle(seed, n, positive):
    s, y = random_instance(np.random.default_rng(seed), n)
    assert abs(aupr(s, y, positive) - aupr_sweep(list(s), list(y), positive)) <= 1e-9


def test_aupr_random_scores_near_prevalence():
    rng = np.random.default_rng(7)
    y = np.r_[np.ones(300), np.zeros(150)]
    vals = [aupr(rng.random(450), y, "ID") for _ in range(50)]
    assert abs(np.mean(vals) - 300 / 450) <= 0.05


# -- FPR95 -------------------------------------------------------------------

def test_fpr_perfect_separation():
    assert fpr_at_tpr([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0


def test_fpr_all_tied():
    assert fpr_at_tpr([0.4] * 8, [1, 1, 1, 1, 0, 0, 0, 0]) == 1.0


def test_fpr_twenty_sample_instance():
    rng = np.random.default_rng(20)
    s, y = random_instance(rng, 20)
    assert fpr_at_tpr(s, y) == fpr_sweep(list(s), list(y))


def test_fpr_target_range():
    with pytest.raises(InputError):
        fpr_at_tpr([0.1, 0.2], [1, 0], target=0.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 120), st.sampled_from([0.5, 0.9, 0.95, 1.0]))
def test_fpr_matches_sweep_oracle(seed, n, target):
    s, y = random_instance(np.random.default_rng(seed), n)
    assert fpr_at_tpr(s, y, target) == fpr_sweep(list(s), list(y), target)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 80))
def test_fpr_monotone_in_target(seed, n):
    s, y = random_instance(np.random.default_rng(seed), n)
    assert fpr_at_tpr(s, y, 1.0) >= fpr_at_tpr(s, y, 0.95)


def test_ood_metrics_keys():
    m = ood_metrics([0.1, 0.2, 0.3, 0.9], [1, 1, 0, 0])
    assert set(m) == {"auroc", "auprs", "aupre", "fpr95"}
    assert all(0 <= v <= 1 for v in m.values())


# -- depth metrics -------------------------------------------------------------

def test_depth_identity():
    d = np.random.default_rng(0).uniform(0.5, 10, size=(8, 8, 1))
    m = depth_metrics(d, d)
    assert (m.abs_rel, m.rmse, m.delta1) == (0.0, 0.0, 1.0)


def test_depth_doubled():
    d = np.random.default_rng(1).uniform(0.5, 10, size=(8, 8, 1))
    m = depth_metrics(2 * d, d)
    assert m.abs_rel == pytest.approx(1.0)
    assert m.delta1 == 0.0


def test_depth_three_pixel_instance():
    pred = np.array([1.0, 2.5, 9.0])
    gt = np.array([1.2, 2.0, 10.0])
    ar, rmse, d1 = depth_metrics_loop(pred, gt)
    m = depth_metrics(pred, gt)
    assert abs(m.abs_rel - ar) <= 1e-9
    assert abs(m.rmse - rmse) <= 1e-9
    assert abs(m.delta1 - d1) <= 1e-9
    # 2.5/2.0 = 1.25 is not < 1.25
    assert m.delta1 == pytest.approx(2 / 3)


def test_depth_mask_skips_missing_ground_truth():
    pred = np.array([1.0, 5.0, 3.0])
    gt = np.array([1.0, 0.0, 3.0])
    m = depth_metrics(pred, gt)
    assert m.rmse == 0.0


def test_depth_empty_mask_rejected():
    with pytest.raises(InputError):
        depth_metrics(np.ones(4), np.zeros(4))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_rmse_zero_iff_equal(seed):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0.1, 10, size=20)
    pred = gt.copy()
    assert depth_metrics(pred, gt).rmse == 0.0
    pred[rng.integers(20)] += 0.01
    assert depth_metrics(pred, gt).rmse > 0.0


def test_mean_depth_metrics_averages_per_image():
    gt = np.ones((2, 4, 4, 1))
    pred = np.stack([np.ones((4, 4, 1)), 2 * np.ones((4, 4, 1))])
    m = mean_depth_metrics(pred, gt)
    assert m.abs_rel == pytest.approx(0.5)
    assert m.delta1 == pytest.approx(0.5)
