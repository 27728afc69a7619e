import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog
from scipy.stats import norm

from dadkit.data import ImageDataset
from dadkit.diagnostics import (
    ChartRow,
    EmpiricalDistribution,
    GaussianStats,
    GroundMetric,
    LossKind,
    RiskModel,
    bn_stats,
    chart_data,
    empirical_risk,
    expected_risk,
    generalization_term,
    ground_cost_matrix,
    lemma31_check,
    lemma31_w_slack,
    lemma33_check,
    lemma34_check,
    linear_classifier,
    mixture,
    mixture_augmentation,
    read_chart_csv,
    tv_distance,
    wasserstein_gaussian,
    wasserstein_lp,
    worst_case_risk,
    write_chart_csv,
)
from dadkit.diagnostics.instances import (
    lemma31_instance,
    lemma33_instance,
    lemma34_instance,
    random_distribution,
    random_risk_model,
    run_instances,
)
from dadkit.errors import UnsupportedModelError


def dist(seed: int, n: int = 5) -> EmpiricalDistribution:
    return random_distribution(np.random.default_rng(seed), n)


seeds = st.integers(0, 2**32 - 1)


# ---- distributions ----


def test_distribution_validation():
    with pytest.raises(ValueError, match="sum"):
        EmpiricalDistribution([[0.0], [1.0]], [0, 1], [0.5, 0.6])
    with pytest.raises(ValueError, match="non-negative"):
        EmpiricalDistribution([[0.0], [1.0]], [0, 1], [1.5, -0.5])
    with pytest.raises(ValueError, match="mismatch"):
        EmpiricalDistribution([[0.0]], [0, 1], [1.0])
    with pytest.raises(ValueError, match="finite"):
        EmpiricalDistribution([[np.inf]], [0], [1.0])


def test_distribution_file(tmp_path):
    p = dist(0)
    loaded = EmpiricalDistribution.load(p.save(tmp_path / "p.txt"))
    assert loaded.same_as(p, tol=0.0)
    np.testing.assert_array_equal(loaded.features, p.features)

    (tmp_path / "bad.txt").write_text("0.5 1\n")
    with pytest.raises(ValueError, match="bad.txt:1"):
        EmpiricalDistribution.load(tmp_path / "bad.txt")


def test_duplicate_points_merge():
    p = EmpiricalDistribution([[0.0], [0.0], [1.0]], [0, 0, 1], [0.25, 0.25, 0.5])
    merged = p.normalized()
    assert len(merged) == 2
    assert merged.same_as(p)


def test_mixture():
    a, b = EmpiricalDistribution.point_mass([0.0], 0), EmpiricalDistribution.point_mass([1.0], 1)
    m = mixture([a, b], [0.25, 0.75])
    assert m.masses() == {((0.0,), 0): 0.25, ((1.0,), 1): 0.75}
    with pytest.raises(ValueError):
        mixture([a, b], [0.5, 0.6])
    with pytest.raises(ValueError):
        mixture([])


# ---- total variation ----


def test_tv_examples():
    p = dist(1)
    assert tv_distance(p, p) == 0.0
    a, b = EmpiricalDistribution.point_mass([0.0, 0.0], 0), EmpiricalDistribution.point_mass([0.0, 0.0], 1)
    assert tv_distance(a, b) == 2.0


@given(a=seeds, b=seeds, c=seeds)
def test_tv_is_a_metric(a, b, c):
    rng = np.random.default_rng(a)
    p = random_distribution(rng, 4)
    # Shared support so the distances are not all 2.
    q = EmpiricalDistribution(p.features, p.labels, np.random.default_rng(b).dirichlet(np.ones(4)))
    r = EmpiricalDistribution(p.features, p.labels, np.random.default_rng(c).dirichlet(np.ones(4)))
    assert tv_distance(p, q) == pytest.approx(tv_distance(q, p))
    assert 0 <= tv_distance(p, q) <= 2 + 1e-12
    assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-12


# ---- Wasserstein ----


def lp_oracle(p, q, metric) -> float:
    cost = ground_cost_matrix(p, q, metric)
    n, m = cost.shape
    rows = np.zeros((n, n * m))
    cols = np.zeros((m, n * m))
    for i in range(n):
        rows[i, i * m : (i + 1) * m] = 1
    for j in range(m):
        cols[j, j::m] = 1
    result = linprog(
        cost.ravel(),
        A_eq=np.vstack([rows, cols]),
        b_eq=np.concatenate([p.probs, q.probs]),
        bounds=(0, None),
        method="highs",
    )
    assert result.success
    return float(result.fun)


@settings(deadline=None, max_examples=25)
@given(a=seeds, b=seeds, n=st.integers(1, 6), m=st.integers(1, 6))
def test_wasserstein_matches_linprog(a, b, n, m):
    p, q = dist(a, n), dist(b, m)
    metric = GroundMetric(label_scale=1.5)
    assert wasserstein_lp(p, q, metric) == pytest.approx(lp_oracle(p, q, metric), abs=1e-7)


@settings(deadline=None, max_examples=25)
@given(a=seeds, b=seeds, c=seeds)
def test_wasserstein_is_a_metric(a, b, c):
    p, q, r = dist(a), dist(b), dist(c)
    metric = GroundMetric.for_supports([p, q, r])
    assert wasserstein_lp(p, p, metric) == pytest.approx(0.0, abs=1e-9)
    assert wasserstein_lp(p, q, metric) == pytest.approx(wasserstein_lp(q, p, metric), abs=1e-9)
    assert wasserstein_lp(p, r, metric) <= wasserstein_lp(p, q, metric) + wasserstein_lp(q, r, metric) + 1e-9


def test_point_masses_cost_their_ground_distance():
    a = EmpiricalDistribution.point_mass([0.0, 0.0], 0)
    b = EmpiricalDistribution.point_mass([3.0, 4.0], 1)
    assert wasserstein_lp(a, b, GroundMetric(label_scale=2.0)) == pytest.approx(7.0)
    # Default scale is the feature diameter of the two supports.
    assert wasserstein_lp(a, b) == pytest.approx(10.0)


def test_wasserstein_errors():
    a = EmpiricalDistribution.point_mass([0.0], 0)
    with pytest.raises(ValueError, match="dimensions"):
        wasserstein_lp(a, EmpiricalDistribution.point_mass([0.0, 1.0], 0))
    with pytest.raises(ValueError, match="non-empty"):
        wasserstein_lp(a, EmpiricalDistribution(np.zeros((0, 1)), [], []))
    with pytest.raises(ValueError, match="order"):
        wasserstein_lp(a, a, order=0)


def gaussian(mean: float, std: float) -> GaussianStats:
    return GaussianStats(layers=((np.array([mean]), np.array([std**2])),), batch_count=1)


def test_gaussian_w2_agrees_with_quantile_transport():
    points = norm.ppf((np.arange(200) + 0.5) / 200)
    labels = np.zeros(200, dtype=int)
    for mean, std in [(0.5, 2.0), (-1.0, 0.5), (0.0, 1.0), (2.0, 1.0)]:
        p = EmpiricalDistribution.uniform(points[:, None], labels)
        q = EmpiricalDistribution.uniform((mean + std * points)[:, None], labels)
        exact = wasserstein_gaussian(gaussian(0.0, 1.0), gaussian(mean, std))
        assert exact == pytest.approx(math.hypot(mean, std - 1.0))
        assert wasserstein_lp(p, q, order=2) == pytest.approx(exact, rel=0.02, abs=1e-6)


def test_gaussian_w2_averages_layers_and_checks_layout():
    a = GaussianStats(layers=((np.zeros(2), np.ones(2)), (np.zeros(1), np.ones(1))), batch_count=1)
    b = GaussianStats(layers=((np.array([3.0, 4.0]), np.ones(2)), (np.zeros(1), np.ones(1))), batch_count=1)
    assert wasserstein_gaussian(a, b) == pytest.approx(2.5)
    with pytest.raises(ValueError, match="layouts"):
        wasserstein_gaussian(a, gaussian(0.0, 1.0))
    with pytest.raises(ValueError):
        GaussianStats(layers=(), batch_count=0)


# ---- risks and bound checks ----


def threshold_model(loss=LossKind.ZERO_ONE) -> RiskModel:
    # Class 1 when x > 0.5.
    return RiskModel(linear_classifier(np.array([[0.0, 1.0]]), np.array([0.0, -0.5])), loss)


def test_empirical_risk():
    p = EmpiricalDistribution([[0.2], [0.8], [0.9]], [0, 0, 1], [0.5, 0.3, 0.2])
    assert empirical_risk(threshold_model(), p) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        empirical_risk(threshold_model(), EmpiricalDistribution(np.zeros((0, 1)), [], []))


def test_worst_and_expected_risk():
    p = EmpiricalDistribution.point_mass([0.2], 0)
    near_wrong = EmpiricalDistribution.point_mass([0.6], 0)
    near_right = EmpiricalDistribution.point_mass([0.3], 0)
    far_wrong = EmpiricalDistribution.point_mass([5.0], 0)
    metric = GroundMetric(label_scale=1.0)
    rm = threshold_model()

    worst = worst_case_risk(rm, p, 0.5, [near_wrong, near_right, far_wrong], metric)
    assert (worst.value, worst.feasible, worst.fallback) == (1.0, 2, False)
    average = expected_risk(rm, p, 0.5, [near_wrong, near_right, far_wrong], metric)
    assert average.value == pytest.approx(0.5)

    nothing = worst_case_risk(rm, p, 0.01, [far_wrong], metric)
    assert nothing.fallback and nothing.value == 0.0


def test_generalization_term():
    assert generalization_term(1, 50, 1.0) == 0.0
    assert generalization_term(10, 100, 0.05) == pytest.approx(math.sqrt((math.log(10) + math.log(20)) / 200))
    for bad in [(0, 1, 0.5), (1, 0, 0.5), (1, 1, 0.0)]:
        with pytest.raises(ValueError):
            generalization_term(*bad)


def test_lemma31_holds_on_random_instances():
    checks = run_instances(lemma31_instance, 300, seed=0)
    assert all(c.holds for c in checks)
    assert min(c.slack for c in checks) >= -1e-12


def test_lemma31_needs_bounded_loss():
    p = dist(3)
    with pytest.raises(ValueError, match="zero-one"):
        lemma31_check(threshold_model(LossKind.CROSS_ENTROPY), p, p)


def test_lemma31_w_slack_is_a_report():
    rng = np.random.default_rng(0)
    rm = random_risk_model(rng)
    assert math.isfinite(lemma31_w_slack(rm, dist(4), dist(5)))


def test_lemma33_holds_on_random_instances():
    checks = run_instances(lemma33_instance, 100, seed=1)
    assert all(c.holds for c in checks)
    for c in checks:
        assert c.distance <= 0.1 + 1e-9
        assert c.adversarial_risk == pytest.approx(c.star_risk)


def test_lemma33_rejects_bad_perturbations():
    p = EmpiricalDistribution.point_mass([0.2], 0)
    with pytest.raises(ValueError, match="epsilon_b"):
        lemma33_check(threshold_model(), p, [np.array([[0.9]])], 0.1)
    with pytest.raises(ValueError, match="one perturbation set"):
        lemma33_check(threshold_model(), p, [], 0.1)


def test_lemma33_identity_perturbations_keep_p():
    p = dist(10)
    check = lemma33_check(threshold_model_2d(), p, [f[None] for f in p.features], 0.1)
    assert check.holds
    assert check.p_star.same_as(p)
    assert check.distance == pytest.approx(0.0, abs=1e-9)
    assert check.adversarial_risk == empirical_risk(threshold_model_2d(), p)


def threshold_model_2d() -> RiskModel:
    return RiskModel(linear_classifier(np.array([[1.0, -1.0, 0.0], [0.0, 0.5, 0.5]]), np.zeros(3)))


def test_lemma33_picks_the_loss_maximizer():
    p = EmpiricalDistribution.point_mass([0.45], 0)
    check = lemma33_check(threshold_model(), p, [np.array([[0.4], [0.55], [0.5]])], 0.1)
    assert check.holds
    assert check.adversarial_risk == 1.0
    np.testing.assert_array_equal(check.p_star.features, [[0.55]])


def test_lemma34_holds_on_random_instances():
    checks = run_instances(lemma34_instance, 60, seed=2)
    assert all(c.holds for c in checks)
    assert all(c.lhs >= 0 for c in checks)


def test_lemma34_needs_intersecting_sets():
    with pytest.raises(ValueError, match="intersect"):
        lemma34_check([dist(6)], [dist(7)], dist(8), mixture_augmentation())


def test_instances_do_not_depend_on_workers():
    single = run_instances(lemma31_instance, 40, seed=9)
    pooled = run_instances(lemma31_instance, 40, seed=9, workers=4)
    assert [c.slack for c in single] == [c.slack for c in pooled]


# ---- BatchNorm statistics and chart data ----


def test_bn_stats_input_moments(tiny_dataset, conv_model):
    n = len(tiny_dataset)
    stats = bn_stats(conv_model, tiny_dataset, n_batches=1, batch_size=n)
    assert stats.names[0] == "input"
    assert len(stats.layers) > 1
    images = tiny_dataset.images().double()
    mean, var = stats.layers[0]
    np.testing.assert_allclose(mean, images.mean(dim=(0, 2, 3)).numpy(), atol=1e-12)
    np.testing.assert_allclose(var, images.var(dim=(0, 2, 3), unbiased=False).numpy(), atol=1e-10)


def test_bn_stats_wrap_around(tiny_dataset, conv_model):
    # Two passes over the same data give the same pooled moments as one.
    once = bn_stats(conv_model, tiny_dataset, n_batches=3, batch_size=4)
    twice = bn_stats(conv_model, tiny_dataset, n_batches=6, batch_size=4)
    assert twice.batch_count == 6
    for (m1, v1), (m2, v2) in zip(once.layers, twice.layers):
        np.testing.assert_allclose(m1, m2, atol=1e-10)
        np.testing.assert_allclose(v1, v2, atol=1e-10)


def test_bn_stats_errors(tiny_dataset, linear_model, conv_model):
    with pytest.raises(UnsupportedModelError):
        bn_stats(linear_model, tiny_dataset, 1)
    with pytest.raises(ValueError):
        bn_stats(conv_model, tiny_dataset, 0)
    with pytest.raises(ValueError):
        bn_stats(conv_model, ImageDataset([], num_classes=3), 1)


def test_chart_data(tmp_path, tiny_dataset, conv_model):
    dark = ImageDataset.from_tensors(tiny_dataset.images() * 0.2, tiny_dataset.labels(), num_classes=3)
    rows = chart_data({"conv": conv_model}, tiny_dataset, {"same": tiny_dataset, "dark": dark}, n_batches=2, batch_size=6)
    assert [(r.model, r.suite) for r in rows] == [("conv", "dark"), ("conv", "same")]
    assert rows[1].wasserstein == 0.0
    assert rows[0].wasserstein > 0.0

    loaded = read_chart_csv(write_chart_csv(rows, tmp_path / "chart.csv"))
    assert loaded == rows
    assert isinstance(loaded[0], ChartRow)


def test_tensors_for_stats_are_untouched(tiny_dataset, conv_model):
    before = tiny_dataset.images().clone()
    bn_stats(conv_model, tiny_dataset, 2, batch_size=5)
    assert torch.equal(before, tiny_dataset.images())
