import math

import numpy as np
import pytest

from csrobust.core.errors import AggregateError, InvalidSpecError
from csrobust.core.fourier import SamplingMask, make_mask
from csrobust.core.metrics import MetricReport
from csrobust.core.shift import (
    SCATTER_COLUMNS,
    MethodVariant,
    ShiftResult,
    VariantBuilder,
    adversarial_filter,
    evaluate_shift,
    filter_count,
    hardness_transfer,
    scatter_rows,
    shift_fit,
    spectrum_report,
    tune,
)
from csrobust.reconstructors import ZeroFilledReconstructor


def _builder(mask, defaults=None):
    return VariantBuilder(defaults or {"l1": {"max_iters": 20}}, mask)


def test_candidates_follow_product_order():
    variant = MethodVariant.from_dict(
        {"method": "l1", "label": "l1-haar", "params": {"max_iters": 5}, "grid": {"lam": [0.1, 0.01], "max_iters": [1, 2]}}
    )
    points = [(c.params["lam"], c.params["max_iters"]) for c in variant.candidates()]
    assert points == [(0.1, 1), (0.1, 2), (0.01, 1), (0.01, 2)]
    assert all(c.grid == {} and c.label == "l1-haar" for c in variant.candidates())


def test_variant_identity_is_stable_and_order_free():
    a = MethodVariant("l1", "a", {"lam": 0.1, "max_iters": 5})
    b = MethodVariant("l1", "b", {"max_iters": 5, "lam": 0.1})
    assert a.identity == b.identity
    assert a.identity != MethodVariant("l1", "a", {"lam": 0.2}).identity
    assert MethodVariant.from_dict(a.to_dict()) == a


def test_variant_validation():
    with pytest.raises(InvalidSpecError):
        MethodVariant("varnet", "v").validate()
    with pytest.raises(InvalidSpecError):
        MethodVariant("l1", "v", grid={"lam": []}).candidates()


def test_single_point_grid_returns_that_point(make_dataset):
    manifest = make_dataset(n_images=2)
    variant = MethodVariant("zero_filled", "zf")
    mask = make_mask(16, 2.0, 0.125)
    assert tune(variant.candidates(), manifest, _builder(mask), mask) == variant


def test_tune_picks_the_best_lambda(make_dataset):
    manifest = make_dataset(n_images=2)
    mask = SamplingMask.full(16)
    variant = MethodVariant("l1", "l1", grid={"lam": [10.0, 1e-6]})
    best = tune(variant.candidates(), manifest, _builder(mask), mask, metric="nmse")
    assert best.params["lam"] == 1e-6


def test_tune_ties_go_to_the_first_candidate(make_dataset):
    manifest = make_dataset(n_images=2)
    mask = make_mask(16, 2.0, 0.125)
    variant = MethodVariant("zero_filled", "zf", grid={"unused": [2, 1]})
    assert tune(variant.candidates(), manifest, _builder(mask), mask).params["unused"] == 2


def test_tune_skips_failed_candidates_and_fails_when_all_do(make_dataset, quiet_logger):
    manifest = make_dataset(n_images=2)
    mask = make_mask(16, 2.0, 0.125)
    mixed = MethodVariant("l1", "l1", grid={"lam": [-1.0, 1e-3]})
    assert tune(mixed.candidates(), manifest, _builder(mask), mask, log=quiet_logger).params["lam"] == 1e-3

    broken = MethodVariant("l1", "l1", grid={"lam": [-1.0, -2.0]})
    with pytest.raises(AggregateError) as excinfo:
        tune(broken.candidates(), manifest, _builder(mask), mask, log=quiet_logger)
    assert excinfo.value.code == "ALL_FAILED"
    with pytest.raises(InvalidSpecError):
        tune([], manifest, _builder(mask), mask)


def test_same_domain_has_no_shift(make_dataset):
    manifest = make_dataset(n_images=3)
    mask = make_mask(16, 2.0, 0.125)
    results = evaluate_shift([MethodVariant("zero_filled", "zf")], manifest, manifest, _builder(mask), mask,
                             resamples=50)
    assert results[0].in_domain == results[0].out_domain
    assert results[0].gap == 0.0
    rows = scatter_rows(results)
    assert list(rows[0]) == SCATTER_COLUMNS
    assert rows[0]["family"] == "zero_filled"


def test_unbuildable_variants_are_flagged_and_the_run_continues(make_dataset, quiet_logger):
    manifest = make_dataset(n_images=3)
    mask = make_mask(16, 2.0, 0.125)
    variants = [
        MethodVariant("l1", "l1-broken", {"lam": -1.0}),
        MethodVariant("zero_filled", "zf"),
        MethodVariant("cnn", "cnn-untrained"),
    ]
    results = evaluate_shift(variants, manifest, manifest, _builder(mask), mask, resamples=50, log=quiet_logger)

    assert [r.variant.label for r in results] == ["l1-broken", "zf", "cnn-untrained"]
    assert [r.failed for r in results] == [True, False, True]
    assert "lam" in results[0].error
    rows = scatter_rows(results)
    assert math.isnan(rows[0]["in_mean"]) and math.isnan(rows[2]["out_mean"])
    assert math.isfinite(rows[1]["in_mean"])
    assert shift_fit(results, log=quiet_logger)["mean_identity_gap"] == pytest.approx(0.0)

    with pytest.raises(AggregateError) as excinfo:
        evaluate_shift([variants[0], variants[2]], manifest, manifest, _builder(mask), mask, log=quiet_logger)
    assert [label for label, _ in excinfo.value.failures] == ["l1-broken", "cnn-untrained"]


def _result(label, in_value, out_value):
    return ShiftResult(
        MethodVariant("l1", label),
        "ssim",
        MetricReport("ssim", in_value, in_value, in_value, 1),
        MetricReport("ssim", out_value, out_value, out_value, 1),
    )


def test_shift_fit(quiet_logger):
    summary = shift_fit([_result("a", 0.9, 0.7), _result("b", 0.8, 0.65), _result("c", 0.7, 0.6)])
    assert summary["slope"] == pytest.approx(0.5)
    assert summary["intercept"] == pytest.approx(0.25)
    assert summary["mean_identity_gap"] == pytest.approx(0.15)

    single = shift_fit([_result("a", 0.9, 0.7)], log=quiet_logger)
    assert single["slope"] is None and single["intercept"] is None
    assert single["mean_identity_gap"] == pytest.approx(0.2)


def test_filter_count():
    assert filter_count(100, 0.1) == 10
    assert filter_count(7, 0.1) == 1
    assert filter_count(20, 0.25) == 5
    with pytest.raises(InvalidSpecError):
        filter_count(10, 1.0)


def test_filter_keeps_the_worst_images(make_dataset):
    manifest = make_dataset(families={"smooth": 0.5, "textured": 0.5}, n_images=10)
    mask = make_mask(16, 4.0, 0.125)
    result = adversarial_filter(manifest, ZeroFilledReconstructor(), mask, fraction=0.2)

    assert len(result.subset) == 2
    assert len(result.scores) == 10
    worst = [image_id for image_id, _ in sorted(result.scores, key=lambda item: (item[1], item[0]))[:2]]
    assert set(result.subset.ids) == set(worst)
    assert sum(row["selected"] for row in result.rows()) == 2


def test_filter_must_differ_from_evaluated_methods(make_dataset, quiet_logger):
    manifest = make_dataset(n_images=2)
    mask = make_mask(16, 4.0, 0.125)
    with pytest.raises(InvalidSpecError):
        adversarial_filter(manifest, ZeroFilledReconstructor(), mask, fraction=0.5, evaluated_ids=["zero_filled", "l1"])
    result = adversarial_filter(manifest, ZeroFilledReconstructor(), mask, fraction=0.5,
                                evaluated_ids=["zero_filled"], allow_evaluated=True, log=quiet_logger)
    assert len(result.subset) == 1


def test_spectrum_report(make_dataset):
    manifest = make_dataset(n_images=4)
    rows, summary = spectrum_report(manifest, center_fraction=0.25, filtered=manifest, resamples=50)

    assert len(rows) == 4
    assert all(0.0 < row["proportion"] <= 1.0 for row in rows)
    assert all(row["filtered"] == 1 for row in rows)
    assert [s["group"] for s in summary] == ["full", "filtered"]
    assert summary[0]["mean"] == pytest.approx(summary[1]["mean"])
    assert summary[0]["mean"] == pytest.approx(np.mean([row["proportion"] for row in rows]))


def test_spectrum_full_center_band_is_all_energy(make_dataset):
    rows, summary = spectrum_report(make_dataset(n_images=2), center_fraction=1.0)
    assert all(row["proportion"] == pytest.approx(1.0) for row in rows)
    assert len(summary) == 1


def test_hardness_transfer(make_dataset):
    manifest = make_dataset(n_images=4)
    mask = make_mask(16, 4.0, 0.125)
    subset = manifest.subset(manifest.ids[:2])
    rows = hardness_transfer(manifest, subset, {"zero_filled": ZeroFilledReconstructor()}, mask, resamples=50)

    assert len(rows) == 1
    assert rows[0]["method"] == "zero_filled"
    assert math.isfinite(rows[0]["full_mean"]) and math.isfinite(rows[0]["filtered_mean"])

    other = make_dataset(name="other", n_images=1, seed=5)
    with pytest.raises(InvalidSpecError):
        hardness_transfer(manifest, other, {"zero_filled": ZeroFilledReconstructor()}, mask)
