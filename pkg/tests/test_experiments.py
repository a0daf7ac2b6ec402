"""Labelling jobs, error reports, the stress-controlled driver and the benchmark."""

import numpy as np
import pytest

from helpers import random_path
from prnn.experiments import (
    DriverDiverged,
    drive,
    elastic_network_tangent,
    evaluate,
    evaluate_set,
    label_curves,
    secant_unloading_error,
)
from prnn.io import LabeledCurve
from prnn.microfe import SolverSettings, build_rve, label_path
from prnn.network import PrnnConfig, identity_params, init_params, jacobian, forward_step, predict
from prnn.pathgen import LoadPath, make_dataset, proportional_path


def _curves(params, cfg, paths):
    return [LabeledCurve(p, predict(params, cfg, p), f"c{i}") for i, p in enumerate(paths)]


def test_threaded_labelling_matches_serial():
    mesh, pbc = build_rve(1, 0.4, n_div=6)
    paths = make_dataset({"II": 2, "V": 1}, seed=1)
    a, fa = label_curves(mesh, pbc, paths, workers=1)
    b, fb = label_curves(mesh, pbc, paths, workers=3)
    assert fa == fb == []
    for x, y in zip(a, b):
        assert x.name == y.name
        np.testing.assert_array_equal(x.stresses, y.stresses)
    np.testing.assert_array_equal(a[0].stresses, label_path(mesh, pbc, paths[0]))


def test_failed_labelling_is_recorded_not_raised():
    mesh, pbc = build_rve(0, n_div=4)
    bad = LoadPath(np.array([[0.0, 0, 0], [np.nan, 0, 0]]), "V", 9)
    good, failed = label_curves(mesh, pbc, [bad], SolverSettings(max_bisections=0))
    assert good == [] and failed[0]["step"] == 1 and failed[0]["seed"] == 9


def test_perfect_model_has_zero_error():
    cfg = PrnnConfig(2)
    p = init_params(cfg, 0)
    curves = _curves(p, cfg, make_dataset({"III": 3}, seed=0))
    rep = evaluate(p, cfg, {"iii": curves})
    assert rep.sets["iii"].rmse == 0.0
    np.testing.assert_array_equal(rep.sets["iii"].step_series(), 0.0)


def test_report_aggregation_is_consistent():
    # DERIVED: set error is the mean of per-curve RMSEs; per-step series spans all steps
    cfg = PrnnConfig(2)
    truth, model = init_params(cfg, 0), init_params(cfg, 1)
    curves = _curves(truth, cfg, make_dataset({"II": 4}, seed=2))
    s = evaluate_set(model, cfg, curves, "ii")
    per_curve = [np.sqrt(np.mean((predict(model, cfg, c.strains) - c.stresses) ** 2)) for c in curves]
    assert s.rmse == pytest.approx(np.mean(per_curve), rel=1e-12)
    assert s.best <= s.rmse <= s.worst
    assert s.step_series().shape == (61,)
    abs_err = np.mean([np.mean(np.abs(predict(model, cfg, c.strains) - c.stresses), axis=1) for c in curves], axis=0)
    np.testing.assert_allclose(s.step_series(), abs_err, rtol=1e-12)
    rep = evaluate(model, cfg, {"ii": curves})
    assert len(rep.curve_rows()) == 4 and len(rep.step_rows()) == 61


def test_mixed_lengths_rejected_for_step_series():
    cfg = PrnnConfig(1)
    p = init_params(cfg, 0)
    curves = _curves(p, cfg, make_dataset({"III": 1, "IVb": 1}, seed=0))
    with pytest.raises(ValueError):
        evaluate_set(p, cfg, curves).step_series()
    with pytest.raises(ValueError):
        evaluate_set(p, cfg, [])


def test_secant_error_zero_for_exact_model():
    cfg = PrnnConfig(2)
    p = init_params(cfg, 3)
    (c,) = _curves(p, cfg, [proportional_path("III", [1.0, 0.2, 0.0])])
    assert secant_unloading_error(p, cfg, c, 30, 45) == 0.0


def test_driver_zero_target_needs_one_evaluation():
    cfg = PrnnConfig(2)
    res = drive(init_params(cfg, 0), cfg, np.zeros((3, 3)))
    assert res.iterations == [1, 1, 1]
    np.testing.assert_array_equal(res.strains, 0.0)


def test_driver_elastic_target_converges_in_one_newton_step():
    # TRIVIAL: a linear response is solved by one Newton update
    cfg = PrnnConfig(2)
    p = identity_params(2)
    target = np.array([[0.0, 0, 0], [10.0, 2.0, 0.0], [20.0, 4.0, 0.0]])
    for tangent in ("consistent", "elastic"):
        res = drive(p, cfg, target, tangent=tangent)
        assert max(res.iterations) <= 2
        np.testing.assert_allclose(res.stresses, target, atol=1e-7)


def test_driver_recovers_strain_path():
    # inverting the network on its own output gives back the strain path
    cfg = PrnnConfig(2)
    p = identity_params(2)
    path = random_path(np.random.default_rng(0), 15, 1e-3)
    res = drive(p, cfg, predict(p, cfg, path))
    np.testing.assert_allclose(res.strains, path, atol=1e-9)
    assert res.mean_iterations <= 10


def test_elastic_tangent_matches_virgin_jacobian():
    cfg = PrnnConfig(3)
    p = init_params(cfg, 1)
    _, _, rec = forward_step(p, cfg, np.array([1e-5, 0.0, 0.0]))
    np.testing.assert_allclose(elastic_network_tangent(p, cfg), jacobian(p, cfg, rec))


def test_driver_reports_divergence():
    cfg = PrnnConfig(1)
    p = init_params(cfg, 0)
    unreachable = np.array([[0.0, 0, 0], [1e4, 0.0, 0.0]])
    with pytest.raises(DriverDiverged) as info:
        drive(p, cfg, unreachable, max_iter=5)
    assert info.value.step == 1
    with pytest.raises(ValueError):
        drive(p, cfg, unreachable, tangent="secant")
