import warnings

import numpy as np
import pytest

from labelshift.calibration import (
    CalibrationParams,
    Family,
    apply_calibration,
    calibration_nll,
    fit_calibration,
    nll_and_gradient,
    num_parameters,
    params_to_theta,
    theta_to_params,
)
from labelshift.data import LabeledLogitSet
from labelshift.errors import ArgumentError, NumericalError
from labelshift.numerics import softmax

FITTED = [Family.TS, Family.NBVS, Family.BCTS, Family.VS]


def sample_labels(rng, probs):
    u = rng.random(probs.shape[0])[:, None]
    return (u > np.cumsum(probs, axis=1)).sum(axis=1)


def grid_nll(logits, labels, family, grid):
    """NLL at each parameter tuple in ``grid``, evaluated straight from the
    softmax definition."""
    out = []
    for params in grid:
        p = softmax(params(logits), axis=1)
        out.append(-np.mean(np.log(p[np.arange(len(labels)), labels])))
    return np.array(out)


def finite_difference(family, theta, z, y, h=1e-6):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (nll_and_gradient(family, theta + e, z, y)[0]
                - nll_and_gradient(family, theta - e, z, y)[0]) / (2 * h)
    return g


class TestApply:
    def test_none_is_softmax(self, rng):
        z = rng.normal(size=(4, 3))
        np.testing.assert_allclose(apply_calibration(CalibrationParams("None"), z),
                                   softmax(z, axis=1))

    def test_ts_hand(self):
        p = apply_calibration(CalibrationParams("TS", temperature=2.0), [[2.0, 0.0]])
        e = np.e
        np.testing.assert_allclose(p[0], [e / (e + 1), 1 / (e + 1)], rtol=1e-14)

    def test_bcts_hand(self):
        params = CalibrationParams("BCTS", temperature=1.0, biases=[np.log(2), 0.0])
        np.testing.assert_allclose(apply_calibration(params, [[0.0, 0.0]])[0], [2 / 3, 1 / 3])

    def test_vs_and_nbvs_forms(self):
        z = np.array([[1.0, -2.0, 0.5]])
        w = np.array([2.0, 0.5, 1.0])
        b = np.array([0.1, 0.0, -0.3])
        np.testing.assert_allclose(apply_calibration(CalibrationParams("NBVS", scales=w), z),
                                   softmax(z * w, axis=1))
        np.testing.assert_allclose(
            apply_calibration(CalibrationParams("VS", scales=w, biases=b), z),
            softmax(z * w + b, axis=1))

    def test_dimension_mismatch(self):
        params = CalibrationParams("BCTS", temperature=1.0, biases=[0.0, 0.0])
        with pytest.raises(ArgumentError, match="2 classes"):
            apply_calibration(params, np.zeros((2, 3)))

    def test_invalid_params(self):
        with pytest.raises(ArgumentError):
            CalibrationParams("TS", temperature=-1.0)
        with pytest.raises(ArgumentError):
            CalibrationParams("VS", scales=[1.0, -1.0], biases=[0.0, 0.0])
        with pytest.raises(ArgumentError):
            Family.parse("platt")

    def test_json_round_trip(self):
        params = CalibrationParams("VS", scales=[1.5, 0.5], biases=[0.25, -0.25])
        back = CalibrationParams.from_json(params.to_json())
        assert back.family is Family.VS
        np.testing.assert_array_equal(back.scales, params.scales)
        np.testing.assert_array_equal(back.biases, params.biases)

    def test_theta_round_trip(self):
        for family in FITTED:
            theta = np.linspace(-0.5, 0.5, num_parameters(family, 4))
            back = params_to_theta(theta_to_params(family, theta, 4), 4)
            np.testing.assert_allclose(back, theta, atol=1e-15)


class TestGradient:
    @pytest.mark.parametrize("family", FITTED)
    def test_matches_central_differences(self, family, rng):
        for _ in range(10):
            m = int(rng.integers(2, 6))
            z = rng.normal(scale=3, size=(40, m))
            y = rng.integers(0, m, size=40)
            theta = rng.normal(scale=0.5, size=num_parameters(family, m))
            _, analytic = nll_and_gradient(family, theta, z, y)
            numeric = finite_difference(family, theta, z, y)
            rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-8)
            assert rel < 1e-4

    def test_value_matches_definition(self, rng):
        z = rng.normal(size=(30, 3))
        y = rng.integers(0, 3, size=30)
        params = CalibrationParams("BCTS", temperature=1.7, biases=[0.2, -0.1, 0.4])
        value, _ = nll_and_gradient(Family.BCTS, params_to_theta(params, 3), z, y)
        p = softmax(z / 1.7 + params.biases, axis=1)
        assert value == pytest.approx(-np.mean(np.log(p[np.arange(30), y])), rel=1e-12)


class TestFit:
    def test_constant_logits_give_ln_m(self):
        m = 4
        z = np.full((8, m), 3.0)
        y = np.arange(8) % m
        params = fit_calibration("TS", z, y)
        assert params.fit_info.nll == pytest.approx(np.log(m), abs=1e-12)

    def test_temperature_recovery_against_grid(self):
        rng = np.random.default_rng(7)
        z = rng.normal(scale=3, size=(50_000, 3))
        y = sample_labels(rng, softmax(z / 2, axis=1))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            fitted = fit_calibration("TS", LabeledLogitSet(z, y))
        # oracle: coarse grid over (0, 10] then a step-1e-3 grid around its minimiser
        coarse = np.arange(0.05, 10.0 + 1e-9, 0.05)
        values = grid_nll(z, y, "TS", [lambda v, t=t: v / t for t in coarse])
        centre = coarse[np.argmin(values)]
        fine = np.arange(centre - 0.05, centre + 0.05 + 1e-12, 1e-3)
        values = grid_nll(z, y, "TS", [lambda v, t=t: v / t for t in fine])
        oracle = fine[np.argmin(values)]
        assert 1.9 <= fitted.temperature <= 2.1
        assert fitted.temperature == pytest.approx(oracle, abs=1.5e-3)

    def test_two_class_bcts_matches_grid(self):
        rng = np.random.default_rng(3)
        z = rng.normal(scale=2, size=(400, 2))
        y = sample_labels(rng, softmax(z / 1.5 + [0.4, 0.0], axis=1))
        fitted = fit_calibration("BCTS", z, y)
        # only T and b0 - b1 matter for two classes; zoom a 2-D grid
        centre = np.array([0.0, 0.0])
        width = np.array([2.0, 3.0])
        best = np.inf
        for _ in range(12):
            lt = np.linspace(centre[0] - width[0], centre[0] + width[0], 41)
            dd = np.linspace(centre[1] - width[1], centre[1] + width[1], 41)
            LT, DD = np.meshgrid(lt, dd, indexing="ij")
            grid = [lambda v, a=a, d=d: v / np.exp(a) + [d, 0.0]
                    for a, d in zip(LT.ravel(), DD.ravel())]
            values = grid_nll(z, y, "BCTS", grid)
            k = int(np.argmin(values))
            best = min(best, values[k])
            centre = np.array([LT.ravel()[k], DD.ravel()[k]])
            width = width / 4
        assert fitted.fit_info.nll <= best + 1e-6
        assert fitted.fit_info.nll == pytest.approx(best, abs=1e-6)

    def test_nesting_of_families(self, rng):
        z = rng.normal(scale=3, size=(2000, 4))
        y = sample_labels(rng, softmax(z / 2 + [0.5, 0.0, -0.5, 0.2], axis=1))
        nll = {f: fit_calibration(f, z, y).fit_info.nll for f in FITTED}
        base = calibration_nll(CalibrationParams("None"), z, y)
        tol = 1e-9
        assert nll[Family.TS] <= base + tol
        assert nll[Family.BCTS] <= nll[Family.TS] + tol
        assert nll[Family.NBVS] <= nll[Family.TS] + tol
        assert nll[Family.VS] <= nll[Family.BCTS] + tol
        assert nll[Family.VS] <= nll[Family.NBVS] + tol

    def test_bias_gauge(self, rng):
        z = rng.normal(size=(5, 3))
        a = CalibrationParams("BCTS", temperature=1.3, biases=[0.1, 0.2, 0.3])
        b = CalibrationParams("BCTS", temperature=1.3, biases=[5.1, 5.2, 5.3])
        np.testing.assert_allclose(apply_calibration(a, z), apply_calibration(b, z),
                                   rtol=1e-12)

    def test_fitted_nll_reported_consistently(self, rng):
        z = rng.normal(scale=2, size=(500, 3))
        y = sample_labels(rng, softmax(z, axis=1))
        params = fit_calibration("VS", z, y)
        assert calibration_nll(params, z, y) == pytest.approx(params.fit_info.nll, rel=1e-12)
        assert params.fit_info.nll <= params.fit_info.identity_nll

    def test_absent_class_hits_cap_with_warning(self, rng):
        z = rng.normal(size=(200, 3))
        y = rng.integers(0, 2, size=200)
        with pytest.warns(RuntimeWarning, match="cap"):
            params = fit_calibration("BCTS", z, y)
        assert params.fit_info.cap_active
        assert np.all(np.abs(params.biases) <= 20.0)

    def test_errors(self):
        with pytest.raises(ArgumentError):
            fit_calibration("TS", np.zeros((0, 2)), np.zeros(0, int))
        with pytest.raises(ArgumentError):
            fit_calibration("None", np.zeros((2, 2)), [0, 1])
        with pytest.raises(NumericalError, match="non-finite"):
            fit_calibration("TS", np.array([[1e308, -1e308]]), [1])
