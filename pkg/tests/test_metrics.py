import numpy as np
import pytest

from flowdmd.errors import ShapeError, ZeroReferenceError
from flowdmd.metrics import (
    ErrorReport,
    error_report,
    mse,
    rl2e,
    trl2e,
    write_report_csv,
    write_summary_csv,
)


class TestRl2e:
    def test_perfect_reconstruction_is_zero(self):
        x = np.array([1.0, 2.0, 3.0])
        assert rl2e(x, x) == 0.0

    def test_hand_value(self):
        assert rl2e(np.zeros(2), np.array([3.0, 4.0])) == 1.0

    def test_first_order_perturbation(self):
        eps = 1e-7
        assert abs(rl2e(np.array([1.0, eps]), np.array([1.0, 0.0])) - eps) < 1e-20

    def test_zero_reference_raises(self):
        with pytest.raises(ZeroReferenceError):
            rl2e(np.ones(2), np.zeros(2))

    def test_length_mismatch_raises(self):
        with pytest.raises(ShapeError):
            rl2e(np.ones(3), np.ones(2))


class TestMse:
    def test_perfect_reconstruction_is_zero(self):
        x = np.array([0.5, -0.5])
        assert mse(x, x) == 0.0

    def test_hand_value(self):
        assert mse(np.zeros(2), np.array([3.0, 4.0])) == 12.5

    def test_quadratic_homogeneity(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=5)
        xhat = rng.normal(size=5)
        c = 3.7
        np.testing.assert_allclose(mse(c * xhat, c * x), c**2 * mse(xhat, x), rtol=1e-12)


class TestTrl2e:
    def test_perfect_reconstruction_is_zero(self):
        traj = np.arange(12.0).reshape(4, 3) + 1.0
        assert trl2e(traj, traj) == 0.0

    def test_single_step_equals_rl2e(self):
        truth = np.array([[9.0, 9.0], [3.0, 4.0]])
        guess = np.array([[9.0, 9.0], [3.0, 5.0]])
        assert trl2e(guess, truth) == rl2e(guess[1], truth[1])

    def test_hand_value_two_steps(self):
        # per-step errors (1,0) and (0,1); truths both norm 5
        truth = np.array([[0.0, 0.0], [3.0, 4.0], [4.0, 3.0]])
        guess = truth + np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(trl2e(guess, truth), np.sqrt(2.0 / 50.0), rtol=1e-15)

    def test_initial_row_excluded(self):
        truth = np.array([[1.0, 1.0], [2.0, 2.0]])
        guess = truth.copy()
        guess[0] += 100.0  # corrupting row 0 must not matter
        assert trl2e(guess, truth) == 0.0

    def test_scale_invariance(self):
        rng = np.random.default_rng(5)
        truth = rng.normal(size=(10, 4)) + 2.0
        guess = truth + 0.1 * rng.normal(size=(10, 4))
        base = trl2e(guess, truth)
        for c in (1e-3, 7.0, 1e5):
            assert abs(trl2e(c * guess, c * truth) - base) < 1e-12

    def test_bounded_by_step_extremes_when_norms_equal(self):
        # all reference rows share one norm, so the total lies between the
        # smallest and largest per-step relative errors
        rng = np.random.default_rng(9)
        truth = np.tile(np.array([3.0, 4.0]), (6, 1))
        guess = truth + rng.normal(size=truth.shape) * 0.3
        per_step = [rl2e(guess[t], truth[t]) for t in range(1, 6)]
        total = trl2e(guess, truth)
        assert min(per_step) - 1e-12 <= total <= max(per_step) + 1e-12

    def test_zero_denominator_raises(self):
        truth = np.zeros((3, 2))
        truth[0] = 1.0
        with pytest.raises(ZeroReferenceError):
            trl2e(np.ones((3, 2)), truth)


class TestErrorReport:
    def test_report_consistency_identity(self):
        rng = np.random.default_rng(3)
        truth = rng.normal(size=(8, 3)) + 3.0
        guess = truth + 0.05 * rng.normal(size=(8, 3))
        report = error_report(guess, truth, sample_id=4, method="flowdmd")
        assert len(report.rl2e) == 7 and len(report.mse) == 7
        # trl2e^2 * sum ||x_t||^2 equals the summed squared error
        num = sum(np.sum((guess[t] - truth[t]) ** 2) for t in range(1, 8))
        den = sum(np.sum(truth[t] ** 2) for t in range(1, 8))
        np.testing.assert_allclose(report.trl2e**2 * den, num, rtol=1e-10)
        assert (report.rl2e >= 0).all() and (report.mse >= 0).all()

    def test_csv_outputs(self, tmp_path):
        truth = np.ones((3, 2))
        guess = truth + 0.1
        reports = [
            error_report(guess, truth, sample_id=0, method="flowdmd"),
            error_report(guess, truth, sample_id=1, method="exact_dmd"),
        ]
        report_path = tmp_path / "report.csv"
        summary_path = tmp_path / "summary.csv"
        write_report_csv(reports, report_path)
        write_summary_csv(reports, summary_path)
        report_lines = report_path.read_text().strip().splitlines()
        assert report_lines[0] == "sample_id,method,t,rl2e,mse"
        assert len(report_lines) == 1 + 2 * 2
        summary_lines = summary_path.read_text().strip().splitlines()
        assert summary_lines[0] == "sample_id,method,trl2e"
        assert len(summary_lines) == 3
        value = float(summary_lines[1].split(",")[2])
        np.testing.assert_allclose(value, reports[0].trl2e, rtol=1e-15)
