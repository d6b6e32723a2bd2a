import numpy as np
import pytest

from irformer import tensor as T
from irformer.exceptions import ContractError
from irformer.gradcheck import GradCheckReport, block_checks, grad_check, relative_error
from irformer.tensor import Tensor, _make


def test_sum_has_exact_gradient():
    x = Tensor(np.random.default_rng(0).uniform(-1, 1, (3, 4)))
    rep = grad_check(T.sum_all, x)
    assert rep.passed
    assert rep.max_rel_err < 1e-10
    assert rep.n_checked == 12


def test_square_sum_at_known_point():
    rep = grad_check(lambda x: T.sum_all(T.square(x)), Tensor(np.array([1.0, 2.0])))
    assert rep.passed


def test_detects_a_wrong_backward():
    def bad_square(a):
        return _make(a.data * a.data, (a,), lambda g: (g * a.data,), "bad_square")  # missing factor 2

    rep = grad_check(lambda x: T.sum_all(bad_square(x)), Tensor(np.array([0.5, -1.5, 2.0])))
    assert not rep.passed
    assert rep.max_rel_err == pytest.approx(0.5, rel=1e-6)


def test_non_scalar_output_rejected():
    with pytest.raises(ContractError):
        grad_check(lambda x: x * 2.0, Tensor(np.ones(3)))


def test_max_coords_subsamples():
    rep = grad_check(T.sum_all, Tensor(np.ones((10, 10))), max_coords=7)
    assert rep.n_checked == 7
    with pytest.raises(ContractError):
        grad_check(T.sum_all, [Tensor(np.ones(2))], max_coords=[1, 2])


def test_relu_kink_is_refined_not_failed():
    # 3e-5 lies inside the eps=1e-4 stencil; refinement to 1e-6 steps off the kink
    x = Tensor(np.array([3e-5, -0.4, 0.7]))
    rep = grad_check(lambda x: T.sum_all(T.relu(x)), x)
    assert rep.passed, rep.line()
    assert rep.n_refined == 1
    assert rep.n_skipped == 0


def test_unrefinable_kink_is_skipped_and_counted():
    x = Tensor(np.array([0.0, 0.3]))
    rep = grad_check(lambda x: T.sum_all(T.relu(x)), x)
    assert rep.n_skipped == 1
    assert not rep.passed  # one of two coordinates skipped exceeds the 5% cap


def test_relative_error_floor():
    assert relative_error(np.array(0.0), np.array(1e-9), 1e-6) == pytest.approx(1e-3)
    assert relative_error(np.array(2.0), np.array(1.0), 1e-6) == pytest.approx(0.5)


def test_report_line_format():
    rep = GradCheckReport("x", 1e-6, 1e-9, 10, 0, 1e-4)
    assert rep.passed
    assert rep.line().startswith("PASS x: max_rel_err=1.000e-06")
    assert not GradCheckReport("x", float("nan"), 0.0, 10, 0, 1e-4).passed


def test_block_suite_passes():
    reports = block_checks(seed=1)
    names = [r.name for r in reports]
    assert names == ["cpa", "efm", "dfa", "epa", "transformer", "model+total_loss", "smooth_l1", "ssim_loss"]
    for r in reports:
        assert r.passed, r.line()
