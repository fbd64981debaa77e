import math

import numpy as np
import pytest

from phenokg.autodiff import Tensor
from phenokg.optim import AdamWState, CosineRestarts, adamw_step, lr_at


class TestAdamW:
    def test_zero_grads_zero_decay_leave_params(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        p.grad = np.zeros(2)
        state = AdamWState(weight_decay=0.0)
        adamw_step({"p": p}, state, lr=0.1)
        np.testing.assert_allclose(p.values, [1.0, -2.0])

    def test_first_step_matches_hand_computation(self):
        # m_hat = 1, v_hat = 1 after bias correction, so the step is -lr/(1+eps)
        p = Tensor(0.0, requires_grad=True)
        p.grad = np.asarray(1.0)
        state = AdamWState(weight_decay=0.0)
        adamw_step({"p": p}, state, lr=0.1)
        assert abs(float(p.values) - (-0.1)) <= 1e-8

    def test_decoupled_decay_only(self):
        p = Tensor(1.0, requires_grad=True)
        p.grad = np.asarray(0.0)
        state = AdamWState(weight_decay=0.1)
        adamw_step({"p": p}, state, lr=0.1)
        np.testing.assert_allclose(float(p.values), 0.99, atol=1e-15)

    def test_nan_grad_aborts_before_mutation(self):
        p = Tensor([1.0], requires_grad=True)
        q = Tensor([2.0], requires_grad=True)
        p.grad = np.asarray([np.nan])
        q.grad = np.asarray([1.0])
        state = AdamWState()
        with pytest.raises(FloatingPointError):
            adamw_step({"p": p, "q": q}, state)
        np.testing.assert_allclose(q.values, [2.0])
        assert state.step == 0

    def test_missing_grad_param_skipped(self):
        p = Tensor([1.0], requires_grad=True)
        adamw_step({"p": p}, AdamWState(), lr=0.1)
        np.testing.assert_allclose(p.values, [1.0])

    def test_bad_lr_rejected(self):
        with pytest.raises(ValueError):
            adamw_step({}, AdamWState(), lr=0.0)


class TestCosineRestarts:
    def test_cycle_start_is_lr_max(self):
        sched = CosineRestarts(t0=10, t_mult=2, lr_max=1e-4)
        assert lr_at(sched, 0) == 1e-4

    def test_mid_cycle_half(self):
        sched = CosineRestarts(t0=10, t_mult=2, lr_max=1e-4, lr_min=0.0)
        assert lr_at(sched, 5) == pytest.approx(5e-5, abs=1e-20)

    def test_warm_restart_boundary(self):
        sched = CosineRestarts(t0=10, t_mult=2, lr_max=1e-4)
        assert lr_at(sched, 10) == 1e-4

    def test_second_cycle_trace(self):
        sched = CosineRestarts(t0=10, t_mult=2, lr_max=1e-4)
        expected15 = 1e-4 * (1 + math.cos(math.pi * 5 / 20)) / 2
        assert lr_at(sched, 15) == expected15
        assert lr_at(sched, 20) == pytest.approx(5e-5, abs=1e-20)
        assert lr_at(sched, 30) == 1e-4  # restart at 10 + 20

    def test_restarts_hit_lr_max_exactly(self):
        sched = CosineRestarts(t0=3, t_mult=3, lr_max=0.01, lr_min=0.001)
        starts = [0, 3, 12, 39]  # cycles of length 3, 9, 27
        for epoch in starts:
            assert lr_at(sched, epoch) == 0.01

    def test_validation(self):
        with pytest.raises(ValueError):
            CosineRestarts(t0=0)
        with pytest.raises(ValueError):
            CosineRestarts(lr_max=1e-5, lr_min=1e-4)
        with pytest.raises(ValueError):
            lr_at(CosineRestarts(), -1)
