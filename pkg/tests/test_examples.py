"""Worked examples for every operation, checked against hand arithmetic."""
import numpy as np
import pytest

from qfuse import agent as A
from qfuse import gan, metrics, optim
from qfuse import tensor as T
from qfuse.tensor import Parameter, Tensor


def t64(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


class TestConvExamples:
    def test_ones_2x2_kernel(self):
        y = T.conv2d(t64(np.ones((1, 1, 3, 3))), t64(np.ones((1, 1, 2, 2))), t64([0.0]))
        np.testing.assert_array_equal(y.data, np.full((1, 1, 2, 2), 4.0))

    def test_ones_3x3_pad1(self):
        y = T.conv2d(t64(np.ones((1, 1, 3, 3))), t64(np.ones((1, 1, 3, 3))), t64([0.0]), 1, 1).data[0, 0]
        np.testing.assert_array_equal(y, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])

    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_delta_kernel_is_identity(self, k):
        x = np.random.default_rng(k).standard_normal((2, 1, 6, 6))
        w = np.zeros((1, 1, k, k))
        w[0, 0, k // 2, k // 2] = 1.0
        np.testing.assert_array_equal(T.conv2d(t64(x), t64(w), t64([0.0]), 1, (k - 1) // 2).data, x)


class TestPoolExamples:
    def test_single_window(self):
        assert T.max_pool2d(t64([[[[1, 2], [3, 4]]]])).data.item() == 4

    def test_constant(self):
        np.testing.assert_array_equal(T.max_pool2d(t64(np.full((1, 1, 4, 6), 2.5))).data, np.full((1, 1, 2, 3), 2.5))

    def test_one_to_sixteen(self):
        x = np.arange(1, 17, dtype=float).reshape(1, 1, 4, 4)
        np.testing.assert_array_equal(T.max_pool2d(t64(x)).data[0, 0], [[6, 8], [14, 16]])


class TestUpsampleExamples:
    def test_replication(self):
        y = T.upsample2x(t64([[[[1, 2], [3, 4]]]])).data[0, 0]
        np.testing.assert_array_equal(y, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    def test_constant(self):
        np.testing.assert_array_equal(T.upsample2x(t64(np.full((1, 2, 3, 3), 7.0))).data, np.full((1, 2, 6, 6), 7.0))

    def test_backward_all_ones(self):
        x = t64(np.zeros((1, 1, 3, 3)), grad=True)
        T.backward(T.sum_all(T.upsample2x(x)))
        np.testing.assert_array_equal(x.grad, np.full((1, 1, 3, 3), 4.0))


class TestDenseExamples:
    def test_identity(self):
        x = np.random.default_rng(0).standard_normal((3, 4))
        np.testing.assert_array_equal(T.dense(t64(x), t64(np.eye(4)), t64(np.zeros(4))).data, x)

    def test_zero_weights(self):
        y = T.dense(t64(np.ones((3, 2))), t64(np.zeros((2, 3))), t64([1.0, 2.0, 3.0])).data
        np.testing.assert_array_equal(y, np.tile([1.0, 2.0, 3.0], (3, 1)))

    def test_hand_multiply(self):
        y = T.dense(t64([[1.0, 2.0]]), t64([[1.0, 0.0], [0.0, 2.0]]), t64([1.0, 1.0])).data
        np.testing.assert_array_equal(y, [[2.0, 5.0]])


class TestActivationExamples:
    def test_values(self):
        assert T.sigmoid(t64([0.0])).data[0] == 0.5
        np.testing.assert_array_equal(T.relu(t64([-1.0, 2.0])).data, [0.0, 2.0])
        assert T.tanh(t64([0.0])).data[0] == 0.0


class TestLossExamples:
    def test_mse(self):
        assert T.mse_loss(t64([0.3, 0.7]), [0.3, 0.7]).item() == 0.0
        assert T.mse_loss(t64(np.zeros(5)), np.ones(5)).item() == 1.0
        assert T.mse_loss(t64([0.0, 0.5]), [1.0, 0.5]).item() == 0.5

    def test_bce(self):
        assert T.bce_loss(t64([0.5]), 1).item() == pytest.approx(0.693147, abs=1e-6)
        assert T.bce_loss(t64([0.5]), 0).item() == T.bce_loss(t64([0.5]), 1).item()
        assert T.bce_loss(t64([0.999]), 1).item() == pytest.approx(0.001, abs=1e-4)

    def test_backward_linear(self):
        p = t64(np.ones(4), grad=True)
        T.backward(T.sum_all(T.scale(p, 2.0)))
        np.testing.assert_array_equal(p.grad, np.full(4, 2.0))

    def test_backward_independent(self):
        p = t64(np.ones(4), grad=True)
        q = t64(np.ones(4), grad=True)
        T.backward(T.sum_all(T.add(T.scale(p, 0.0), q)))
        np.testing.assert_array_equal(p.grad, np.zeros(4))


class TestAdagradExamples:
    def test_zero_grad_no_decay(self):
        p = Parameter(np.array([0.3, -0.2]), dtype=np.float64)
        p.grad = np.zeros(2)
        optim.adagrad_step([p], 0.1)
        np.testing.assert_array_equal(p.data, [0.3, -0.2])

    def test_first_step_is_sign(self):
        p = Parameter(np.zeros(3), dtype=np.float64)
        p.grad = np.array([2.0, -0.5, 1e-3])
        optim.adagrad_step([p], 0.01)
        np.testing.assert_allclose(p.data, -0.01 * np.sign([2.0, -0.5, 1e-3]), rtol=1e-4)

    def test_second_update_shrinks(self):
        p = Parameter(np.array([1.0]), dtype=np.float64)
        deltas = []
        for _ in range(2):
            before = p.data.copy()
            p.grad = np.array([0.7])
            optim.adagrad_step([p], 0.1)
            deltas.append(abs(p.data[0] - before[0]))
        assert deltas[1] < deltas[0]


class TestGanLossExamples:
    def test_generator_loss(self):
        pred, gt = t64([0.0]), t64([np.sqrt(0.1)])
        loss = gan.generator_loss(pred, gt, t64([0.5]), 0.33).item()
        assert loss == pytest.approx(0.1 + 0.33 * 0.693147, abs=1e-6)
        assert loss == pytest.approx(0.328739, abs=1e-6)

    def test_generator_loss_confident_d(self):
        pred, gt = t64([0.2, 0.4]), t64([0.0, 1.0])
        mse = T.mse_loss(pred, gt).item()
        assert gan.generator_loss(pred, gt, t64([1.0 - 1e-9]), 0.33).item() == pytest.approx(mse, abs=1e-6)

    def test_lambda_zero_is_content_loss(self):
        pred, gt = t64([0.2, 0.4]), t64([0.0, 1.0])
        assert gan.generator_loss(pred, gt, t64([0.1]), 0.0).item() == T.mse_loss(pred, gt).item()

    def test_discriminator_loss(self):
        assert gan.discriminator_loss(t64([0.5]), t64([0.5])).item() == pytest.approx(1.386294, abs=1e-6)
        assert gan.discriminator_loss(t64([0.999]), t64([0.001])).item() == pytest.approx(0.002, abs=1e-5)

    def test_discriminator_loss_symmetry(self):
        r, f = 0.8, 0.3
        a = gan.discriminator_loss(t64([r]), t64([f])).item()
        b = gan.discriminator_loss(t64([1 - f]), t64([1 - r])).item()
        assert a == pytest.approx(b, rel=1e-12)


class TestFusionExamples:
    def test_fuse_single(self):
        m1, m2 = np.random.default_rng(0).random((2, 5, 5))
        np.testing.assert_array_equal(A.fuse_maps([m1, m2], (1.0, 0.0)), m1)

    def test_fuse_identical(self):
        m = np.random.default_rng(1).random((5, 5))
        np.testing.assert_allclose(A.fuse_maps([m, m], (0.3, 0.7)), m, atol=1e-15)

    def test_fuse_constants(self):
        out = A.fuse_maps([np.full((3, 3), 0.8), np.full((3, 3), 0.2)], (0.7, 0.3))
        np.testing.assert_allclose(out, 0.62, atol=1e-12)

    def test_state_passthrough_and_shape(self):
        m1, m2 = np.random.default_rng(2).random((2, 56, 56))
        st = A.build_state([m1, m2], A.WeightVector((0.5, 0.5)))
        arr = st.array()
        assert arr.shape == (56, 56, 3)
        np.testing.assert_array_equal(st.s1, m1)
        np.testing.assert_array_equal(st.s3, A.fuse_maps([m1, m2], (0.5, 0.5)))

    def test_actions(self):
        w = A.WeightVector.uniform(2)
        assert A.apply_action(w, A.Action.INCREASE, 0.1).w == (0.6, 0.4)
        assert A.apply_action(A.WeightVector((1.0, 0.0)), A.Action.INCREASE, 0.1).w == (1.0, 0.0)
        assert A.apply_action(w, A.Action.TERMINATE, 0.1).w == (0.5, 0.5)

    def test_step_reward(self):
        assert A.step_reward(0.05, 0.03) == 1
        assert A.step_reward(0.05, 0.06) == -1
        assert A.step_reward(0.05, 0.05) == -1

    def test_terminate_reward(self):
        assert A.terminate_reward(0.03, 0.04, 2) == 2
        assert A.terminate_reward(0.04, 0.04, 2) == 2
        assert A.terminate_reward(0.05, 0.04, 2) == -2


class TestMetricExamples:
    def test_confusion(self):
        gt = np.array([0.0, 1.0, 1.0, 1.0])
        assert metrics.confusion(gt, gt, 0.5) == metrics.ConfusionCounts(3, 0, 1, 0)
        c = metrics.confusion(np.ones(4), gt, 0.0)
        assert c.fn == 0 and metrics.prf(c)[1] == 1.0
        c = metrics.confusion(np.array([0.2, 0.6, 0.9, 0.1]), gt, 0.5)
        assert (c.tp, c.fp, c.tn, c.fn) == (2, 0, 1, 1)

    def test_prf(self):
        assert metrics.prf(metrics.ConfusionCounts(5, 0, 3, 0)) == (1.0, 1.0, 1.0)
        p, r, f = metrics.prf(metrics.ConfusionCounts(3, 1, 0, 2), beta=0.3)
        assert (p, r) == (0.75, 0.6)
        assert f == pytest.approx(1.3 * 0.45 / (0.3 * 0.75 + 0.6), abs=1e-12)
        assert f == pytest.approx(0.70909, abs=1e-5)

    @pytest.mark.parametrize("beta", [0.1, 0.3, 1.0, 2.0])
    def test_f_equals_p_when_p_equals_r(self, beta):
        assert metrics.f_measure(0.37, 0.37, beta) == pytest.approx(0.37, rel=1e-12)

    def test_mse(self):
        assert metrics.mse_metric(np.ones(3), np.ones(3)) == 0.0
        assert metrics.mse_metric(np.zeros(4), np.ones(4)) == 1.0
        assert metrics.mse_metric([0, 0.5, 1], [1, 0.5, 0]) == pytest.approx(2 / 3, abs=1e-12)

    def test_two_pixel_curve(self):
        pred, gt = np.array([0.3, 0.8]), np.array([0.0, 1.0])
        rows = metrics.pr_curve([pred], [gt], ts=[0.0, 0.5, 0.9])
        # t=0: both positive -> P=1/2, R=1; t=0.5: only pixel 2 -> P=R=1; t=0.9: none -> P=1 (empty), R=0
        assert [(t, p, r) for t, p, r, _ in rows] == [(0.0, 0.5, 1.0), (0.5, 1.0, 1.0), (0.9, 1.0, 0.0)]
        assert rows[1][3] == 1.0 and rows[2][3] == 0.0

    def test_constant_half_prediction(self):
        gts = [(np.random.default_rng(i).random((6, 6)) > 0.5).astype(float) for i in range(3)]
        rep = metrics.evaluate_run([np.full((6, 6), 0.5)] * 3, gts)
        assert rep.mean_mse == pytest.approx(np.mean([np.mean((g - 0.5) ** 2) for g in gts]), abs=1e-12)

    def test_perfect(self):
        gt = (np.random.default_rng(0).random((8, 8)) > 0.6).astype(float)
        rep = metrics.evaluate_run([gt], [gt])
        assert rep.mean_mse == 0.0 and rep.max_f == 1.0
