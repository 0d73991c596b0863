import unittest

import numpy as np

from acis.core.compute import kernels
from acis.core.compute.gradcheck import finite_difference_check
from acis.core.compute.tensor import Parameter, Tensor
from acis.core.exceptions import ContractViolation, ShapeMismatch

TOLERANCE = 1e-4


def random_tensor(rng, *shape, requires_grad=True) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=requires_grad)


class TestConvolution(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_output_shapes(self):
        x = random_tensor(self.rng, 2, 3, 7, 7)
        k = random_tensor(self.rng, 5, 3, 3, 3)
        self.assertEqual((2, 5, 7, 7), kernels.conv2d(x, k, stride=1).shape)
        self.assertEqual((2, 5, 4, 4), kernels.conv2d(x, k, stride=2).shape)

        y = random_tensor(self.rng, 2, 5, 4, 4)
        self.assertEqual((2, 3, 8, 8), kernels.transposed_conv2d(y, k, stride=2).shape)
        self.assertEqual((2, 3, 4, 4), kernels.transposed_conv2d(y, k, stride=1).shape)

    def test_single_sample_keeps_its_rank(self):
        x = random_tensor(self.rng, 3, 6, 6)
        k = random_tensor(self.rng, 4, 3, 3, 3)
        self.assertEqual((4, 3, 3), kernels.conv2d(x, k, stride=2).shape)

    def test_transposed_convolution_is_the_adjoint(self):
        k = self.rng.normal(size=(4, 2, 3, 3))
        for stride in (1, 2):
            y = self.rng.normal(size=(1, 2, 8, 8))
            x = self.rng.normal(size=(1, 4, 8 // stride, 8 // stride))

            forward = kernels.conv2d(Tensor(y), Tensor(k), stride=stride).data
            adjoint = kernels.transposed_conv2d(Tensor(x), Tensor(k), stride=stride).data
            self.assertAlmostEqual(float((forward * x).sum()), float((y * adjoint).sum()), places=9)

    def test_conv2d_gradients(self):
        x = random_tensor(self.rng, 2, 2, 5, 5)
        k = random_tensor(self.rng, 3, 2, 3, 3)
        b = random_tensor(self.rng, 3)
        weights = self.rng.normal(size=(2, 3, 3, 3))

        def fn(_):
            return (kernels.conv2d(x, k, stride=2, bias=b) * weights).sum()

        for point in (x, k, b):
            self.assertLess(finite_difference_check(fn, point), TOLERANCE)

    def test_transposed_conv2d_gradients(self):
        x = random_tensor(self.rng, 1, 3, 3, 3)
        k = random_tensor(self.rng, 3, 2, 3, 3)
        b = random_tensor(self.rng, 2)
        weights = self.rng.normal(size=(1, 2, 6, 6))

        def fn(_):
            return (kernels.transposed_conv2d(x, k, stride=2, bias=b) * weights).sum()

        for point in (x, k, b):
            self.assertLess(finite_difference_check(fn, point), TOLERANCE)

    def test_rejects_bad_stride(self):
        with self.assertRaises(ContractViolation):
            kernels.conv2d(random_tensor(self.rng, 1, 1, 4, 4), random_tensor(self.rng, 1, 1, 3, 3), stride=3)

    def test_rejects_channel_mismatch(self):
        with self.assertRaises(ShapeMismatch):
            kernels.conv2d(random_tensor(self.rng, 1, 2, 4, 4), random_tensor(self.rng, 1, 3, 3, 3))


class TestPooling(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)

    def test_maxpool_tie_goes_to_first_element(self):
        x = Tensor(np.zeros((1, 1, 2, 2)), requires_grad=True)
        kernels.maxpool2d(x).sum().backward()
        np.testing.assert_array_equal([[[[1.0, 0.0], [0.0, 0.0]]]], x.grad)

    def test_maxpool_values(self):
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
        np.testing.assert_array_equal([[[[5.0, 7.0], [13.0, 15.0]]]], kernels.maxpool2d(x).data)

    def test_maxpool_needs_even_dims(self):
        with self.assertRaises(ContractViolation):
            kernels.maxpool2d(Tensor(np.zeros((1, 1, 3, 4))))

    def test_pooling_gradients(self):
        x = random_tensor(self.rng, 2, 2, 4, 4)
        weights = self.rng.normal(size=(2, 2, 2, 2))
        self.assertLess(finite_difference_check(lambda _: (kernels.maxpool2d(x) * weights).sum(), x), TOLERANCE)
        self.assertLess(finite_difference_check(lambda _: (kernels.avg_pool2d(x) * weights).sum(), x), TOLERANCE)

    def test_global_max_pool(self):
        x = Tensor(np.arange(8.0).reshape(1, 2, 2, 2), requires_grad=True)
        out = kernels.global_max_pool2d(x)
        np.testing.assert_array_equal([[3.0, 7.0]], out.data)
        out.sum().backward()
        self.assertEqual(2.0, x.grad.sum())
        self.assertEqual(1.0, x.grad[0, 0, 1, 1])


class TestRecurrentAndDense(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(2)

    def test_linear_gradients(self):
        x = random_tensor(self.rng, 3, 4)
        w = random_tensor(self.rng, 2, 4)
        b = random_tensor(self.rng, 2)
        weights = self.rng.normal(size=(3, 2))

        def fn(_):
            return (kernels.linear(x, w, b) * weights).sum()

        for point in (x, w, b):
            self.assertLess(finite_difference_check(fn, point), TOLERANCE)

    def test_lstm_cell_gradients(self):
        hidden = 3
        x = random_tensor(self.rng, 2, 4)
        h = random_tensor(self.rng, 2, hidden)
        c = random_tensor(self.rng, 2, hidden)
        w = random_tensor(self.rng, 4 * hidden, 4 + hidden)
        b = random_tensor(self.rng, 4 * hidden)
        weights = self.rng.normal(size=(2, hidden))

        def fn(_):
            h_next, c_next = kernels.lstm_cell(x, h, c, w, b)
            return (h_next * weights).sum() + (c_next * weights).sum()

        for point in (x, h, c, w, b):
            self.assertLess(finite_difference_check(fn, point), TOLERANCE)

    def test_lstm_cell_rejects_hidden_mismatch(self):
        with self.assertRaises(ShapeMismatch):
            kernels.lstm_cell(
                Tensor(np.zeros((1, 2))),
                Tensor(np.zeros((1, 3))),
                Tensor(np.zeros((1, 3))),
                Tensor(np.zeros((8, 5))),
                Tensor(np.zeros(8)),
            )


class TestBatchnorm(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.gamma = random_tensor(self.rng, 2)
        self.beta = random_tensor(self.rng, 2)
        self.running_mean = Parameter(np.zeros(2), trainable=False)
        self.running_var = Parameter(np.ones(2), trainable=False)

    def batchnorm(self, x, mode):
        return kernels.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var, mode=mode)

    def test_train_mode_normalises_per_channel(self):
        x = Tensor(self.rng.normal(loc=3.0, scale=2.0, size=(4, 2, 3, 3)))
        gamma = Tensor(np.ones(2))
        beta = Tensor(np.zeros(2))
        out = kernels.batchnorm(x, gamma, beta, self.running_mean, self.running_var).data
        np.testing.assert_allclose([0.0, 0.0], out.mean(axis=(0, 2, 3)), atol=1e-9)
        np.testing.assert_allclose([1.0, 1.0], out.var(axis=(0, 2, 3)), atol=1e-4)

    def test_train_mode_updates_running_statistics(self):
        x = Tensor(np.full((2, 2, 1, 1), 5.0))
        self.batchnorm(x, "train")
        np.testing.assert_allclose([0.5, 0.5], self.running_mean.data)
        np.testing.assert_allclose([0.9, 0.9], self.running_var.data)

    def test_eval_mode_leaves_running_statistics(self):
        x = Tensor(np.full((2, 2, 1, 1), 5.0))
        self.batchnorm(x, "eval")
        np.testing.assert_array_equal([0.0, 0.0], self.running_mean.data)

    def test_gradients(self):
        x = random_tensor(self.rng, 3, 2, 2, 2)
        weights = self.rng.normal(size=(3, 2, 2, 2))
        for mode in ("train", "eval"):

            def fn(_):
                return (self.batchnorm(x, mode) * weights).sum()

            for point in (x, self.gamma, self.beta):
                self.assertLess(finite_difference_check(fn, point), TOLERANCE)

    def test_unknown_mode(self):
        with self.assertRaises(ContractViolation):
            self.batchnorm(Tensor(np.zeros((1, 2))), "frozen")


class TestLosses(unittest.TestCase):
    def test_bce_clamps_saturated_predictions(self):
        pred = Tensor([0.0, 1.0], requires_grad=True)
        loss = kernels.bce_loss(pred, [1.0, 0.0])
        self.assertTrue(np.isfinite(loss.item()))
        self.assertAlmostEqual(-np.log(kernels.BCE_CLAMP), loss.item(), places=6)
        loss.backward()
        self.assertTrue(np.all(np.isfinite(pred.grad)))

    def test_bce_gradient(self):
        rng = np.random.default_rng(4)
        pred = Tensor(rng.uniform(0.1, 0.9, size=(2, 3)), requires_grad=True)
        target = rng.integers(0, 2, size=(2, 3)).astype(float)
        self.assertLess(finite_difference_check(lambda p: kernels.bce_loss(p, target), pred), TOLERANCE)

    def test_bce_shape_mismatch(self):
        with self.assertRaises(ShapeMismatch):
            kernels.bce_loss(Tensor([0.5]), [1.0, 0.0])

    def test_mse(self):
        self.assertAlmostEqual(2.5, kernels.mse_loss(Tensor([1.0, 2.0]), [0.0, 4.0]).item())

    def test_kl_vanishes_at_the_prior(self):
        mu = Tensor(np.zeros((2, 4)))
        log_var = Tensor(np.zeros((2, 4)))
        self.assertEqual(0.0, kernels.kl_diag_gaussian(mu, log_var).item())

    def test_kl_is_averaged_over_the_batch(self):
        mu = Tensor(np.ones((2, 3)))
        log_var = Tensor(np.zeros((2, 3)))
        self.assertAlmostEqual(1.5, kernels.kl_diag_gaussian(mu, log_var).item())

    def test_kl_gradient(self):
        rng = np.random.default_rng(5)
        mu = random_tensor(rng, 2, 3)
        log_var = random_tensor(rng, 2, 3)

        def fn(_):
            return kernels.kl_diag_gaussian(mu, log_var)

        self.assertLess(finite_difference_check(fn, mu), TOLERANCE)
        self.assertLess(finite_difference_check(fn, log_var), TOLERANCE)

    def test_reparameterize_clips_log_variance(self):
        mu = Tensor(np.zeros((1, 2)))
        log_var = Tensor(np.full((1, 2), 10.0))
        out = kernels.reparameterize(mu, log_var, np.ones((1, 2)))
        np.testing.assert_allclose([[np.e, np.e]], out.data)

    def test_reparameterize_needs_matching_noise(self):
        with self.assertRaises(ShapeMismatch):
            kernels.reparameterize(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))), np.ones(3))


class TestReferenceValues(unittest.TestCase):
    def test_delta_kernel_is_identity(self):
        x = np.random.default_rng(6).normal(size=(1, 3, 3))
        delta = np.zeros((1, 1, 3, 3))
        delta[0, 0, 1, 1] = 1.0
        np.testing.assert_array_equal(x, kernels.conv2d(Tensor(x), Tensor(delta)).data)
        np.testing.assert_array_equal(x, kernels.transposed_conv2d(Tensor(x), Tensor(delta)).data)

    def test_zero_kernel_and_zero_input(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(2, 5, 5)))
        np.testing.assert_array_equal(np.zeros((3, 5, 5)), kernels.conv2d(x, Tensor(np.zeros((3, 2, 3, 3)))).data)

        k = Tensor(rng.normal(size=(2, 3, 3, 3)))
        out = kernels.transposed_conv2d(Tensor(np.zeros((2, 4, 4))), k, stride=2)
        np.testing.assert_array_equal(np.zeros((3, 8, 8)), out.data)

    def test_conv2d_matches_direct_summation(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(2, 8, 8))
        k = rng.normal(size=(4, 2, 3, 3))
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))

        expected = np.zeros((4, 4, 4))
        for o in range(4):
            for p in range(4):
                for q in range(4):
                    for c in range(2):
                        for i in range(3):
                            for j in range(3):
                                expected[o, p, q] += padded[c, 2 * p + i, 2 * q + j] * k[o, c, i, j]

        np.testing.assert_allclose(expected, kernels.conv2d(Tensor(x), Tensor(k), stride=2).data, atol=1e-12)

    def test_transposed_conv2d_matches_direct_summation(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(3, 4, 4))
        k = rng.normal(size=(3, 2, 3, 3))
        for stride in (1, 2):
            # scatter every input pixel through the kernel, then drop the one-pixel border
            padded = np.zeros((2, stride * 4 + 2, stride * 4 + 2))
            for c in range(3):
                for p in range(4):
                    for q in range(4):
                        for o in range(2):
                            for i in range(3):
                                for j in range(3):
                                    padded[o, stride * p + i, stride * q + j] += x[c, p, q] * k[c, o, i, j]

            actual = kernels.transposed_conv2d(Tensor(x), Tensor(k), stride=stride).data
            self.assertEqual((2, 4 * stride, 4 * stride), actual.shape)
            np.testing.assert_allclose(padded[:, 1:-1, 1:-1], actual, atol=1e-12)

    def test_maxpool_reference(self):
        x = Tensor([[[1.0, 2.0], [3.0, 4.0]]])
        np.testing.assert_array_equal([[[4.0]]], kernels.maxpool2d(x).data)
        np.testing.assert_array_equal(np.full((1, 2, 2), 3.0), kernels.maxpool2d(Tensor(np.full((1, 4, 4), 3.0))).data)

    def test_lstm_with_zero_weights(self):
        zeros = Tensor(np.zeros((1, 2)))
        h, c = kernels.lstm_cell(Tensor(np.zeros((1, 3))), zeros, zeros, Tensor(np.zeros((8, 5))), Tensor(np.zeros(8)))
        np.testing.assert_array_equal(np.zeros((1, 2)), h.data)
        np.testing.assert_array_equal(np.zeros((1, 2)), c.data)

    def test_saturated_forget_gate_keeps_the_cell(self):
        hidden = 2
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = 50.0
        bias[0:hidden] = -50.0
        c_prev = Tensor([[0.3, -0.7]])
        _, c = kernels.lstm_cell(
            Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, hidden))), c_prev, Tensor(np.zeros((8, 5))), Tensor(bias)
        )
        np.testing.assert_allclose(c_prev.data, c.data, atol=1e-12)

    def test_batchnorm_with_identity_affine(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(500, 1))
        x = (x - x.mean()) / x.std()
        out = kernels.batchnorm(
            Tensor(x),
            Tensor(np.ones(1)),
            Tensor(np.zeros(1)),
            Parameter(np.zeros(1), trainable=False),
            Parameter(np.ones(1), trainable=False),
        )
        np.testing.assert_allclose(x, out.data, atol=1e-4)

    def test_batchnorm_rejects_empty_batch(self):
        with self.assertRaises(ContractViolation):
            kernels.batchnorm(
                Tensor(np.zeros((0, 1))),
                Tensor(np.ones(1)),
                Tensor(np.zeros(1)),
                Parameter(np.zeros(1), trainable=False),
                Parameter(np.ones(1), trainable=False),
            )

    def test_bce_reference_values(self):
        self.assertAlmostEqual(np.log(2.0), kernels.bce_loss(Tensor([0.5]), [1.0]).item(), places=12)
        self.assertLess(kernels.bce_loss(Tensor([0.0, 1.0]), [0.0, 1.0]).item(), 1e-6)

    def test_kl_reference_value(self):
        self.assertAlmostEqual(0.5, kernels.kl_diag_gaussian(Tensor([1.0]), Tensor([0.0])).item())

    def test_reparameterize_reference_values(self):
        mu = Tensor([[0.4, -0.2]])
        np.testing.assert_array_equal(mu.data, kernels.reparameterize(mu, Tensor([[1.0, 1.0]]), np.zeros((1, 2))).data)
        tiny = kernels.reparameterize(mu, Tensor([[-1e6, -1e6]]), np.ones((1, 2)))
        np.testing.assert_allclose(mu.data, tiny.data, atol=1e-4)
