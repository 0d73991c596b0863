import unittest

import numpy as np

from acis.core.compute import ops
from acis.core.compute.gradcheck import finite_difference_check
from acis.core.compute.tensor import Parameter, Tensor
from acis.core.exceptions import ContractViolation


class TestFiniteDifferenceCheck(unittest.TestCase):
    def test_correct_gradient_passes(self):
        point = Tensor([0.3, -1.2, 2.0], requires_grad=True)
        error = finite_difference_check(lambda p: (ops.tanh(p) * p).sum(), point)
        self.assertLess(error, 1e-6)

    def test_wrong_gradient_is_reported(self):
        def broken(x: Tensor) -> Tensor:
            def backward(grad):
                x.accumulate(grad * 3.0 * np.ones_like(x.data))

            return Tensor.from_op(np.array((x.data**2).sum()), (x,), backward)

        point = Tensor([1.0, 2.0], requires_grad=True)
        self.assertGreater(finite_difference_check(broken, point), 0.1)

    def test_point_is_restored(self):
        point = Parameter(np.array([1.0, 2.0, 3.0]))
        finite_difference_check(lambda p: (p * p).sum(), point)
        np.testing.assert_array_equal([1.0, 2.0, 3.0], point.data)
        np.testing.assert_array_equal(np.zeros(3), point.grad)

    def test_sampled_coordinates(self):
        point = Tensor(np.linspace(-1, 1, 50), requires_grad=True)
        error = finite_difference_check(lambda p: (p * p * p).sum(), point, samples=5, seed=3)
        self.assertLess(error, 1e-6)

    def test_needs_grad(self):
        with self.assertRaises(ContractViolation):
            finite_difference_check(lambda p: p.sum(), Tensor([1.0]))

    def test_needs_scalar_output(self):
        with self.assertRaises(ContractViolation):
            finite_difference_check(lambda p: p * 2.0, Tensor([1.0, 2.0], requires_grad=True))
