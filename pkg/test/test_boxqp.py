import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose

from utils import Box, BoxQP, Interval, NotPsdError, minimize_box_linear, minimize_box_qp


def _random_psd(rng, n, rank=None):
    F = rng.normal(size=(n, rank or n))
    return F @ F.T / n


class TestMinimizeBoxQP:
    def test_separable_clamp(self):
        x, v = minimize_box_qp(BoxQP(np.eye(2), [2.0, -10.0], Box.cube(2, 3.0)))
        assert_allclose(x, [-1.0, 3.0])
        assert v == pytest.approx(-22.0)

    def test_linear_vertex(self):
        x, v = minimize_box_qp(BoxQP(np.zeros((2, 2)), [1.0, -1.0], Box.cube(2, 3.0)))
        assert_allclose(x, [-3.0, 3.0])
        assert v == pytest.approx(-6.0)

    def test_grid_oracle(self, rng):
        step = 0.1
        axis = np.linspace(-1.0, 1.0, int(round(2.0 / step)) + 1)
        grid = np.stack(np.meshgrid(*([axis] * 4), indexing="ij"), axis=-1).reshape(-1, 4)
        for _ in range(3):
            Q = _random_psd(rng, 4)
            m = rng.normal(size=4) * 2.0
            prob = BoxQP(Q, m, Box.cube(4, 1.0))
            x, v = minimize_box_qp(prob)
            assert prob.box.contains(x, tol=1e-12)
            values = np.einsum("ij,jk,ik->i", grid, Q, grid) + grid @ m
            slack = np.linalg.eigvalsh(Q).max() * 4 * (step / 2) ** 2
            assert v <= values.min() + 1e-9
            assert values.min() - v <= slack + 1e-9

    def test_singular_q_beats_samples(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 7))
            Q = _random_psd(rng, n, rank=1)
            m = rng.normal(size=n)
            lows, highs = -rng.uniform(0.5, 3, n), rng.uniform(0.5, 3, n)
            prob = BoxQP(Q, m, Box.from_bounds(lows, highs))
            x, v = minimize_box_qp(prob)
            assert prob.box.contains(x, tol=1e-12)
            assert v == pytest.approx(prob.value(x))
            samples = rng.uniform(lows, highs, size=(500, n))
            values = np.einsum("ij,jk,ik->i", samples, prob.Q, samples) + samples @ m
            assert v <= values.min() + 1e-9

    def test_not_psd(self):
        with pytest.raises(NotPsdError):
            BoxQP([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0], Box.cube(2, 1.0))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            BoxQP(np.eye(3), [0.0, 0.0], Box.cube(2, 1.0))


class TestMinimizeBoxLinear:
    @staticmethod
    def _boxes(lo, hi):
        return [[Interval(lo[i, j], hi[i, j]) for j in range(3)] for i in range(3)]

    def test_identity_coefficients(self):
        boxes = self._boxes(-np.ones((3, 3)), np.ones((3, 3)))
        R, v = minimize_box_linear(np.eye(3), boxes)
        assert_allclose(np.diag(R), [-1.0, -1.0, -1.0])
        assert v == pytest.approx(-3.0)

    def test_zero_coefficients(self, rng):
        lo = rng.uniform(-1.0, 0.0, size=(3, 3))
        hi = lo + rng.uniform(0.0, 1.0, size=(3, 3))
        R, v = minimize_box_linear(np.zeros((3, 3)), self._boxes(lo, hi))
        assert_allclose(R, lo)
        assert v == 0.0

    def test_vertex_enumeration(self, rng):
        for _ in range(20):
            G = rng.normal(size=(3, 3))
            lo = rng.uniform(-1.0, 0.5, size=(3, 3))
            hi = lo + rng.uniform(0.0, 0.5, size=(3, 3))
            R, v = minimize_box_linear(G, self._boxes(lo, hi))
            best = min(
                float(np.trace(G @ np.where(np.array(bits).reshape(3, 3) == 1, hi, lo)))
                for bits in itertools.product((0, 1), repeat=9)
            )
            assert v == pytest.approx(best, abs=1e-12)
            assert v == pytest.approx(float(np.trace(G @ R)), abs=1e-12)
            assert np.all(R >= lo) and np.all(R <= hi)
