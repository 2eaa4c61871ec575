import dataclasses
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.spatial.transform import Rotation

from test_modules.oracles import all_assignments, random_vertex, rigid_energy_direct
from utils import (Assignment, Box, GridMemoryError, RigidCase, RigidParams, precompute_rotation_grid,
                   rigid_fixed_ranges, rotation_entry_ranges, rotation_from_axis_angle)
from utils.rigid_case import kabsch, rigid_lower_bound, rigid_upper_bound


@pytest.fixture(scope="module")
def padded_grid():
    base = precompute_rotation_grid(g=40)
    return dataclasses.replace(base, padding=base.covering_padding)


@pytest.fixture(scope="module")
def small_grid():
    return precompute_rotation_grid(g=5)


def _centred(rng, n):
    X = rng.normal(size=(n, 3))
    X -= X.mean(axis=0)
    return X / np.linalg.norm(X, axis=1).max()


def _rigid_pair(rng, n, r=(0.3, -0.5, 0.8), t=(0.1, 0.2, -0.1)):
    X = _centred(rng, n)
    R0 = rotation_from_axis_angle(r)
    return X, X @ R0.T + np.asarray(t), R0


class TestRotation:
    def test_identity(self):
        assert_allclose(rotation_from_axis_angle([0.0, 0.0, 0.0]), np.eye(3))

    def test_half_turn(self):
        assert_allclose(rotation_from_axis_angle([math.pi, 0.0, 0.0]), np.diag([1.0, -1.0, -1.0]), atol=1e-15)

    def test_quarter_turn(self):
        assert_allclose(rotation_from_axis_angle([0.0, 0.0, math.pi / 2]),
                        [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], atol=1e-15)

    def test_orthonormal(self, rng):
        rs = np.vstack([rng.uniform(-math.pi, math.pi, size=(5000, 3)),
                        rng.normal(size=(5000, 3)) * 1e-8])
        for r in rs:
            R = rotation_from_axis_angle(r)
            assert_allclose(R.T @ R, np.eye(3), atol=1e-10)
            assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-10)

    def test_matches_scipy(self, rng):
        for r in rng.uniform(-math.pi, math.pi, size=(200, 3)):
            assert_allclose(rotation_from_axis_angle(r), Rotation.from_rotvec(r).as_matrix(), atol=1e-12)

    def test_non_finite(self):
        with pytest.raises(ValueError):
            rotation_from_axis_angle([np.nan, 0.0, 0.0])

    def test_params_round_trip(self):
        p = RigidParams.from_vector([0.1, 0.2, 0.3, 1.0, 2.0, 3.0])
        assert_allclose(p.to_vector(), [0.1, 0.2, 0.3, 1.0, 2.0, 3.0])
        assert p.R.shape == (3, 3)


class TestRotationGrid:
    def test_corners_only(self):
        grid = precompute_rotation_grid(g=2)
        assert grid.values.shape == (2, 2, 2, 3, 3)
        assert_allclose(grid.node(1, 1, 1), [math.pi] * 3)
        assert_allclose(grid.values[0, 1, 0], rotation_from_axis_angle([-math.pi, math.pi, -math.pi]))

    def test_centre_node_is_identity(self):
        grid = precompute_rotation_grid(g=51)
        assert_allclose(grid.node(25, 25, 25), 0.0, atol=1e-15)
        ranges = rotation_entry_ranges(grid, Box.point([0.0, 0.0, 0.0]))
        eye = np.eye(3)
        for i in range(3):
            for j in range(3):
                assert abs(ranges[i][j].lo - eye[i, j]) <= 1e-2
                assert abs(ranges[i][j].hi - eye[i, j]) <= 1e-2

    def test_single_node_is_degenerate(self, small_grid):
        node = small_grid.node(1, 2, 3)
        ranges = rotation_entry_ranges(small_grid, Box.point(node))
        R = small_grid.values[1, 2, 3]
        for i in range(3):
            for j in range(3):
                assert ranges[i][j].lo == ranges[i][j].hi == R[i, j]

    def test_recomputation(self, small_grid, rng):
        for idx in rng.integers(0, 5, size=(20, 3)):
            assert_allclose(small_grid.values[tuple(idx)], rotation_from_axis_angle(small_grid.node(*idx)),
                            atol=1e-15)

    def test_read_only(self, small_grid):
        with pytest.raises(ValueError):
            small_grid.values[0, 0, 0, 0, 0] = 2.0

    def test_full_cube_ranges(self, small_grid):
        ranges = rotation_entry_ranges(small_grid, small_grid.bounds)
        for row in ranges:
            for iv in row:
                assert -1.0 - 1e-12 <= iv.lo <= iv.hi <= 1.0 + 1e-12
        assert ranges[0][0].hi == pytest.approx(1.0)

    def test_nested_boxes(self, rng):
        grid = precompute_rotation_grid(g=21)
        for _ in range(50):
            lows = rng.uniform(-math.pi, 2.0, size=3)
            parent = Box.from_bounds(lows, np.minimum(lows + rng.uniform(0.0, 1.5, 3), math.pi))
            child = Box.from_bounds(rng.uniform(parent.lows, parent.center), parent.highs)
            outer = rotation_entry_ranges(grid, parent)
            inner = rotation_entry_ranges(grid, child)
            for i in range(3):
                for j in range(3):
                    assert outer[i][j].lo <= inner[i][j].lo and inner[i][j].hi <= outer[i][j].hi

    def test_padding_covers_samples(self, padded_grid, rng):
        for _ in range(50):
            lows = rng.uniform(-math.pi, 2.5, size=3)
            rbox = Box.from_bounds(lows, np.minimum(lows + rng.uniform(0.0, 0.6, 3), math.pi))
            ranges = rotation_entry_ranges(padded_grid, rbox)
            for r in rng.uniform(rbox.lows, rbox.highs, size=(50, 3)):
                R = rotation_from_axis_angle(r)
                for i in range(3):
                    for j in range(3):
                        assert ranges[i][j].contains(R[i, j], tol=1e-12)

    def test_covering_padding_value(self):
        grid = precompute_rotation_grid(g=50)
        assert grid.covering_padding == pytest.approx(0.5 * math.sqrt(3.0) * 2.0 * math.pi / 49)
        assert grid.covering_padding == pytest.approx(0.1111, abs=1e-4)

    def test_unpadded_error_within_covering_padding(self, rng):
        grid = precompute_rotation_grid(g=12)
        delta = grid.covering_padding
        worst = 0.0
        for _ in range(40):
            lows = rng.uniform(-math.pi, 2.5, size=3)
            rbox = Box.from_bounds(lows, np.minimum(lows + rng.uniform(0.0, 0.6, 3), math.pi))
            ranges = rotation_entry_ranges(grid, rbox)
            for r in rng.uniform(rbox.lows, rbox.highs, size=(50, 3)):
                R = rotation_from_axis_angle(r)
                for i in range(3):
                    for j in range(3):
                        iv = ranges[i][j]
                        worst = max(worst, iv.lo - R[i, j], R[i, j] - iv.hi)
        assert worst <= delta + 1e-12

    def test_memory_guard(self):
        with pytest.raises(GridMemoryError):
            precompute_rotation_grid(g=10, cap=100)

    def test_invalid_resolution(self):
        with pytest.raises(ValueError):
            precompute_rotation_grid(g=1)

    def test_box_outside_cube(self, small_grid):
        with pytest.raises(ValueError):
            rotation_entry_ranges(small_grid, Box.cube(3, 4.0))


class TestRigidFixedRanges:
    def test_matches_enumeration(self, rng, small_grid):
        X, Y = _centred(rng, 2), rng.normal(size=(2, 3))
        asm = rigid_fixed_ranges(X, Y, 1, grid=small_grid)
        matrices = [a.to_matrix() for a in all_assignments(2, 2, 1)]
        for a in range(3):
            values = [float(-2.0 * Y[:, a] @ P.sum(axis=0)) for P in matrices]
            assert (asm.u_ranges[a].lo, asm.u_ranges[a].hi) == pytest.approx((min(values), max(values)))
            for b in range(3):
                values = [float((-2.0 * X.T @ P @ Y)[b, a]) for P in matrices]
                iv = asm.n_ranges[b][a]
                assert (iv.lo, iv.hi) == pytest.approx((min(values), max(values)))
        for b in range(3):
            values = [float(2.0 * X[:, b] @ P.sum(axis=1)) for P in matrices]
            iv = asm.w_ranges[b]
            assert (iv.lo, iv.hi) == pytest.approx((min(min(values), 0.0), max(max(values), 0.0)))

    def test_symmetric_model(self, rng, small_grid):
        X = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        asm = rigid_fixed_ranges(X, rng.normal(size=(3, 3)), 1, grid=small_grid)
        assert asm.w_ranges[0].lo == pytest.approx(-asm.w_ranges[0].hi)

    def test_w_ranges_contain_zero(self, rng, small_grid):
        asm = rigid_fixed_ranges(_centred(rng, 8), _centred(rng, 6), 4, grid=small_grid)
        assert all(iv.lo <= 0.0 <= iv.hi for iv in asm.w_ranges)

    def test_uncentred_model(self, rng, small_grid):
        X = rng.uniform(1.0, 2.0, size=(3, 3))
        with pytest.raises(ValueError, match="centrado"):
            rigid_fixed_ranges(X, rng.normal(size=(3, 3)), 1, grid=small_grid)

    def test_requires_3d(self, rng, small_grid):
        with pytest.raises(ValueError):
            rigid_fixed_ranges(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), 1, grid=small_grid)

    def test_energy_matches_direct(self, rng, small_grid):
        X, Y = _centred(rng, 4), rng.normal(size=(5, 3))
        asm = rigid_fixed_ranges(X, Y, 3, grid=small_grid)
        a = random_vertex(4, 5, 3, rng)
        R, t = rotation_from_axis_angle(rng.normal(size=3)), rng.normal(size=3)
        assert asm.energy(a, R, t) == pytest.approx(rigid_energy_direct(X, Y, a, R, t))


class TestRigidUpperBound:
    def test_kabsch_recovers_rotation(self, rng):
        X, Y, R0 = _rigid_pair(rng, 6, t=(0.0, 0.0, 0.0))
        R, t = kabsch(X, Y)
        assert_allclose(R, R0, atol=1e-9)
        assert_allclose(t, 0.0, atol=1e-9)

    def test_reflection_guard(self, rng):
        X = _centred(rng, 6)
        R, _ = kabsch(X, X * np.array([1.0, 1.0, -1.0]))
        assert np.linalg.det(R) == pytest.approx(1.0)
        assert_allclose(R.T @ R, np.eye(3), atol=1e-12)

    def test_exact_match(self, rng, small_grid):
        X, Y, R0 = _rigid_pair(rng, 5)
        asm = rigid_fixed_ranges(X, Y, 5, grid=small_grid)
        ub = rigid_upper_bound(asm, Assignment(tuple((i, i) for i in range(5)), 5, 5, 5))
        assert ub.value <= 1e-12
        assert_allclose(ub.R, R0, atol=1e-9)
        assert ub.flags == ()

    def test_below_random_poses(self, rng, small_grid):
        X, Y = _centred(rng, 5), rng.normal(size=(5, 3))
        asm = rigid_fixed_ranges(X, Y, 4, grid=small_grid)
        a = random_vertex(5, 5, 4, rng)
        ub = rigid_upper_bound(asm, a)
        for _ in range(1000):
            R = rotation_from_axis_angle(rng.uniform(-math.pi, math.pi, size=3))
            t = rng.uniform(-3.0, 3.0, size=3)
            assert ub.value <= rigid_energy_direct(X, Y, a, R, t) + 1e-9

    def test_underdetermined_flag(self, rng, small_grid):
        asm = rigid_fixed_ranges(_centred(rng, 3), _centred(rng, 3), 2, grid=small_grid)
        ub = rigid_upper_bound(asm, random_vertex(3, 3, 2, rng))
        assert "rotation_underdetermined" in ub.flags
        assert np.linalg.det(ub.R) == pytest.approx(1.0)

    def test_translation_clamped_to_box(self, rng, small_grid):
        X, Y, R0 = _rigid_pair(rng, 5, t=(4.5, -0.2, 0.1))
        asm = rigid_fixed_ranges(X, Y, 5, grid=small_grid)
        a = Assignment(tuple((i, i) for i in range(5)), 5, 5, 5)
        ub = rigid_upper_bound(asm, a)
        assert "t_clamped" in ub.flags
        assert np.all(np.abs(ub.t) <= asm.trans_bound)
        assert_allclose(ub.t, [3.0, -0.2, 0.1], atol=1e-9)
        assert ub.value == pytest.approx(rigid_energy_direct(X, Y, a, ub.R, ub.t))
        # mínimo exacto sobre la caja de t con la R de Kabsch
        for _ in range(200):
            t = rng.uniform(-3.0, 3.0, size=3)
            assert ub.value <= rigid_energy_direct(X, Y, a, ub.R, t) + 1e-9


class TestRigidLowerBound:
    def test_below_sampled_energy(self, rng, padded_grid):
        X, Y = _centred(rng, 4), _centred(rng, 4)
        asm = rigid_fixed_ranges(X, Y, 3, grid=padded_grid)
        for _ in range(5):
            rl = rng.uniform(-math.pi, 2.0, size=3)
            rbox = Box.from_bounds(rl, np.minimum(rl + rng.uniform(0.2, 1.0, 3), math.pi))
            tl = rng.uniform(-3.0, 2.0, size=3)
            tbox = Box.from_bounds(tl, np.minimum(tl + rng.uniform(0.2, 1.0, 3), 3.0))
            lb = rigid_lower_bound(asm, rbox, tbox)
            assert tbox.contains(lb.t, tol=1e-12)
            for _ in range(200):
                a = random_vertex(4, 4, 3, rng)
                R = rotation_from_axis_angle(rng.uniform(rbox.lows, rbox.highs))
                t = rng.uniform(tbox.lows, tbox.highs)
                assert lb.beta <= rigid_energy_direct(X, Y, a, R, t) + 1e-9

    def test_exact_match_box_with_truth(self, rng, padded_grid):
        r0, t0 = np.array([0.3, -0.5, 0.8]), np.array([0.1, 0.2, -0.1])
        X, Y, _ = _rigid_pair(rng, 4, r=r0, t=t0)
        asm = rigid_fixed_ranges(X, Y, 4, grid=padded_grid)
        lb = rigid_lower_bound(asm, Box.from_bounds(r0 - 0.1, r0 + 0.1), Box.from_bounds(t0 - 0.1, t0 + 0.1))
        assert lb.beta <= 1e-9


class TestRigidCase:
    def test_node_bound_below_candidates(self, rng, padded_grid):
        X, Y, _ = _rigid_pair(rng, 4)
        case = RigidCase(rigid_fixed_ranges(X, Y, 3, grid=padded_grid))
        box = case.initial_box()
        assert len(box) == 6
        assert_allclose(box.highs, [math.pi] * 3 + [3.0] * 3)
        ev = case.evaluate_node(box)
        for a in ev.candidates:
            cand = case.upper_bound(a)
            assert ev.beta <= cand.value + 1e-9
            assert_allclose(Rotation.from_rotvec(cand.params[:3]).as_matrix(),
                            rigid_upper_bound(case.asm, a).R, atol=1e-9)
