import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sdf_uncertainty.deformation import DeformationGrid, footprint, normalize_coords, query_deformation
from sdf_uncertainty.errors import InvalidInputError
from sdf_uncertainty.geometry import Aabb

BOX = Aabb([-1.0] * 3, [1.0] * 3)


def lattice_position(grid, ijk):
    return grid.aabb.min + np.asarray(ijk, dtype=np.float64) / grid.resolution * grid.aabb.extent


class TestNormalize:
    def test_corners_and_midpoint(self):
        box = Aabb([-2.0, 0.0, 1.0], [2.0, 4.0, 3.0])
        np.testing.assert_array_equal(normalize_coords(box.min, box), [0, 0, 0])
        np.testing.assert_array_equal(normalize_coords(box.max, box), [1, 1, 1])
        np.testing.assert_array_equal(normalize_coords([0.0, 0.0, 0.0], BOX), [0.5, 0.5, 0.5])

    def test_outside_clamps(self):
        np.testing.assert_array_equal(normalize_coords([5.0, -7.0, 0.0], BOX), [1.0, 0.0, 0.5])

    def test_degenerate_box(self):
        class Flat:
            min = np.zeros(3)
            max = np.array([1.0, 0.0, 1.0])

        with pytest.raises(InvalidInputError):
            normalize_coords([0.0, 0.0, 0.0], Flat())


class TestGrid:
    def test_shape_and_zero_init(self):
        g = DeformationGrid(3, BOX)
        assert g.resolution == 8
        assert g.offsets.shape == (9, 9, 9, 3)
        assert g.is_zero()

    def test_rejects_wrong_shape_and_nonfinite(self):
        with pytest.raises(InvalidInputError):
            DeformationGrid(2, BOX, np.zeros((4, 4, 4, 3)))
        bad = np.zeros((5, 5, 5, 3))
        bad[1, 1, 1, 0] = np.inf
        with pytest.raises(InvalidInputError):
            DeformationGrid(2, BOX, bad)

    def test_flat_index_round_trip(self):
        g = DeformationGrid(2, BOX)
        flat = np.arange(g.n_vertices)
        np.testing.assert_array_equal(g.flat_index(g.unflatten(flat)), flat)
        # x varies fastest
        np.testing.assert_array_equal(g.unflatten([0, 1, 5, 25]), [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])


class TestFootprint:
    def test_at_vertex(self):
        g = DeformationGrid(2, BOX)
        fp = footprint(g, lattice_position(g, (1, 2, 3)))
        hit = [tuple(c) for c, w in zip(fp.corners, fp.weights) if w == 1.0]
        assert hit == [(1, 2, 3)]
        assert np.count_nonzero(fp.weights) == 1

    def test_cell_center(self):
        g = DeformationGrid(2, BOX)
        fp = footprint(g, lattice_position(g, (1.5, 0.5, 2.5)))
        np.testing.assert_allclose(fp.weights, 0.125, atol=1e-15)

    def test_edge_midpoint(self):
        g = DeformationGrid(2, BOX)
        fp = footprint(g, lattice_position(g, (1.5, 2.0, 1.0)))
        nz = {tuple(c): w for c, w in zip(fp.corners, fp.weights) if w > 0}
        assert set(nz) == {(1, 2, 1), (2, 2, 1)}
        np.testing.assert_allclose(list(nz.values()), 0.5, atol=1e-15)

    def test_corners_form_one_cell(self, rng):
        g = DeformationGrid(3, BOX)
        for x in rng.uniform(-1.2, 1.2, size=(50, 3)):
            fp = footprint(g, x)
            d = fp.corners - fp.corners.min(axis=0)
            assert set(map(tuple, d)) == {(i, j, k) for i in (0, 1) for j in (0, 1) for k in (0, 1)}
            assert fp.corners.min() >= 0 and fp.corners.max() <= g.resolution

    def test_partition_of_unity(self, rng):
        g = DeformationGrid(5, BOX)
        pts = rng.uniform(-1.0, 1.0, size=(10_000, 3))
        _, w = g.footprints(pts)
        assert np.all((w >= 0) & (w <= 1))
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12, rtol=0)

    def test_upper_boundary_point(self):
        g = DeformationGrid(2, BOX)
        fp = footprint(g, BOX.max)
        assert fp.corners.max() == g.resolution
        assert fp.weights.sum() == pytest.approx(1.0, abs=1e-15)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            footprint(DeformationGrid(2, BOX), [np.nan, 0, 0])


class TestQuery:
    def test_constant_field(self, rng):
        v = np.array([0.1, -0.2, 0.3])
        g = DeformationGrid(3, BOX, np.broadcast_to(v, (9, 9, 9, 3)).copy())
        np.testing.assert_allclose(query_deformation(g, rng.uniform(-1, 1, size=(100, 3))),
                                   np.broadcast_to(v, (100, 3)), atol=1e-15)

    def test_zero_field(self, rng):
        g = DeformationGrid(3, BOX)
        np.testing.assert_array_equal(query_deformation(g, rng.uniform(-1, 1, size=(20, 3))), 0.0)

    def test_single_corner(self):
        g = DeformationGrid(2, BOX)
        g.offsets[2, 1, 1] = (1.0, 0.0, 0.0)
        np.testing.assert_array_equal(query_deformation(g, lattice_position(g, (2, 1, 1))), [1, 0, 0])
        np.testing.assert_allclose(query_deformation(g, lattice_position(g, (2.5, 1.5, 1.5))), [0.125, 0, 0],
                                   atol=1e-15)

    def test_exact_at_every_vertex(self, rng):
        g = DeformationGrid(3, BOX, rng.normal(size=(9, 9, 9, 3)))
        ijk = np.stack(np.meshgrid(*[np.arange(9)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
        got = query_deformation(g, lattice_position(g, ijk))
        # vertex positions computed in floating point may land an ulp inside a neighbouring cell
        np.testing.assert_allclose(got, g.offsets[ijk[:, 0], ijk[:, 1], ijk[:, 2]], atol=1e-12, rtol=0)

    def test_world_displacement_scales_by_extent(self):
        box = Aabb([0.0, 0.0, 0.0], [2.0, 4.0, 8.0])
        g = DeformationGrid(2, box, np.full((5, 5, 5, 3), 0.5))
        np.testing.assert_allclose(g.world_displacement(np.array([[1.0, 1.0, 1.0]])), [[1.0, 2.0, 4.0]])

    def test_continuity(self, rng):
        g = DeformationGrid(3, BOX, rng.normal(size=(9, 9, 9, 3)))
        bound = 8 * np.max(np.linalg.norm(g.offsets, axis=-1)) * g.resolution
        x = rng.uniform(-0.99, 0.99, size=(500, 3))
        delta = rng.normal(size=(500, 3))
        delta *= 1e-7 / np.linalg.norm(delta, axis=-1, keepdims=True)
        same_cell = np.all(np.floor((x + 1) / 2 * 8) == np.floor((x + delta + 1) / 2 * 8), axis=-1)
        diff = np.linalg.norm(g.query(x + delta) - g.query(x), axis=-1)
        assert np.all(diff[same_cell] <= bound * 1e-7)

    @settings(max_examples=30, deadline=None)
    @given(a=arrays(np.float64, (5, 5, 5, 3), elements=st.floats(-1, 1)),
           b=arrays(np.float64, (5, 5, 5, 3), elements=st.floats(-1, 1)),
           x=arrays(np.float64, (8, 3), elements=st.floats(-1.1, 1.1)))
    def test_linear_in_offsets(self, a, b, x):
        ga, gb = DeformationGrid(2, BOX, a), DeformationGrid(2, BOX, b)
        np.testing.assert_allclose(query_deformation(ga + gb, x),
                                   query_deformation(ga, x) + query_deformation(gb, x), atol=1e-12, rtol=0)

    def test_add_rejects_mismatch(self):
        with pytest.raises(InvalidInputError):
            DeformationGrid(2, BOX) + DeformationGrid(3, BOX)
