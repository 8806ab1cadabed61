import numpy as np
import pytest

from topolab.grid import TopoGrid


@pytest.fixture(scope="module")
def grid():
    return TopoGrid()


class TestTopoGrid:
    def test_neighborhood_census(self, grid):
        sizes = [len(grid.moore(i)) for i in range(grid.unit_count)]
        assert sorted(set(sizes)) == [3, 5, 8]
        assert sizes.count(3) == 4
        assert sizes.count(5) == 36
        assert sizes.count(8) == 81
        assert sum(sizes) == 840
        assert grid.pair_count == 840

    def test_moore_symmetry(self, grid):
        for i in range(grid.unit_count):
            for j in grid.moore(i):
                assert i in grid.moore(j)

    def test_distance_metric(self, grid):
        assert np.allclose(grid.distances, grid.distances.T)
        assert np.all(np.diag(grid.distances) == 0)
        nonzero = grid.distances[grid.distances > 0]
        assert nonzero.min() == 1.0

    def test_row_major_positions(self, grid):
        assert grid.position(0) == (0, 0)
        assert grid.position(10) == (0, 10)
        assert grid.position(11) == (1, 0)
        assert grid.position(120) == (10, 10)

    def test_corner_neighbors(self, grid):
        assert set(grid.moore(0)) == {1, 11, 12}

    def test_adjacency_matches_pairs(self, grid):
        assert grid.adjacency.sum() == 840
        assert not grid.adjacency.diagonal().any()
        assert (grid.adjacency == grid.adjacency.T).all()

    def test_small_grids(self):
        g = TopoGrid(1, 2)
        assert g.pair_count == 2
        assert list(g.moore(0)) == [1]
        g3 = TopoGrid(3, 3)
        assert len(g3.moore(4)) == 8

    def test_bad_extent(self):
        with pytest.raises(ValueError):
            TopoGrid(0, 5)
