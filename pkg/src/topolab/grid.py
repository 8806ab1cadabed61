"""Spatial grid layout for the topographic fc1 layer.

Units are laid out row-major on a rows x cols lattice (11 x 11 for the two
reference networks). The grid provides positions, Euclidean pairwise
distances and Moore neighborhoods, which every spatial loss and spatial
statistic is defined against.
"""

from __future__ import annotations

import numpy as np


class TopoGrid:
    """Row-major lattice of units with Moore neighborhoods.

    Unit i sits at (i // cols, i % cols). Neighborhood sizes are 3 at the
    corners, 5 on non-corner borders and 8 in the interior.
    """

    def __init__(self, rows: int = 11, cols: int = 11):
        if rows < 1 or cols < 1:
            raise ValueError(f"grid extents must be positive, got {rows}x{cols}")
        self.rows = rows
        self.cols = cols
        self.unit_count = rows * cols

        r, c = np.divmod(np.arange(self.unit_count), cols)
        self.positions = np.stack([r, c], axis=1).astype(np.float64)

        diff = self.positions[:, None, :] - self.positions[None, :, :]
        self.distances = np.sqrt((diff**2).sum(axis=2))

        self._neighbors = []
        for i in range(self.unit_count):
            ri, ci = int(r[i]), int(c[i])
            idx = []
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if dr == 0 and dc == 0:
                        continue
                    rj, cj = ri + dr, ci + dc
                    if 0 <= rj < rows and 0 <= cj < cols:
                        idx.append(rj * cols + cj)
            self._neighbors.append(np.array(idx, dtype=np.intp))

        # ordered (i, j) neighbor pairs; 840 of them on the 11x11 grid
        pair_i = np.concatenate(
            [np.full(len(n), i, dtype=np.intp) for i, n in enumerate(self._neighbors)]
        )
        pair_j = np.concatenate(self._neighbors)
        self.pair_i = pair_i
        self.pair_j = pair_j

        self.adjacency = np.zeros((self.unit_count, self.unit_count), dtype=bool)
        self.adjacency[pair_i, pair_j] = True

    @property
    def side(self) -> int:
        if self.rows != self.cols:
            raise ValueError("side is only defined for square grids")
        return self.rows

    def position(self, i: int) -> tuple[int, int]:
        return i // self.cols, i % self.cols

    def d(self, i: int, j: int) -> float:
        return float(self.distances[i, j])

    def moore(self, i: int) -> np.ndarray:
        """Index set of unit i's immediate (Moore) neighbors."""
        return self._neighbors[i]

    @property
    def pair_count(self) -> int:
        """Number of ordered neighbor pairs (840 for 11x11)."""
        return len(self.pair_i)

    def __repr__(self) -> str:
        return f"TopoGrid({self.rows}x{self.cols}, {self.pair_count} ordered neighbor pairs)"
