"""Uniform bucket grid over axis-aligned boxes.

Used to turn "which simplices could contain these points" into flat
(point, item) candidate arrays without Python-level loops.
"""

from __future__ import annotations

import numpy as np


class BoxIndex:
    """Bucket index of axis-aligned item boxes ``[lo_i, hi_i]``."""

    def __init__(self, lo: np.ndarray, hi: np.ndarray, max_cells: int = 1 << 22):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        m, k = lo.shape
        self.n_items = m
        self.lo_all = lo.min(axis=0) if m else np.zeros(k)
        self.hi_all = hi.max(axis=0) if m else np.ones(k)
        extent = np.maximum(self.hi_all - self.lo_all, 1e-300)

        # cell size ~ median item extent, bounded by a total cell budget
        if m:
            typical = np.maximum(np.median(hi - lo, axis=0), extent * 1e-6)
            dims = np.clip(np.ceil(extent / typical), 1, 4096).astype(np.int64)
        else:
            dims = np.ones(k, dtype=np.int64)
        budget = min(max_cells, 4 * max(m, 1) + 16)
        while np.prod(dims) > budget:
            dims = np.maximum(1, dims // 2)
        self.dims = dims
        self.cell = extent / dims

        ilo = self._cell_of(lo)
        ihi = self._cell_of(hi)
        span = ihi - ilo + 1
        counts = np.prod(span, axis=1)
        total = int(counts.sum())
        item = np.repeat(np.arange(m), counts)
        local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        flat = np.zeros(total, dtype=np.int64)
        stride = 1
        for a in range(k - 1, -1, -1):
            r = span[item, a]
            coord = ilo[item, a] + local % r
            local = local // r
            flat += coord * stride
            stride *= int(dims[a])
        order = np.argsort(flat, kind="stable")
        self.items = item[order]
        ncell = int(np.prod(dims))
        self.starts = np.zeros(ncell + 1, dtype=np.int64)
        np.cumsum(np.bincount(flat, minlength=ncell), out=self.starts[1:])

    def _cell_of(self, pts: np.ndarray) -> np.ndarray:
        idx = np.floor((pts - self.lo_all) / self.cell).astype(np.int64)
        return np.clip(idx, 0, self.dims - 1)

    def candidates(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Flat arrays ``(point_index, item_index)`` of every possible hit."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.all((points >= self.lo_all) & (points <= self.hi_all), axis=1)
        cells = self._cell_of(points)
        flat = np.zeros(len(points), dtype=np.int64)
        stride = 1
        for a in range(points.shape[1] - 1, -1, -1):
            flat += cells[:, a] * stride
            stride *= int(self.dims[a])
        begin = self.starts[flat]
        counts = np.where(inside, self.starts[flat + 1] - begin, 0)
        pidx = np.repeat(np.arange(len(points)), counts)
        offs = np.arange(int(counts.sum())) - np.repeat(np.cumsum(counts) - counts, counts)
        return pidx, self.items[np.repeat(begin, counts) + offs]
