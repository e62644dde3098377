"""Map signed distances to the occupancy scale of the decoder output and back."""

from __future__ import annotations

import numpy as np

from ..sdf import SdfGrid

D_MAX_CELLS = 4.0


def default_d_max(grid: SdfGrid, cells: float = D_MAX_CELLS) -> float:
    return cells * grid.spacing


def normalize_sdf(grid: SdfGrid, d_max: float | None = None) -> np.ndarray:
    """clamp(0.5 + 0.5 value / d_max, 0, 1); the surface maps to 0.5."""
    d_max = default_d_max(grid) if d_max is None else float(d_max)
    if not d_max > 0:
        raise ValueError("d_max must be positive")
    return np.clip(0.5 + 0.5 * np.asarray(grid.values, dtype=np.float64) / d_max, 0.0, 1.0)


def denormalize(values, d_max: float, origin=(0.0, 0.0, 0.0), spacing: float = 1.0) -> SdfGrid:
    """Inverse of :func:`normalize_sdf`; clamped endpoints map to +-d_max."""
    if not d_max > 0:
        raise ValueError("d_max must be positive")
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return SdfGrid((2.0 * v - 1.0) * d_max, origin, spacing)
