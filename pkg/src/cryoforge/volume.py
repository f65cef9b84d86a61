"""Core volumetric container shared by every pipeline stage."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class DensityVolume:
    """3D scalar grid with physical voxel spacing.

    Axis order is (d, h, w) with w fastest in memory and on disk, matching
    the column-fastest MRC layout. ``voxel_size`` is Angstrom per voxel and
    ``origin`` is an Angstrom offset of the first voxel.
    """

    data: np.ndarray
    voxel_size: float = 1.0
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.float32))

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError("volume data must be 3D with all dimensions >= 1")
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        self.origin = np.asarray(self.origin, dtype=np.float32).reshape(3)
        if not np.all(np.isfinite(self.data)):
            raise ValueError("volume contains NaN/Inf values")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    def copy(self) -> "DensityVolume":
        return DensityVolume(self.data.copy(), self.voxel_size, self.origin.copy())

    def with_data(self, data: np.ndarray) -> "DensityVolume":
        """Same spacing/origin, new payload."""
        return DensityVolume(data, self.voxel_size, self.origin.copy())
