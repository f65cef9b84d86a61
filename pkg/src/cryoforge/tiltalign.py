"""Translation recovery for simulated tilt series.

Iterative phase correlation against an evolving reference with quadratic
sub-pixel peak refinement, followed by an exhaustive grid search for a
single in-plane tilt-axis rotation and vertical offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tiltsim import TiltSeries, fourier_shift_2d


class DegenerateImageError(ValueError):
    """Constant image: phase correlation has no defined peak."""


class UnderdeterminedError(ValueError):
    """Too few views to constrain the axis refinement."""


@dataclass
class AlignmentResult:
    shifts: list[tuple[float, float]]  # estimated applied (dx, dy) per tilt
    axis_angle: float = 0.0  # degrees, in-plane rotation from detector y
    axis_offset: float = 0.0  # voxels
    residual_mse: float = 0.0

    def __post_init__(self):
        if self.residual_mse < 0:
            raise ValueError("residual_mse must be >= 0")


def _parabolic_offset(ym: float, y0: float, yp: float) -> float:
    """Sub-pixel offset of a parabola through three equally spaced points."""
    denom = ym - 2.0 * y0 + yp
    if abs(denom) < 1e-30:
        return 0.0
    return float(np.clip(0.5 * (ym - yp) / denom, -0.5, 0.5))


def phase_correlate(img_a: np.ndarray, img_b: np.ndarray) -> tuple[float, float]:
    """Sub-pixel translation of img_b's content relative to img_a.

    Returns (dx, dy) such that img_b is (circularly) img_a shifted by
    (+dx, +dy): the normalized cross-power spectrum is inverse-transformed,
    the integer peak located, and each axis refined by a 3-point parabola
    through the peak and its circular neighbors.
    """
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("images must have equal dimensions")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DegenerateImageError("constant image has no correlation peak")
    Fa = np.fft.fft2(a)
    Fb = np.fft.fft2(b)
    cross = Fa * np.conj(Fb)
    mag = np.abs(cross)
    spectrum = np.where(mag < 1e-12, 0.0, cross / np.where(mag < 1e-12, 1.0, mag))
    corr = np.fft.ifft2(spectrum).real
    H, W = corr.shape
    iy, ix = np.unravel_index(np.argmax(corr), corr.shape)
    dy = iy + _parabolic_offset(
        corr[(iy - 1) % H, ix], corr[iy, ix], corr[(iy + 1) % H, ix]
    )
    dx = ix + _parabolic_offset(
        corr[iy, (ix - 1) % W], corr[iy, ix], corr[iy, (ix + 1) % W]
    )
    # peak sits at minus the applied shift; fold to the signed range
    if dy > H / 2:
        dy -= H
    if dx > W / 2:
        dx -= W
    return (-dx, -dy)


def align_series(
    series: TiltSeries, iterations: int = 3, tol: float = 0.01
) -> AlignmentResult:
    """Recover per-view drifts by iterative correlation to a reference.

    Iteration 1 aligns every view to the nearest-to-0-degree view; later
    iterations align to the mean of the currently aligned views. Per-view
    estimates accumulate; stops at the iteration budget or when the
    largest shift update drops below ``tol`` pixels.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    n = len(series.projections)
    ref_idx = series.zero_angle_index()
    estimates = np.zeros((n, 2))  # (dx, dy) estimated applied drift
    aligned = [p.astype(np.float64) for p in series.projections]
    reference = aligned[ref_idx]
    for _ in range(iterations):
        max_update = 0.0
        for i in range(n):
            try:
                dx, dy = phase_correlate(reference, aligned[i])
            except DegenerateImageError as exc:
                raise DegenerateImageError(f"tilt index {i}: {exc}") from exc
            estimates[i] += (dx, dy)
            aligned[i] = fourier_shift_2d(
                series.projections[i], -estimates[i, 0], -estimates[i, 1]
            )
            max_update = max(max_update, abs(dx), abs(dy))
        reference = np.mean(aligned, axis=0)
        if max_update < tol:
            break
    # the common translation of all views is unobservable: anchor the
    # estimates to zero mean so the aligned stack stays centered
    estimates -= estimates.mean(axis=0)
    return AlignmentResult(shifts=[(float(dx), float(dy)) for dx, dy in estimates])


def _axis_model(angles_deg: np.ndarray, axis_angle_deg: float, offset: float) -> np.ndarray:
    """Predicted (dx, dy) drift trajectory of a specimen center displaced
    from the tilt axis.

    A center offset by ``offset`` voxels perpendicular to an axis rotated
    in-plane by ``axis_angle_deg`` from the detector y-axis projects to
    offset*(cos theta - 1) along the rotated x direction.
    """
    theta = np.radians(angles_deg)
    phi = np.radians(axis_angle_deg)
    radial = offset * (np.cos(theta) - 1.0)
    return np.stack([radial * np.cos(phi), -radial * np.sin(phi)], axis=1)


def refine_axis(
    series: TiltSeries,
    shifts: list[tuple[float, float]],
    angle_range: float = 5.0,
    angle_step: float = 0.1,
    offset_range: float = 5.0,
    offset_step: float = 0.1,
) -> tuple[float, float, float]:
    """Grid-search the tilt-axis in-plane angle and vertical offset.

    Scores mean-squared error between the measured shift trajectory and
    the rigid-axis drift model over the full grid; ties break toward the
    smallest |angle| then smallest |offset|. Returns
    (axis_angle_deg, axis_offset, residual_mse).
    """
    if len(shifts) < 3:
        raise UnderdeterminedError("axis refinement needs at least 3 views")
    angles = np.asarray(series.geometry.angles)
    measured = np.asarray(shifts, dtype=float)
    n_a = int(round(2 * angle_range / angle_step)) + 1
    n_o = int(round(2 * offset_range / offset_step)) + 1
    cand_angles = (np.arange(n_a) - n_a // 2) * angle_step
    cand_offsets = (np.arange(n_o) - n_o // 2) * offset_step
    best = None
    for phi in cand_angles:
        for off in cand_offsets:
            mse = float(np.mean((measured - _axis_model(angles, phi, off)) ** 2))
            key = (mse, abs(phi), abs(off))
            if best is None or key < best[0]:
                best = (key, phi, off)
    assert best is not None
    (mse, _, _), phi, off = best
    return float(phi), float(off), mse
