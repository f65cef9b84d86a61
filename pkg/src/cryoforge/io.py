"""MRC2014 volume I/O (mode 2 only) and NDJSON ground-truth sidecars.

The writer emits a standard 1024-byte MRC2014 header followed by the raw
float32 payload, little-endian, machine stamp 0x44 0x44 0x00 0x00. Only
mode 2 (32-bit float) is supported; everything the pipeline produces is a
float density and keeping a single mode makes round-trips bit-exact.

Ground-truth metadata travels in newline-delimited JSON sidecars, one
record per line, so it stays human-inspectable and streamable.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .volume import DensityVolume

HEADER_SIZE = 1024
MODE_FLOAT32 = 2
_MACHINE_STAMP_LE = b"\x44\x44\x00\x00"

SNR_TAGS = ("clean", "100", "0.1", "0.05", "0.03", "0.01")


class MrcFormatError(ValueError):
    """Malformed MRC header or truncated payload."""


class UnsupportedModeError(MrcFormatError):
    """MRC mode other than 2 (32-bit float)."""


class MetadataParseError(ValueError):
    """Malformed NDJSON metadata line; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass
class SubtomogramRecord:
    """Per-subtomogram ground truth carried alongside the MRC files."""

    volume_path: str
    class_label: str
    center_offset: tuple[float, float, float]
    orientation: tuple[float, float, float, float]  # unit quaternion (w, x, y, z)
    snr_tag: str
    mask_path: str | None = None

    def __post_init__(self):
        self.center_offset = tuple(float(v) for v in self.center_offset)
        self.orientation = tuple(float(v) for v in self.orientation)
        if len(self.center_offset) != 3:
            raise ValueError("center_offset must have 3 components")
        if len(self.orientation) != 4:
            raise ValueError("orientation must be a quaternion (w, x, y, z)")
        norm = float(np.linalg.norm(self.orientation))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {norm} deviates from 1 by more than 1e-9")
        if self.snr_tag not in SNR_TAGS:
            raise ValueError(f"snr_tag must be one of {SNR_TAGS}, got {self.snr_tag!r}")


def write_mrc(vol: DensityVolume, path) -> None:
    """Write a volume as an MRC2014 mode-2 file.

    nx/ny/nz map to (W, H, D) of the (d, h, w) data array; cella is the
    voxel size times the grid dimensions; dmin/dmax/dmean are computed from
    the payload.
    """
    data = vol.data
    nz, ny, nx = data.shape  # (d, h, w) -> nz, ny, nx
    header = bytearray(HEADER_SIZE)
    struct.pack_into("<3i", header, 0, nx, ny, nz)
    struct.pack_into("<i", header, 12, MODE_FLOAT32)
    struct.pack_into("<3i", header, 16, 0, 0, 0)  # nxstart/nystart/nzstart
    struct.pack_into("<3i", header, 28, nx, ny, nz)  # mx/my/mz
    struct.pack_into(
        "<3f", header, 40, nx * vol.voxel_size, ny * vol.voxel_size, nz * vol.voxel_size
    )
    struct.pack_into("<3f", header, 52, 90.0, 90.0, 90.0)  # cell angles
    struct.pack_into("<3i", header, 64, 1, 2, 3)  # mapc/mapr/maps
    struct.pack_into(
        "<3f", header, 76, float(data.min()), float(data.max()), float(data.mean())
    )
    struct.pack_into("<i", header, 88, 1)  # ispg: 3D volume
    struct.pack_into("<i", header, 92, 0)  # nsymbt
    struct.pack_into("<3f", header, 196, *vol.origin.tolist())
    header[208:212] = b"MAP "
    header[212:216] = _MACHINE_STAMP_LE
    struct.pack_into("<f", header, 216, float(data.std()))
    struct.pack_into("<i", header, 220, 0)  # nlabl
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_mrc(path) -> DensityVolume:
    """Read an MRC2014 mode-2 file written by :func:`write_mrc` or peers."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER_SIZE:
        raise MrcFormatError(f"{path}: file shorter than the 1024-byte MRC header")
    header = raw[:HEADER_SIZE]
    nx, ny, nz = struct.unpack_from("<3i", header, 0)
    (mode,) = struct.unpack_from("<i", header, 12)
    if header[208:212] != b"MAP ":
        raise MrcFormatError(f"{path}: missing 'MAP ' magic at byte 208")
    if mode != MODE_FLOAT32:
        raise UnsupportedModeError(f"{path}: mode {mode} unsupported, only mode 2 is handled")
    if min(nx, ny, nz) < 1:
        raise MrcFormatError(f"{path}: non-positive dimensions nx={nx} ny={ny} nz={nz}")
    mx, my, mz = struct.unpack_from("<3i", header, 28)
    cella = struct.unpack_from("<3f", header, 40)
    if mx < 1 or my < 1 or mz < 1:
        raise MrcFormatError(f"{path}: non-positive sampling grid mx={mx} my={my} mz={mz}")
    voxel_sizes = np.array(cella, dtype=np.float64) / np.array([mx, my, mz], dtype=np.float64)
    if np.any(voxel_sizes <= 0):
        raise MrcFormatError(f"{path}: non-positive cella {cella}")
    if np.ptp(voxel_sizes) > 1e-4 * voxel_sizes.mean():
        raise MrcFormatError(f"{path}: anisotropic voxel size {tuple(voxel_sizes)} unsupported")
    (nsymbt,) = struct.unpack_from("<i", header, 92)
    if nsymbt < 0:
        raise MrcFormatError(f"{path}: negative nsymbt {nsymbt}")
    origin = np.array(struct.unpack_from("<3f", header, 196), dtype=np.float32)
    n_values = nx * ny * nz
    offset = HEADER_SIZE + nsymbt
    expected = offset + 4 * n_values
    if len(raw) < expected:
        raise MrcFormatError(
            f"{path}: truncated data section, expected {expected} bytes, found {len(raw)}"
        )
    data = np.frombuffer(raw, dtype="<f4", count=n_values, offset=offset)
    data = data.reshape(nz, ny, nx)  # x fastest on disk -> (d, h, w)
    return DensityVolume(data.copy(), float(voxel_sizes.mean()), origin)


def write_metadata(records, path) -> None:
    """Write SubtomogramRecords as NDJSON, one record per line."""
    path = Path(path)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec), sort_keys=True))
            fh.write("\n")


def read_metadata(path) -> list[SubtomogramRecord]:
    """Read an NDJSON sidecar back into SubtomogramRecords."""
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MetadataParseError(lineno, f"invalid JSON: {exc}") from exc
            try:
                records.append(
                    SubtomogramRecord(
                        volume_path=payload["volume_path"],
                        class_label=payload["class_label"],
                        center_offset=tuple(payload["center_offset"]),
                        orientation=tuple(payload["orientation"]),
                        snr_tag=payload["snr_tag"],
                        mask_path=payload.get("mask_path"),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise MetadataParseError(lineno, str(exc)) from exc
    return records


def write_ndjson(rows: list[dict], path) -> None:
    """Write generic dict rows as NDJSON (angles, shifts, provenance...)."""
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")


def read_ndjson(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise MetadataParseError(lineno, f"invalid JSON: {exc}") from exc
    return rows
