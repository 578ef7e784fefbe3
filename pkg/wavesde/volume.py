"""Dense 3D volumes, orthogonal-plane slicing and the volume file format.

Voxel ``(x, y, z)`` lives at ``data[x, y, z]``. Storage is Fortran ordered so
x runs fastest and z slowest, which keeps XY sections contiguous.
"""

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from .errors import BoundsError, DimensionError, VolumeIOError


logger = logging.getLogger(__name__)

DTYPE_TAG = "f32le"
NOMINAL_RANGE = (0.0, 1.0)


class Plane(str, Enum):
    XY = "xy"
    XZ = "xz"

    @property
    def axis(self) -> int:
        """Volume axis that indexes the slices of this plane."""
        return 2 if self is Plane.XY else 1

    @property
    def order(self) -> Tuple[int, int, int]:
        """Axis permutation that turns a volume into a (slices, H, W) stack."""
        return (2, 0, 1) if self is Plane.XY else (1, 0, 2)

    @property
    def inverse_order(self) -> Tuple[int, int, int]:
        return (1, 2, 0) if self is Plane.XY else (1, 0, 2)


def _check_dims(dims: Tuple[int, ...]) -> None:
    if len(dims) != 3:
        raise DimensionError(f"volume must be 3D, got dims {dims}")
    for d in dims:
        if d < 2 or d % 2:
            raise DimensionError(f"every dimension must be even and >= 2, got {dims}")


@dataclass(frozen=True)
class Volume:
    """Immutable 3D scalar field, float32, indexed ``[x, y, z]``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, order="F", copy=True)
        _check_dims(data.shape)
        if not np.all(np.isfinite(data)):
            raise DimensionError("volume contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape)

    def plane_count(self, plane: Plane) -> int:
        return self.dims[Plane(plane).axis]

    def slice_shape(self, plane: Plane) -> Tuple[int, int]:
        d1, d2, d3 = self.dims
        return (d1, d2) if Plane(plane) is Plane.XY else (d1, d3)

    def flat(self) -> np.ndarray:
        """Payload order: x fastest, z slowest."""
        return self.data.ravel(order="F")

    @classmethod
    def from_flat(cls, dims: Tuple[int, int, int], values: np.ndarray) -> "Volume":
        values = np.asarray(values, dtype=np.float32)
        if values.size != int(np.prod(dims)):
            raise DimensionError(f"{values.size} values do not fill dims {dims}")
        return cls(values.reshape(dims, order="F"))


@dataclass(frozen=True)
class Slice:
    plane: Plane
    index: int
    pixels: np.ndarray


def _check_index(vol: Volume, plane: Plane, index: int) -> None:
    bound = vol.plane_count(plane)
    if not 0 <= index < bound:
        raise BoundsError(f"{plane.value} slice index {index} outside [0, {bound})")


def extract_slice(vol: Volume, plane: Union[Plane, str], index: int) -> Slice:
    """Copy of the XY (``data[:, :, i]``) or XZ (``data[:, i, :]``) section."""
    plane = Plane(plane)
    _check_index(vol, plane, index)
    if plane is Plane.XY:
        pixels = vol.data[:, :, index]
    else:
        pixels = vol.data[:, index, :]
    return Slice(plane=plane, index=index, pixels=np.array(pixels, dtype=np.float32))


def put_slice(vol: Volume, plane: Union[Plane, str], index: int, s: Slice) -> Volume:
    """New volume with one section replaced; every other voxel is untouched."""
    plane = Plane(plane)
    _check_index(vol, plane, index)
    pixels = np.asarray(s.pixels, dtype=np.float32)
    if pixels.shape != vol.slice_shape(plane):
        raise DimensionError(
            f"{plane.value} slice must have shape {vol.slice_shape(plane)}, got {pixels.shape}"
        )
    data = np.array(vol.data, order="F")
    if plane is Plane.XY:
        data[:, :, index] = pixels
    else:
        data[:, index, :] = pixels
    return Volume(data)


def plane_stack(array: np.ndarray, plane: Union[Plane, str]) -> np.ndarray:
    """All sections of a plane as a ``(slices, H, W)`` view."""
    return np.transpose(array, Plane(plane).order)


def from_plane_stack(stack: np.ndarray, plane: Union[Plane, str]) -> np.ndarray:
    return np.transpose(stack, Plane(plane).inverse_order)


def normalize(data: np.ndarray) -> np.ndarray:
    """Min-max normalization of one volume to [0, 1]."""
    data = np.asarray(data, dtype=np.float64)
    lo, hi = float(data.min()), float(data.max())
    if hi <= lo:
        return np.zeros_like(data, dtype=np.float32)
    return ((data - lo) / (hi - lo)).astype(np.float32)


# ============================================================================
# FILE FORMAT: one JSON header line, then little-endian float32 payload
# ============================================================================

def _header(vol: Volume) -> bytes:
    header = {"dims": list(vol.dims), "dtype": DTYPE_TAG, "range": list(NOMINAL_RANGE)}
    return (json.dumps(header, separators=(",", ":")) + "\n").encode("ascii")


def save_volume(vol: Volume, path: Union[str, Path]) -> Path:
    path = Path(path)
    if not np.all(np.isfinite(vol.data)):
        raise VolumeIOError("non-finite values cannot be written", field="payload")
    payload = vol.flat().astype("<f4", copy=False).tobytes()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(_header(vol) + payload)
    except OSError as e:
        raise VolumeIOError(f"cannot write {path} ({e})", field="path") from e
    logger.debug("Wrote volume %s to %s", vol.dims, path)
    return path


def _parse_header(raw: bytes) -> Tuple[Tuple[int, int, int], int]:
    end = raw.find(b"\n")
    if end < 0:
        raise VolumeIOError("missing header terminator", field="header")
    try:
        header = json.loads(raw[:end].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise VolumeIOError(f"header is not a JSON object ({e})", field="header") from e
    if not isinstance(header, dict):
        raise VolumeIOError("header is not a JSON object", field="header")

    dims = header.get("dims")
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(d, int) and not isinstance(d, bool) for d in dims)
    ):
        raise VolumeIOError(f"expected three integers, got {dims!r}", field="dims")
    if any(d < 2 or d % 2 for d in dims):
        raise VolumeIOError(f"every dimension must be even and >= 2, got {dims}", field="dims")

    if header.get("dtype") != DTYPE_TAG:
        raise VolumeIOError(f"expected {DTYPE_TAG!r}, got {header.get('dtype')!r}", field="dtype")

    value_range = header.get("range")
    if (
        not isinstance(value_range, list)
        or len(value_range) != 2
        or not all(isinstance(v, (int, float)) for v in value_range)
        or value_range[0] >= value_range[1]
    ):
        raise VolumeIOError(f"expected [lo, hi] with lo < hi, got {value_range!r}", field="range")

    return (dims[0], dims[1], dims[2]), end + 1


def load_volume(path: Union[str, Path]) -> Volume:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise VolumeIOError(f"cannot read {path} ({e})", field="path") from e

    dims, offset = _parse_header(raw)
    expected = 4 * dims[0] * dims[1] * dims[2]
    actual = len(raw) - offset
    if actual != expected:
        raise VolumeIOError(
            f"size mismatch: expected {expected} bytes, got {actual} bytes", field="payload"
        )

    values = np.frombuffer(raw, dtype="<f4", offset=offset).astype(np.float32)
    if not np.all(np.isfinite(values)):
        raise VolumeIOError("payload contains non-finite values", field="payload")
    return Volume.from_flat(dims, values)
