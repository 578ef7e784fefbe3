"""Rigid-motion artifacts simulated by mixing k-space lines of moved volumes.

A "line" is the full kx column at one (ky, kz). Motion events own contiguous
ky ranges across all kz, which mimics Cartesian phase-encode ordering: the
lines of one segment are taken from the spectrum of the volume moved by that
segment's rigid motion.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.ndimage import affine_transform
from scipy.spatial.transform import Rotation

from .errors import DegenerateSpecError, ParameterError
from .rng import substream
from .volume import Volume


logger = logging.getLogger(__name__)

PRESETS: Dict[str, Tuple[float, float]] = {
    "none": (0.0, 0.0),
    "mild": (0.30, 0.45),
    "severe": (0.45, 0.50),
}


class MotionSpec(BaseModel):
    m_min: float = Field(default=0.30, ge=0.0, le=1.0)
    m_max: float = Field(default=0.45, ge=0.0, le=1.0)
    n_events: int = Field(default=3, ge=1)
    max_translation: float = Field(default=3.0, ge=0.0, description="voxels")
    max_rotation: float = Field(default=3.0, ge=0.0, description="degrees")
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _ordered_range(self) -> "MotionSpec":
        if self.m_min > self.m_max:
            raise ValueError(f"m_min ({self.m_min}) exceeds m_max ({self.m_max})")
        return self

    @classmethod
    def preset(cls, name: str, **overrides) -> "MotionSpec":
        if name not in PRESETS:
            raise ParameterError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        m_min, m_max = PRESETS[name]
        return cls(m_min=m_min, m_max=m_max, **overrides)


class MotionEvent(BaseModel):
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation_deg: float = 0.0
    axis: Tuple[float, float, float] = (0.0, 0.0, 1.0)


class Segment(BaseModel):
    start: int
    stop: int
    event: MotionEvent


class MotionReport(BaseModel):
    fraction: float = Field(description="realized fraction of ky lines replaced")
    drawn_fraction: float
    affected_lines: int
    total_lines: int
    segments: List[Segment] = []
    imag_energy: float = Field(default=0.0, description="share of output energy in the discarded imaginary part")
    clamped_voxels: int = 0
    conventions: Dict[str, str] = {
        "encode_axis": "y",
        "line": "kx column at fixed (ky, kz); segments count ky in centred order",
        "rotation": "trilinear image-space resampling about the volume centre",
        "translation": "exact Fourier phase ramp (circular)",
        "output": "real part clamped to [0, 1], not renormalized",
    }


def fft3(data: np.ndarray) -> np.ndarray:
    return np.fft.fftn(np.asarray(data, dtype=np.float64), norm="ortho")


def ifft3(spectrum: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(spectrum, norm="ortho")


def _rotate(data: np.ndarray, event: MotionEvent) -> np.ndarray:
    if event.rotation_deg == 0.0:
        return data
    axis = np.asarray(event.axis, dtype=np.float64)
    rot = Rotation.from_rotvec(axis / np.linalg.norm(axis) * np.deg2rad(event.rotation_deg)).as_matrix()
    centre = (np.asarray(data.shape, dtype=np.float64) - 1) / 2
    # affine_transform maps output coordinates to input coordinates
    matrix = rot.T
    offset = centre - matrix @ centre
    return affine_transform(data, matrix, offset=offset, order=1, mode="constant", cval=0.0)


def moved_spectrum(data: np.ndarray, event: MotionEvent) -> np.ndarray:
    """Spectrum of the volume after rotating it and then translating it circularly."""
    spectrum = fft3(_rotate(np.asarray(data, dtype=np.float64), event))
    if any(event.translation):
        ramp = np.ones(spectrum.shape, dtype=np.complex128)
        for axis, (n, shift) in enumerate(zip(spectrum.shape, event.translation)):
            shape = [1, 1, 1]
            shape[axis] = n
            ramp = ramp * np.exp(-2j * np.pi * np.fft.fftfreq(n) * shift).reshape(shape)
        spectrum = spectrum * ramp
    return spectrum


def ky_lines(n: int, start: int, stop: int) -> np.ndarray:
    """Storage indices of ky lines ``start:stop`` counted in centred (-ky_max .. +ky_max) order."""
    return (np.arange(start, stop) - n // 2) % n


def compose_kspace(data: np.ndarray, segments: Sequence[Segment]) -> np.ndarray:
    """Spectrum of ``data`` with each segment's ky lines taken from its moved spectrum."""
    composite = fft3(data)
    n = composite.shape[1]
    for seg in segments:
        lines = ky_lines(n, seg.start, seg.stop)
        composite[:, lines, :] = moved_spectrum(data, seg.event)[:, lines, :]
    return composite


def _unit_vector(rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def _draw_event(rng: np.random.Generator, spec: MotionSpec) -> MotionEvent:
    # shift uniform in the ball of radius max_translation
    shift = _unit_vector(rng) * spec.max_translation * rng.uniform() ** (1.0 / 3.0)
    axis = _unit_vector(rng)
    return MotionEvent(
        translation=tuple(float(v) for v in shift),
        rotation_deg=float(rng.uniform(-spec.max_rotation, spec.max_rotation)),
        axis=tuple(float(v) for v in axis),
    )


def draw_segments(n_lines: int, spec: MotionSpec, rng: np.random.Generator) -> Tuple[float, List[Segment]]:
    fraction = float(rng.uniform(spec.m_min, spec.m_max)) if spec.m_max > spec.m_min else spec.m_min
    if fraction == 0.0:
        return fraction, []
    affected = int(round(fraction * n_lines))
    if affected == 0:
        raise DegenerateSpecError(
            f"fraction {fraction:.3f} of {n_lines} phase-encode lines touches no line"
        )
    n_segments = min(spec.n_events, affected)
    if n_segments < spec.n_events:
        logger.debug("Only %d lines affected, using %d motion events", affected, n_segments)
    start = int(rng.integers(0, n_lines - affected + 1))
    cuts = np.sort(rng.choice(np.arange(1, affected), size=n_segments - 1, replace=False)) if n_segments > 1 else []
    bounds = [0, *[int(c) for c in cuts], affected]
    segments = [
        Segment(start=start + a, stop=start + b, event=_draw_event(rng, spec))
        for a, b in zip(bounds[:-1], bounds[1:])
    ]
    return fraction, segments


def corrupt(vol: Volume, spec: Optional[MotionSpec] = None) -> Tuple[Volume, MotionReport]:
    spec = spec or MotionSpec()
    rng = substream(spec.seed, "motion")
    n_lines = vol.dims[1]
    fraction, segments = draw_segments(n_lines, spec, rng)
    if not segments:
        report = MotionReport(fraction=0.0, drawn_fraction=fraction, affected_lines=0, total_lines=n_lines)
        return Volume(vol.data), report

    image = ifft3(compose_kspace(vol.data, segments))
    imag_energy = float(np.sum(image.imag ** 2) / max(np.sum(np.abs(image) ** 2), np.finfo(float).tiny))
    real = image.real
    clamped = int(np.count_nonzero((real < 0.0) | (real > 1.0)))
    affected = sum(s.stop - s.start for s in segments)
    report = MotionReport(
        fraction=affected / n_lines,
        drawn_fraction=fraction,
        affected_lines=affected,
        total_lines=n_lines,
        segments=segments,
        imag_energy=imag_energy,
        clamped_voxels=clamped,
    )
    logger.info(
        "Corrupted %s volume: %d/%d ky lines over %d events, imag energy %.2e",
        vol.dims, affected, n_lines, len(segments), imag_energy,
    )
    return Volume(np.clip(real, 0.0, 1.0)), report
