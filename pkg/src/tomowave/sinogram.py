"""Time-resolved boundary data containers and their file format."""

import numpy as np
from dataclasses import dataclass

from .grid import (
    HeaderError,
    InvariantError,
    NonFiniteError,
    TruncatedPayloadError,
    _read_container,
    _write_container,
)
from .surfaces import ObservationSurface, surface_from_descriptor

KINDS = ("pressure", "spherical_integral", "spherical_mean")

SINOGRAM_MAGIC = b"TATSIN01"


@dataclass(frozen=True)
class Sinogram:
    """Boundary data g[detector, time-sample] with t_j = j * dt.

    kind tags the physical meaning: raw pressure traces, integrals of the
    source over spheres of radius c*t, or those integrals divided by the
    sphere area. Spherical kinds require the constant sound speed, since time
    samples double as radii r = c * t.
    """

    surface: ObservationSurface
    dt: float
    values: np.ndarray
    kind: str
    sound_speed: float = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != self.surface.num_detectors:
            raise ValueError(
                f"values must be (n_detectors, n_times); got {values.shape} for "
                f"{self.surface.num_detectors} detectors"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("sinogram values must be finite")
        if self.kind != "pressure" and self.sound_speed is None:
            raise ValueError(f"kind {self.kind!r} requires sound_speed")
        if self.sound_speed is not None and not self.sound_speed > 0:
            raise ValueError("sound_speed must be positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def num_times(self):
        return self.values.shape[1]

    @property
    def times(self):
        return self.dt * np.arange(self.num_times)

    @property
    def radii(self):
        """Sphere radii r_j = c * t_j for the spherical data kinds."""
        if self.sound_speed is None:
            raise ValueError("radii need a constant sound speed")
        return self.sound_speed * self.times

    def with_values(self, values, kind=None):
        return Sinogram(
            self.surface,
            self.dt,
            values,
            self.kind if kind is None else kind,
            self.sound_speed,
        )

    def as_integral_kind(self):
        """Convert mean-kind data to spherical integrals (multiply by area)."""
        if self.kind == "spherical_integral":
            return self
        if self.kind != "spherical_mean":
            raise ValueError("only spherical mean/integral kinds convert")
        r = self.radii
        area = _sphere_area(self.surface.dim, r)
        return self.with_values(self.values * area, kind="spherical_integral")

    def as_mean_kind(self):
        """Convert integral-kind data to means (divide by sphere area)."""
        if self.kind == "spherical_mean":
            return self
        if self.kind != "spherical_integral":
            raise ValueError("only spherical mean/integral kinds convert")
        r = self.radii
        area = _sphere_area(self.surface.dim, r)
        out = np.zeros_like(self.values)
        np.divide(self.values, area, out=out, where=area > 0)
        return self.with_values(out, kind="spherical_mean")


def _sphere_area(dim, r):
    """Area of the sphere (circumference of the circle in 2D) of radius r."""
    if dim == 3:
        return 4.0 * np.pi * r**2
    return 2.0 * np.pi * r


def write_sinogram(sino, path, extras=None):
    """Write a sinogram in the TATSIN01 container, detector-major payload."""
    header = {
        "kind": sino.kind,
        "n_detectors": sino.values.shape[0],
        "n_times": sino.values.shape[1],
        "dt": sino.dt,
        "surface": sino.surface.descriptor,
    }
    if sino.sound_speed is not None:
        header["c"] = sino.sound_speed
    if extras:
        header.update(extras)
    _write_container(path, SINOGRAM_MAGIC, header, sino.values)


def read_sinogram(path):
    header, payload = _read_container(path, SINOGRAM_MAGIC)
    try:
        kind = header["kind"]
        n_det = int(header["n_detectors"])
        n_t = int(header["n_times"])
        dt = float(header["dt"])
        surf_desc = header["surface"]
    except (KeyError, TypeError, ValueError) as exc:
        raise HeaderError(f"bad sinogram header: {exc}") from exc
    if payload.size != n_det * n_t:
        raise TruncatedPayloadError(
            f"payload holds {payload.size} values, header promises {n_det * n_t}"
        )
    if not np.all(np.isfinite(payload)):
        raise NonFiniteError("payload contains non-finite values")
    try:
        surface = surface_from_descriptor(surf_desc)
        return Sinogram(
            surface, dt, payload.reshape(n_det, n_t), kind, header.get("c")
        )
    except (KeyError, ValueError) as exc:
        raise InvariantError(f"header violates sinogram invariants: {exc}") from exc
