"""Regular-grid scalar fields, phantom generators, and field file I/O.

Everything downstream (wave solvers, transforms, reconstructions) works on
axis-aligned uniform grids; fields are immutable once built so they can be
shared freely between workers.
"""

import json

import numpy as np
from dataclasses import dataclass, field


class FieldFormatError(Exception):
    """Base class for field-file format errors; carries a stable error code."""

    code = "format-error"


class MagicError(FieldFormatError):
    code = "bad-magic"


class HeaderError(FieldFormatError):
    code = "bad-header"


class TruncatedPayloadError(FieldFormatError):
    code = "truncated-payload"


class NonFiniteError(FieldFormatError):
    code = "non-finite-values"


class InvariantError(FieldFormatError):
    code = "invariant-violation"


class PhantomSupportError(ValueError):
    """A phantom primitive sticks out of the target grid."""

    def __init__(self, index, message):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class GridSpec:
    """Uniform axis-aligned sampling grid in 2 or 3 dimensions.

    shape   -- samples per axis
    spacing -- distance between neighbouring samples per axis (> 0)
    origin  -- coordinate of the first sample per axis
    """

    shape: tuple
    spacing: tuple
    origin: tuple

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        if len(shape) not in (1, 2, 3):
            raise ValueError(f"grid must be 1D, 2D or 3D, got {len(shape)} axes")
        if not (len(shape) == len(spacing) == len(origin)):
            raise ValueError("shape, spacing and origin must have equal length")
        if any(n < 2 for n in shape):
            raise ValueError(f"need at least 2 samples per axis, got shape={shape}")
        if any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise ValueError(f"spacing must be positive and finite, got {spacing}")
        if any(not np.isfinite(o) for o in origin):
            raise ValueError(f"origin must be finite, got {origin}")

    @property
    def dim(self):
        return len(self.shape)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def num_nodes(self):
        return int(np.prod(self.shape))

    def axis_coords(self, axis):
        """Node coordinates along one axis."""
        return self.origin[axis] + self.spacing[axis] * np.arange(self.shape[axis])

    def axes(self):
        return [self.axis_coords(a) for a in range(self.dim)]

    @property
    def bounds(self):
        """(lo, hi) corner coordinates of the sampled box."""
        lo = np.asarray(self.origin, dtype=float)
        hi = lo + (np.asarray(self.shape) - 1) * np.asarray(self.spacing)
        return lo, hi

    def meshgrid(self):
        """Dense node coordinate arrays, one per axis, 'ij' indexed."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def node_positions(self):
        """All node coordinates as an (num_nodes, dim) array, row-major order."""
        mesh = self.meshgrid()
        return np.stack([m.ravel() for m in mesh], axis=-1)


def _check_values(grid, values):
    values = np.asarray(values, dtype=np.float64)
    if values.size != grid.num_nodes:
        raise ValueError(
            f"value count {values.size} does not match grid with {grid.num_nodes} nodes"
        )
    values = np.ascontiguousarray(values.reshape(grid.shape))
    if not np.all(np.isfinite(values)):
        raise ValueError("field values must be finite")
    return values


@dataclass(frozen=True)
class ScalarField:
    """Real-valued function sampled on a :class:`GridSpec`; immutable."""

    grid: GridSpec
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        values = _check_values(self.grid, self.values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def with_values(self, values, name=None):
        return ScalarField(self.grid, values, self.name if name is None else name)

    def support_bounds(self, rel_threshold=1e-12):
        """Bounding box (lo, hi) of nodes where |value| exceeds the threshold.

        Returns None for an identically zero field.
        """
        vmax = np.abs(self.values).max()
        if vmax == 0.0:
            return None
        mask = np.abs(self.values) > rel_threshold * vmax
        idx = np.nonzero(mask)
        lo = np.array([i.min() for i in idx], dtype=float)
        hi = np.array([i.max() for i in idx], dtype=float)
        sp = np.asarray(self.grid.spacing)
        og = np.asarray(self.grid.origin)
        return og + lo * sp, og + hi * sp


def constant_field(grid, value, name=""):
    return ScalarField(grid, np.full(grid.shape, float(value)), name)


@dataclass(frozen=True)
class Ball:
    """Solid ball (disk in 2D) of constant amplitude."""

    center: tuple
    radius: float
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")

    def support_radius(self, smooth_width):
        return self.radius + 0.5 * smooth_width


@dataclass(frozen=True)
class GaussianBlob:
    """Isotropic Gaussian bump exp(-|x-c|^2 / (2 width^2))."""

    center: tuple
    width: float
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("gaussian width must be positive")

    def support_radius(self, smooth_width):
        # beyond 4 sigma the tail is < 3.4e-4 of the peak
        return 4.0 * self.width


@dataclass(frozen=True)
class PhantomDescriptor:
    """List of analytic primitives plus a constant background level."""

    primitives: tuple = ()
    background: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))


def _primitive_values(prim, grid, smooth):
    mesh = grid.meshgrid()
    center = np.asarray(prim.center, dtype=float)
    r2 = sum((m - c) ** 2 for m, c in zip(mesh, center))
    if isinstance(prim, Ball):
        r = np.sqrt(r2)
        if smooth:
            w = max(grid.spacing)
            # linear ramp over one cell straddling the ball surface
            return prim.amplitude * np.clip((prim.radius + 0.5 * w - r) / w, 0.0, 1.0)
        return prim.amplitude * (r <= prim.radius)
    if isinstance(prim, GaussianBlob):
        return prim.amplitude * np.exp(-r2 / (2.0 * prim.width**2))
    raise TypeError(f"unknown primitive type {type(prim).__name__}")


def rasterize_phantom(desc, grid, smooth=True, name="phantom"):
    """Sample a phantom descriptor on a grid.

    Ball edges get a one-cell linear ramp unless smooth=False; every
    primitive must lie strictly inside the grid bounding box.
    """
    lo, hi = grid.bounds
    smooth_w = max(grid.spacing) if smooth else 0.0
    for i, prim in enumerate(desc.primitives):
        center = np.asarray(prim.center, dtype=float)
        if center.shape != (grid.dim,):
            raise PhantomSupportError(i, f"primitive {i}: center has wrong dimension")
        rs = prim.support_radius(smooth_w)
        if np.any(center - rs <= lo) or np.any(center + rs >= hi):
            raise PhantomSupportError(
                i, f"primitive {i}: support (radius {rs:g}) exits the grid box"
            )
    values = np.full(grid.shape, float(desc.background))
    for prim in desc.primitives:
        values += _primitive_values(prim, grid, smooth)
    return ScalarField(grid, values, name)


# ---------------------------------------------------------------------------
# field file format: 8-byte magic, one JSON header line, little-endian f64
# payload in row-major order (last axis fastest)

FIELD_MAGIC = b"TATFLD01"


def _write_container(path, magic, header, payload):
    header = dict(header)
    blob = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(blob)
        fh.write(np.ascontiguousarray(payload, dtype="<f8").tobytes())


def _read_container(path, magic):
    with open(path, "rb") as fh:
        got = fh.read(len(magic))
        if got != magic:
            raise MagicError(f"bad magic {got!r}, expected {magic!r}")
        line = fh.readline()
        if not line.endswith(b"\n"):
            raise HeaderError("unterminated JSON header line")
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise HeaderError(f"malformed JSON header: {exc}") from exc
        if not isinstance(header, dict):
            raise HeaderError("JSON header must be an object")
        raw = fh.read()
    return header, np.frombuffer(raw, dtype="<f8")


def write_field(fld, path, extras=None):
    """Write a field in the TATFLD01 container; round-trips bit-exactly."""
    header = {
        "dim": fld.grid.dim,
        "shape": list(fld.grid.shape),
        "spacing": list(fld.grid.spacing),
        "origin": list(fld.grid.origin),
        "name": fld.name,
    }
    if extras:
        header.update(extras)
    _write_container(path, FIELD_MAGIC, header, fld.values)


def read_field(path):
    """Read a TATFLD01 field file; raises FieldFormatError subclasses."""
    header, payload = _read_container(path, FIELD_MAGIC)
    try:
        shape = header["shape"]
        spacing = header["spacing"]
        origin = header["origin"]
        name = header.get("name", "")
    except KeyError as exc:
        raise HeaderError(f"missing header key {exc}") from exc
    try:
        grid = GridSpec(tuple(shape), tuple(spacing), tuple(origin))
    except (TypeError, ValueError) as exc:
        raise InvariantError(f"header violates grid invariants: {exc}") from exc
    if payload.size != grid.num_nodes:
        raise TruncatedPayloadError(
            f"payload holds {payload.size} values, header promises {grid.num_nodes}"
        )
    if not np.all(np.isfinite(payload)):
        raise NonFiniteError("payload contains non-finite values")
    return ScalarField(grid, payload.reshape(grid.shape), name)


def write_pgm(fld, path, axis=0, index=None):
    """Emit an 8-bit binary PGM image after min-max normalization.

    3D fields are sliced along `axis` (middle slice by default).
    """
    values = fld.values
    if fld.grid.dim == 3:
        if index is None:
            index = fld.grid.shape[axis] // 2
        values = np.take(values, index, axis=axis)
    elif fld.grid.dim != 2:
        raise ValueError("PGM export needs a 2D or 3D field")
    vmin, vmax = float(values.min()), float(values.max())
    span = vmax - vmin if vmax > vmin else 1.0
    img = np.round((values - vmin) / span * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
