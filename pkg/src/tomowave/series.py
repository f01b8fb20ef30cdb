"""Sine-series reconstruction for box observation surfaces, constant speed.

The Dirichlet eigenfunctions of the box are products of sines, so boundary
projections and volume synthesis both reduce to fast sine transforms. The
source is recovered as f = sum_k f_k psi_k with the coefficients obtained
from per-mode time series of the boundary data.
"""

import json
import warnings

import numpy as np
from dataclasses import dataclass
from scipy import fft as spfft

from .grid import (
    GridSpec,
    HeaderError,
    ScalarField,
    TruncatedPayloadError,
    _read_container,
    _write_container,
)

COEFF_MAGIC = b"TATMOD01"


def modes_up_to_lambda(lo, hi, c, lambda_max):
    """All positive multi-indices with c*pi*|m/L| <= lambda_max, sorted."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    L = hi - lo
    dim = L.size
    m_cap = np.floor(lambda_max * L / (np.pi * c)).astype(int)
    if np.any(m_cap < 1):
        return np.zeros((0, dim), dtype=int)
    axes = [np.arange(1, cap + 1) for cap in m_cap]
    mesh = np.meshgrid(*axes, indexing="ij")
    modes = np.stack([m.ravel() for m in mesh], axis=-1)
    lam = c * np.pi * np.sqrt(((modes / L) ** 2).sum(axis=1))
    modes = modes[lam <= lambda_max * (1 + 1e-12)]
    lam = lam[lam <= lambda_max * (1 + 1e-12)]
    order = np.lexsort(tuple(modes[:, a] for a in range(dim - 1, -1, -1)) + (lam,))
    return modes[order]


@dataclass(frozen=True)
class EigenBasis:
    """Dirichlet eigenpairs of -c^2 Lap on a box, as sine products.

    psi_m(x) = prod_i sqrt(2/L_i) sin(m_i pi (x_i - lo_i) / L_i), unit L2 norm;
    lambda_m = c pi sqrt(sum (m_i/L_i)^2).
    """

    lo: tuple
    hi: tuple
    c: float
    modes: np.ndarray

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("box bounds must satisfy hi > lo per axis")
        modes = np.ascontiguousarray(self.modes, dtype=np.int64)
        if modes.ndim != 2 or modes.shape[1] != len(lo):
            raise ValueError("modes must be (n_modes, dim)")
        if modes.size and modes.min() < 1:
            raise ValueError("mode indices must be >= 1")
        if not self.c > 0:
            raise ValueError("sound speed must be positive")
        modes.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "c", float(self.c))

    @property
    def dim(self):
        return len(self.lo)

    @property
    def lengths(self):
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def lambdas(self):
        return self.c * np.pi * np.sqrt(((self.modes / self.lengths) ** 2).sum(axis=1))

    @classmethod
    def for_surface(cls, surface, c, lambda_max=None):
        """Basis matching a cube surface, truncated at the detector Nyquist
        limit by default (isotropically in lambda)."""
        if surface.kind != "cube":
            raise ValueError("series basis requires a cube surface")
        lo = surface.descriptor["lo"]
        hi = surface.descriptor["hi"]
        n = surface.descriptor["n_per_axis"]
        L = np.asarray(hi) - np.asarray(lo)
        nyquist = c * np.pi * float(np.min((n / 2.0) / L))
        if lambda_max is None:
            lambda_max = nyquist
        return cls(tuple(lo), tuple(hi), c, modes_up_to_lambda(lo, hi, c, lambda_max))

    def sin_matrix(self, axis, coords):
        """sin(m pi (x - lo)/L) for every mode (rows: coords, cols: modes)."""
        x = np.asarray(coords, dtype=float) - self.lo[axis]
        k = self.modes[:, axis] * np.pi / self.lengths[axis]
        return np.sin(np.outer(x, k))

    def evaluate_modes(self, grid):
        """Dense (n_modes, *grid.shape) eigenfunction samples (small bases)."""
        axes_sin = []
        for a in range(self.dim):
            s = self.sin_matrix(a, grid.axis_coords(a))
            axes_sin.append(np.sqrt(2.0 / self.lengths[a]) * s)
        shaped = [
            axes_sin[a].T[
                (slice(None),)
                + tuple(slice(None) if b == a else None for b in range(self.dim))
            ]
            for a in range(self.dim)
        ]
        out = shaped[0]
        for a in range(1, self.dim):
            out = out * shaped[a]
        return out


@dataclass(frozen=True)
class ModeTimeSeries:
    """Per-mode boundary projections g_k(t_j), t_j = j * dt."""

    basis: EigenBasis
    dt: float
    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=float)
        if values.shape[0] != self.basis.modes.shape[0]:
            raise ValueError("row count must match the basis mode count")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def times(self):
        return self.dt * np.arange(self.values.shape[1])


def _face_blocks(surface):
    faces = surface.structure["faces"]
    offsets = np.cumsum([0] + [f["count"] for f in faces])
    return faces, offsets


def _check_surface_matches(surface, basis):
    lo = np.asarray(surface.descriptor["lo"], dtype=float)
    hi = np.asarray(surface.descriptor["hi"], dtype=float)
    if (
        np.max(np.abs(lo - np.asarray(basis.lo))) > 1e-9
        or np.max(np.abs(hi - np.asarray(basis.hi))) > 1e-9
    ):
        raise ValueError("surface box does not match the basis box")


def project_boundary_data(g, basis):
    """Project boundary data onto the normal derivatives of the basis modes.

    g_k(t) = sum over detectors of w * g(y,t) * dpsi_k/dn(y), evaluated with
    the midpoint face quadrature via fast sine transforms. Modes at or above
    half the per-axis detector count are rejected (aliasing guard).
    """
    surface = g.surface
    if surface.kind != "cube" or surface.structure.get("layout") != "cube_faces":
        raise ValueError("boundary projection requires a cube-face surface")
    _check_surface_matches(surface, basis)
    n = surface.structure["n"]
    if basis.modes.size and basis.modes.max() >= n / 2:
        bad = basis.modes[basis.modes.max(axis=1) >= n / 2][0]
        raise ValueError(
            f"mode {tuple(int(v) for v in bad)} is at or above the aliasing limit "
            f"of {n} detectors per axis"
        )
    dim = basis.dim
    L = basis.lengths
    modes = basis.modes
    n_modes = modes.shape[0]
    n_t = g.values.shape[1]
    out = np.zeros((n_modes, n_t))
    faces, offsets = _face_blocks(surface)
    for face, off in zip(faces, offsets[:-1]):
        ax = face["axis"]
        taxes = [a for a in range(dim) if a != ax]
        block = g.values[off : off + face["count"]]
        if dim == 3:
            v = block.reshape(n, n, n_t)
            coeff = spfft.dst(spfft.dst(v, type=2, axis=0), type=2, axis=1) / 4.0
            gather = coeff[modes[:, taxes[0]] - 1, modes[:, taxes[1]] - 1, :]
        else:
            v = block.reshape(n, n_t)
            coeff = spfft.dst(v, type=2, axis=0) / 2.0
            gather = coeff[modes[:, taxes[0]] - 1, :]
        cell = np.prod([L[a] / n for a in taxes])
        k_ax = modes[:, ax] * np.pi / L[ax]
        sign = -1.0 if face["side"] == 0 else (-1.0) ** modes[:, ax]
        tan_norm = np.prod([np.sqrt(2.0 / L[a]) for a in taxes])
        factor = cell * tan_norm * np.sqrt(2.0 / L[ax]) * k_ax * sign
        out += factor[:, None] * gather
    return ModeTimeSeries(basis, g.dt, out)


@dataclass(frozen=True)
class ModeCoefficients:
    """Recovered series coefficients f_k, tagged with the truncation used."""

    lo: tuple
    hi: tuple
    c: float
    modes: np.ndarray
    values: np.ndarray
    lambda_max: float

    def __post_init__(self):
        modes = np.ascontiguousarray(self.modes, dtype=np.int64)
        values = np.ascontiguousarray(self.values, dtype=float)
        if values.shape != (modes.shape[0],):
            raise ValueError("one coefficient per mode required")
        if not np.all(np.isfinite(values)):
            raise ValueError("coefficients must be finite")
        modes.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))

    @property
    def dim(self):
        return len(self.lo)

    @property
    def basis(self):
        return EigenBasis(self.lo, self.hi, self.c, self.modes)


def tail_energy_fraction(values, window_fraction=0.1):
    """Per-row energy share of the trailing samples."""
    n_t = values.shape[1]
    n_tail = max(1, int(round(window_fraction * n_t)))
    total = (values**2).sum(axis=1)
    tail = (values[:, n_t - n_tail :] ** 2).sum(axis=1)
    out = np.zeros_like(total)
    np.divide(tail, total, out=out, where=total > 0)
    return out


def coefficients_from_gk(gk, formula="B", tail_threshold=0.01):
    """Series coefficients from per-mode boundary series.

    formula A uses two data derivatives, B one (default), C none:
        A: f_k = g_k(0)/l^2 - l^-3 Int sin(l t) g_k''(t) dt
        B: f_k = g_k(0)/l^2 + l^-2 Int cos(l t) g_k'(t) dt
        C: f_k = -l^-1 Int sin(l t) g_k(t) dt
    Integrals run to the end of the record (trapezoid); a warning reports
    modes whose tail energy exceeds the decay threshold.
    """
    formula = formula.upper()
    if formula not in ("A", "B", "C"):
        raise ValueError("formula must be one of 'A', 'B', 'C'")
    lam = gk.basis.lambdas
    t = gk.times
    dt = gk.dt
    values = gk.values
    tails = tail_energy_fraction(values)
    worst = float(tails.max()) if tails.size else 0.0
    if worst > tail_threshold:
        warnings.warn(
            f"boundary series have not decayed at T={t[-1]:g}: worst tail "
            f"energy fraction {worst:.3g} (threshold {tail_threshold:g})",
            stacklevel=2,
        )
    phase = lam[:, None] * t[None, :]
    if formula == "A":
        d2 = np.gradient(
            np.gradient(values, dt, axis=1, edge_order=2), dt, axis=1, edge_order=2
        )
        integral = np.trapz(np.sin(phase) * d2, t, axis=1)
        coeffs = values[:, 0] / lam**2 - integral / lam**3
    elif formula == "B":
        d1 = np.gradient(values, dt, axis=1, edge_order=2)
        integral = np.trapz(np.cos(phase) * d1, t, axis=1)
        coeffs = values[:, 0] / lam**2 + integral / lam**2
    else:
        integral = np.trapz(np.sin(phase) * values, t, axis=1)
        coeffs = -integral / lam
    basis = gk.basis
    lam_max = float(lam.max()) if lam.size else 0.0
    return ModeCoefficients(basis.lo, basis.hi, basis.c, basis.modes, coeffs, lam_max)


def dst_output_grid(lo, hi, n_cells):
    """Interior sine-lattice grid: nodes lo + j*L/n, j = 1..n-1 per axis."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n_cells = np.broadcast_to(np.asarray(n_cells, dtype=int), lo.shape)
    spacing = (hi - lo) / n_cells
    return GridSpec(
        tuple(int(n) - 1 for n in n_cells),
        tuple(spacing),
        tuple(lo + spacing),
    )


def _dst_lattice_cells(coeffs, grid):
    """Cells-per-axis if the grid is a sine lattice of the box, else None."""
    lo = np.asarray(coeffs.lo)
    hi = np.asarray(coeffs.hi)
    cells = []
    for a in range(grid.dim):
        L = hi[a] - lo[a]
        n = L / grid.spacing[a]
        n_int = int(round(n))
        if abs(n - n_int) > 1e-9 * n_int:
            return None
        if abs(grid.origin[a] - (lo[a] + grid.spacing[a])) > 1e-9 * grid.spacing[a]:
            return None
        if grid.shape[a] != n_int - 1:
            return None
        if coeffs.modes.size and coeffs.modes[:, a].max() > n_int - 1:
            return None
        cells.append(n_int)
    return cells


def synthesize_field(coeffs, out_grid, method="auto"):
    """Sum the sine series on a grid inside the box.

    Uses a fast DST when the grid nodes coincide with the sine lattice,
    otherwise a separable direct summation; both agree to round-off.
    """
    if coeffs.modes.shape[0] == 0:
        raise ValueError("empty coefficient set")
    lo = np.asarray(coeffs.lo)
    hi = np.asarray(coeffs.hi)
    glo, ghi = out_grid.bounds
    if np.any(glo < lo - 1e-12) or np.any(ghi > hi + 1e-12):
        raise ValueError("output grid must lie inside the basis box")
    L = hi - lo
    norm = np.prod(np.sqrt(2.0 / L))
    cells = _dst_lattice_cells(coeffs, out_grid) if method in ("auto", "dst") else None
    if method == "dst" and cells is None:
        raise ValueError("output grid is not a sine lattice of the basis box")
    if cells is not None:
        dense = np.zeros(out_grid.shape)
        dense[tuple(coeffs.modes[:, a] - 1 for a in range(out_grid.dim))] = (
            coeffs.values * norm
        )
        values = spfft.dstn(dense, type=1) / 2.0**out_grid.dim
        return ScalarField(out_grid, values, "series_reconstruction")
    # direct separable summation over a dense mode box
    basis = coeffs.basis
    m_max = coeffs.modes.max(axis=0)
    dense = np.zeros(tuple(m_max))
    dense[tuple(coeffs.modes[:, a] - 1 for a in range(out_grid.dim))] = (
        coeffs.values * norm
    )
    out = dense
    for a in range(out_grid.dim):
        x = out_grid.axis_coords(a) - lo[a]
        k = np.arange(1, m_max[a] + 1) * np.pi / L[a]
        S = np.sin(np.outer(x, k))
        out = np.moveaxis(np.tensordot(S, out, axes=(1, a)), 0, a)
    return ScalarField(out_grid, out, "series_reconstruction")


def write_coefficients(coeffs, path, extras=None):
    header = {
        "lo": list(coeffs.lo),
        "hi": list(coeffs.hi),
        "c": coeffs.c,
        "lambda_max": coeffs.lambda_max,
        "modes": coeffs.modes.tolist(),
    }
    if extras:
        header.update(extras)
    _write_container(path, COEFF_MAGIC, header, coeffs.values)


def read_coefficients(path):
    header, payload = _read_container(path, COEFF_MAGIC)
    try:
        modes = np.asarray(header["modes"], dtype=np.int64)
        lo = tuple(header["lo"])
        hi = tuple(header["hi"])
        c = float(header["c"])
        lam = float(header["lambda_max"])
    except (KeyError, TypeError, ValueError) as exc:
        raise HeaderError(f"bad coefficient header: {exc}") from exc
    if payload.size != modes.shape[0]:
        raise TruncatedPayloadError(
            f"payload holds {payload.size} values for {modes.shape[0]} modes"
        )
    return ModeCoefficients(lo, hi, c, modes, payload, lam)
