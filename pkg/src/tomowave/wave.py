"""Finite-difference wave propagation: p_tt = c(x)^2 Lap(p).

Explicit second-order leapfrog on the 5-point (2D) / 7-point (3D) Laplacian.
Free space is emulated by a sponge layer with a quadratic damping profile;
the same stepping kernel runs the interior initial-boundary-value problem
used by time reversal (damping off, Dirichlet values injected per step).
"""

import numpy as np

from .grid import GridSpec, ScalarField, constant_field
from .sinogram import Sinogram

CFL_LIMIT = 0.5  # dt <= CFL_LIMIT * h_min / c_max, safe in 1D/2D/3D


class CFLError(ValueError):
    """Requested time step violates the stability bound."""


def stable_dt(c_max, spacing, cfl=CFL_LIMIT):
    return cfl * min(spacing) / float(c_max)


class MultilinearSampler:
    """Precomputed bi-/trilinear interpolation of grid arrays at fixed points."""

    def __init__(self, grid, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != grid.dim:
            raise ValueError("point dimension does not match grid")
        lo, hi = grid.bounds
        if np.any(points < lo - 1e-9) or np.any(points > hi + 1e-9):
            raise ValueError("sample points fall outside the grid")
        u = (points - lo) / np.asarray(grid.spacing)
        base = np.clip(np.floor(u).astype(np.int64), 0, np.asarray(grid.shape) - 2)
        frac = u - base
        dim = grid.dim
        n = points.shape[0]
        corners = 1 << dim
        idx = np.empty((corners, n), dtype=np.int64)
        wgt = np.empty((corners, n))
        strides = np.cumprod((1,) + grid.shape[::-1][:-1])[::-1]  # row-major
        for corner in range(corners):
            offs = [(corner >> (dim - 1 - a)) & 1 for a in range(dim)]
            w = np.ones(n)
            flat = np.zeros(n, dtype=np.int64)
            for a in range(dim):
                w = w * (frac[:, a] if offs[a] else 1.0 - frac[:, a])
                flat += (base[:, a] + offs[a]) * strides[a]
            idx[corner] = flat
            wgt[corner] = w
        self._idx = idx
        self._wgt = wgt

    def sample(self, values):
        flat = values.reshape(-1)
        return np.einsum("cn,cn->n", self._wgt, flat[self._idx])


def _copy_edges(dst, src):
    dim = dst.ndim
    for ax in range(dim):
        first = tuple(0 if a == ax else slice(None) for a in range(dim))
        last = tuple(-1 if a == ax else slice(None) for a in range(dim))
        dst[first] = src[first]
        dst[last] = src[last]


def _laplacian(p, spacing, out):
    """5/7-point Laplacian on interior nodes; boundary rows left at zero."""
    out.fill(0.0)
    dim = p.ndim
    core = tuple(slice(1, -1) for _ in range(dim))
    acc = out[core]
    for ax in range(dim):
        lo = tuple(
            slice(0, -2) if a == ax else slice(1, -1) for a in range(dim)
        )
        hi = tuple(
            slice(2, None) if a == ax else slice(1, -1) for a in range(dim)
        )
        acc += (p[lo] - 2.0 * p[core] + p[hi]) / spacing[ax] ** 2
    return out


class LeapfrogStepper:
    """Two-level leapfrog state machine over a rectangular node array.

    Outermost nodes act as Dirichlet nodes: they are never updated by the
    scheme, only by whatever the caller writes into them between steps.
    Optional per-node damping sigma adds the friction term 2*sigma*p_t.
    """

    def __init__(self, c, spacing, dt, damping=None):
        self.c2 = np.ascontiguousarray(c, dtype=float) ** 2
        self.spacing = tuple(float(s) for s in spacing)
        self.dt = float(dt)
        self.shape = self.c2.shape
        self.p = np.zeros(self.shape)
        self.p_prev = np.zeros(self.shape)
        self._lap = np.zeros(self.shape)
        self.steps_taken = 0
        if damping is None:
            self._denom = None
            self._keep = None
        else:
            sdt = np.ascontiguousarray(damping, dtype=float) * self.dt
            self._denom = 1.0 + sdt
            self._keep = 1.0 - sdt
        cmax = float(np.sqrt(self.c2.max()))
        if self.dt > stable_dt(cmax, self.spacing) * (1.0 + 1e-12):
            raise CFLError(
                f"dt={self.dt:g} exceeds stability bound "
                f"{stable_dt(cmax, self.spacing):g}"
            )

    def start_from_rest(self, p0):
        """Initialize with p(0)=p0, p_t(0)=0 (second-order Taylor half start)."""
        self.p_prev = np.ascontiguousarray(p0, dtype=float).copy()
        _laplacian(self.p_prev, self.spacing, self._lap)
        self.p = self.p_prev + 0.5 * self.dt**2 * self.c2 * self._lap
        self.steps_taken = 1

    def set_state(self, p_prev, p_cur):
        self.p_prev = np.ascontiguousarray(p_prev, dtype=float).copy()
        self.p = np.ascontiguousarray(p_cur, dtype=float).copy()
        self.steps_taken = 0

    def step(self):
        lap = _laplacian(self.p, self.spacing, self._lap)
        np.multiply(lap, self.c2, out=lap)
        lap *= self.dt**2
        lap += self.p
        lap += self.p
        if self._denom is None:
            lap -= self.p_prev
        else:
            lap -= self._keep * self.p_prev
            lap /= self._denom
        # outermost layer is Dirichlet: hold whatever value it carries
        _copy_edges(lap, self.p)
        recycled = self.p_prev
        self.p_prev = self.p
        self.p = lap
        self._lap = recycled
        self.steps_taken += 1

    def energy(self):
        """Discrete energy conserved exactly by the undamped scheme."""
        h_d = float(np.prod(self.spacing))
        kin = 0.5 * h_d * np.sum((self.p - self.p_prev) ** 2 / self.c2) / self.dt**2
        pot = 0.0
        dim = self.p.ndim
        for ax in range(dim):
            lo = tuple(slice(0, -1) if a == ax else slice(None) for a in range(dim))
            hi = tuple(slice(1, None) if a == ax else slice(None) for a in range(dim))
            da = (self.p[hi] - self.p[lo]) / self.spacing[ax]
            db = (self.p_prev[hi] - self.p_prev[lo]) / self.spacing[ax]
            pot += 0.5 * h_d * np.sum(da * db)
        return kin + pot


def sponge_profile(shape, width, dt_scale):
    """Quadratic damping ramp over `width` cells at every array edge.

    dt_scale is sigma_max; zero inside, sigma_max at the outermost cell.
    """
    sigma = np.zeros(shape)
    if width <= 0:
        return sigma
    for ax, n in enumerate(shape):
        coord = np.arange(n, dtype=float)
        depth = np.maximum(width - coord, coord - (n - 1 - width))
        ramp = np.clip(depth / width, 0.0, 1.0) ** 2
        sl = [None] * len(shape)
        sl[ax] = slice(None)
        sigma = np.maximum(sigma, ramp[tuple(sl)])
    return dt_scale * sigma


def _pad_for_free_space(f, c, sponge_width, margin):
    pad = sponge_width + margin
    grid = f.grid
    values = np.pad(f.values, pad)
    c_values = np.pad(c.values, pad, mode="edge")
    lo, _ = grid.bounds
    new_origin = tuple(
        lo[a] - pad * grid.spacing[a] for a in range(grid.dim)
    )
    new_grid = GridSpec(values.shape, grid.spacing, new_origin)
    return new_grid, values, c_values, pad


def _support_inside_surface(f, surface, margin, rel_threshold=1e-12):
    """Node-exact support check (bounding boxes overreach for ball supports)."""
    vmax = np.abs(f.values).max()
    if vmax == 0.0:
        return True
    mask = np.abs(f.values) > rel_threshold * vmax
    mesh = f.grid.meshgrid()
    if surface.kind == "sphere":
        center = np.asarray(surface.descriptor["center"], dtype=float)
        R = float(surface.descriptor["radius"])
        dist2 = sum((m[mask] - c) ** 2 for m, c in zip(mesh, center))
        return bool(np.max(dist2) < (R - margin) ** 2)
    lo = np.asarray(surface.descriptor["lo"], dtype=float)
    hi = np.asarray(surface.descriptor["hi"], dtype=float)
    for a, m in enumerate(mesh):
        vals = m[mask]
        if vals.min() <= lo[a] + margin or vals.max() >= hi[a] - margin:
            return False
    return True


def _as_speed_field(c, grid):
    if np.isscalar(c):
        return constant_field(grid, c, "sound_speed")
    if not isinstance(c, ScalarField):
        raise TypeError("sound speed must be a scalar or a ScalarField")
    if c.grid != grid:
        raise ValueError("sound speed grid must match the source grid")
    return c


def solve_wave_forward(
    f,
    c,
    surface,
    T,
    dt=None,
    record_every=1,
    sponge_width=20,
    sponge_margin=2,
    reflection_target=1e-4,
    allow_exterior_support=False,
):
    """Free-space forward solve; returns pressure traces at the detectors.

    The source grid is extended by a sponge layer (quadratic damping sized
    for the given round-trip reflection target) so the closed-box scheme
    emulates open space. Detector traces use spatial multilinear
    interpolation at the solver time step, decimated by `record_every`.
    """
    c = _as_speed_field(c, f.grid)
    c_min = float(c.values.min())
    if c_min <= 0:
        raise ValueError("sound speed must be strictly positive")
    c_max = float(c.values.max())
    if dt is None:
        dt = stable_dt(c_max, f.grid.spacing)
    elif dt > stable_dt(c_max, f.grid.spacing) * (1.0 + 1e-12):
        raise CFLError(
            f"dt={dt:g} violates dt <= {CFL_LIMIT} h/c = "
            f"{stable_dt(c_max, f.grid.spacing):g}"
        )
    margin = 1.5 * max(f.grid.spacing)
    if not allow_exterior_support and not _support_inside_surface(f, surface, margin):
        raise ValueError("source support touches or exits the observation surface")
    lo, hi = f.grid.bounds
    if np.any(surface.points <= lo) or np.any(surface.points >= hi):
        raise ValueError("observation surface must lie inside the source grid")

    grid_p, f_pad, c_pad, pad = _pad_for_free_space(
        f, c, sponge_width, sponge_margin
    )
    if sponge_width > 0:
        h_min = min(f.grid.spacing)
        sigma_max = 1.5 * np.log(1.0 / reflection_target) * c_max / (
            sponge_width * h_min
        )
        damping = sponge_profile(grid_p.shape, sponge_width, sigma_max)
    else:
        damping = None

    stepper = LeapfrogStepper(c_pad, grid_p.spacing, dt, damping)
    stepper.start_from_rest(f_pad)
    sampler = MultilinearSampler(grid_p, surface.points)

    n_rec = int(np.floor(T / (dt * record_every) + 1e-9)) + 1
    n_steps = (n_rec - 1) * record_every
    traces = np.empty((surface.num_detectors, n_rec))
    traces[:, 0] = sampler.sample(f_pad)
    rec = 1
    for step in range(1, n_steps + 1):
        if step >= 2:
            # start_from_rest already produced the state at t = dt
            stepper.step()
        if step % record_every == 0:
            traces[:, rec] = sampler.sample(stepper.p)
            rec += 1
    sound_speed = c_max if c_max == c_min else None
    return Sinogram(surface, dt * record_every, traces, "pressure", sound_speed)
