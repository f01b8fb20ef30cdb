"""Time-reversal reconstruction: run the wave equation backward inside the
observation surface from a (near-)zero terminal state, with the measured
traces imposed as Dirichlet boundary values, and read off the state at t=0.

Works for sphere/circle and box surfaces and variable sound speed; an
optional fixed-point refinement re-propagates the residual through the
forward solver.
"""

import warnings

import numpy as np
from dataclasses import dataclass, replace
from scipy import interpolate, ndimage, sparse

from .grid import ScalarField
from .sinogram import Sinogram
from .wave import LeapfrogStepper, solve_wave_forward, stable_dt


@dataclass(frozen=True)
class TimeReversalConfig:
    """Terminal time, cutoff taper and fixed-point iteration count.

    cutoff 'hard_zero' starts from zero state with the raw data; 'smoothed'
    additionally tapers the data to zero over the trailing `window` (default
    10% of T) to avoid injecting a truncation layer.
    """

    T: float
    cutoff: str = "smoothed"
    window: float = None
    neumann_iterations: int = 0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("terminal time T must be positive")
        if self.cutoff not in ("hard_zero", "smoothed"):
            raise ValueError("cutoff must be 'hard_zero' or 'smoothed'")
        if self.window is not None and not 0 < self.window < self.T:
            raise ValueError("window must lie in (0, T)")
        if self.neumann_iterations < 0:
            raise ValueError("neumann_iterations must be >= 0")

    def window_values(self, t):
        if self.cutoff == "hard_zero":
            return np.ones_like(t)
        W = self.window if self.window is not None else 0.1 * self.T
        w = np.ones_like(t)
        ramp = t > self.T - W
        w[ramp] = 0.5 * (1.0 + np.cos(np.pi * (t[ramp] - (self.T - W)) / W))
        w[t >= self.T] = 0.0
        return w


def _interior_and_ghost_sphere(grid, descriptor):
    center = np.asarray(descriptor["center"], dtype=float)
    R = float(descriptor["radius"])
    mesh = grid.meshgrid()
    dist = np.sqrt(sum((m - c) ** 2 for m, c in zip(mesh, center)))
    interior = dist < R
    struct = ndimage.generate_binary_structure(grid.dim, 1)
    ghost = ndimage.binary_dilation(interior, structure=struct) & ~interior
    return interior, ghost, dist


def _sphere_ghost_matrix(grid, surface, ghost, dist):
    """Sparse map from detector traces to ghost-node Dirichlet values.

    Each ghost node takes the boundary value at its radial projection onto
    the sphere (bilinear in the polar/azimuth detector grid) scaled by the
    free-space spreading factor (R/r)^((d-1)/2).
    """
    desc = surface.descriptor
    center = np.asarray(desc["center"], dtype=float)
    R = float(desc["radius"])
    idx = np.nonzero(ghost.reshape(-1))[0]
    mesh = grid.meshgrid()
    pts = np.stack([m.reshape(-1)[idx] for m in mesh], axis=-1) - center
    r = dist.reshape(-1)[idx]
    layout = surface.structure["layout"]
    rows, cols, vals = [], [], []
    amp = (R / r) ** ((grid.dim - 1) / 2.0)
    if layout == "circle_uniform":
        n = surface.structure["shape"][0]
        theta = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2.0 * np.pi)
        u = theta / (2.0 * np.pi / n)
        j0 = np.floor(u).astype(np.int64) % n
        frac = u - np.floor(u)
        for j, w in ((j0, 1.0 - frac), ((j0 + 1) % n, frac)):
            rows.append(np.arange(idx.size))
            cols.append(j)
            vals.append(w * amp)
    elif layout == "sphere_product":
        mu_nodes = surface.structure["mu"]
        n_pol, n_az = surface.structure["shape"]
        mu = pts[:, 2] / r
        phi = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2.0 * np.pi)
        i = np.searchsorted(mu_nodes, mu)
        i = np.clip(i, 1, n_pol - 1)
        denom = mu_nodes[i] - mu_nodes[i - 1]
        fmu = np.clip((mu - mu_nodes[i - 1]) / denom, 0.0, 1.0)
        u = phi / (2.0 * np.pi / n_az)
        j0 = np.floor(u).astype(np.int64) % n_az
        fphi = u - np.floor(u)
        for ii, wi in ((i - 1, 1.0 - fmu), (i, fmu)):
            for jj, wj in ((j0, 1.0 - fphi), ((j0 + 1) % n_az, fphi)):
                rows.append(np.arange(idx.size))
                cols.append(ii * n_az + jj)
                vals.append(wi * wj * amp)
    else:
        raise ValueError(f"unsupported sphere surface layout {layout!r}")
    B = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(idx.size, surface.num_detectors),
    )
    return idx, B


def _cube_ghost_matrix(grid, surface):
    """Boundary-layer nodes of a grid spanning the box, with bilinear
    interpolation from the face detector grids (clamped at face edges)."""
    lo_g, hi_g = grid.bounds
    lo = np.asarray(surface.descriptor["lo"], dtype=float)
    hi = np.asarray(surface.descriptor["hi"], dtype=float)
    span = float(np.max(hi - lo))
    if np.max(np.abs(lo_g - lo)) > 1e-9 * span or np.max(np.abs(hi_g - hi)) > 1e-9 * span:
        raise ValueError("reconstruction grid must span the cube surface exactly")
    n = surface.structure["n"]
    dim = grid.dim
    faces = surface.structure["faces"]
    offsets = np.cumsum([0] + [f["count"] for f in faces])
    shape = grid.shape
    boundary = np.zeros(shape, dtype=bool)
    for ax in range(dim):
        sl = [slice(None)] * dim
        sl[ax] = 0
        boundary[tuple(sl)] = True
        sl[ax] = -1
        boundary[tuple(sl)] = True
    assigned = np.zeros(shape, dtype=bool)
    rows, cols, vals = [], [], []
    row_of = np.full(shape, -1, dtype=np.int64)
    idx = np.nonzero(boundary.reshape(-1))[0]
    row_of.reshape(-1)[idx] = np.arange(idx.size)
    mesh = grid.meshgrid()
    for face, off in zip(faces, offsets[:-1]):
        ax, side = face["axis"], face["side"]
        sl = [slice(None)] * dim
        sl[ax] = 0 if side == 0 else -1
        sel = np.zeros(shape, dtype=bool)
        sel[tuple(sl)] = True
        sel &= ~assigned
        assigned |= sel
        node_rows = row_of[sel]
        taxes = [a for a in range(dim) if a != ax]
        weights = [np.ones(node_rows.size)]
        indices = [np.zeros(node_rows.size, dtype=np.int64)]
        stride = [n, 1] if dim == 3 else [1]
        for pos, a in enumerate(taxes):
            cell = (hi[a] - lo[a]) / n
            u = (mesh[a][sel] - lo[a]) / cell - 0.5
            j0 = np.clip(np.floor(u).astype(np.int64), 0, n - 2)
            frac = np.clip(u - j0, 0.0, 1.0)
            new_w, new_i = [], []
            for w, base in zip(weights, indices):
                new_w.append(w * (1.0 - frac))
                new_i.append(base + stride[pos] * j0)
                new_w.append(w * frac)
                new_i.append(base + stride[pos] * (j0 + 1))
            weights, indices = new_w, new_i
        for w, base in zip(weights, indices):
            rows.append(node_rows)
            cols.append(off + base)
            vals.append(w)
    B = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(idx.size, surface.num_detectors),
    )
    interior = ~boundary
    return interior, idx, B


def _resample_traces(g, t_new):
    t = g.times
    if t_new.size <= t.size and np.allclose(
        t_new, t[: t_new.size], rtol=0.0, atol=1e-12 * g.dt
    ):
        return g.values[:, : t_new.size]
    spline = interpolate.CubicSpline(t, g.values, axis=1)
    return spline(np.clip(t_new, t[0], t[-1]))


def time_reverse(g, c, cfg, detector_mask=None):
    """Backward interior solve of the measured pressure data.

    Returns the reconstructed initial state on the sound-speed grid (zero
    outside the surface interior). An optional boolean detector mask windows
    the data for partial-aperture experiments (expect blurred edges).
    """
    if g.kind != "pressure":
        raise ValueError("time reversal consumes pressure traces")
    if not isinstance(c, ScalarField):
        raise TypeError("sound speed must be a ScalarField on the output grid")
    if float(c.values.min()) <= 0:
        raise ValueError("sound speed must be strictly positive")
    duration = g.dt * (g.num_times - 1)
    if cfg.T > duration * (1.0 + 1e-9):
        raise ValueError(f"T={cfg.T:g} exceeds the data duration {duration:g}")
    values = g.values
    if detector_mask is not None:
        mask = np.asarray(detector_mask, dtype=bool)
        if mask.shape != (g.surface.num_detectors,):
            raise ValueError("detector mask must have one entry per detector")
        warnings.warn(
            "partial-aperture data: invisible interfaces will blur",
            stacklevel=2,
        )
        values = values * mask[:, None]
        g = g.with_values(values)

    grid = c.grid
    surface = g.surface
    if surface.kind == "sphere":
        desc = surface.descriptor
        interior, ghost, dist = _interior_and_ghost_sphere(grid, desc)
        ghost_idx, B = _sphere_ghost_matrix(grid, surface, ghost, dist)
        outside = ~(interior | ghost)
        outside_idx = np.nonzero(outside.reshape(-1))[0]
    elif surface.kind == "cube":
        interior, ghost_idx, B = _cube_ghost_matrix(grid, surface)
        outside_idx = np.zeros(0, dtype=np.int64)
    else:
        raise ValueError("time reversal needs a closed sphere or cube surface")

    c_max = float(c.values.max())
    n_steps = max(1, int(np.ceil(cfg.T / stable_dt(c_max, grid.spacing))))
    dt = cfg.T / n_steps
    t_solver = dt * np.arange(n_steps + 1)
    data = _resample_traces(g, t_solver) * cfg.window_values(t_solver)[None, :]
    ghost_data = B @ data  # (n_ghost, n_steps + 1)

    stepper = LeapfrogStepper(c.values, grid.spacing, dt)

    def inject(arr, step_back):
        flat = arr.reshape(-1)
        if outside_idx.size:
            flat[outside_idx] = 0.0
        flat[ghost_idx] = ghost_data[:, step_back]

    p0 = np.zeros(grid.shape)
    inject(p0, n_steps)  # tau = 0 corresponds to t = T
    stepper.start_from_rest(p0)
    for n in range(1, n_steps):
        inject(stepper.p, n_steps - n)
        stepper.step()
    out = stepper.p.copy()
    inject(out, 0)
    if surface.kind == "sphere":
        out[~interior] = 0.0
    return ScalarField(grid, out, "time_reversal")


def _interior_taper(grid, surface, width_cells=4, gap_cells=2):
    """Smooth mask: 1 well inside the surface, 0 within a small gap of it."""
    h = max(grid.spacing)
    gap = gap_cells * h
    width = width_cells * h
    mesh = grid.meshgrid()
    if surface.kind == "sphere":
        center = np.asarray(surface.descriptor["center"], dtype=float)
        R = float(surface.descriptor["radius"])
        depth = R - np.sqrt(sum((m - c) ** 2 for m, c in zip(mesh, center)))
    else:
        lo = np.asarray(surface.descriptor["lo"], dtype=float)
        hi = np.asarray(surface.descriptor["hi"], dtype=float)
        depth = np.minimum.reduce(
            [m - l for m, l in zip(mesh, lo)] + [h_ - m for m, h_ in zip(mesh, hi)]
        )
    u = np.clip((depth - gap) / width, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * u))


@dataclass(frozen=True)
class NeumannResult:
    field: ScalarField
    residuals: tuple
    stopped_early: bool = False


def neumann_refine(g, c, cfg):
    """Fixed-point refinement f <- f + TR(g - forward(f)) with smoothed cutoff.

    Residual norms are tracked per iteration; if a residual increases the
    iteration stops and the best iterate is returned with a warning.
    """
    if cfg.neumann_iterations < 1:
        raise ValueError("neumann_refine needs neumann_iterations >= 1")
    cfg_s = replace(cfg, cutoff="smoothed", neumann_iterations=0)
    surface = g.surface
    grid = c.grid
    taper = _interior_taper(grid, surface)
    c_max = float(c.values.max())
    record_every = max(1, int(np.ceil(g.dt / stable_dt(c_max, grid.spacing) - 1e-9)))
    dt_fwd = g.dt / record_every
    T_data = g.dt * (g.num_times - 1)

    def forward(fld):
        masked = fld.with_values(fld.values * taper)
        sim = solve_wave_forward(
            masked, c, surface, T_data, dt=dt_fwd, record_every=record_every
        )
        return sim.values[:, : g.num_times]

    current = time_reverse(g, c, cfg_s)
    best = current
    residuals = []
    best_res = np.inf
    stopped = False
    for _ in range(cfg.neumann_iterations):
        res_values = g.values - forward(current)
        res_norm = float(np.linalg.norm(res_values))
        residuals.append(res_norm)
        if res_norm > best_res * (1.0 + 1e-12):
            warnings.warn(
                "residual increased across a fixed-point iteration; returning "
                "the best iterate (possible trapping or discretization mismatch)",
                stacklevel=2,
            )
            stopped = True
            break
        best, best_res = current, res_norm
        res_sino = Sinogram(surface, g.dt, res_values, "pressure", g.sound_speed)
        correction = time_reverse(res_sino, c, cfg_s)
        current = current.with_values(current.values + correction.values)
    if not stopped:
        best = current
    return NeumannResult(best.with_values(best.values, name="neumann_refined"),
                         tuple(residuals), stopped)
