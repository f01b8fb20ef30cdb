"""Synthetic ultrasound focusing and the acousto-electric conductivity demo.

Focusing converts boundary measurements taken with realizable wave bases
(thin spherical/circular shells, bipolar N-shaped shells) into point-focused
interior data. Under the linearized acousto-electric model the measurement
for a shell of radius r centered at y is the integral of the interior
functional over that shell, so focusing is inversion of restricted
spherical/circular integral data:

  * 3D, centers on a sphere: closed-form filtered backprojection; the
    N-shaped basis arrives pre-differentiated, so its radial filter drops
    one derivative.
  * 2D, centers on a bounding square: sine-series inversion with the kernel
    f_k = -1/4 Int m_k(r) Y0(lambda_k r) dr, obtained by composing the 2D
    free-space wave representation with the series coefficient formula
    (m_k is the per-mode boundary projection of the circular integrals).

The conductivity demo solves div(sigma grad u) = 0 with a finite-volume
scheme, synthesizes the interior functional sigma grad(u1).grad(u2), and
recovers sigma from focused functionals by projected gradient descent with
discrete adjoint gradients.
"""

import warnings

import numpy as np
from dataclasses import dataclass
from scipy import sparse
from scipy.sparse.linalg import splu, spsolve
from scipy.special import y0 as bessel_y0

from .fbp import FbpVariant, _backproject, _over_r, filter_radial
from .grid import (
    GridSpec,
    HeaderError,
    ScalarField,
    TruncatedPayloadError,
    _read_container,
    _write_container,
)
from .means import _uniform_radius_step, spherical_integrals_at
from .series import EigenBasis, ModeCoefficients, project_boundary_data, synthesize_field
from .sinogram import Sinogram
from .surfaces import surface_from_descriptor

INTERIOR_MAP_MAGIC = b"TATIMP01"
MODULATED_MAGIC = b"TATMOD02"

FUNCTIONAL_TAGS = (
    "sigma_grad_u1_dot_grad_u2",
    # reserved for other local functionals of (sigma, u, grad u)
    "sigma_abs_grad_u_squared",
    "power_density",
)


@dataclass(frozen=True)
class InteriorMap:
    """Interior functional values on a grid, tagged by functional kind."""

    grid: GridSpec
    values: np.ndarray
    tag: str = "sigma_grad_u1_dot_grad_u2"

    def __post_init__(self):
        if self.tag not in FUNCTIONAL_TAGS:
            raise ValueError(f"unknown functional tag {self.tag!r}")
        values = np.ascontiguousarray(self.values, dtype=float).reshape(
            self.grid.shape
        )
        if not np.all(np.isfinite(values)):
            raise ValueError("interior map values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def as_field(self, name=None):
        return ScalarField(self.grid, self.values, name or self.tag)


# ---------------------------------------------------------------------------
# conductivity forward problem (2D, vertex-centered finite volumes with
# harmonic-mean face conductivities)


def _boundary_mask(shape):
    mask = np.zeros(shape, dtype=bool)
    mask[0, :] = mask[-1, :] = True
    mask[:, 0] = mask[:, -1] = True
    return mask


def boundary_node_indices(grid):
    """Flat indices of boundary nodes, ascending (the CurrentPattern order)."""
    return np.nonzero(_boundary_mask(grid.shape).reshape(-1))[0]


def boundary_node_measures(grid):
    """Boundary length attributed to each boundary node (corners get halves)."""
    nx, ny = grid.shape
    hx, hy = grid.spacing
    mask = _boundary_mask(grid.shape)
    meas = np.zeros(grid.shape)
    meas[0, :] = meas[-1, :] = hy
    meas[1:-1, 0] = meas[1:-1, -1] = hx
    meas[0, 0] = meas[0, -1] = meas[-1, 0] = meas[-1, -1] = 0.5 * (hx + hy)
    return meas.reshape(-1)[mask.reshape(-1)]


@dataclass(frozen=True)
class CurrentPattern:
    """Boundary excitation: potential trace (dirichlet) or injected current
    density (neumann) sampled at the grid's boundary nodes in flat order."""

    grid: GridSpec
    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.grid.dim != 2:
            raise ValueError("current patterns live on 2D grids")
        if self.kind not in ("dirichlet", "neumann"):
            raise ValueError("kind must be 'dirichlet' or 'neumann'")
        values = np.ascontiguousarray(self.values, dtype=float)
        n_bnd = boundary_node_indices(self.grid).size
        if values.shape != (n_bnd,):
            raise ValueError(f"expected {n_bnd} boundary values, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("pattern values must be finite")
        if self.kind == "neumann":
            total = float(values @ boundary_node_measures(self.grid))
            scale = float(np.abs(values).max() or 1.0)
            if abs(total) > 1e-9 * scale:
                raise ValueError(
                    f"neumann pattern must integrate to zero (got {total:g})"
                )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid, fn, kind="dirichlet"):
        """Sample fn(x, y) at the boundary nodes."""
        pos = grid.node_positions()[boundary_node_indices(grid)]
        return cls(grid, kind, fn(pos[:, 0], pos[:, 1]))


def _face_coefficients(sigma_values, spacing):
    """Harmonic-mean conductivities with geometric factors for both axes."""
    hx, hy = spacing
    sx = sigma_values
    ax = 2.0 * sx[1:, :] * sx[:-1, :] / (sx[1:, :] + sx[:-1, :]) * (hy / hx)
    ay = 2.0 * sx[:, 1:] * sx[:, :-1] / (sx[:, 1:] + sx[:, :-1]) * (hx / hy)
    return ax, ay


def _stiffness_full(sigma):
    """Face-based stiffness over all nodes: (A u)_i = sum coef (u_i - u_j)."""
    nx, ny = sigma.grid.shape
    n = nx * ny
    ax, ay = _face_coefficients(sigma.values, sigma.grid.spacing)
    idx = np.arange(n).reshape(nx, ny)
    rows, cols, vals = [], [], []

    def add_faces(i_idx, j_idx, coef):
        c = coef.ravel()
        i = i_idx.ravel()
        j = j_idx.ravel()
        rows.extend([i, i, j, j])
        cols.extend([i, j, j, i])
        vals.extend([c, -c, c, -c])

    add_faces(idx[:-1, :], idx[1:, :], ax)
    add_faces(idx[:, :-1], idx[:, 1:], ay)
    A = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return A


def _check_sigma(sigma):
    if sigma.grid.dim != 2:
        raise ValueError("the conductivity demo is 2D only")
    if float(sigma.values.min()) <= 0:
        raise ValueError("conductivity must be strictly positive")


def solve_conductivity(sigma, pattern):
    """Potential u solving div(sigma grad u) = 0 for a boundary excitation.

    Dirichlet patterns prescribe u on the boundary nodes; Neumann patterns
    prescribe the injected current density (zero-mean), with the potential
    gauged to zero mean. Solved directly to round-off residual.
    """
    _check_sigma(sigma)
    if pattern.grid != sigma.grid:
        raise ValueError("pattern grid does not match the conductivity grid")
    grid = sigma.grid
    n = grid.num_nodes
    bnd = boundary_node_indices(grid)
    A = _stiffness_full(sigma)
    if pattern.kind == "dirichlet":
        u = np.zeros(n)
        u[bnd] = pattern.values
        interior = np.setdiff1d(np.arange(n), bnd, assume_unique=False)
        A_ii = A[interior][:, interior]
        rhs = -A[interior][:, bnd] @ pattern.values
        u[interior] = spsolve(A_ii.tocsc(), rhs)
    else:
        rhs = np.zeros(n)
        rhs[bnd] = pattern.values * boundary_node_measures(grid)
        A = A.tolil()
        A[0, :] = 0.0
        A[0, 0] = 1.0
        rhs[0] = 0.0
        u = spsolve(A.tocsc(), rhs)
        u -= u.mean()
    return ScalarField(grid, u.reshape(grid.shape), "potential")


def boundary_current(sigma, u):
    """Discrete boundary current r = A u (supported on boundary nodes).

    For a Dirichlet solution the interior rows vanish to round-off; the
    boundary rows give the injected currents, which sum to zero exactly.
    """
    A = _stiffness_full(sigma)
    return (A @ u.values.reshape(-1))[boundary_node_indices(sigma.grid)]


# ---------------------------------------------------------------------------
# gradients and the interior functional


def _d1_matrix(n, h):
    """Second-order first derivative: centered interior, one-sided edges."""
    rows, cols, vals = [], [], []
    for i in range(1, n - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-0.5 / h, 0.5 / h]
    rows += [0, 0, 0]
    cols += [0, 1, 2]
    vals += [-1.5 / h, 2.0 / h, -0.5 / h]
    rows += [n - 1, n - 1, n - 1]
    cols += [n - 1, n - 2, n - 3]
    vals += [1.5 / h, -2.0 / h, 0.5 / h]
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


_GRAD_CACHE = {}


def gradient_operators(grid):
    """Sparse d/dx and d/dy acting on raveled 2D node arrays."""
    key = (grid.shape, grid.spacing)
    if key not in _GRAD_CACHE:
        nx, ny = grid.shape
        hx, hy = grid.spacing
        Dx = sparse.kron(_d1_matrix(nx, hx), sparse.eye(ny), format="csr")
        Dy = sparse.kron(sparse.eye(nx), _d1_matrix(ny, hy), format="csr")
        _GRAD_CACHE[key] = (Dx, Dy)
    return _GRAD_CACHE[key]


def interior_functional(sigma, u1, u2, tag="sigma_grad_u1_dot_grad_u2"):
    """Pointwise sigma * grad(u1) . grad(u2) with centered differences."""
    if not (sigma.grid == u1.grid == u2.grid):
        raise ValueError("sigma, u1, u2 must share one grid")
    Dx, Dy = gradient_operators(sigma.grid)
    a = u1.values.reshape(-1)
    b = u2.values.reshape(-1)
    w = sigma.values.reshape(-1) * ((Dx @ a) * (Dx @ b) + (Dy @ a) * (Dy @ b))
    return InteriorMap(sigma.grid, w.reshape(sigma.grid.shape), tag)


# ---------------------------------------------------------------------------
# focusing bases and modulated measurements


@dataclass(frozen=True)
class FocusingBasis:
    """Realizable ultrasound wave basis: shells emitted from surface points.

    kind 'delta_shell' measures the interior functional's integral over the
    shell |x - center| = r; 'n_shaped_shell' measures its radial derivative
    (the bipolar pulse differentiates in r), resolved at pulse_half_width.
    """

    kind: str
    surface: object
    radii: np.ndarray
    pulse_half_width: float = None

    def __post_init__(self):
        if self.kind not in ("delta_shell", "n_shaped_shell"):
            raise ValueError("kind must be 'delta_shell' or 'n_shaped_shell'")
        radii, dr, k0 = _uniform_radius_step(self.radii)
        if k0 != 1:
            raise ValueError("radii must form the uniform grid dr, 2dr, ...")
        radii = np.ascontiguousarray(radii, dtype=float)
        radii.setflags(write=False)
        object.__setattr__(self, "radii", radii)
        if self.kind == "n_shaped_shell":
            if self.pulse_half_width is None:
                raise ValueError("n_shaped_shell needs pulse_half_width")
            if self.pulse_half_width < dr * (1.0 - 1e-9):
                raise ValueError(
                    "pulse half-width below the radius step is unresolvable"
                )

    @property
    def dr(self):
        return float(self.radii[1] - self.radii[0]) if self.radii.size > 1 else float(self.radii[0])

    @property
    def descriptor(self):
        d = {
            "kind": self.kind,
            "surface": self.surface.descriptor,
            "n_radii": int(self.radii.size),
            "dr": self.dr,
        }
        if self.pulse_half_width is not None:
            d["pulse_half_width"] = float(self.pulse_half_width)
        return d

    @classmethod
    def from_descriptor(cls, desc):
        surface = surface_from_descriptor(desc["surface"])
        radii = desc["dr"] * np.arange(1, desc["n_radii"] + 1)
        return cls(desc["kind"], surface, radii, desc.get("pulse_half_width"))


@dataclass(frozen=True)
class ModulatedMeasurements:
    """Linearized boundary-measurement perturbations M[center, radius]."""

    basis: FocusingBasis
    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=float)
        expected = (self.basis.surface.num_detectors, self.basis.radii.size)
        if values.shape != expected:
            raise ValueError(f"values must have shape {expected}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("measurement values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def synthesize_modulated_measurements(w_true, basis, noise_level=0.0, seed=0):
    """Measurements produced when the basis waves modulate the medium.

    delta_shell pairs the interior map against thin shells (spherical or
    circular integrals); n_shaped_shell yields the radial difference
    quotient at the pulse half-width scale. Additive Gaussian noise is
    scaled to the RMS of the clean data.
    """
    fld = w_true.as_field()
    supp = fld.support_bounds()
    if not basis.surface.encloses(supp):
        raise ValueError("focusing basis surface does not enclose the map support")
    radii = basis.radii
    dr = basis.dr
    if basis.kind == "delta_shell":
        values = spherical_integrals_at(fld, basis.surface.points, radii)
    else:
        k = max(1, int(round(basis.pulse_half_width / dr)))
        ext = dr * np.arange(1, radii.size + k + 1)
        delta = spherical_integrals_at(fld, basis.surface.points, ext)
        delta = np.concatenate([np.zeros((delta.shape[0], 1)), delta], axis=1)
        # columns of `delta` now sit at radii 0, dr, ..., (n+k) dr
        j = np.arange(1, radii.size + 1)
        upper = delta[:, j + k]
        lower = delta[:, np.maximum(j - k, 0)]
        values = (upper - lower) / (2.0 * k * dr)
    if noise_level > 0:
        rng = np.random.default_rng(seed)
        rms = float(np.sqrt(np.mean(values**2)))
        values = values + noise_level * rms * rng.standard_normal(values.shape)
    return ModulatedMeasurements(basis, values)


def _focus_3d(m, out_grid, variant):
    basis = m.basis
    values = np.concatenate([np.zeros((m.values.shape[0], 1)), m.values], axis=1)
    sino = Sinogram(basis.surface, basis.dr, values, "spherical_integral", 1.0)
    if basis.kind == "delta_shell":
        filtered = filter_radial(sino, variant)
    else:
        # the transducer already applied one d/dr; finish the second_radial
        # filter with the remaining derivative and the 1/r weight
        r = sino.radii
        d1 = np.gradient(sino.values, basis.dr, axis=1, edge_order=2)
        filtered = sino.with_values(_over_r(d1, r))
        variant = FbpVariant.SECOND_RADIAL
    acc = _backproject(filtered, out_grid, zero_extend=True)
    R = float(basis.surface.descriptor["radius"])
    values = -acc.reshape(out_grid.shape) / (8.0 * np.pi**2 * R)
    return InteriorMap(out_grid, values, "sigma_grad_u1_dot_grad_u2")


def _focus_2d(m, out_grid, lambda_max):
    basis = m.basis
    surface = basis.surface
    if surface.kind != "cube":
        raise ValueError("2D focusing expects shell centers on a bounding square")
    values = m.values
    if basis.kind == "n_shaped_shell":
        # undo the transducer's d/dr by cumulative integration from r=0
        # (this is the smoothing step: integration attenuates the noise)
        padded = np.concatenate([np.zeros((values.shape[0], 1)), values], axis=1)
        avg = 0.5 * (padded[:, 1:] + padded[:, :-1])
        values = np.cumsum(avg, axis=1) * basis.dr
    padded = np.concatenate([np.zeros((values.shape[0], 1)), values], axis=1)
    sino = Sinogram(surface, basis.dr, padded, "spherical_integral", 1.0)
    eigen = EigenBasis.for_surface(surface, c=1.0, lambda_max=lambda_max)
    mk = project_boundary_data(sino, eigen)
    r = sino.times
    lam = eigen.lambdas
    kernel = np.zeros((lam.size, r.size))
    kernel[:, 1:] = bessel_y0(np.outer(lam, r[1:]))
    coeffs = -0.25 * np.trapz(mk.values * kernel, r, axis=1)
    mode_coeffs = ModeCoefficients(
        eigen.lo, eigen.hi, 1.0, eigen.modes, coeffs, float(lam.max())
    )
    field = synthesize_field(mode_coeffs, out_grid)
    return InteriorMap(out_grid, field.values, "sigma_grad_u1_dot_grad_u2")


def synthetic_focus(m, out_grid, variant=FbpVariant.SECOND_RADIAL, lambda_max=None):
    """Refocus shell-basis measurements into point values of the interior map.

    3D (centers on a sphere) delegates to the closed-form backprojection;
    2D (centers on a bounding square) to the sine-series route for circular
    integrals. N-shaped bases skip the differentiating filter stage.
    """
    dim = m.basis.surface.dim
    if dim == 3:
        if m.basis.surface.kind != "sphere":
            raise ValueError("3D focusing expects shell centers on a sphere")
        return _focus_3d(m, out_grid, variant)
    if dim == 2:
        return _focus_2d(m, out_grid, lambda_max)
    raise ValueError("unsupported dimension for synthetic focusing")


# ---------------------------------------------------------------------------
# conductivity recovery from interior functionals


@dataclass(frozen=True)
class AetObservation:
    """One interior functional with the pattern pair that produced it."""

    w_map: InteriorMap
    pattern_a: CurrentPattern
    pattern_b: CurrentPattern


@dataclass(frozen=True)
class SigmaReconstruction:
    field: ScalarField
    objectives: tuple
    converged: bool
    message: str


def _embed_interior(values_int, interior, n):
    full = np.zeros(n)
    full[interior] = values_int
    return full


class _ObjectiveState:
    """Forward solves, objective and discrete-adjoint gradient for one sigma."""

    def __init__(self, sigma, observations, beta, mask, pattern_index):
        grid = sigma.grid
        n = grid.num_nodes
        self.grid = grid
        self.sigma = sigma
        bnd = boundary_node_indices(grid)
        interior = np.setdiff1d(np.arange(n), bnd)
        self.bnd, self.interior = bnd, interior
        A = _stiffness_full(sigma)
        self.A = A
        self.lu = splu(A[interior][:, interior].tocsc())
        A_ib = A[interior][:, bnd]
        self.u_full = {}
        for key, pat in pattern_index.items():
            u = np.zeros(n)
            u[bnd] = pat.values
            u[interior] = self.lu.solve(-(A_ib @ pat.values))
            self.u_full[key] = u
        Dx, Dy = gradient_operators(grid)
        self.Dx, self.Dy = Dx, Dy
        h2 = grid.cell_volume
        sig = sigma.values.reshape(-1)
        self.residuals = []
        misfit = 0.0
        for obs, (ka, kb) in observations:
            ua, ub = self.u_full[ka], self.u_full[kb]
            gdot = (Dx @ ua) * (Dx @ ub) + (Dy @ ua) * (Dy @ ub)
            w = sig * gdot
            r = (w - obs.w_map.values.reshape(-1)) * mask
            self.residuals.append((r, gdot, ka, kb))
            misfit += h2 * float(r @ r)
        gx = Dx @ sig
        gy = Dy @ sig
        self.objective = misfit + beta * h2 * float(gx @ gx + gy @ gy)
        self._beta = beta
        self._mask = mask
        self._h2 = h2

    def gradient(self):
        grid = self.grid
        n = grid.num_nodes
        sig = self.sigma.values.reshape(-1)
        Dx, Dy = self.Dx, self.Dy
        h2 = self._h2
        grad = np.zeros(n)
        adj_pairs = []
        for r, gdot, ka, kb in self.residuals:
            grad += 2.0 * h2 * r * gdot
            ua, ub = self.u_full[ka], self.u_full[kb]
            rw = 2.0 * h2 * r * sig
            for u_self, u_other in ((ua, ub), (ub, ua)):
                z = Dx.T @ (rw * (Dx @ u_other)) + Dy.T @ (rw * (Dy @ u_other))
                v_int = self.lu.solve(z[self.interior])
                v = _embed_interior(v_int, self.interior, n)
                adj_pairs.append((u_self, v))
        # stiffness sensitivity: d/dsigma_k sum coef_f (u_i-u_j)(v_i-v_j)
        nx, ny = grid.shape
        hx, hy = grid.spacing
        s = self.sigma.values
        for u, v in adj_pairs:
            U = u.reshape(nx, ny)
            V = v.reshape(nx, ny)
            for axis, geo in ((0, hy / hx), (1, hx / hy)):
                if axis == 0:
                    si, sj = s[:-1, :], s[1:, :]
                    du = U[:-1, :] - U[1:, :]
                    dv = V[:-1, :] - V[1:, :]
                else:
                    si, sj = s[:, :-1], s[:, 1:]
                    du = U[:, :-1] - U[:, 1:]
                    dv = V[:, :-1] - V[:, 1:]
                prod = geo * du * dv
                d_i = 2.0 * sj**2 / (si + sj) ** 2 * prod
                d_j = 2.0 * si**2 / (si + sj) ** 2 * prod
                gi = np.zeros((nx, ny))
                gj = np.zeros((nx, ny))
                if axis == 0:
                    gi[:-1, :] = d_i
                    gj[1:, :] = d_j
                else:
                    gi[:, :-1] = d_i
                    gj[:, 1:] = d_j
                grad -= (gi + gj).reshape(-1)
        grad += 2.0 * self._beta * h2 * (
            Dx.T @ (Dx @ sig) + Dy.T @ (Dy @ sig)
        )
        return grad


def aet_objective_and_gradient(sigma, observations, beta=None, mask=None):
    """Objective J(sigma) and its discrete adjoint gradient (for testing)."""
    obs_list, pattern_index, mask_vec, beta_val = _prepare_observations(
        sigma, observations, beta, mask
    )
    state = _ObjectiveState(sigma, obs_list, beta_val, mask_vec, pattern_index)
    return state.objective, state.gradient().reshape(sigma.grid.shape)


def _prepare_observations(sigma, observations, beta, mask):
    grid = sigma.grid
    if beta is None:
        beta = 1e-4 * min(grid.spacing) ** 2
    if mask is None:
        mask_vec = np.ones(grid.num_nodes)
    else:
        mask_vec = np.asarray(mask, dtype=float).reshape(-1)
        if mask_vec.size != grid.num_nodes:
            raise ValueError("mask must match the grid")
    pattern_index = {}
    obs_list = []
    for obs in observations:
        if obs.w_map.grid != grid:
            raise ValueError("observation grid does not match sigma grid")
        keys = []
        for pat in (obs.pattern_a, obs.pattern_b):
            if pat.kind != "dirichlet":
                raise ValueError("conductivity recovery uses Dirichlet patterns")
            if pat.grid != grid:
                raise ValueError("pattern grid does not match sigma grid")
            key = id(pat)
            pattern_index[key] = pat
            keys.append(key)
        obs_list.append((obs, tuple(keys)))
    return obs_list, pattern_index, mask_vec, float(beta)


def reconstruct_sigma(
    observations,
    sigma0,
    beta=None,
    mask=None,
    sigma_bounds=(0.1, 10.0),
    max_iterations=150,
    step0=None,
    tol=1e-9,
):
    """Recover the conductivity from interior functionals by projected
    gradient descent with backtracking; the objective never increases across
    accepted iterations.

    observations: sequence of AetObservation (>= 2 independent patterns).
    Returns the final iterate plus the per-iteration objective history.
    """
    if len(observations) < 1:
        raise ValueError("need at least one interior-functional observation")
    patterns = {id(p) for o in observations for p in (o.pattern_a, o.pattern_b)}
    if len(patterns) < 2:
        raise ValueError("need at least two independent current patterns")
    _check_sigma(sigma0)
    obs_list, pattern_index, mask_vec, beta_val = _prepare_observations(
        sigma0, observations, beta, mask
    )
    lo, hi = sigma_bounds

    def project(values):
        return np.clip(values, lo, hi)

    sigma = sigma0.with_values(project(sigma0.values), name="sigma_iterate")
    state = _ObjectiveState(sigma, obs_list, beta_val, mask_vec, pattern_index)
    objectives = [state.objective]
    if state.objective == 0.0:
        return SigmaReconstruction(sigma, tuple(objectives), True, "already optimal")
    step = step0
    message = "max iterations reached"
    converged = False
    for _ in range(max_iterations):
        grad = state.gradient()
        gnorm2 = float(grad @ grad)
        if gnorm2 == 0.0:
            converged = True
            message = "zero gradient"
            break
        if step is None:
            # first step: move a few percent of the background scale
            step = 0.05 * float(np.abs(sigma.values).max()) / np.sqrt(
                gnorm2 / sigma.grid.num_nodes
            ) / np.sqrt(sigma.grid.num_nodes)
            step = max(step, 1e-12)
        accepted = False
        for _bt in range(40):
            trial_values = project(
                sigma.values.reshape(-1) - step * grad
            ).reshape(sigma.grid.shape)
            trial = sigma.with_values(trial_values)
            trial_state = _ObjectiveState(
                trial, obs_list, beta_val, mask_vec, pattern_index
            )
            if trial_state.objective < state.objective:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            message = "line search exhausted; returning best iterate"
            break
        sigma, state = trial, trial_state
        objectives.append(state.objective)
        step *= 1.8
        if len(objectives) > 1:
            drop = objectives[-2] - objectives[-1]
            if drop <= tol * max(objectives[0], 1e-300):
                converged = True
                message = "objective decrease below tolerance"
                break
    return SigmaReconstruction(sigma, tuple(objectives), converged, message)


# ---------------------------------------------------------------------------
# containers


def write_interior_map(imap, path, extras=None):
    header = {
        "dim": imap.grid.dim,
        "shape": list(imap.grid.shape),
        "spacing": list(imap.grid.spacing),
        "origin": list(imap.grid.origin),
        "tag": imap.tag,
    }
    if extras:
        header.update(extras)
    _write_container(path, INTERIOR_MAP_MAGIC, header, imap.values)


def read_interior_map(path):
    header, payload = _read_container(path, INTERIOR_MAP_MAGIC)
    try:
        grid = GridSpec(
            tuple(header["shape"]), tuple(header["spacing"]), tuple(header["origin"])
        )
        tag = header["tag"]
    except (KeyError, TypeError, ValueError) as exc:
        raise HeaderError(f"bad interior-map header: {exc}") from exc
    if payload.size != grid.num_nodes:
        raise TruncatedPayloadError(
            f"payload holds {payload.size} values for {grid.num_nodes} nodes"
        )
    return InteriorMap(grid, payload.reshape(grid.shape), tag)


def write_modulated(m, path, extras=None):
    header = {"basis": m.basis.descriptor}
    if extras:
        header.update(extras)
    _write_container(path, MODULATED_MAGIC, header, m.values)


def read_modulated(path):
    header, payload = _read_container(path, MODULATED_MAGIC)
    try:
        basis = FocusingBasis.from_descriptor(header["basis"])
    except (KeyError, TypeError, ValueError) as exc:
        raise HeaderError(f"bad measurement header: {exc}") from exc
    expected = basis.surface.num_detectors * basis.radii.size
    if payload.size != expected:
        raise TruncatedPayloadError(
            f"payload holds {payload.size} values, header promises {expected}"
        )
    return ModulatedMeasurements(
        basis, payload.reshape(basis.surface.num_detectors, basis.radii.size)
    )
