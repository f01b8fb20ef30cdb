"""Closed-form filtered backprojection for spherical-integral data.

Valid for a spherical observation surface, constant sound speed and sources
supported inside the sphere. Three algebraically equivalent filters are
implemented; all share the weighted backprojection over spheres through the
reconstruction point:

    laplacian_outside:  b(x) = Int g(y,|y-x|)/|y-x| dA(y),  f = -Lap b / (8 pi^2 R)
    second_radial:      filter (1/r) d^2 g / dr^2, then backproject
    nested_radial:      filter (1/r) d/dr ( r d/dr (g/r) ), then backproject
"""

import enum
import warnings

import numpy as np

from .grid import GridSpec, ScalarField
from .wave import _laplacian


class FbpVariant(enum.Enum):
    LAPLACIAN_OUTSIDE = "laplacian_outside"
    SECOND_RADIAL = "second_radial"
    NESTED_RADIAL = "nested_radial"


def _second_derivative(values, dr):
    """Centered 3-point second difference along axis 1, one-sided endpoints."""
    out = np.empty_like(values)
    out[:, 1:-1] = (values[:, 2:] - 2.0 * values[:, 1:-1] + values[:, :-2]) / dr**2
    out[:, 0] = (
        2.0 * values[:, 0] - 5.0 * values[:, 1] + 4.0 * values[:, 2] - values[:, 3]
    ) / dr**2
    out[:, -1] = (
        2.0 * values[:, -1] - 5.0 * values[:, -2] + 4.0 * values[:, -3] - values[:, -4]
    ) / dr**2
    return out


def _over_r(values, r):
    out = np.zeros_like(values)
    np.divide(values, r[None, :], out=out, where=r[None, :] > 0)
    return out


def filter_radial(g, variant):
    """Apply the variant's radial filter to spherical-integral data.

    Returns a sinogram whose values are the backprojection integrand
    evaluated on the same radius grid (r = 0 column is zeroed).
    """
    g = g.as_integral_kind()
    r = g.radii
    if r.size < 5:
        raise ValueError("radial filtering needs at least 5 radius samples")
    dr = float(r[1] - r[0])
    variant = FbpVariant(variant)
    if variant is FbpVariant.LAPLACIAN_OUTSIDE:
        filtered = _over_r(g.values, r)
    elif variant is FbpVariant.SECOND_RADIAL:
        filtered = _over_r(_second_derivative(g.values, dr), r)
    else:  # NESTED_RADIAL
        u = _over_r(g.values, r)
        # g/r behaves like O(r) near 0 for interior sources; extrapolate the
        # r=0 sample so the first derivative stencil stays second order
        u[:, 0] = 2.0 * u[:, 1] - u[:, 2]
        du = np.gradient(u, dr, axis=1, edge_order=2)
        v = du * r[None, :]
        filtered = _over_r(np.gradient(v, dr, axis=1, edge_order=2), r)
    filtered[:, 0] = 0.0
    return g.with_values(filtered)


def _cubic_rows(table, r, r_max, dr, zero_extend):
    """4-point Lagrange interpolation of one detector's radial table."""
    n = table.shape[0]
    u = r / dr
    k = np.clip(np.floor(u).astype(np.int64), 1, n - 3)
    s = u - k
    w_m1 = -s * (s - 1.0) * (s - 2.0) / 6.0
    w_0 = (s - 1.0) * (s + 1.0) * (s - 2.0) / 2.0
    w_1 = -s * (s + 1.0) * (s - 2.0) / 2.0
    w_2 = s * (s + 1.0) * (s - 1.0) / 6.0
    vals = (
        w_m1 * table[k - 1] + w_0 * table[k] + w_1 * table[k + 1] + w_2 * table[k + 2]
    )
    if zero_extend:
        vals[r > r_max] = 0.0
    elif np.any(r > r_max):
        raise ValueError("query radius exceeds the sampled radial range")
    return vals


def _backproject(filtered, out_grid, zero_extend=True):
    """Weighted sum over detectors of the filtered data at r = |y - x|.

    Returns the raw accumulation for the nodes of out_grid (flat array);
    callers apply the variant prefactor / outer Laplacian.
    """
    r = filtered.radii
    dr = float(r[1] - r[0])
    r_max = float(r[-1])
    center = np.asarray(filtered.surface.descriptor["center"], dtype=float)
    R = float(filtered.surface.descriptor["radius"])
    nodes = out_grid.node_positions()
    if np.any(np.linalg.norm(nodes - center, axis=1) >= R):
        raise ValueError("reconstruction points must lie strictly inside the sphere")
    dist_max = np.linalg.norm(nodes - center, axis=1).max() + R
    if dist_max > r_max + 1e-9:
        if not zero_extend:
            raise ValueError(
                f"radial range {r_max:g} does not cover backprojection "
                f"distances up to {dist_max:g}"
            )
        warnings.warn(
            "measured radii do not cover all backprojection distances; "
            "zero-extending the data",
            stacklevel=2,
        )
    acc = np.zeros(nodes.shape[0])
    table = filtered.values
    pts = filtered.surface.points
    wts = filtered.surface.weights
    for i in range(pts.shape[0]):
        d = np.linalg.norm(nodes - pts[i], axis=1)
        acc += wts[i] * _cubic_rows(table[i], d, r_max, dr, zero_extend)
    return acc


def reconstruct_fbp(g, variant, out_grid, zero_extend=True, ground_truth=None):
    """Invert spherical-integral data on a spherical surface.

    Mean-kind inputs are converted to integrals first; pressure traces are
    rejected. Radii queried beyond the sampled range are zero-extended with
    a warning (or rejected when zero_extend=False). When a ground-truth
    field is supplied its support is checked against the surface and a
    warning is emitted if it reaches outside (interior values would then be
    unreliable).
    """
    if g.kind == "pressure":
        raise ValueError("backprojection needs spherical integral data, not pressure")
    if g.surface.kind != "sphere" or g.surface.dim != 3:
        raise ValueError("closed-form backprojection requires a 3D spherical surface")
    variant = FbpVariant(variant)
    if ground_truth is not None:
        supp = ground_truth.support_bounds()
        if supp is not None and not g.surface.encloses(supp):
            warnings.warn(
                "ground-truth support extends outside the observation sphere; "
                "interior reconstruction may be incorrect",
                stacklevel=2,
            )

    filtered = filter_radial(g, variant)
    R = float(g.surface.descriptor["radius"])
    lap_variant = variant is FbpVariant.LAPLACIAN_OUTSIDE
    grid = out_grid
    if lap_variant:
        # backproject on a one-cell halo so the output-grid Laplacian can use
        # centered stencils everywhere
        grid = GridSpec(
            tuple(n + 2 for n in out_grid.shape),
            out_grid.spacing,
            tuple(o - s for o, s in zip(out_grid.origin, out_grid.spacing)),
        )
    acc = _backproject(filtered, grid, zero_extend)
    prefactor = -1.0 / (8.0 * np.pi**2 * R)
    if lap_variant:
        b = acc.reshape(grid.shape)
        lap = np.zeros_like(b)
        _laplacian(b, grid.spacing, lap)
        core = tuple(slice(1, -1) for _ in range(grid.dim))
        values = prefactor * lap[core]
    else:
        values = prefactor * acc.reshape(out_grid.shape)
    return ScalarField(out_grid, values, f"fbp_{variant.value}")
