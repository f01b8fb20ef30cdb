"""Closed observation surfaces: detector positions, normals and quadrature.

Spheres use a Gauss-Legendre (polar) x uniform (azimuth) product rule, circles
a uniform trapezoid rule, boxes midpoint rules on per-face detector grids.
All weights sum to the surface area so plain weighted sums approximate
surface integrals.
"""

import numpy as np
from dataclasses import dataclass


@dataclass(frozen=True)
class ObservationSurface:
    """Discretized closed measurement surface (sphere/circle or box boundary).

    points / normals are (n, dim); weights (n,) sum to the surface area.
    `descriptor` records the construction so the surface can be rebuilt
    bit-exactly from a file header; `structure` keeps the product-grid layout
    (used for interpolating data defined on the detectors back onto meshes).
    """

    kind: str
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    descriptor: dict
    structure: dict

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        nrm = np.ascontiguousarray(self.normals, dtype=float)
        wts = np.ascontiguousarray(self.weights, dtype=float)
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise ValueError("points must be (n, 2) or (n, 3)")
        if nrm.shape != pts.shape or wts.shape != (pts.shape[0],):
            raise ValueError("normals/weights shapes do not match points")
        if np.any(wts <= 0):
            raise ValueError("quadrature weights must be positive")
        self._check_on_surface(pts)
        for arr in (pts, nrm, wts):
            arr.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "normals", nrm)
        object.__setattr__(self, "weights", wts)

    def _check_on_surface(self, pts):
        if self.kind == "sphere":
            c = np.asarray(self.descriptor["center"], dtype=float)
            R = float(self.descriptor["radius"])
            r = np.linalg.norm(pts - c, axis=1)
            if np.max(np.abs(r - R)) > 1e-12 * max(R, 1.0):
                raise ValueError("detector points do not lie on the declared sphere")
        elif self.kind == "cube":
            lo = np.asarray(self.descriptor["lo"], dtype=float)
            hi = np.asarray(self.descriptor["hi"], dtype=float)
            scale = float(np.max(hi - lo))
            on_face = np.zeros(pts.shape[0], dtype=bool)
            for ax in range(pts.shape[1]):
                on_face |= np.abs(pts[:, ax] - lo[ax]) <= 1e-12 * scale
                on_face |= np.abs(pts[:, ax] - hi[ax]) <= 1e-12 * scale
            inside = np.all(
                (pts >= lo - 1e-12 * scale) & (pts <= hi + 1e-12 * scale), axis=1
            )
            if not np.all(on_face & inside):
                raise ValueError("detector points do not lie on the declared box")
        else:
            raise ValueError(f"unknown surface kind {self.kind!r}")

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def num_detectors(self):
        return self.points.shape[0]

    @property
    def area(self):
        return float(self.weights.sum())

    def encloses(self, bounds, margin=0.0):
        """True if the (lo, hi) box lies strictly inside the surface."""
        if bounds is None:
            return True
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)
        corners = np.stack(
            np.meshgrid(*[(lo[a], hi[a]) for a in range(lo.size)], indexing="ij"),
            axis=-1,
        ).reshape(-1, lo.size)
        if self.kind == "sphere":
            c = np.asarray(self.descriptor["center"], dtype=float)
            R = float(self.descriptor["radius"])
            return bool(np.all(np.linalg.norm(corners - c, axis=1) < R - margin))
        blo = np.asarray(self.descriptor["lo"], dtype=float)
        bhi = np.asarray(self.descriptor["hi"], dtype=float)
        return bool(np.all(corners > blo + margin) and np.all(corners < bhi + margin))


def sphere_surface(center, radius, n_polar=24, n_azimuth=None):
    """Spherical surface (3D) with a Gauss-Legendre x uniform product rule.

    Detector count is n_polar * n_azimuth (default n_azimuth = 2 n_polar);
    weights integrate smooth functions on the sphere with spectral accuracy.
    """
    center = np.asarray(center, dtype=float)
    if center.shape != (3,):
        raise ValueError("sphere_surface builds 3D surfaces; use circle_surface in 2D")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if n_azimuth is None:
        n_azimuth = 2 * n_polar
    mu, wmu = np.polynomial.legendre.leggauss(n_polar)  # mu = cos(theta)
    phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    sin_t = np.sqrt(1.0 - mu**2)
    # outer products -> (n_polar, n_azimuth) grids, polar-major flattening
    x = np.outer(sin_t, np.cos(phi))
    y = np.outer(sin_t, np.sin(phi))
    z = np.outer(mu, np.ones(n_azimuth))
    dirs = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    weights = (np.outer(wmu, np.ones(n_azimuth)) * (2.0 * np.pi / n_azimuth)).ravel()
    weights = weights * radius**2
    pts = center + radius * dirs
    descriptor = {
        "kind": "sphere",
        "center": center.tolist(),
        "radius": float(radius),
        "n_polar": int(n_polar),
        "n_azimuth": int(n_azimuth),
    }
    structure = {
        "layout": "sphere_product",
        "mu": mu,
        "phi": phi,
        "shape": (n_polar, n_azimuth),
    }
    return ObservationSurface("sphere", pts, dirs, weights, descriptor, structure)


def circle_surface(center, radius, n_detectors=128):
    """Circular 'sphere' in 2D with the uniform trapezoid rule."""
    center = np.asarray(center, dtype=float)
    if center.shape != (2,):
        raise ValueError("circle_surface builds 2D surfaces")
    if radius <= 0:
        raise ValueError("radius must be positive")
    theta = 2.0 * np.pi * np.arange(n_detectors) / n_detectors
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    pts = center + radius * dirs
    weights = np.full(n_detectors, 2.0 * np.pi * radius / n_detectors)
    descriptor = {
        "kind": "sphere",
        "center": center.tolist(),
        "radius": float(radius),
        "n_detectors": int(n_detectors),
    }
    structure = {"layout": "circle_uniform", "theta": theta, "shape": (n_detectors,)}
    return ObservationSurface("sphere", pts, dirs, weights, descriptor, structure)


def _face_axes(dim, axis):
    return [a for a in range(dim) if a != axis]


def cube_surface(lo, hi, n_per_axis=32):
    """Box boundary with detectors at face-cell centers (midpoint rule).

    2D: 4 edges with n detectors each; 3D: 6 faces with n^2 detectors each.
    Face ordering: axis 0 low/high, axis 1 low/high, (axis 2 low/high).
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    dim = lo.size
    if dim not in (2, 3) or hi.size != dim:
        raise ValueError("lo/hi must both be length 2 or 3")
    if np.any(hi <= lo):
        raise ValueError("need hi > lo on every axis")
    n = int(n_per_axis)
    pts, nrms, wts = [], [], []
    faces = []
    for axis in range(dim):
        for side, coord, sign in ((0, lo[axis], -1.0), (1, hi[axis], +1.0)):
            taxes = _face_axes(dim, axis)
            coords_1d = [
                lo[a] + (hi[a] - lo[a]) * (np.arange(n) + 0.5) / n for a in taxes
            ]
            mesh = np.meshgrid(*coords_1d, indexing="ij")
            count = mesh[0].size
            p = np.empty((count, dim))
            p[:, axis] = coord
            for a, m in zip(taxes, mesh):
                p[:, a] = m.ravel()
            nrm = np.zeros((count, dim))
            nrm[:, axis] = sign
            cell = np.prod([(hi[a] - lo[a]) / n for a in taxes])
            pts.append(p)
            nrms.append(nrm)
            wts.append(np.full(count, cell))
            faces.append({"axis": axis, "side": side, "count": count})
    descriptor = {
        "kind": "cube",
        "lo": lo.tolist(),
        "hi": hi.tolist(),
        "n_per_axis": n,
    }
    structure = {"layout": "cube_faces", "faces": faces, "n": n}
    return ObservationSurface(
        "cube",
        np.concatenate(pts),
        np.concatenate(nrms),
        np.concatenate(wts),
        descriptor,
        structure,
    )


def surface_from_descriptor(desc):
    """Rebuild a surface from its stored descriptor (bit-exact)."""
    kind = desc["kind"]
    if kind == "sphere":
        if "n_polar" in desc:
            return sphere_surface(
                desc["center"], desc["radius"], desc["n_polar"], desc["n_azimuth"]
            )
        return circle_surface(desc["center"], desc["radius"], desc["n_detectors"])
    if kind == "cube":
        return cube_surface(desc["lo"], desc["hi"], desc["n_per_axis"])
    raise ValueError(f"unknown surface descriptor kind {kind!r}")
