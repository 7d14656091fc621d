"""Regular (tensor-product, possibly graded) 3D grids and sampled fields."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import DomainBox, ValidationError


@dataclass(frozen=True)
class Grid3D:
    """Tensor-product grid: strictly increasing node coordinates per axis."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "z"):
            ax = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, ax)
            if ax.ndim != 1 or ax.size < 16:
                raise ValidationError(
                    f"grid axis {name} needs >= 16 nodes, got {ax.size}")
            if np.any(np.diff(ax) <= 0):
                raise ValidationError(
                    f"grid axis {name} must be strictly increasing")

    @property
    def shape(self) -> tuple:
        return (self.x.size, self.y.size, self.z.size)

    @property
    def num_nodes(self) -> int:
        return self.x.size * self.y.size * self.z.size

    def axes(self) -> tuple:
        return (self.x, self.y, self.z)

    def spacing_at(self, r) -> np.ndarray:
        """Local spacing per axis at position r (max of the two cell sizes)."""
        out = np.empty(3)
        for k, ax in enumerate(self.axes()):
            i = int(np.clip(np.searchsorted(ax, r[k]) - 1, 0, ax.size - 2))
            lo = ax[i] - ax[i - 1] if i > 0 else ax[i + 1] - ax[i]
            hi = ax[i + 1] - ax[i]
            out[k] = max(lo, hi)
        return out

    def min_spacing(self) -> float:
        return min(float(np.diff(ax).min()) for ax in self.axes())

    def contains(self, r, margin: float = 0.0) -> bool:
        return all(ax[0] + margin <= r[k] <= ax[-1] - margin
                   for k, ax in enumerate(self.axes()))

    def covers(self, domain: DomainBox) -> bool:
        tol = 1e-12
        return (self.x[0] <= -domain.x + tol and self.x[-1] >= domain.x - tol
                and self.y[0] <= -domain.y + tol
                and self.y[-1] >= domain.y - tol
                and self.z[0] <= domain.z_min + tol
                and self.z[-1] >= domain.z_max - tol)


def _graded_axis(fine_lo, fine_hi, lo, hi, h, stretch):
    """Uniform spacing h on [fine_lo, fine_hi], geometrically stretched
    cells out to [lo, hi].  Endpoints land exactly on lo/hi."""
    n = max(int(round((fine_hi - fine_lo) / h)), 1)
    core = fine_lo + h * np.arange(n + 1)

    def tail(start, end, direction):
        pts = []
        pos = start
        step = h
        while (end - pos) * direction > 1e-15:
            step = min(step * stretch, abs(end - pos)) if stretch > 1 \
                else abs(end - pos)
            remaining = abs(end - pos)
            if remaining < step * 1.5:
                step = remaining
            pos = pos + direction * step
            pts.append(pos)
        if pts:
            pts[-1] = end
        return pts

    upper = tail(core[-1], hi, +1)
    lower = tail(core[0], lo, -1)[::-1]
    return np.concatenate([lower, core, upper])


def symmetric_axis(fine_half, half_extent, h, stretch):
    """Axis symmetric about 0 with a uniform center; |x| <= half_extent."""
    fine_half = min(fine_half, half_extent)
    pos = _graded_axis(0.0, fine_half, 0.0, half_extent, h, stretch)
    return np.concatenate([-pos[:0:-1], pos])


def build_grid(domain: DomainBox, spacing: float, fine_x: float,
               fine_y: float, fine_z: float, stretch: float = 1.3) -> Grid3D:
    """Grid covering the domain: uniform `spacing` in the fine region
    around the origin/chip surface, geometric stretch towards the far
    boundaries.  x and y axes are exactly mirror symmetric about 0 and a
    node always falls exactly on the chip plane z = 0."""
    x = symmetric_axis(fine_x, domain.x, spacing, stretch)
    y = symmetric_axis(fine_y, domain.y, spacing, stretch)
    n_below = min(3, int(-domain.z_min / spacing))
    fine_top = min(fine_z, domain.z_max)
    z = _graded_axis(-n_below * spacing, fine_top, domain.z_min,
                     domain.z_max, spacing, stretch)
    return Grid3D(x=x, y=y, z=z)


def uniform_grid(domain: DomainBox, n: int) -> Grid3D:
    return Grid3D(x=np.linspace(-domain.x, domain.x, n),
                  y=np.linspace(-domain.y, domain.y, n),
                  z=np.linspace(domain.z_min, domain.z_max, n))


@dataclass(frozen=True)
class ScalarField3D:
    """Node-sampled scalar field; kind is 'potential' (V) or 'energy' (eV)."""

    grid: Grid3D
    values: np.ndarray
    kind: str = "potential"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.shape != self.grid.shape:
            raise ValidationError(
                f"values shape {vals.shape} != grid shape {self.grid.shape}")
        if self.kind not in ("potential", "energy"):
            raise ValidationError("kind must be 'potential' or 'energy'")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("field contains non-finite values")

    def scaled(self, factor: float, kind=None) -> "ScalarField3D":
        return ScalarField3D(self.grid, self.values * factor,
                             kind or self.kind)

    def __add__(self, other: "ScalarField3D") -> "ScalarField3D":
        if other.grid is not self.grid and other.grid.shape != self.grid.shape:
            raise ValidationError("cannot add fields on different grids")
        return ScalarField3D(self.grid, self.values + other.values, self.kind)

    def interpolate(self, r) -> float:
        """Trilinear interpolation at one point (must be inside the grid)."""
        return float(self.interpolate_many(np.asarray(r)[None, :])[0])

    def interpolate_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        axes = self.grid.axes()
        idx = []
        frac = []
        for k, ax in enumerate(axes):
            p = pts[:, k]
            if np.any(p < ax[0] - 1e-12) or np.any(p > ax[-1] + 1e-12):
                raise OutOfDomainError(
                    f"point outside grid along axis {'xyz'[k]}")
            i = np.clip(np.searchsorted(ax, p, side="right") - 1,
                        0, ax.size - 2)
            idx.append(i)
            frac.append((p - ax[i]) / (ax[i + 1] - ax[i]))
        ix, iy, iz = idx
        fx, fy, fz = (np.clip(f, 0.0, 1.0) for f in frac)
        v = self.values
        out = np.zeros(pts.shape[0])
        for dx_ in (0, 1):
            wx = fx if dx_ else 1 - fx
            for dy_ in (0, 1):
                wy = fy if dy_ else 1 - fy
                for dz_ in (0, 1):
                    wz = fz if dz_ else 1 - fz
                    out += wx * wy * wz * v[ix + dx_, iy + dy_, iz + dz_]
        return out

    def gradient_field(self) -> tuple:
        """Node-sampled gradient per axis (second-order, graded-aware)."""
        return np.gradient(self.values, self.grid.x, self.grid.y,
                           self.grid.z, edge_order=2)

    def save_npz(self, path):
        np.savez_compressed(
            path, x=self.grid.x, y=self.grid.y, z=self.grid.z,
            values=self.values, kind=self.kind)

    @classmethod
    def load_npz(cls, path) -> "ScalarField3D":
        data = np.load(path)
        grid = Grid3D(x=data["x"], y=data["y"], z=data["z"])
        return cls(grid=grid, values=data["values"],
                   kind=str(data["kind"]))

    def export_csv(self, path):
        """Flat lattice dump with a header documenting extents and units."""
        g = self.grid
        unit = "V" if self.kind == "potential" else "eV"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# kind={self.kind} unit={unit}\n")
            fh.write(f"# nx={g.x.size} ny={g.y.size} nz={g.z.size}\n")
            fh.write(f"# x_m=[{g.x[0]:.9g},{g.x[-1]:.9g}] "
                     f"y_m=[{g.y[0]:.9g},{g.y[-1]:.9g}] "
                     f"z_m=[{g.z[0]:.9g},{g.z[-1]:.9g}]\n")
            fh.write("x_m,y_m,z_m,value\n")
            X, Y, Z = np.meshgrid(g.x, g.y, g.z, indexing="ij")
            flat = np.column_stack(
                [X.ravel(), Y.ravel(), Z.ravel(), self.values.ravel()])
            np.savetxt(fh, flat, fmt="%.9g", delimiter=",")


class OutOfDomainError(ValueError):
    """Requested evaluation point lies outside the sampled grid."""


@dataclass(frozen=True)
class FieldProbe:
    """value / gradient / Hessian of a field at a point, with the
    second-order finite-difference error scale (h^2 per axis)."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    h2_bound: np.ndarray = field(repr=False, default=None)


def probe(fld: ScalarField3D, r, step_scale: float = 1.0) -> FieldProbe:
    """Evaluate value, central-difference gradient and Hessian at r.

    Differences are taken on the trilinear interpolant with per-axis steps
    equal to the local grid spacing, so on interior nodes the stencil hits
    nodes exactly and quadratic fields give exact Hessians.
    """
    r = np.asarray(r, dtype=float)
    h = fld.grid.spacing_at(r) * step_scale
    for k, ax in enumerate(fld.grid.axes()):
        if not ax[0] <= r[k] <= ax[-1]:
            raise OutOfDomainError(f"point outside grid along {'xyz'[k]}")
        # shrink steps at the domain rim so probes stay inside
        h[k] = min(h[k], r[k] - ax[0], ax[-1] - r[k]) or h[k]
        if r[k] - h[k] < ax[0] or r[k] + h[k] > ax[-1]:
            h[k] = min(r[k] - ax[0], ax[-1] - r[k])
    offsets = [r]
    for k in range(3):
        for s in (-1, 1):
            p = r.copy()
            p[k] += s * h[k]
            offsets.append(p)
    for k in range(3):
        for l in range(k + 1, 3):
            for sk in (-1, 1):
                for sl in (-1, 1):
                    p = r.copy()
                    p[k] += sk * h[k]
                    p[l] += sl * h[l]
                    offsets.append(p)
    vals = fld.interpolate_many(np.asarray(offsets))
    f0 = vals[0]
    grad = np.empty(3)
    hess = np.empty((3, 3))
    for k in range(3):
        fm, fp = vals[1 + 2 * k], vals[2 + 2 * k]
        grad[k] = (fp - fm) / (2 * h[k])
        hess[k, k] = (fp - 2 * f0 + fm) / h[k] ** 2
    pos = 7
    for k in range(3):
        for l in range(k + 1, 3):
            fmm, fmp, fpm, fpp = vals[pos], vals[pos + 1], vals[pos + 2], \
                vals[pos + 3]
            pos += 4
            hess[k, l] = hess[l, k] = (fpp - fpm - fmp + fmm) / \
                (4 * h[k] * h[l])
    return FieldProbe(value=float(f0), gradient=grad, hessian=hess,
                      h2_bound=h ** 2)
