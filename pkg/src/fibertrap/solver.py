"""Variable-permittivity Laplace/Poisson solver on a tensor grid.

Finite-volume 7-point stencil with harmonic face averaging of the
permittivity; Dirichlet values on conductor nodes and on the domain
boundary; symmetric positive-definite system solved with conjugate
gradients preconditioned by smoothed-aggregation AMG.

One :class:`PoissonSystem` is assembled per geometry+grid and reused for
every right-hand side (electrode basis solutions and the facet-charge
solution all share the same matrix).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
import pyamg
from scipy import sparse
from scipy.constants import e as ELEMENTARY_CHARGE
from scipy.constants import epsilon_0
from scipy.sparse.linalg import cg

from .grids import Grid3D, ScalarField3D
from .model import TrapGeometry, VoltageSet

DEFAULT_TOL = 1e-8


class SolverError(RuntimeError):
    """CG failed to reach the requested residual."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals or [])


class GridTooCoarseError(ValueError):
    """Grid spacing cannot resolve the inter-electrode gap."""


def control_widths(ax: np.ndarray) -> np.ndarray:
    """Per-node control-volume width along one axis (half cells at ends)."""
    h = np.diff(ax)
    w = np.empty(ax.size)
    w[0] = h[0] / 2
    w[-1] = h[-1] / 2
    w[1:-1] = (h[:-1] + h[1:]) / 2
    return w


def boundary_mask(shape) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    m[0, :, :] = m[-1, :, :] = True
    m[:, 0, :] = m[:, -1, :] = True
    m[:, :, 0] = m[:, :, -1] = True
    return m


class PoissonSystem:
    """Assembled discrete problem for one set of Dirichlet nodes and one
    permittivity map; solve() handles any Dirichlet values / charges."""

    def __init__(self, grid: Grid3D, dirichlet: np.ndarray,
                 eps: Optional[np.ndarray] = None):
        self.grid = grid
        self.shape = grid.shape
        self.dirichlet = dirichlet.astype(bool)
        if not self.dirichlet[0, 0, 0]:
            raise ValueError("domain boundary must be part of the "
                             "Dirichlet set")
        self.eps = np.ones(self.shape) if eps is None else \
            np.asarray(eps, dtype=float)
        self._assemble()
        self._ml = None

    def _assemble(self):
        grid, shape = self.grid, self.shape
        n = grid.num_nodes
        free = ~self.dirichlet
        self.nfree = int(free.sum())
        gidx = np.full(n, -1, dtype=np.int64)
        gidx[free.ravel()] = np.arange(self.nfree)
        self._gidx = gidx
        cw = [control_widths(ax) for ax in grid.axes()]

        rows, cols, data = [], [], []
        drows, dcols, ddata = [], [], []
        diag = np.zeros(self.nfree)
        nodes = np.arange(n).reshape(shape)
        eps = self.eps
        for axis in range(3):
            ax = grid.axes()[axis]
            h = np.diff(ax)
            sl_a = [slice(None)] * 3
            sl_b = [slice(None)] * 3
            sl_a[axis] = slice(0, -1)
            sl_b[axis] = slice(1, None)
            sl_a, sl_b = tuple(sl_a), tuple(sl_b)
            ea, eb = eps[sl_a], eps[sl_b]
            eps_face = 2.0 * ea * eb / (ea + eb)
            # face area = product of the transverse control widths
            tshape = [1, 1, 1]
            area = np.ones([s - (1 if k == axis else 0)
                            for k, s in enumerate(shape)])
            for k in range(3):
                if k == axis:
                    continue
                tshape_k = [1, 1, 1]
                tshape_k[k] = shape[k]
                area = area * cw[k].reshape(tshape_k)
            hshape = [1, 1, 1]
            hshape[axis] = h.size
            w = (eps_face * area / h.reshape(hshape)).ravel()
            a = nodes[sl_a].ravel()
            b = nodes[sl_b].ravel()
            fa, fb = free.ravel()[a], free.ravel()[b]
            both = fa & fb
            ia, ib = gidx[a[both]], gidx[b[both]]
            wb = w[both]
            rows.append(ia)
            cols.append(ib)
            data.append(-wb)
            rows.append(ib)
            cols.append(ia)
            data.append(-wb)
            np.add.at(diag, ia, wb)
            np.add.at(diag, ib, wb)
            # free node next to a Dirichlet node: weight moves to the RHS
            for fmask, fn, dn in ((fa & ~fb, a, b), (~fa & fb, b, a)):
                if fmask.any():
                    fi = gidx[fn[fmask]]
                    np.add.at(diag, fi, w[fmask])
                    drows.append(fi)
                    dcols.append(dn[fmask])
                    ddata.append(w[fmask])

        idx = np.arange(self.nfree)
        rows.append(idx)
        cols.append(idx)
        data.append(diag)
        self.A = sparse.coo_matrix(
            (np.concatenate(data),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.nfree, self.nfree)).tocsr()
        if drows:
            self.A_fd = sparse.coo_matrix(
                (np.concatenate(ddata),
                 (np.concatenate(drows), np.concatenate(dcols))),
                shape=(self.nfree, self.grid.num_nodes)).tocsr()
        else:
            self.A_fd = sparse.csr_matrix((self.nfree, self.grid.num_nodes))

    def _preconditioner(self):
        if self._ml is None:
            self._ml = pyamg.smoothed_aggregation_solver(
                self.A, max_coarse=1000)
        return self._ml.aspreconditioner(cycle="V")

    def solve(self, dirichlet_values: np.ndarray,
              charge: Optional[np.ndarray] = None,
              tol: float = DEFAULT_TOL, maxiter: int = 800) -> np.ndarray:
        """Solve for the full node array given per-node Dirichlet values
        (ignored on free nodes) and an optional per-node charge in C."""
        vals = np.asarray(dirichlet_values, dtype=float).ravel()
        b = self.A_fd @ np.where(self.dirichlet.ravel(), vals, 0.0)
        if charge is not None:
            b = b + charge.ravel()[~self.dirichlet.ravel()] / epsilon_0
        out = np.where(self.dirichlet.ravel(), vals, 0.0)
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return out.reshape(self.shape)
        residuals = []

        def track(xk):
            residuals.append(float(np.linalg.norm(b - self.A @ xk)))

        x, info = cg(self.A, b, rtol=tol * 0.5, atol=0.0,
                     maxiter=maxiter, M=self._preconditioner(),
                     callback=track)
        rel = float(np.linalg.norm(b - self.A @ x)) / bnorm
        if info != 0 or rel > tol:
            raise SolverError(
                f"CG did not converge: relative residual {rel:.3e} after "
                f"{len(residuals)} iterations (target {tol:.1e})",
                residuals=[r / bnorm for r in residuals])
        out[~self.dirichlet.ravel()] = x
        return out.reshape(self.shape)


@dataclass
class StampedGeometry:
    """Node masks for one TrapGeometry on one grid."""

    grid: Grid3D
    conductors: Dict[str, np.ndarray]
    eps: np.ndarray
    facet_charge_unit: np.ndarray  # coulombs per node at density 1 e/um^2
    iz_chip: int

    @property
    def dirichlet(self) -> np.ndarray:
        m = boundary_mask(self.grid.shape)
        for mask in self.conductors.values():
            m |= mask
        return m


def stamp_geometry(geometry: TrapGeometry, grid: Grid3D) -> StampedGeometry:
    """Paint electrodes, fiber dielectric/coating and facet charge onto
    grid nodes.  Electrodes are zero-thickness patches on the chip plane;
    a coated fiber body is a solid grounded cylinder starting one node
    plane behind the facet."""
    if not grid.covers(geometry.domain):
        raise ValueError("grid does not cover the trap domain")
    gap = geometry.layout.gap
    fine_h = min(float(np.diff(grid.x).min()), float(np.diff(grid.y).min()))
    if fine_h > gap / 2 + 1e-12:
        raise GridTooCoarseError(
            f"in-plane spacing {fine_h * 1e6:.2f} um cannot resolve the "
            f"{gap * 1e6:.1f} um electrode gap (need <= {gap / 2 * 1e6:.1f}"
            " um)")
    iz_chip = int(np.argmin(np.abs(grid.z)))
    if abs(grid.z[iz_chip]) > 1e-12:
        raise ValueError("grid has no node on the chip plane z=0")

    shape = grid.shape
    tol = 1e-12
    conductors: Dict[str, np.ndarray] = {}

    def group_mask(group):
        if group not in conductors:
            conductors[group] = np.zeros(shape, dtype=bool)
        return conductors[group]

    # chip conductors are extruded through the device-layer thickness;
    # the slot termination stays a flat plate on the carrier plane
    thick = geometry.layout.thickness
    iz_top = int(np.searchsorted(grid.z, thick + tol))
    z_layer = slice(iz_chip, max(iz_top, iz_chip + 1))
    for r in geometry.layout.regions:
        in_x = (grid.x >= r.x0 - tol) & (grid.x <= r.x1 + tol)
        in_y = (grid.y >= r.y0 - tol) & (grid.y <= r.y1 + tol)
        zs = [iz_chip] if r.name == "slot" else list(
            range(z_layer.start, z_layer.stop))
        group_mask(r.group)[np.ix_(in_x, in_y, zs)] |= True

    # the carrier plane beyond the chip is grounded
    xe = geometry.layout.chip_extent
    off_x = np.abs(grid.x) > xe + tol
    off_y = np.abs(grid.y) > xe + tol
    gnd = group_mask("gnd")
    gnd[off_x, :, iz_chip] = True
    gnd[:, off_y, iz_chip] = True

    eps = np.ones(shape)
    charge_unit = np.zeros(shape)
    fiber = geometry.fiber
    if fiber is not None:
        X, Z = np.meshgrid(grid.x, grid.z, indexing="ij")
        in_disk = X ** 2 + (Z - fiber.height) ** 2 <= fiber.radius ** 2
        jy_tip = int(np.argmin(np.abs(grid.y - fiber.tip_y)))
        body = np.abs(grid.y) >= abs(grid.y[jy_tip]) - tol  # both fibers
        eps[:, body, :] = np.where(in_disk[:, None, :],
                                   fiber.permittivity, 1.0)
        if fiber.coating != "bare":
            # grounded/biased sidewall shell: the shielded interior makes
            # it equivalent to a solid conductor; start one plane behind
            # the facet so the facet itself stays dielectric
            jy_back = min(jy_tip + 1, shape[1] - 1)
            behind = np.abs(grid.y) >= abs(grid.y[jy_back]) - tol
            group_mask("coating")[:, behind, :] |= in_disk[:, None, :]
        # per-node coulombs on both facet disks, at 1 e/um^2
        cw_x = control_widths(grid.x)
        cw_z = control_widths(grid.z)
        unit_sigma = ELEMENTARY_CHARGE / 1e-12
        patch = np.where(in_disk, np.outer(cw_x, cw_z) * unit_sigma, 0.0)
        jy_neg = int(np.argmin(np.abs(grid.y + fiber.tip_y)))
        for jy in {jy_tip, jy_neg}:
            charge_unit[:, jy, :] += patch

    return StampedGeometry(grid=grid, conductors=conductors, eps=eps,
                           facet_charge_unit=charge_unit, iz_chip=iz_chip)


@dataclass
class BasisSet:
    """Unit-volt Dirichlet solutions per electrode group, plus the
    facet-charge solution at the geometry's nominal density."""

    fields: Dict[str, ScalarField3D]
    charge: Optional[ScalarField3D] = None


class FieldSolver:
    """Basis-solution factory for one geometry on one grid."""

    def __init__(self, geometry: TrapGeometry, grid: Grid3D,
                 tol: float = DEFAULT_TOL):
        self.geometry = geometry
        self.grid = grid
        self.tol = tol
        self.stamped = stamp_geometry(geometry, grid)
        self.system = PoissonSystem(grid, self.stamped.dirichlet,
                                    self.stamped.eps)
        self._cache: Dict[str, ScalarField3D] = {}

    @property
    def groups(self) -> tuple:
        return tuple(g for g in sorted(self.stamped.conductors)
                     if g != "gnd")

    def basis(self, group: str) -> ScalarField3D:
        """Unit-volt solution for one electrode group (cached)."""
        if group not in self._cache:
            if group not in self.stamped.conductors:
                raise KeyError(f"no electrode group {group!r}")
            vals = np.zeros(self.grid.shape)
            vals[self.stamped.conductors[group]] = 1.0
            sol = self.system.solve(vals, tol=self.tol)
            self._cache[group] = ScalarField3D(self.grid, sol, "potential")
        return self._cache[group]

    def basis_union(self, groups, key: str) -> ScalarField3D:
        """Combined solution with 1 V on several groups at once.

        By superposition this equals the sum of the individual basis
        fields; solving the union directly saves right-hand sides.
        """
        if key not in self._cache:
            vals = np.zeros(self.grid.shape)
            for g in groups:
                if g not in self.stamped.conductors:
                    raise KeyError(f"no electrode group {g!r}")
                vals[self.stamped.conductors[g]] = 1.0
            sol = self.system.solve(vals, tol=self.tol)
            self._cache[key] = ScalarField3D(self.grid, sol, "potential")
        return self._cache[key]

    def charge_field(self) -> ScalarField3D:
        """All conductors grounded, facet charge at the nominal density."""
        fiber = self.geometry.fiber
        if fiber is None or not fiber.facet_charge_density:
            raise ValueError("geometry has no charged fiber facets")
        if "charge" not in self._cache:
            q = self.stamped.facet_charge_unit * fiber.facet_charge_density
            sol = self.system.solve(np.zeros(self.grid.shape), charge=q,
                                    tol=self.tol)
            self._cache["charge"] = ScalarField3D(self.grid, sol,
                                                  "potential")
        return self._cache["charge"]

    def basis_set(self, groups=None) -> BasisSet:
        groups = self.groups if groups is None else groups
        fields = {g: self.basis(g) for g in groups}
        fiber = self.geometry.fiber
        charge = None
        if fiber is not None and fiber.facet_charge_density:
            charge = self.charge_field()
        return BasisSet(fields=fields, charge=charge)


def compose(basis: BasisSet, geometry: TrapGeometry,
            volts: VoltageSet) -> ScalarField3D:
    """DC potential for a voltage set: weighted sum of unit-volt basis
    fields plus the charge contribution.  Linear in every voltage."""
    weights = geometry.group_voltages(volts)
    missing = [g for g, w in weights.items()
               if w != 0.0 and g not in basis.fields]
    if missing:
        raise KeyError(f"missing basis solutions for groups {missing}")
    grid = None
    for f in basis.fields.values():
        grid = f.grid
        break
    if grid is None and basis.charge is not None:
        grid = basis.charge.grid
    total = np.zeros(grid.shape)
    for g in sorted(weights):
        w = weights[g]
        if w != 0.0:
            total += w * basis.fields[g].values
    if basis.charge is not None:
        total += basis.charge.values
    return ScalarField3D(grid, total, "potential")
