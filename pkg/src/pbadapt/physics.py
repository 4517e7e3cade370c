"""Point-charge electrostatics: Coulomb traces, reaction potential, energy.

Internal units: lengths in Å, charges in elementary charges, potentials in
e/Å with the 1/(4*pi) kernel convention. ``ENERGY_UNIT`` converts the
resulting energies to kcal/mol; it is fixed so that a centered unit charge
in a unit sphere reproduces 332.0636 * (q^2 / 2R) * (1/eps_w - 1/eps_m).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import kernels
from .errors import DomainError, ParseError, SingularityError, UsageError
from .mesh import SurfaceMesh, points_inside
from .quadrature import GAUSS7

if TYPE_CHECKING:
    from .solver import PanelSolution

ENERGY_UNIT = 4.0 * np.pi * 332.0636  # kcal/mol per e^2/Å
CHARGE_CLEARANCE = 1e-12              # Å; closer targets hit the Coulomb singularity


@dataclass(frozen=True)
class BiePhysics:
    """Dielectric and ionic parameters of the two-region model.

    kappa is the inverse Debye screening length of the solvent in 1/Å
    (0.125 corresponds to roughly 150 mM NaCl in water).
    """

    eps_m: float = 4.0
    eps_w: float = 80.0
    kappa: float = 0.125
    energy_unit: float = ENERGY_UNIT

    def __post_init__(self):
        if self.eps_m <= 0 or self.eps_w <= 0:
            raise UsageError("permittivities must be positive")
        if self.kappa < 0:
            raise UsageError("kappa must be >= 0")


@dataclass(frozen=True)
class ChargeSet:
    """Point charges q_k at positions r_k (Å, elementary charges)."""

    positions: np.ndarray
    charges: np.ndarray

    def __post_init__(self):
        pos = np.ascontiguousarray(np.atleast_2d(np.asarray(self.positions, dtype=float)))
        q = np.ascontiguousarray(np.atleast_1d(np.asarray(self.charges, dtype=float)))
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise UsageError("positions must be (N, 3)")
        if q.shape != (pos.shape[0],):
            raise UsageError("charges must match positions")
        if len(q) < 1:
            raise UsageError("at least one charge required")
        pos.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "charges", q)

    def __len__(self) -> int:
        return len(self.charges)


def require_charges_inside(charges: ChargeSet, mesh: SurfaceMesh) -> None:
    """Raise DomainError unless every charge sits strictly inside the surface."""
    inside = points_inside(mesh, charges.positions)
    if not np.all(inside):
        bad = int(np.flatnonzero(~inside)[0])
        raise DomainError(f"charge {bad} lies outside the surface")


@dataclass(frozen=True)
class EnergyResult:
    """Solvation free energy and its per-charge decomposition (kcal/mol)."""

    dG_solv: float
    per_charge: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def as_text(self) -> str:
        lines = [f"dG_solv_kcal_mol = {self.dG_solv!r}"]
        for key, val in self.diagnostics.items():
            lines.append(f"{key} = {val!r}")
        return "\n".join(lines)

    def as_csv_row(self) -> str:
        return ",".join([repr(self.dG_solv)] + [repr(float(v)) for v in self.per_charge])


# ---------------------------------------------------------------------------
# Coulomb field of the solute charges


def coulomb_potential(charges: ChargeSet, physics: BiePhysics, points) -> np.ndarray:
    """u_c = (1/eps_m) sum_k q_k / (4*pi*|r - r_k|)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = points[:, None, :] - charges.positions[None, :, :]
    r = np.linalg.norm(d, axis=-1)
    if np.any(r < CHARGE_CLEARANCE):
        raise SingularityError("evaluation point coincides with a charge")
    return (charges.charges[None, :] / (kernels.FOUR_PI * r)).sum(axis=1) / physics.eps_m


def coulomb_gradient(charges: ChargeSet, physics: BiePhysics, points) -> np.ndarray:
    """Gradient of the Coulomb potential at the given points, (M, 3)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = points[:, None, :] - charges.positions[None, :, :]
    r = np.linalg.norm(d, axis=-1)
    if np.any(r < CHARGE_CLEARANCE):
        raise SingularityError("evaluation point coincides with a charge")
    g = -(charges.charges[None, :, None] * d / (kernels.FOUR_PI * r[:, :, None] ** 3)).sum(axis=1)
    return g / physics.eps_m


def coulomb_trace(charges: ChargeSet, physics: BiePhysics, points, normals):
    """Coulomb potential and its normal derivative at surface points."""
    normals = np.atleast_2d(np.asarray(normals, dtype=float))
    u = coulomb_potential(charges, physics, points)
    dudn = np.einsum("mx,mx->m", coulomb_gradient(charges, physics, points), normals)
    return u, dudn


# ---------------------------------------------------------------------------
# reaction potential and energy


def reaction_potential(solution: "PanelSolution", targets) -> np.ndarray:
    """Solvent reaction potential at interior points from the surface traces.

    Evaluates the interior representation with the Laplace kernel,
    u_r = -K[u] + V[du/dn]; panels close to a target get the refined
    near-singular rule.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    mesh = solution.mesh_ref
    inside = points_inside(mesh, targets)
    if not np.all(inside):
        bad = int(np.flatnonzero(~inside)[0])
        raise DomainError(f"target {bad} lies outside the surface")
    p1 = solution.space == "P1"
    scatter = None
    if p1:
        from scipy.sparse import csr_matrix

        tris = mesh.triangles
        n_pan = mesh.n_panels
        scatter = csr_matrix(
            (np.ones(3 * n_pan), (np.arange(3 * n_pan), tris.ravel())),
            shape=(3 * n_pan, mesh.n_vertices),
        )
    vl, kl, _, _ = kernels.kernel_row_blocks(
        targets, mesh, GAUSS7, kappa=0.0, yukawa=False, shape_functions=p1, scatter=scatter
    )
    ti, pj = kernels.near_pairs(targets, mesh)
    if len(ti):
        coarse = kernels.kernel_pair_entries(
            targets[ti], mesh, pj, GAUSS7, kappa=0.0, yukawa=False, shape_functions=p1
        )
        fine = kernels.kernel_pair_entries(
            targets[ti], mesh, pj, kernels.NEAR_RULE, kappa=0.0, yukawa=False, shape_functions=p1
        )
        if p1:
            for l in range(3):
                np.add.at(vl, (ti, mesh.triangles[pj, l]), fine[0][:, l] - coarse[0][:, l])
                np.add.at(kl, (ti, mesh.triangles[pj, l]), fine[1][:, l] - coarse[1][:, l])
        else:
            vl[ti, pj] += fine[0] - coarse[0]
            kl[ti, pj] += fine[1] - coarse[1]
    return -(kl @ solution.u_trace) + vl @ solution.dudn_trace


def solvation_energy(solution: "PanelSolution", charges: ChargeSet, physics: BiePhysics) -> EnergyResult:
    """Electrostatic solvation free energy (1/2) sum_k q_k u_r(r_k), in kcal/mol."""
    ur = reaction_potential(solution, charges.positions)
    per_charge = physics.energy_unit * 0.5 * charges.charges * ur
    diag = {
        "n_panels": solution.mesh_ref.n_panels,
        "space": solution.space,
        "gmres_iters": solution.gmres_iters,
        "gmres_residual": solution.gmres_residual,
    }
    return EnergyResult(float(per_charge.sum()), per_charge, diag)


# ---------------------------------------------------------------------------
# PQR input


def load_pqr(path) -> ChargeSet:
    """Read charges from ATOM/HETATM records of a PQR file.

    Records may or may not carry a chain column; the last five fields are
    always x, y, z, charge, radius.
    """
    positions, charges = [], []
    with open(path) as fh:
        for no, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields or fields[0] not in ("ATOM", "HETATM"):
                continue
            if len(fields) < 10:
                raise ParseError(path, no, f"expected >= 10 fields, got {len(fields)}")
            try:
                x, y, z, q, _radius = (float(v) for v in fields[-5:])
            except ValueError as exc:
                raise ParseError(path, no, f"bad numeric field: {exc}") from exc
            positions.append([x, y, z])
            charges.append(q)
    if not charges:
        raise ParseError(path, 0, "no charges")
    return ChargeSet(np.array(positions), np.array(charges))
