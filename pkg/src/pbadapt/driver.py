"""Solve / estimate / mark / refine loops and their on-disk run records."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LoopAbortedError, PbAdaptError, UsageError
from .estimator import ErrorMap, estimate_Ephi, estimate_Eu
from .mesh import (
    SurfaceMesh,
    close_marking,
    mark_elements,
    refine_conforming,
    refine_flat,
    save_off,
    save_panel_values,
)
from .physics import BiePhysics, ChargeSet, EnergyResult, solvation_energy
from .solver import DEFAULT_GMRES_TOL, solve_adjoint, solve_forward

_ESTIMATORS = {"Ephi": estimate_Ephi, "Eu": estimate_Eu}


@dataclass
class AdaptiveConfig:
    """Knobs of the adaptive loop; defaults follow the study setup."""

    estimator_tag: str = "Eu"
    marking_fraction: float = 0.10
    adjoint_refine_levels: int = 1
    refinement_mode: str = "flat"
    max_iterations: int = 1
    background_mesh: SurfaceMesh | None = None
    gmres_tol: float = DEFAULT_GMRES_TOL
    threads: int | None = None

    def __post_init__(self):
        if self.estimator_tag not in _ESTIMATORS:
            raise UsageError(f"unknown estimator {self.estimator_tag!r}")
        if not 0.0 < self.marking_fraction <= 1.0:
            raise UsageError("marking_fraction must lie in (0, 1]")
        if self.max_iterations < 1:
            raise UsageError("max_iterations must be >= 1")
        if self.adjoint_refine_levels < 0:
            raise UsageError("adjoint_refine_levels must be >= 0")
        if self.refinement_mode not in ("flat", "conforming"):
            raise UsageError(f"unknown refinement mode {self.refinement_mode!r}")
        if self.refinement_mode == "conforming" and self.background_mesh is None:
            raise UsageError("conforming refinement needs a background mesh")


@dataclass(frozen=True)
class IterationRecord:
    """One loop iteration: the mesh solved on and what came out of it."""

    mesh: SurfaceMesh
    energy: EnergyResult
    error_map: ErrorMap | None
    wall_time_s: float


def _refine(mesh, marked, mode, background):
    plan = close_marking(mesh, marked)
    if mode == "conforming":
        return refine_conforming(mesh, plan, background)
    return refine_flat(mesh, plan)


def adaptive_loop(
    mesh0: SurfaceMesh,
    charges: ChargeSet,
    physics: BiePhysics,
    config: AdaptiveConfig,
) -> list[IterationRecord]:
    """Iteratively solve, estimate, mark and refine, recording every step.

    Any stage failure aborts with the partial history attached to the raised
    error. Deterministic for identical inputs.
    """
    history: list[IterationRecord] = []
    mesh = mesh0
    for _ in range(config.max_iterations):
        start = time.perf_counter()
        try:
            forward = solve_forward(
                mesh, physics, charges, gmres_tol=config.gmres_tol, threads=config.threads
            )
            energy = solvation_energy(forward, charges, physics)
            adjoint = solve_adjoint(
                mesh,
                physics,
                charges,
                refine_levels=config.adjoint_refine_levels,
                background=config.background_mesh,
                gmres_tol=config.gmres_tol,
                threads=config.threads,
            )
            emap = _ESTIMATORS[config.estimator_tag](forward, adjoint, charges, physics)
            marked = mark_elements(emap.per_panel, config.marking_fraction)
            next_mesh = _refine(mesh, marked, config.refinement_mode, config.background_mesh)
        except PbAdaptError as exc:
            raise LoopAbortedError(f"adaptive loop aborted: {exc}", history) from exc
        history.append(IterationRecord(mesh, energy, emap, time.perf_counter() - start))
        mesh = next_mesh
    return history


def uniform_loop(
    mesh0: SurfaceMesh,
    charges: ChargeSet,
    physics: BiePhysics,
    levels: int,
    mode: str = "flat",
    background: SurfaceMesh | None = None,
    gmres_tol: float = DEFAULT_GMRES_TOL,
    threads: int | None = None,
) -> list[IterationRecord]:
    """Baseline: refine every panel each iteration, no error estimation."""
    if levels < 1:
        raise UsageError("levels must be >= 1")
    if mode == "conforming" and background is None:
        raise UsageError("conforming refinement needs a background mesh")
    history: list[IterationRecord] = []
    mesh = mesh0
    for level in range(levels):
        start = time.perf_counter()
        try:
            forward = solve_forward(mesh, physics, charges, gmres_tol=gmres_tol, threads=threads)
            energy = solvation_energy(forward, charges, physics)
            if level + 1 < levels:
                next_mesh = _refine(mesh, range(mesh.n_panels), mode, background)
        except PbAdaptError as exc:
            raise LoopAbortedError(f"uniform loop aborted: {exc}", history) from exc
        history.append(IterationRecord(mesh, energy, None, time.perf_counter() - start))
        if level + 1 < levels:
            mesh = next_mesh
    return history


ENERGY_CSV_HEADER = "iter,N_panels,dG,signed_E,sum_Ei,gmres_iters,wall_time_s"


def save_history(history: list[IterationRecord], out_dir) -> None:
    """Write per-iteration meshes (OFF), error maps (CSV) and the energy table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [ENERGY_CSV_HEADER]
    for k, rec in enumerate(history):
        save_off(rec.mesh, out / f"mesh_{k:03d}.off")
        if rec.error_map is not None:
            save_panel_values(rec.mesh, rec.error_map.per_panel, out / f"errors_{k:03d}.csv")
        signed = repr(rec.error_map.signed_total) if rec.error_map else ""
        total = repr(float(rec.error_map.per_panel.sum())) if rec.error_map else ""
        rows.append(
            f"{k},{rec.mesh.n_panels},{rec.energy.dG_solv!r},{signed},{total},"
            f"{rec.energy.diagnostics.get('gmres_iters', '')},{rec.wall_time_s!r}"
        )
    (out / "energy.csv").write_text("\n".join(rows) + "\n")
