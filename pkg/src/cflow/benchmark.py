"""Anisotropic Dirichlet energy benchmark on (-1/2, 1/2)^2 with unit-length constraint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import FeSpace, build_uniform_mesh, nodal_interpolate

__all__ = ["BenchmarkSetup", "boundary_datum", "perturbation", "initial_state", "run_benchmark_setup", "ANISOTROPY"]

ANISOTROPY = (1.0, 10.0)


def boundary_datum(x: np.ndarray) -> np.ndarray:
    """Inverse stereographic projection m(x) (unit length everywhere)."""
    x1, x2 = x[:, 0], x[:, 1]
    r2 = x1**2 + x2**2
    m = np.column_stack([np.sqrt(2) * (x1 - x2), np.sqrt(2) * (x1 + x2), 1.0 - r2])
    return m / (1.0 + r2)[:, None]


def perturbation(x: np.ndarray) -> np.ndarray:
    """Factor g(x); equals (1, 1, 1) on the boundary of the square."""
    x1, x2 = x[:, 0], x[:, 1]
    bump = 100.0 * (x1 - 0.5) * (x1 + 0.5) * (x2 - 0.5) * (x2 + 0.5)
    osc = np.column_stack([
        np.sin(np.pi * x1 / 2),
        8.0 * np.sin(np.pi * x2 / 2),
        16.0 * (x1 - x2) * np.cos(8 * np.pi * (x1 + x2)),
    ])
    return 1.0 - bump[:, None] * osc


def initial_state(x: np.ndarray) -> np.ndarray:
    w = boundary_datum(x) * perturbation(x)
    return w / np.linalg.norm(w, axis=1)[:, None]


@dataclass(frozen=True)
class BenchmarkSetup:
    space: FeSpace
    u0: np.ndarray
    boundary: np.ndarray  # datum interpolant on every vertex
    anisotropy: tuple[float, float] = ANISOTROPY


def run_benchmark_setup(n: int = 64) -> BenchmarkSetup:
    """Mesh, Dirichlet mask on the whole boundary, boundary datum and initial state."""
    space = FeSpace(build_uniform_mesh(n), components=3)
    u0 = nodal_interpolate(space, initial_state)
    datum = nodal_interpolate(space, boundary_datum)
    bdry = np.repeat(space.dirichlet_vertex_mask, space.components)
    if not np.allclose(u0[bdry], datum[bdry], atol=1e-14):
        raise AssertionError("initial state does not match the boundary datum")
    u0[bdry] = datum[bdry]
    return BenchmarkSetup(space, u0, datum)
