"""Collective neurodynamic optimization.

A swarm of gradient-flow solvers alternates local refinement with a
particle-swarm exchange:

    V <- w V + c1 r1 (pBest - X) + c2 r2 (gBest - X)
    X <- X + V

Particle fitness is the objective of the *rounded* solution produced by a
caller-supplied ``rounder(z) -> (value, solution)``; ``value`` is ``inf`` for
a rejected rounding.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Tuple

import numpy as np

from .neurolp import GeneralFormLp, SolverConfig, integrate_flow, solve_lp
from .netmodel import rng_stream

log = logging.getLogger(__name__)

Rounder = Callable[[np.ndarray], Tuple[float, Any]]


@dataclass
class CndConfig:
    swarm_size: int = 10
    inertia: float = 0.7
    c1: float = 1.5
    c2: float = 1.5
    outer_rounds: int = 30
    stall_rounds: int = 5
    seed: int = 0
    velocity_clamp: float = 1.0

    def __post_init__(self):
        if self.swarm_size < 1:
            raise ValueError("swarm_size must be at least 1")
        if min(self.inertia, self.c1, self.c2) < 0:
            raise ValueError("PSO coefficients must be nonnegative")


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    dual: np.ndarray
    value: float = math.inf
    solution: Any = None
    best_position: Optional[np.ndarray] = None
    best_value: float = math.inf
    best_solution: Any = None
    diverged: bool = False

    def __post_init__(self):
        if self.best_position is None:
            self.best_position = self.position.copy()


@dataclass
class Swarm:
    particles: List[Particle]
    binary: np.ndarray
    rng: np.random.Generator
    gbest_position: Optional[np.ndarray] = None
    gbest_value: float = math.inf
    gbest_solution: Any = None

    def update_gbest(self) -> None:
        for p in self.particles:
            if p.best_value < self.gbest_value:
                self.gbest_value = p.best_value
                self.gbest_position = p.best_position.copy()
                self.gbest_solution = p.best_solution
        if self.gbest_position is None:
            self.gbest_position = self.particles[0].best_position.copy()


@dataclass
class CndReport:
    rounds: int
    gbest_trace: List[float] = field(default_factory=list)
    mean_trace: List[float] = field(default_factory=list)
    fell_back: bool = False
    warning: str = ""

    def write_round_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "gbest_objective", "mean_particle_objective"])
            for i, (g, m) in enumerate(zip(self.gbest_trace, self.mean_trace)):
                w.writerow([i, repr(g), repr(m)])


@dataclass
class CndResult:
    value: float
    solution: Any
    position: Optional[np.ndarray]
    report: CndReport


def init_swarm(lp: GeneralFormLp, config: CndConfig, rounder: Optional[Rounder] = None) -> Swarm:
    """Seeded random positions in [0, 1] on relaxed 0/1 coordinates, zero elsewhere.

    With a ``rounder`` the initial positions are scored and seed pBest/gBest;
    without one every best starts at ``inf``.
    """
    rng = rng_stream(config.seed, "swarm")
    binary = lp.binary
    particles = []
    for _ in range(config.swarm_size):
        x = np.zeros(lp.num_vars)
        x[binary] = rng.random(int(binary.sum()))
        p = Particle(x, np.zeros(lp.num_vars), np.zeros(lp.num_rows))
        if rounder is not None:
            p.value, p.solution = rounder(x)
            p.best_value, p.best_solution = p.value, p.solution
        particles.append(p)
    swarm = Swarm(particles, binary, rng)
    swarm.update_gbest()
    return swarm


def local_refine(particle: Particle, lp: GeneralFormLp, solver_config: SolverConfig, rounder: Rounder) -> Particle:
    """Run the flow from the particle (dual warm-started) and score the result."""
    u0 = np.concatenate([particle.position, particle.dual])
    state, report = integrate_flow(lp, u0, solver_config)
    if report.status == "diverged" or not np.all(np.isfinite(state.z)):
        particle.diverged = True
        return particle
    particle.diverged = False
    particle.position = state.z
    particle.dual = state.xi
    particle.value, particle.solution = rounder(state.z)
    if particle.value < particle.best_value:
        particle.best_value = particle.value
        particle.best_solution = particle.solution
        particle.best_position = particle.position.copy()
    return particle


def pso_step(swarm: Swarm, config: CndConfig) -> Swarm:
    """One velocity/position update; r1, r2 drawn per particle in that order."""
    g = swarm.gbest_position
    vmax = config.velocity_clamp
    for p in swarm.particles:
        r1 = swarm.rng.random()
        r2 = swarm.rng.random()
        v = (
            config.inertia * p.velocity
            + config.c1 * r1 * (p.best_position - p.position)
            + config.c2 * r2 * (g - p.position)
        )
        v = np.clip(v, -vmax, vmax)
        x = p.position + v
        b = swarm.binary
        clamped = b & ((x < 0.0) | (x > 1.0))
        x[b] = np.clip(x[b], 0.0, 1.0)
        v[clamped] = 0.0
        p.position, p.velocity = x, v
    swarm.update_gbest()
    return swarm


def cnd_solve(
    lp: GeneralFormLp,
    cnd_config: Optional[CndConfig] = None,
    solver_config: Optional[SolverConfig] = None,
    rounder: Optional[Rounder] = None,
) -> CndResult:
    """Alternate refinement and PSO until ``outer_rounds`` or a gBest stall."""
    cnd_config = cnd_config or CndConfig()
    solver_config = solver_config or SolverConfig()
    if rounder is None:
        def rounder(z):
            return lp.objective(z), z
    swarm = init_swarm(lp, cnd_config)
    report = CndReport(rounds=0)
    stall = 0
    for rnd in range(cnd_config.outer_rounds):
        before = swarm.gbest_value
        for p in swarm.particles:
            local_refine(p, lp, solver_config, rounder)
        report.rounds = rnd + 1
        if all(p.diverged for p in swarm.particles):
            if math.isfinite(swarm.gbest_value):
                report.warning = "all particles diverged; keeping earlier gBest"
                break
            log.warning("every particle diverged; falling back to a single solver")
            z, _, _ = solve_lp(lp, solver_config)
            value, sol = rounder(z) if np.all(np.isfinite(z)) else (math.inf, None)
            report.fell_back = True
            report.warning = "all particles diverged"
            return CndResult(value, sol, z, report)
        swarm.update_gbest()
        report.gbest_trace.append(swarm.gbest_value)
        vals = [p.value for p in swarm.particles if math.isfinite(p.value)]
        report.mean_trace.append(float(np.mean(vals)) if vals else math.inf)
        stall = stall + 1 if not swarm.gbest_value < before else 0
        if stall >= cnd_config.stall_rounds or rnd == cnd_config.outer_rounds - 1:
            break
        pso_step(swarm, cnd_config)
    return CndResult(swarm.gbest_value, swarm.gbest_solution, swarm.gbest_position, report)
