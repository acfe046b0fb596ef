"""Primal-dual gradient-flow LP solver.

The LP is held in the general form

    minimize    d1.z1 + d2.z2
    subject to  M11 z1 + M12 z2 >= r1
                M21 z1 + M22 z2  = r2
                z1 >= 0,  z2 free

with dual

    maximize    r1.xi1 + r2.xi2
    subject to  M11^T xi1 + M21^T xi2 <= d1
                M12^T xi1 + M22^T xi2  = d2
                xi1 >= 0.

The state ``u = (z, xi)`` descends the energy

    E(u) = 1/2 (d.z - r.xi)^2 + 1/2 z1.(z1 - |z1|) + 1/2 xi1.(xi1 - |xi1|)
         + 1/2 |M2 z - r2|^2 + 1/2 |M4 xi - d2|^2
         + 1/2 a.(a - |a|) + 1/2 b.(b - |b|),   a = M1 z - r1,  b = d1 - M3 xi

whose zeros are exactly the primal-dual optimal pairs. All operators are
applied through sparse mat-vecs only.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

INTEGRATORS = ("implicit-euler", "explicit-euler", "rk4")

_EXPLICIT_GROWTH = 1.1
_IMPLICIT_GROWTH = 10.0
_MAX_STEP = 1e12


def _csr(a, shape) -> sp.csr_matrix:
    if a is None:
        return sp.csr_matrix(shape)
    m = sp.csr_matrix(a, dtype=float)
    if m.shape != shape:
        raise ValueError(f"block has shape {m.shape}, expected {shape}")
    return m


@dataclass(eq=False)
class GeneralFormLp:
    """Sparse general-form LP; ``z1`` nonnegative, ``z2`` free.

    ``binary`` flags coordinates that are relaxed 0/1 variables and ``meta``
    carries problem-specific layout (block slices, index tables).
    """

    m11: sp.csr_matrix
    m12: sp.csr_matrix
    m21: sp.csr_matrix
    m22: sp.csr_matrix
    d1: np.ndarray
    d2: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    binary: Optional[np.ndarray] = None
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.d1 = np.asarray(self.d1, dtype=float).ravel()
        self.d2 = np.asarray(self.d2, dtype=float).ravel()
        self.r1 = np.asarray(self.r1, dtype=float).ravel()
        self.r2 = np.asarray(self.r2, dtype=float).ravel()
        n1, n2, p1, p2 = len(self.d1), len(self.d2), len(self.r1), len(self.r2)
        self.m11 = _csr(self.m11, (p1, n1))
        self.m12 = _csr(self.m12, (p1, n2))
        self.m21 = _csr(self.m21, (p2, n1))
        self.m22 = _csr(self.m22, (p2, n2))
        self.m1 = sp.hstack([self.m11, self.m12], format="csr")
        self.m2 = sp.hstack([self.m21, self.m22], format="csr")
        self.m3 = sp.hstack([self.m11.T, self.m21.T], format="csr")
        self.m4 = sp.hstack([self.m12.T, self.m22.T], format="csr")
        self.m1t = self.m1.T.tocsr()
        self.m2t = self.m2.T.tocsr()
        self.m3t = self.m3.T.tocsr()
        self.m4t = self.m4.T.tocsr()
        self.d = np.concatenate([self.d1, self.d2])
        self.r = np.concatenate([self.r1, self.r2])
        if self.binary is None:
            self.binary = np.zeros(n1 + n2, dtype=bool)
        self.binary = np.asarray(self.binary, dtype=bool)
        if self.binary.shape != (n1 + n2,):
            raise ValueError("binary mask has the wrong length")

    @classmethod
    def from_rows(cls, cost, a_ge=None, b_ge=None, a_eq=None, b_eq=None, n_free=0, **kw):
        """Build from whole-row matrices; the last ``n_free`` columns are free."""
        cost = np.asarray(cost, dtype=float)
        n = len(cost)
        n1 = n - n_free
        a_ge = sp.csr_matrix((0, n)) if a_ge is None else sp.csr_matrix(a_ge, dtype=float)
        a_eq = sp.csr_matrix((0, n)) if a_eq is None else sp.csr_matrix(a_eq, dtype=float)
        b_ge = np.zeros(0) if b_ge is None else b_ge
        b_eq = np.zeros(0) if b_eq is None else b_eq
        return cls(a_ge[:, :n1], a_ge[:, n1:], a_eq[:, :n1], a_eq[:, n1:],
                   cost[:n1], cost[n1:], b_ge, b_eq, **kw)

    @property
    def n1(self) -> int:
        return len(self.d1)

    @property
    def n2(self) -> int:
        return len(self.d2)

    @property
    def p1(self) -> int:
        return len(self.r1)

    @property
    def p2(self) -> int:
        return len(self.r2)

    @property
    def num_vars(self) -> int:
        return self.n1 + self.n2

    @property
    def num_rows(self) -> int:
        return self.p1 + self.p2

    def objective(self, z: np.ndarray) -> float:
        return float(self.d @ z)

    def dual(self) -> "GeneralFormLp":
        """The dual, rewritten as a general-form minimization over ``xi``."""
        return GeneralFormLp(
            -self.m11.T, -self.m21.T, self.m12.T, self.m22.T,
            -self.r1, -self.r2, -self.d1, self.d2,
        )

    def split(self, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.num_vars + self.num_rows,):
            raise ValueError(f"state has length {u.size}, expected {self.num_vars + self.num_rows}")
        return u[: self.num_vars], u[self.num_vars:]


@dataclass
class NeuroState:
    z: np.ndarray
    xi: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return np.concatenate([self.z, self.xi])


@dataclass
class SolverConfig:
    beta: float = 1.0
    step_size: float = 1e-3
    max_steps: int = 2_000_000
    kkt_tolerance: float = 1e-6
    integrator: str = "implicit-euler"
    min_step: float = 1e-14
    cg_maxiter: int = 500
    stall_window: int = 60
    record_trace: bool = False

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")


@dataclass
class SolveReport:
    converged: bool
    status: str
    kkt_residual: float
    duality_gap: float
    energy: float
    steps: int
    trace: List[Tuple[int, float, float]] = field(default_factory=list)

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "energy", "kkt_residual"])
            for row in self.trace:
                w.writerow([row[0], repr(row[1]), repr(row[2])])


class _Eval:
    """Energy, gradient, residual and active sets at one state."""

    __slots__ = ("energy", "grad", "residual", "gap", "active", "parts")

    def __init__(self, lp: GeneralFormLp, u: np.ndarray):
        z, xi = lp.split(u)
        gap = float(lp.d @ z - lp.r @ xi)
        zn = np.minimum(z[: lp.n1], 0.0)
        xn = np.minimum(xi[: lp.p1], 0.0)
        e2 = lp.m2 @ z - lp.r2
        e4 = lp.m4 @ xi - lp.d2
        a = lp.m1 @ z - lp.r1
        b = lp.d1 - lp.m3 @ xi
        an = np.minimum(a, 0.0)
        bn = np.minimum(b, 0.0)
        self.energy = (
            0.5 * gap * gap + zn @ zn + xn @ xn + 0.5 * (e2 @ e2) + 0.5 * (e4 @ e4) + an @ an + bn @ bn
        )
        gz = gap * lp.d + lp.m2t @ e2 + 2.0 * (lp.m1t @ an)
        gz[: lp.n1] += 2.0 * zn
        gx = -gap * lp.r + lp.m4t @ e4 - 2.0 * (lp.m3t @ bn)
        gx[: lp.p1] += 2.0 * xn
        self.grad = np.concatenate([gz, gx])
        self.gap = gap
        self.parts = {
            "gap": abs(gap),
            "primal_sign": _inf(zn),
            "dual_sign": _inf(xn),
            "primal_eq": _inf(e2),
            "dual_eq": _inf(e4),
            "primal_ineq": _inf(an),
            "dual_ineq": _inf(bn),
        }
        self.residual = max(self.parts.values())
        # sign(0) = 0: a penalty exactly at its kink is inactive
        self.active = (z[: lp.n1] < 0, xi[: lp.p1] < 0, a < 0, b < 0)


def _inf(v: np.ndarray) -> float:
    return float(np.abs(v).max()) if v.size else 0.0


def energy(lp: GeneralFormLp, u: np.ndarray) -> float:
    return float(_Eval(lp, u).energy)


def energy_gradient(lp: GeneralFormLp, u: np.ndarray) -> np.ndarray:
    return _Eval(lp, u).grad


def kkt_residual(lp: GeneralFormLp, u: np.ndarray) -> float:
    """Infinity-norm aggregate of primal/dual violations and the duality gap."""
    return _Eval(lp, u).residual


def kkt_breakdown(lp: GeneralFormLp, u: np.ndarray) -> Dict[str, float]:
    return dict(_Eval(lp, u).parts)


def _hessian_operator(lp: GeneralFormLp, ev: _Eval, shift: float) -> LinearOperator:
    """``shift * I + H`` where H is the generalized Hessian on the active set."""
    az, ax, aa, ab = (m.astype(float) for m in ev.active)
    g = np.concatenate([lp.d, -lp.r])
    nv = lp.num_vars
    size = nv + lp.num_rows

    def matvec(v):
        v = np.ravel(v)
        vz, vx = v[:nv], v[nv:]
        hz = lp.m2t @ (lp.m2 @ vz) + 2.0 * (lp.m1t @ (aa * (lp.m1 @ vz)))
        hz[: lp.n1] += 2.0 * az * vz[: lp.n1]
        hx = lp.m4t @ (lp.m4 @ vx) + 2.0 * (lp.m3t @ (ab * (lp.m3 @ vx)))
        hx[: lp.p1] += 2.0 * ax * vx[: lp.p1]
        return shift * v + g * (g @ v) + np.concatenate([hz, hx])

    return LinearOperator((size, size), matvec=matvec, dtype=float)


def _propose(lp: GeneralFormLp, u: np.ndarray, ev: _Eval, h: float, config: SolverConfig) -> np.ndarray:
    bh = config.beta * h
    if config.integrator == "explicit-euler":
        return u - bh * ev.grad
    if config.integrator == "rk4":
        k1 = -ev.grad
        k2 = -energy_gradient(lp, u + 0.5 * bh * k1)
        k3 = -energy_gradient(lp, u + 0.5 * bh * k2)
        k4 = -energy_gradient(lp, u + bh * k3)
        return u + bh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    # linearly implicit Euler: (I/(beta h) + H) du = -grad E
    op = _hessian_operator(lp, ev, 1.0 / bh)
    du, _ = cg(op, -ev.grad, rtol=1e-12, atol=0.0, maxiter=config.cg_maxiter)
    return u + du


def integrate_flow(lp: GeneralFormLp, u0: np.ndarray, config: Optional[SolverConfig] = None):
    """Integrate du/dt = -beta grad E(u) from ``u0``.

    A step that would raise the energy is rejected and the step size halved;
    the accepted trajectory therefore has nonincreasing energy. Returns the
    final :class:`NeuroState` and a :class:`SolveReport`.
    """
    config = config or SolverConfig()
    u = np.array(u0, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        ev = _Eval(lp, u)
    if not np.isfinite(ev.energy):
        z, xi = lp.split(u)
        return NeuroState(z, xi), SolveReport(False, "diverged", math.inf, math.inf, math.inf, 0)
    growth = _IMPLICIT_GROWTH if config.integrator == "implicit-euler" else _EXPLICIT_GROWTH
    h = config.step_size
    trace = [(0, float(ev.energy), ev.residual)] if config.record_trace else []
    steps = 0
    attempts = 0
    best_energy = ev.energy
    since_progress = 0
    status = "max_steps"
    if config.beta == 0:
        status = "stalled"
    while config.beta > 0:
        if ev.residual <= config.kkt_tolerance:
            status = "converged"
            break
        if steps >= config.max_steps:
            break
        if h < config.min_step or since_progress >= config.stall_window:
            status = "stalled"
            break
        attempts += 1
        with np.errstate(over="ignore", invalid="ignore"):
            cand = _propose(lp, u, ev, h, config)
        if not np.all(np.isfinite(cand)):
            h *= 0.5
            since_progress += 1
            continue
        cev = _Eval(lp, cand)
        if not np.isfinite(cev.energy) or cev.energy > ev.energy:
            h *= 0.5
            since_progress += 1
            continue
        u, ev = cand, cev
        steps += 1
        if ev.energy < best_energy * (1.0 - 1e-12):
            best_energy = ev.energy
            since_progress = 0
        else:
            since_progress += 1
        h = min(h * growth, _MAX_STEP)
        if config.record_trace:
            trace.append((steps, float(ev.energy), ev.residual))
    z, xi = lp.split(u)
    report = SolveReport(
        converged=status == "converged",
        status=status,
        kkt_residual=ev.residual,
        duality_gap=abs(ev.gap),
        energy=float(ev.energy),
        steps=steps,
        trace=trace,
    )
    return NeuroState(z.copy(), xi.copy()), report


def solve_lp(lp: GeneralFormLp, config: Optional[SolverConfig] = None, initial_guess=None):
    """Run the flow from ``initial_guess`` (primal, zero dual) or from zero."""
    u0 = np.zeros(lp.num_vars + lp.num_rows)
    if initial_guess is not None:
        g = np.asarray(initial_guess, dtype=float)
        if g.shape == u0.shape:
            u0 = g.copy()
        elif g.shape == (lp.num_vars,):
            u0[: lp.num_vars] = g
        else:
            raise ValueError("initial guess has the wrong length")
    state, report = integrate_flow(lp, u0, config)
    return state.z, state.xi, report


# ---------------------------------------------------------------- exact oracle


@dataclass
class OracleResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    objective: float
    z: Optional[np.ndarray]


def _standard_form(lp: GeneralFormLp):
    """Columns (z1, z2+, z2-, slack) with A w = b, w >= 0."""
    m11, m12, m21, m22 = (m.toarray() for m in (lp.m11, lp.m12, lp.m21, lp.m22))
    p1, p2 = lp.p1, lp.p2
    top = np.hstack([m11, m12, -m12, -np.eye(p1)])
    bot = np.hstack([m21, m22, -m22, np.zeros((p2, p1))])
    a = np.vstack([top, bot])
    b = np.concatenate([lp.r1, lp.r2])
    c = np.concatenate([lp.d1, lp.d2, -lp.d2, np.zeros(p1)])
    return a, b, c


def _independent_rows(a: np.ndarray, tol=1e-9) -> List[int]:
    rows: List[int] = []
    for i in range(a.shape[0]):
        trial = a[rows + [i]]
        if np.linalg.matrix_rank(trial, tol=tol) == len(rows) + 1:
            rows.append(i)
    return rows


def _enumerate_bfs(a: np.ndarray, b: np.ndarray, c: np.ndarray, tol=1e-9):
    """Minimum of c.w over basic feasible solutions of {A w = b, w >= 0}."""
    ncol = a.shape[1]
    rows = _independent_rows(a)
    ar, br = a[rows], b[rows]
    r = len(rows)
    scale = 1.0 + np.abs(b).max(initial=0.0)
    best_val, best_w = math.inf, None
    if r == 0:
        if np.abs(b).max(initial=0.0) > tol:
            return best_val, best_w
        return 0.0, np.zeros(ncol)
    combos = itertools.combinations(range(ncol), r)
    while True:
        chunk = list(itertools.islice(combos, 4096))
        if not chunk:
            break
        idx = np.array(chunk)
        mats = ar[:, idx].transpose(1, 0, 2)
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(mats)
        ok = np.isfinite(cond) & (cond < 1e12)
        if not ok.any():
            continue
        idx, mats = idx[ok], mats[ok]
        sol = np.linalg.solve(mats, np.broadcast_to(br, (len(idx), r))[..., None])[..., 0]
        feas = np.all(sol >= -tol * scale, axis=1)
        for k in np.nonzero(feas)[0]:
            w = np.zeros(ncol)
            w[idx[k]] = np.maximum(sol[k], 0.0)
            if np.abs(a @ w - b).max() > 1e-7 * scale:
                continue
            val = float(c @ w)
            if val < best_val - 1e-12:
                best_val, best_w = val, w
    return best_val, best_w


def vertex_oracle(lp: GeneralFormLp, max_columns: int = 24) -> OracleResult:
    """Exact LP optimum by enumerating basic feasible solutions."""
    a, b, c = _standard_form(lp)
    if a.shape[1] > max_columns:
        raise ValueError(f"{a.shape[1]} standard-form columns exceed the oracle limit {max_columns}")
    val, w = _enumerate_bfs(a, b, c)
    if w is None:
        return OracleResult("infeasible", math.nan, None)
    # extreme rays of {w >= 0, A w = 0} normalized by sum(w) = 1
    ray_a = np.vstack([a, np.ones((1, a.shape[1]))])
    ray_b = np.concatenate([np.zeros(a.shape[0]), [1.0]])
    ray_val, _ = _enumerate_bfs(ray_a, ray_b, c)
    if ray_val < -1e-9:
        return OracleResult("unbounded", -math.inf, None)
    n1, n2 = lp.n1, lp.n2
    z = np.concatenate([w[:n1], w[n1:n1 + n2] - w[n1 + n2:n1 + 2 * n2]])
    return OracleResult("optimal", float(lp.d @ z), z)
