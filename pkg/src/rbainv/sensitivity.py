"""Matrix-free Jacobian actions built from the cached shifted factorizations.

For the data map d(m) with per-channel blocks d_j = Q u(t_j),

    J v     = 2 Re sum_i xi_i (alpha[i, :] outer Q A_i^{-1} [dM(g_i) v])
    J^T w   = 2 Re sum_i xi_i dM(g_i)^T A_i^{-1} Q^T (sum_j alpha[i, j] w_j)

Both actions cost exactly one solve per pole: the adjoint collapses all
channels into a single right-hand side per pole before solving, and the
transpose solve reuses the forward factorization because every shifted
matrix is complex symmetric.  Plain transposes (no conjugation) on the
complex factors are what make the real adjoint identity hold to rounding;
this is checked by `adjoint_test` rather than assumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import response_from_pole_solutions
from .mesh import Model, Problem, dM_contract
from .rba import RationalApproximant
from .shifted import PoleWorkerPool, ShiftedFactorCache, solve_all_poles

__all__ = [
    "JacobianOperator",
    "TaylorReport",
    "taylor_test",
    "adjoint_test",
]


class JacobianOperator:
    """Jacobian of the data map at one model, applied matrix-free.

    Holds the pole solutions g_i and the contracted mass-derivative slices
    for the bound model version; instances are read-only once built and must
    be rebuilt after a model update.
    """

    def __init__(self, problem: Problem, model: Model, approx: RationalApproximant,
                 cache: ShiftedFactorCache, pool: PoleWorkerPool | None = None,
                 pole_solutions: np.ndarray | None = None):
        self.problem = problem
        self.model = model
        self.approx = approx
        self.cache = cache
        self.pool = pool or PoleWorkerPool(1)
        self.model_tag = model.version_tag()
        if pole_solutions is None:
            pole_solutions = solve_all_poles(problem, model, approx, problem.f,
                                             cache, self.pool)
        self.g = pole_solutions
        self.dM = [dM_contract(problem, model, self.g[i])
                   for i in range(approx.pole_count)]
        self.shape = (problem.receiver_count * approx.channels.count,
                      problem.grid.cell_count)

    def _check_current(self):
        if self.cache.current_tag != self.model_tag:
            raise RuntimeError("cache has moved to another model version; rebuild the operator")

    def jvp(self, v: np.ndarray) -> np.ndarray:
        """Directional derivative of the data; one solve per pole."""
        self._check_current()
        v = np.asarray(v, dtype=float)
        approx = self.approx
        D = np.zeros((approx.channels.count, self.problem.receiver_count))

        def work(i: int):
            h = self.cache.solve(i, self.dM[i] @ v)
            return self.problem.Q @ h

        q = self.pool.map_poles(work, approx.pole_count)
        for i in range(approx.pole_count):
            D += 2.0 * np.real(approx.poles[i] * np.outer(approx.residues[i], q[i]))
        return D.ravel()

    def vjp(self, w: np.ndarray) -> np.ndarray:
        """Adjoint action; channels aggregate into one transpose solve per pole."""
        self._check_current()
        W = np.asarray(w, dtype=float).reshape(self.approx.channels.count, -1)
        Qt_w = self.problem.Q.T @ W.T                     # (N, K_t) real
        approx = self.approx
        out = np.zeros(self.shape[1])

        def work(i: int):
            y = Qt_w @ approx.residues[i]                 # sum_j alpha[i, j] Q^T w_j
            z = self.cache.solve(i, y, trans="T")
            return self.dM[i].T @ z

        parts = self.pool.map_poles(work, approx.pole_count)
        for i in range(approx.pole_count):
            out += 2.0 * np.real(approx.poles[i] * parts[i])
        return out

    def vjp_per_channel(self, w: np.ndarray) -> np.ndarray:
        """Naive adjoint with one solve per (channel, pole); test oracle for
        the aggregated implementation."""
        self._check_current()
        W = np.asarray(w, dtype=float).reshape(self.approx.channels.count, -1)
        approx = self.approx
        out = np.zeros(self.shape[1])
        for i in range(approx.pole_count):
            for j in range(approx.channels.count):
                z = self.cache.solve(i, self.problem.Q.T @ W[j].astype(complex), trans="T")
                out += 2.0 * np.real(approx.poles[i] * approx.residues[i, j] * (self.dM[i].T @ z))
        return out

    def dense(self) -> np.ndarray:
        """Column-by-column assembly through jvp; small problems only."""
        P = self.shape[1]
        cols = [self.jvp(np.eye(P)[:, c]) for c in range(P)]
        return np.column_stack(cols)


@dataclass
class TaylorReport:
    h_values: np.ndarray
    e0: np.ndarray
    e1: np.ndarray
    slope0: float
    slope1: float
    used: np.ndarray     # mask of points above the round-off floor


def _loglog_slope(h: np.ndarray, e: np.ndarray, mask: np.ndarray) -> float:
    if mask.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log10(h[mask]), np.log10(e[mask]), 1)[0])


def taylor_test(problem: Problem, model: Model, approx: RationalApproximant,
                direction: np.ndarray, h_values,
                cache: ShiftedFactorCache | None = None,
                pool: PoleWorkerPool | None = None) -> TaylorReport:
    """Remainder decay of the linearization along one direction.

    e0(h) = |d(m + h dm) - d(m)| should shrink like h, and the first-order
    remainder e1(h) like h^2; the report carries log-log regression slopes
    over the points above the rounding floor.
    """
    h_values = np.asarray(sorted(h_values, reverse=True), dtype=float)
    if h_values.size < 4 or h_values[0] / h_values[-1] < 100.0:
        raise ValueError("need at least 4 step sizes spanning at least 2 decades")
    cache = cache or ShiftedFactorCache()
    pool = pool or PoleWorkerPool(1)
    direction = np.asarray(direction, dtype=float)

    g0 = solve_all_poles(problem, model, approx, problem.f, cache, pool)
    d0, _ = response_from_pole_solutions(problem, approx, g0)
    opr = JacobianOperator(problem, model, approx, cache, pool, pole_solutions=g0)
    jd = opr.jvp(direction)

    e0 = np.zeros_like(h_values)
    e1 = np.zeros_like(h_values)
    for k, h in enumerate(h_values):
        trial = model.perturbed(direction, h)
        g = solve_all_poles(problem, trial, approx, problem.f, cache, pool)
        d, _ = response_from_pole_solutions(problem, approx, g)
        e0[k] = np.linalg.norm(d - d0)
        e1[k] = np.linalg.norm(d - d0 - h * jd)
    cache.activate(model.version_tag())

    floor = 100 * np.finfo(float).eps * max(np.linalg.norm(d0), 1e-300)
    used = (e0 > floor) & (e1 > floor)
    return TaylorReport(h_values, e0, e1,
                        slope0=_loglog_slope(h_values, e0, used),
                        slope1=_loglog_slope(h_values, e1, used),
                        used=used)


def adjoint_test(opr: JacobianOperator, trials: int = 20, seed: int = 0) -> float:
    """Max relative mismatch of <J v, w> vs <v, J^T w> over seeded trials."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        v = rng.standard_normal(opr.shape[1])
        w = rng.standard_normal(opr.shape[0])
        lhs = float(opr.jvp(v) @ w)
        rhs = float(v @ opr.vjp(w))
        mismatch = abs(lhs - rhs) / max(abs(lhs), abs(rhs))
        worst = max(worst, mismatch)
    return worst
