"""Gauss-Newton inversion: augmented LSQR updates, Armijo backtracking with a
step-length floor and quadratic candidate, and halving-based cooling of the
regularization weight until the normalized misfit reaches its target.

The update at each iteration approximately minimizes

    | [ W_d J        ]        [ W_d (d(m) - d_obs)      ] |
    | [ sqrt(l) R    ] dm  +  [ sqrt(l) R (m - m_ref)   ] |_2

through LSQR on the stacked matrix-free operator, never forming normal
equations.  One LSQR iteration costs one jvp plus one vjp, i.e. 2m shifted
solves against the cached factorizations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .forward import response_from_pole_solutions
from .mesh import Model, Problem
from .rba import RationalApproximant
from .regularization import RegOperator, build_reg, reg_value_grad
from .sensitivity import JacobianOperator
from .shifted import PoleWorkerPool, ShiftedFactorCache, solve_all_poles
from .synthetic import DataSet

__all__ = [
    "LsqrConfig",
    "InversionConfig",
    "IterationRecord",
    "InversionState",
    "LineSearchResult",
    "chi_squared",
    "default_lambda0",
    "gn_step",
    "line_search",
    "run_inversion",
]


@dataclass(frozen=True)
class LsqrConfig:
    tol: float = 1e-3
    max_iters: int = 50


@dataclass(frozen=True)
class InversionConfig:
    lambda0: float | None = None        # None: balance misfit and a perturbed R
    chi2_target: float = 1.0
    max_gn: int = 30
    tol_outer: float = 1e-3             # relative phi decrease that triggers cooling
    lsqr: LsqrConfig = field(default_factory=LsqrConfig)
    c1: float = 1e-4
    eta_min: float = 2.0 ** -6
    lambda_min_factor: float = 2.0 ** -20
    quad_refine: bool = True
    workers: int = 1
    m0: np.ndarray | None = None


@dataclass
class IterationRecord:
    nu: int
    phi: float
    misfit: float
    reg_value: float
    chi2: float
    lam: float
    eta: float
    accepted: bool
    lsqr_iters: int
    lsqr_istop: int
    wall_ms: float
    factorizations: int
    solves: int
    phi_evals: int
    phi_before: float
    directional_slope: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class InversionState:
    model: Model
    lam: float
    nu: int = 0
    phi: float = np.nan
    chi2: float = np.nan
    history: list = field(default_factory=list)
    diagnostic: str = ""
    counters: dict = field(default_factory=dict)


@dataclass
class LineSearchResult:
    eta: float
    accepted: bool
    phi: float
    n_evals: int


def chi_squared(data: DataSet, d_pred: np.ndarray) -> float:
    """Weighted misfit normalized by the total datum count."""
    if d_pred.size != data.size:
        raise ValueError("prediction length does not match data")
    r = data.weights * (d_pred - data.d_obs)
    return float(r @ r) / data.size


def default_lambda0(problem: Problem, data: DataSet, reg: RegOperator,
                    d_start: np.ndarray, model: Model) -> float:
    """Starting weight balancing the misfit against the smoothness term.

    R vanishes at m_ref itself, so its scale is probed with a deterministic
    rough perturbation one conductivity decade in amplitude.  When the
    starting misfit is many times the noise level this balance point is
    deliberately conservative (strongly smoothing); pass an explicit
    lambda0 to shorten the cooling path.
    """
    misfit = float(np.sum((data.weights * (d_start - data.d_obs)) ** 2))
    pert = np.log(10.0) * np.sin(np.arange(model.cell_count, dtype=float))
    r_pert, _ = reg_value_grad(reg, Model(model.m_ref + pert, model.m_ref))
    return misfit / max(1.0, 2.0 * r_pert)


def _augmented_lsqr(opr: JacobianOperator, reg: RegOperator, data: DataSet,
                    d_pred: np.ndarray, model: Model, lam: float,
                    lsqr_cfg: LsqrConfig):
    """Solve the stacked least-squares problem for the model update."""
    n_data = data.size
    P = model.cell_count
    W = data.weights
    sql = np.sqrt(lam)
    R = reg.R_factor

    def matvec(v):
        return np.concatenate([W * opr.jvp(v), sql * (R @ v)])

    def rmatvec(u):
        return opr.vjp(W * u[:n_data]) + sql * (R.T @ u[n_data:])

    op = spla.LinearOperator((n_data + P, P), matvec=matvec, rmatvec=rmatvec,
                             dtype=float)
    b = -np.concatenate([W * (d_pred - data.d_obs),
                         sql * (R @ (model.m - model.m_ref))])
    x, istop, itn, *_ = spla.lsqr(op, b, atol=lsqr_cfg.tol, btol=lsqr_cfg.tol,
                                  iter_lim=lsqr_cfg.max_iters)
    return x, int(itn), int(istop)


def gn_step(state: InversionState, problem: Problem, approx: RationalApproximant,
            reg: RegOperator, data: DataSet, cache: ShiftedFactorCache,
            lsqr_cfg: LsqrConfig | None = None, pool: PoleWorkerPool | None = None,
            opr: JacobianOperator | None = None,
            d_pred: np.ndarray | None = None):
    """One linearized update at ``state.model``; returns (dm, lsqr_iters).

    Builds the Jacobian operator (reusing cached factorizations when the
    model version matches) unless one is supplied.
    """
    lsqr_cfg = lsqr_cfg or LsqrConfig()
    if opr is None:
        opr = JacobianOperator(problem, state.model, approx, cache, pool)
    if d_pred is None:
        d_pred, _ = response_from_pole_solutions(problem, approx, opr.g)
    dm, itn, istop = _augmented_lsqr(opr, reg, data, d_pred, state.model,
                                     state.lam, lsqr_cfg)
    state.counters["last_lsqr_istop"] = istop
    return dm, itn


def line_search(phi0: float, directional_slope: float, phi_evaluator,
                c1: float = 1e-4, eta_min: float = 2.0 ** -6,
                quad_refine: bool = True) -> LineSearchResult:
    """Backtracking Armijo search from eta = 1 with halving, a step floor,
    and one optional quadratic-interpolation candidate that must itself
    satisfy the Armijo inequality."""
    eta = 1.0
    n_evals = 0
    quad_tried = False
    while eta >= eta_min:
        phi = phi_evaluator(eta)
        n_evals += 1
        if phi <= phi0 + c1 * eta * directional_slope:
            return LineSearchResult(eta, True, phi, n_evals)
        if quad_refine and not quad_tried:
            quad_tried = True
            denom = 2.0 * (phi - phi0 - directional_slope * eta)
            if denom > 0 and directional_slope < 0:
                eta_q = -directional_slope * eta * eta / denom
                eta_q = min(max(eta_q, eta_min), 0.9 * eta)
                if eta_q < eta:
                    phi_q = phi_evaluator(eta_q)
                    n_evals += 1
                    if phi_q <= phi0 + c1 * eta_q * directional_slope:
                        return LineSearchResult(eta_q, True, phi_q, n_evals)
        eta *= 0.5
    return LineSearchResult(eta_min, False, phi0, n_evals)


def run_inversion(problem: Problem, data: DataSet, approx: RationalApproximant,
                  cfg: InversionConfig | None = None,
                  cache: ShiftedFactorCache | None = None) -> InversionState:
    """Full Gauss-Newton loop with cooling; history rows carry everything
    needed to replay the objective and the Armijo bookkeeping."""
    cfg = cfg or InversionConfig()
    cache = cache or ShiftedFactorCache()
    pool = PoleWorkerPool(cfg.workers)
    reg = build_reg(problem.grid)
    ref = problem.reference_model()
    m_start = cfg.m0 if cfg.m0 is not None else ref.m
    model = Model(np.asarray(m_start, dtype=float), ref.m_ref)
    W = data.weights
    n_data = data.size

    def forward_at(mdl: Model):
        g = solve_all_poles(problem, mdl, approx, problem.f, cache, pool)
        d, _ = response_from_pole_solutions(problem, approx, g)
        mis = 0.5 * float(np.sum((W * (d - data.d_obs)) ** 2))
        rv, _ = reg_value_grad(reg, mdl)
        return g, d, mis, rv

    g, d_pred, misfit, reg_val = forward_at(model)
    lam = cfg.lambda0 if cfg.lambda0 is not None else default_lambda0(
        problem, data, reg, d_pred, model)
    lam_min = lam * cfg.lambda_min_factor
    phi = misfit + lam * reg_val
    chi2 = 2.0 * misfit / n_data

    state = InversionState(model=model, lam=lam, phi=phi, chi2=chi2)
    increase_streak = 0

    for nu in range(1, cfg.max_gn + 1):
        state.nu = nu
        if chi2 <= cfg.chi2_target:
            state.diagnostic = "chi2 target reached"
            break
        t0 = time.perf_counter()
        counters0 = cache.counters.snapshot()

        opr = JacobianOperator(problem, model, approx, cache, pool, pole_solutions=g)
        residual = d_pred - data.d_obs
        grad = opr.vjp(W * W * residual) + lam * (reg.L @ (model.m - model.m_ref))
        dm, lsqr_iters, istop = _augmented_lsqr(opr, reg, data, d_pred, model,
                                                lam, cfg.lsqr)
        slope = float(grad @ dm)

        evals: dict[float, tuple] = {}

        def phi_eval(eta: float) -> float:
            trial = Model(model.m + eta * dm, model.m_ref)
            out = forward_at(trial)
            evals[eta] = (trial, out)
            return out[2] + lam * out[3]

        ls = line_search(phi, slope, phi_eval, c1=cfg.c1, eta_min=cfg.eta_min,
                         quad_refine=cfg.quad_refine)
        wall_ms = (time.perf_counter() - t0) * 1e3
        counters1 = cache.counters.snapshot()

        phi_before = phi
        if ls.accepted:
            model, (g, d_pred, misfit, reg_val) = evals[ls.eta]
            state.model = model
            new_phi = misfit + lam * reg_val
            chi2 = 2.0 * misfit / n_data
            increase_streak = increase_streak + 1 if new_phi > phi else 0
            rel_decrease = (phi - new_phi) / max(abs(phi), 1e-300)
            phi = new_phi
        else:
            rel_decrease = 0.0

        state.history.append(IterationRecord(
            nu=nu, phi=phi, misfit=misfit, reg_value=reg_val, chi2=chi2, lam=lam,
            eta=ls.eta if ls.accepted else 0.0, accepted=ls.accepted,
            lsqr_iters=lsqr_iters, lsqr_istop=istop, wall_ms=wall_ms,
            factorizations=counters1["factorizations"] - counters0["factorizations"],
            solves=counters1["solves"] - counters0["solves"],
            phi_evals=ls.n_evals, phi_before=phi_before, directional_slope=slope))
        state.phi, state.chi2, state.lam = phi, chi2, lam

        if increase_streak >= 3:
            state.diagnostic = "divergence guard: objective rose on 3 consecutive accepted steps"
            break
        if not ls.accepted or rel_decrease < cfg.tol_outer:
            lam *= 0.5
            if lam < lam_min:
                state.diagnostic = "lambda floor reached"
                state.lam = lam
                break
            phi = misfit + lam * reg_val
            state.lam = lam
            state.phi = phi
    else:
        state.diagnostic = state.diagnostic or "max Gauss-Newton iterations"

    if chi2 <= cfg.chi2_target:
        state.diagnostic = "chi2 target reached"
    state.counters.update(cache.counters.snapshot())
    return state
