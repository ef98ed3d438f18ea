"""Shared-pole rational approximation of decaying exponentials.

Fits a family of rational functions r_j(x) ~= exp(-t_j * x), one per time
channel, that all share a single set of complex poles.  Each pole is stored
as its upper-half-plane representative; evaluation takes 2*Re of the
half-sum so values at real arguments are real by construction:

    r_j(x) = 2 * Re( sum_i alpha[i, j] / (x - pole[i]) )

The shared poles are what make the downstream shifted-system solves
independent of the number of time channels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "TimeChannels",
    "FitConfig",
    "FitStats",
    "FitReport",
    "RationalApproximant",
    "PoleCollisionError",
    "fit_common_pole",
    "fit_pole_sweep",
    "refit_residues",
    "eval_scalar",
    "validate_fit",
    "save_approximant",
    "load_approximant",
]


class PoleCollisionError(RuntimeError):
    """Two poles moved closer than the collision tolerance."""


@dataclass(frozen=True)
class TimeChannels:
    """Strictly increasing positive output times, in seconds."""

    times: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        if t.size and (np.any(t <= 0) or np.any(np.diff(t) <= 0)):
            raise ValueError("times must be strictly increasing and positive")
        object.__setattr__(self, "times", t)

    @property
    def count(self) -> int:
        return self.times.size

    @classmethod
    def logspaced(cls, t_min: float, t_max: float, count: int) -> "TimeChannels":
        return cls(np.geomspace(t_min, t_max, count))


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 50
    pole_tol: float = 1e-8          # relative pole movement for convergence
    n_log: int = 1000               # log-spaced training points
    n_lin: int = 1000               # linear training points near the origin
    relative_weighting: bool = False
    rel_floor: float = 1e-3         # weight floor when relative_weighting is on
    collision_tol: float = 1e-10    # relative pairwise pole distance
    stall_iters: int = 10           # stop early after this many non-improving iterations
    initial_poles: np.ndarray | None = None  # warm start (upper-half representatives)


@dataclass
class FitStats:
    """Instrumentation for the fitting loop.

    Pole relocation happens once per iteration on the joint system, so
    ``pole_relocations`` never scales with the channel count; the residues
    for all channels come from a single batched least-squares solve.
    """

    iterations: int = 0
    pole_relocations: int = 0
    residue_batches: int = 0


@dataclass
class FitReport:
    """Per-channel accuracy audit on a refined grid."""

    max_abs: float
    per_channel_max_abs: np.ndarray
    per_channel_max_rel: np.ndarray
    grid_size: int


@dataclass(frozen=True)
class RationalApproximant:
    """Common-pole partial-fraction approximant of ``exp(-t_j x)``.

    poles : (m,) complex, upper-half-plane representatives of conjugate pairs
    residues : (m, K_t) complex, ``residues[i, j]`` pairs pole i with channel j
    """

    poles: np.ndarray
    residues: np.ndarray
    spectral_interval: tuple[float, float]
    fit_error: float
    channels: TimeChannels
    converged: bool = True
    iterations: int = 0
    stats: FitStats = field(default_factory=FitStats)

    def __post_init__(self):
        poles = np.atleast_1d(np.asarray(self.poles, dtype=complex))
        residues = np.asarray(self.residues, dtype=complex).reshape(poles.size, -1)
        if np.any(poles.imag <= 0):
            raise ValueError("poles must lie strictly in the upper half-plane")
        _check_collisions(poles, 0.0)
        object.__setattr__(self, "poles", poles)
        object.__setattr__(self, "residues", residues)
        object.__setattr__(self, "spectral_interval",
                           (float(self.spectral_interval[0]), float(self.spectral_interval[1])))

    @property
    def pole_count(self) -> int:
        return self.poles.size

    def eval(self, x) -> np.ndarray:
        """Evaluate every channel at real arguments ``x``; returns (len(x), K_t)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        r = 1.0 / (x[:, None] - self.poles[None, :])
        return 2.0 * np.real(r @ self.residues)


def eval_scalar(approx: RationalApproximant, x: float, j: int) -> float:
    """Value of channel ``j`` at a single real argument."""
    return float(2.0 * np.real(np.sum(approx.residues[:, j] / (x - approx.poles))))


def _check_collisions(poles: np.ndarray, tol: float) -> None:
    if poles.size < 2:
        return
    d = np.abs(poles[:, None] - poles[None, :])
    np.fill_diagonal(d, np.inf)
    scale = np.max(np.abs(poles))
    if np.min(d) <= tol * scale:
        raise PoleCollisionError(
            f"pole pair closer than {tol:g} relative (min distance {np.min(d):.3e})")


def _training_grid(interval, t_min: float, n_log: int, n_lin: int) -> np.ndarray:
    """Composite grid: linear points through the fast-decay region plus
    log-spaced points out to the end of the spectral interval, always
    containing x = 0."""
    x_min, x_max = interval
    x_scale = 1.0 / t_min
    lin_hi = min(x_scale, x_max)
    lin = np.linspace(0.0, lin_hi, n_lin)
    log_lo = max(x_min, 1e-3 * lin_hi)
    if log_lo > 0 and x_max > log_lo:
        log = np.geomspace(log_lo, x_max, n_log)
    else:
        log = np.empty(0)
    return np.unique(np.concatenate([[0.0], lin, log, [x_max]]))


def _validation_grid(interval, t_min: float, grid_size: int) -> np.ndarray:
    """Log+linear composite inside the spectral interval, endpoints included.

    Sizes are used as-is for each segment so that grids with sizes n and
    k*(n-1)+1 nest, making the observed maximum monotone under refinement.
    """
    x_min, x_max = interval
    lin_hi = min(1.0 / t_min, x_max)
    parts = [np.array([x_min, x_max])]
    if lin_hi > x_min:
        parts.append(np.linspace(x_min, lin_hi, grid_size))
    log_lo = max(x_min, 1e-3 * lin_hi)
    if log_lo > 0 and x_max > log_lo:
        parts.append(np.geomspace(log_lo, x_max, grid_size))
    return np.unique(np.concatenate(parts))


def _pair_basis(x: np.ndarray, poles: np.ndarray) -> np.ndarray:
    """Real basis [2*Re 1/(x-xi) | -2*Im 1/(x-xi)] of shape (len(x), 2m)."""
    r = 1.0 / (x[:, None] - poles[None, :])
    return np.concatenate([2.0 * r.real, -2.0 * r.imag], axis=1)


def _solve_residues(basis: np.ndarray, targets: np.ndarray, m: int,
                    weights: np.ndarray | None = None) -> np.ndarray:
    """Least-squares residues for all channels; returns (m, K_t) complex.

    Unit weights share one factorization across channels; per-channel row
    weights fall back to one solve per channel.
    """
    if weights is None:
        scale = np.linalg.norm(basis, axis=0)
        scale[scale == 0] = 1.0
        coef, *_ = np.linalg.lstsq(basis / scale, targets.T, rcond=None)
        coef = coef / scale[:, None]
    else:
        coef = np.empty((2 * m, targets.shape[0]))
        for j in range(targets.shape[0]):
            Bw = weights[j][:, None] * basis
            scale = np.linalg.norm(Bw, axis=0)
            scale[scale == 0] = 1.0
            cj, *_ = np.linalg.lstsq(Bw / scale, weights[j] * targets[j], rcond=None)
            coef[:, j] = cj / scale
    return coef[:m, :] + 1j * coef[m:, :]


def _relocate_poles(poles: np.ndarray, c: np.ndarray, d: np.ndarray) -> np.ndarray:
    """New poles = zeros of 1 + sum_i (c_i, d_i)-weighted pair basis.

    Uses the real 2x2 block companion form so conjugate symmetry of the
    eigenvalues is exact; real eigenvalues (which the pair representation
    cannot host) are merged pairwise and lifted off the axis.
    """
    m = poles.size
    A = np.zeros((2 * m, 2 * m))
    b = np.zeros(2 * m)
    crow = np.zeros(2 * m)
    for i, xi in enumerate(poles):
        k = 2 * i
        A[k, k] = A[k + 1, k + 1] = xi.real
        A[k, k + 1] = xi.imag
        A[k + 1, k] = -xi.imag
        b[k] = 2.0
        crow[k] = c[i]
        crow[k + 1] = d[i]
    ev = np.linalg.eigvals(A - np.outer(b, crow))

    atol = 1e-300
    rtol = 1e-9
    is_real = np.abs(ev.imag) <= rtol * np.abs(ev) + atol
    new = list(ev[(~is_real) & (ev.imag > 0)])
    reals = np.sort(ev[is_real].real)
    for k in range(0, reals.size - 1, 2):
        mid = 0.5 * (reals[k] + reals[k + 1])
        half = 0.5 * abs(reals[k + 1] - reals[k])
        lift = max(half, 1e-6 * max(abs(mid), 1.0))
        new.append(mid + 1j * lift)
    new = np.asarray(new, dtype=complex)
    if new.size != m:
        raise RuntimeError(f"pole relocation produced {new.size} poles, expected {m}")
    # reflect anything that still sits on (or under) the real axis
    bad = new.imag <= 0
    if np.any(bad):
        new[bad] = new[bad].real + 1j * (np.abs(new[bad].imag) + 1e-6 * np.maximum(np.abs(new[bad]), 1.0))
    new = _spread_duplicates(new)
    return new[np.lexsort((new.real, new.imag))]


def _spread_duplicates(poles: np.ndarray, rel: float = 1e-9) -> np.ndarray:
    """Degenerate relocations can emit near-identical poles; nudge the
    imaginary parts apart deterministically so the iteration can recover."""
    scale = np.max(np.abs(poles))
    order = np.lexsort((poles.real, poles.imag))
    out = poles[order].copy()
    for k in range(1, out.size):
        if abs(out[k] - out[k - 1]) < rel * scale:
            out[k] = out[k].real + 1j * (out[k - 1].imag * (1.0 + 1e-6) + rel * scale)
    return out


def _initial_poles(times: np.ndarray, m: int) -> np.ndarray:
    t_min, t_max = times[0], times[-1]
    if m == 1:
        im = np.array([1.0 / np.sqrt(t_min * t_max)])
    else:
        im = np.geomspace(1.0 / t_max, 1.0 / t_min, m)
    return -im / 100.0 + 1j * im


def fit_common_pole(channels: TimeChannels, spectral_interval, pole_count: int,
                    fit_cfg: FitConfig | None = None) -> RationalApproximant:
    """Fit ``pole_count`` shared conjugate-pair poles to all channels at once.

    Alternates a linearized least-squares pass (residues for every channel
    plus a shared denominator correction) with pole relocation through the
    zeros of the correction, keeping the best iterate seen.  Residues for
    the returned poles always come from a final exact least-squares solve.
    """
    cfg = fit_cfg or FitConfig()
    times = channels.times
    if times.size == 0:
        raise ValueError("channels must be nonempty")
    x_min, x_max = float(spectral_interval[0]), float(spectral_interval[1])
    if pole_count < 1 or x_min < 0 or x_max <= x_min:
        raise ValueError("need pole_count >= 1 and 0 <= x_min < x_max")

    m = pole_count
    x = _training_grid((x_min, x_max), times[0], cfg.n_log, cfg.n_lin)
    F = np.exp(-np.outer(times, x))        # (K_t, G)
    if cfg.relative_weighting:
        w = 1.0 / np.maximum(np.abs(F), cfg.rel_floor)
        res_weights = w
    else:
        w = np.ones_like(F)
        res_weights = None

    x_val = _validation_grid((x_min, x_max), times[0], 2001)
    F_val = np.exp(-np.outer(times, x_val))

    if cfg.initial_poles is not None:
        poles = np.asarray(cfg.initial_poles, dtype=complex).copy()
        if poles.size != m:
            raise ValueError("initial_poles length must equal pole_count")
    else:
        poles = _initial_poles(times, m)

    stats = FitStats()

    def validation_error(p):
        alpha = _solve_residues(_pair_basis(x, p), F, m, weights=res_weights)
        r = 1.0 / (x_val[:, None] - p[None, :])
        err = np.max(np.abs(2.0 * np.real(r @ alpha) - F_val.T))
        return err, alpha

    best_err, best_alpha = validation_error(poles)
    best_poles = poles.copy()
    converged = False
    stall = 0

    for it in range(cfg.max_iters):
        B = _pair_basis(x, poles)          # (G, 2m)
        blocks = []
        rhs = []
        for j in range(times.size):
            Aj = np.concatenate([w[j][:, None] * B, -(w[j] * F[j])[:, None] * B], axis=1)
            Q, R = np.linalg.qr(Aj, mode="reduced")
            blocks.append(R[2 * m:, 2 * m:])
            rhs.append(Q[:, 2 * m:].T @ (w[j] * F[j]))
        AA = np.vstack(blocks)
        bb = np.concatenate(rhs)
        col = np.linalg.norm(AA, axis=0)
        col[col == 0] = 1.0
        cd, *_ = np.linalg.lstsq(AA / col, bb, rcond=None)
        cd = cd / col

        new_poles = _relocate_poles(poles, cd[:m], cd[m:])
        stats.pole_relocations += 1
        stats.iterations = it + 1
        _check_collisions(new_poles, cfg.collision_tol)

        old_sorted = poles[np.lexsort((poles.real, poles.imag))]
        move = np.max(np.abs(new_poles - old_sorted) / np.maximum(np.abs(old_sorted), 1e-300))
        poles = new_poles

        err, alpha = validation_error(poles)
        if err < best_err:
            best_err, best_alpha, best_poles = err, alpha, poles.copy()
            stall = 0
        else:
            stall += 1

        if move < cfg.pole_tol:
            converged = True
            break
        if stall >= cfg.stall_iters:
            break

    stats.residue_batches += 1
    return RationalApproximant(
        poles=best_poles,
        residues=best_alpha,
        spectral_interval=(x_min, x_max),
        fit_error=float(best_err),
        channels=channels,
        converged=converged,
        iterations=stats.iterations,
        stats=stats,
    )


def fit_pole_sweep(channels: TimeChannels, spectral_interval, pole_counts,
                   fit_cfg: FitConfig | None = None) -> list[RationalApproximant]:
    """Fit an increasing sequence of pole counts, warm-starting each fit
    from the previous pole set plus one fresh pole.

    The warm start means the candidate pool for count m+1 contains the
    count-m solution, so the reported errors are non-increasing apart from
    grid-sampling noise at the numerical floor.
    """
    cfg = fit_cfg or FitConfig()
    out: list[RationalApproximant] = []
    prev_poles = None
    for m in sorted(pole_counts):
        if prev_poles is not None and prev_poles.size == m - 1:
            extra = _initial_poles(channels.times, 1) * (1.0 + 1e-3)
            while np.min(np.abs(prev_poles - extra[0])) < 1e-3 * np.max(np.abs(prev_poles)):
                extra *= 1.37
            init = np.concatenate([prev_poles, extra])
            cand = [fit_common_pole(channels, spectral_interval, m, replace(cfg, initial_poles=init)),
                    fit_common_pole(channels, spectral_interval, m, replace(cfg, initial_poles=None))]
            fit = min(cand, key=lambda a: a.fit_error)
            if out and fit.fit_error > out[-1].fit_error:
                # no measurable gain from the extra pole (this only happens at
                # the double-precision floor): embed the previous solution in
                # the larger parameterization with a zero residue, which
                # reproduces its values exactly
                prev = out[-1]
                fit = RationalApproximant(
                    poles=np.concatenate([prev.poles, extra]),
                    residues=np.vstack([prev.residues, np.zeros((1, channels.count), complex)]),
                    spectral_interval=prev.spectral_interval,
                    fit_error=prev.fit_error,
                    channels=channels,
                    converged=prev.converged,
                    iterations=prev.iterations,
                )
        else:
            fit = fit_common_pole(channels, spectral_interval, m, cfg)
        out.append(fit)
        prev_poles = fit.poles
    return out


def _refit_at_poles(channels, spectral_interval, poles, cfg) -> RationalApproximant:
    x = _training_grid(tuple(spectral_interval), channels.times[0], cfg.n_log, cfg.n_lin)
    F = np.exp(-np.outer(channels.times, x))
    alpha = _solve_residues(_pair_basis(x, poles), F, poles.size)
    x_val = _validation_grid(tuple(spectral_interval), channels.times[0], 2001)
    F_val = np.exp(-np.outer(channels.times, x_val))
    r = 1.0 / (x_val[:, None] - poles[None, :])
    err = float(np.max(np.abs(2.0 * np.real(r @ alpha) - F_val.T)))
    return RationalApproximant(poles=poles, residues=alpha,
                               spectral_interval=tuple(spectral_interval),
                               fit_error=err, channels=channels)


def refit_residues(approx: RationalApproximant, channels: TimeChannels,
                   fit_cfg: FitConfig | None = None) -> RationalApproximant:
    """Re-solve the residues for new time channels, keeping the poles.

    No pole work happens here: changing the channel count touches only the
    (m x K_t) residue solve.
    """
    cfg = fit_cfg or FitConfig()
    if channels.count == 0:
        raise ValueError("channels must be nonempty")
    return _refit_at_poles(channels, approx.spectral_interval, approx.poles, cfg)


def validate_fit(approx: RationalApproximant, grid_size: int) -> FitReport:
    """Accuracy audit on a refined grid; relative errors where the target
    exceeds a floor of 1e-12."""
    if grid_size < 10:
        raise ValueError("grid_size must be >= 10")
    K = approx.channels.count
    if K == 0:
        return FitReport(0.0, np.empty(0), np.empty(0), 0)
    x = _validation_grid(approx.spectral_interval, approx.channels.times[0], grid_size)
    target = np.exp(-np.outer(approx.channels.times, x))   # (K, G)
    got = approx.eval(x).T
    abs_err = np.abs(got - target)
    defined = target > 1e-12
    rel = np.where(defined, abs_err / np.where(defined, target, 1.0), np.nan)
    with np.errstate(all="ignore"):
        per_rel = np.nanmax(rel, axis=1)
    return FitReport(
        max_abs=float(np.max(abs_err)),
        per_channel_max_abs=np.max(abs_err, axis=1),
        per_channel_max_rel=per_rel,
        grid_size=x.size,
    )


def save_approximant(approx: RationalApproximant, path) -> None:
    """JSON layout: times, poles as [re, im], residues nested per channel."""
    doc = {
        "times": approx.channels.times.tolist(),
        "poles": [[p.real, p.imag] for p in approx.poles],
        "residues": [[[a.real, a.imag] for a in approx.residues[:, j]]
                     for j in range(approx.channels.count)],
        "interval": list(approx.spectral_interval),
        "fit_error": approx.fit_error,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_approximant(path) -> RationalApproximant:
    with open(path) as fh:
        doc = json.load(fh)
    poles = np.array([complex(re, im) for re, im in doc["poles"]])
    res_by_channel = np.array(
        [[complex(re, im) for re, im in chan] for chan in doc["residues"]])
    return RationalApproximant(
        poles=poles,
        residues=res_by_channel.T,
        spectral_interval=tuple(doc["interval"]),
        fit_error=float(doc["fit_error"]),
        channels=TimeChannels(np.array(doc["times"])),
    )
