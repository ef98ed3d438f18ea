"""Noisy synthetic observations from a known model.

Noise follows sigma(d) = |d| eps_r + eps_a per datum, Gaussian, seeded;
the dataset carries the weights W_d = 1/sigma used by the misfit so that
chi^2 at the true model concentrates around one.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .forward import forward_response
from .mesh import Model, Problem
from .rba import RationalApproximant
from .shifted import PoleWorkerPool, ShiftedFactorCache

__all__ = ["NoiseSpec", "DataSet", "make_dataset", "save_dataset", "load_dataset"]


@dataclass(frozen=True)
class NoiseSpec:
    """eps_a = None picks the floor 1e-6 * max|d_clean| at generation time."""

    eps_r: float = 0.03
    eps_a: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.eps_r < 0:
            raise ValueError("eps_r must be >= 0")
        if self.eps_a is not None and self.eps_a <= 0:
            raise ValueError("eps_a must be > 0")


@dataclass
class DataSet:
    d_obs: np.ndarray
    sigma_d: np.ndarray
    times: np.ndarray
    receivers: np.ndarray
    eps_r: float
    eps_a: float
    seed: int
    provenance: dict

    def __post_init__(self):
        if np.any(self.sigma_d <= 0):
            raise ValueError("sigma_d must be strictly positive")

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / self.sigma_d

    @property
    def size(self) -> int:
        return self.d_obs.size


def make_dataset(problem: Problem, true_model: Model, approx: RationalApproximant,
                 noise: NoiseSpec, cache: ShiftedFactorCache | None = None,
                 pool: PoleWorkerPool | None = None) -> DataSet:
    """Forward-model the true model and add seeded Gaussian noise."""
    cache = cache or ShiftedFactorCache()
    d_clean = forward_response(problem, true_model, approx, cache, pool).data
    eps_a = noise.eps_a if noise.eps_a is not None else 1e-6 * np.max(np.abs(d_clean))
    if eps_a <= 0:
        raise ValueError("resolved eps_a must be > 0 (zero response?)")
    sigma = np.abs(d_clean) * noise.eps_r + eps_a
    rng = np.random.default_rng(noise.seed)
    d_obs = d_clean + sigma * rng.standard_normal(d_clean.size)
    provenance = {
        "true_model_hash": hashlib.sha1(true_model.m.tobytes()).hexdigest(),
        "seed": noise.seed,
        "noise": {"eps_r": noise.eps_r, "eps_a": eps_a},
    }
    return DataSet(d_obs=d_obs, sigma_d=sigma, times=approx.channels.times.copy(),
                   receivers=problem.receivers.copy(), eps_r=noise.eps_r,
                   eps_a=float(eps_a), seed=noise.seed, provenance=provenance)


def save_dataset(data: DataSet, path) -> None:
    doc = {
        "d_obs": data.d_obs.tolist(),
        "sigma_d": data.sigma_d.tolist(),
        "times": data.times.tolist(),
        "receivers": data.receivers.tolist(),
        "eps_r": data.eps_r,
        "eps_a": data.eps_a,
        "seed": data.seed,
        "provenance": data.provenance,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_dataset(path) -> DataSet:
    with open(path) as fh:
        doc = json.load(fh)
    return DataSet(
        d_obs=np.asarray(doc["d_obs"], dtype=float),
        sigma_d=np.asarray(doc["sigma_d"], dtype=float),
        times=np.asarray(doc["times"], dtype=float),
        receivers=np.asarray(doc["receivers"], dtype=float),
        eps_r=float(doc["eps_r"]),
        eps_a=float(doc["eps_a"]),
        seed=int(doc["seed"]),
        provenance=doc.get("provenance", {}),
    )
