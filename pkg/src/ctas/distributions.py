"""Random capability values: representation, seeded sampling and CVaR.

Sampling is reproducible across platforms.  Every stream is produced by a
Philox-4x64 counter-based generator whose key is derived from a root seed
and a tuple of integer keys through :class:`numpy.random.SeedSequence`.
Each raw 64-bit word ``r`` is mapped to a uniform in the open unit interval
as ``u = ((r >> 11) + 0.5) * 2**-53`` and Gaussian values are obtained by
the inverse normal CDF, ``mean + std * ndtri(u)``.  Empirical distributions
are resampled with ``index = floor(u * len(samples))``.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np
from scipy import special, stats

__all__ = [
    "Gaussian",
    "PointMass",
    "Empirical",
    "Distribution",
    "SampleSet",
    "derive_seed",
    "uniform_stream",
    "sample",
    "expectation",
    "std",
    "cvar",
    "cvar_and_var",
    "gaussian_cvar",
    "cvar_precomputed_difference",
    "distribution_from_dict",
    "distribution_to_dict",
]


@dataclass(frozen=True)
class Gaussian:
    mean: float
    std: float

    def __post_init__(self):
        if not (self.std >= 0 and math.isfinite(self.std)):
            raise ValueError(f"Gaussian std must be finite and >= 0, got {self.std}")
        if not math.isfinite(self.mean):
            raise ValueError("Gaussian mean must be finite")


@dataclass(frozen=True)
class PointMass:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("PointMass value must be finite")


@dataclass(frozen=True)
class Empirical:
    """Uniform distribution over a finite list of observations (kept sorted)."""

    samples: tuple = field()

    def __post_init__(self):
        values = tuple(sorted(float(v) for v in self.samples))
        if not values:
            raise ValueError("Empirical distribution needs at least one sample")
        object.__setattr__(self, "samples", values)


Distribution = Union[Gaussian, PointMass, Empirical]


@dataclass(frozen=True)
class SampleSet:
    """Drawn scenario values together with their provenance."""

    values: np.ndarray
    seed: int
    keys: tuple = ()

    def __len__(self):
        return len(self.values)


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode("utf-8"))


def derive_seed(seed: int, *keys) -> int:
    """Derive a child seed from ``seed`` and a path of keys.

    String keys are hashed with CRC-32 so the derivation does not depend on
    Python's randomized ``hash``.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def uniform_stream(n: int, seed: int) -> np.ndarray:
    """``n`` uniforms in (0, 1) from the documented Philox transform."""
    ss = np.random.SeedSequence(int(seed))
    key = ss.generate_state(2, dtype=np.uint64)
    bitgen = np.random.Philox(key=key)
    raw = bitgen.random_raw(n)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def sample(dist: Distribution, n: int, seed: int) -> SampleSet:
    """Draw ``n`` values of ``dist``; identical inputs give identical output."""
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    if isinstance(dist, PointMass):
        values = np.full(n, float(dist.value))
    elif isinstance(dist, Gaussian):
        u = uniform_stream(n, seed)
        values = dist.mean + dist.std * special.ndtri(u)
    elif isinstance(dist, Empirical):
        u = uniform_stream(n, seed)
        idx = np.minimum((u * len(dist.samples)).astype(np.int64), len(dist.samples) - 1)
        values = np.asarray(dist.samples)[idx]
    else:
        raise TypeError(f"unsupported distribution {dist!r}")
    values.setflags(write=False)
    return SampleSet(values=values, seed=int(seed))


def expectation(dist: Distribution) -> float:
    if isinstance(dist, PointMass):
        return float(dist.value)
    if isinstance(dist, Gaussian):
        return float(dist.mean)
    if isinstance(dist, Empirical):
        return float(np.mean(dist.samples))
    raise TypeError(f"unsupported distribution {dist!r}")


def std(dist: Distribution) -> float:
    if isinstance(dist, PointMass):
        return 0.0
    if isinstance(dist, Gaussian):
        return float(dist.std)
    if isinstance(dist, Empirical):
        return float(np.std(dist.samples))
    raise TypeError(f"unsupported distribution {dist!r}")


def _check_beta(beta: float):
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")


def cvar_and_var(values, beta: float) -> tuple[float, float]:
    """Return ``(cvar, lam)`` where ``lam`` minimizes the Rockafellar-Uryasev
    function ``lam + sum((x - lam)^+) / (n (1 - beta))``.

    The function is convex and piecewise linear with breakpoints at the
    samples, so evaluating it at every sorted sample gives the exact minimum.
    """
    _check_beta(beta)
    x = np.sort(np.asarray(getattr(values, "values", values), dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("cannot take the CVaR of an empty sample")
    # suffix[j] = sum of x[j+1:]
    suffix = np.concatenate([np.cumsum(x[::-1])[::-1][1:], [0.0]])
    above = np.arange(n - 1, -1, -1)
    excess = np.maximum(suffix - above * x, 0.0)
    objective = x + excess / (n * (1.0 - beta))
    j = int(np.argmin(objective))
    return float(objective[j]), float(x[j])


def cvar(samples, beta: float) -> float:
    """Empirical conditional value at risk at level ``beta``.

    Mean of the worst ``1 - beta`` fraction of outcomes (larger is worse),
    with fractional weighting of the boundary sample.
    """
    return cvar_and_var(samples, beta)[0]


def gaussian_cvar(mean: float, sd: float, beta: float) -> float:
    """Closed-form CVaR of a normal loss."""
    _check_beta(beta)
    return mean + sd * stats.norm.pdf(stats.norm.ppf(beta)) / (1.0 - beta)


def cvar_precomputed_difference(c: Distribution, gamma: Distribution, beta: float,
                                n: int, seed: int) -> float:
    """CVaR of ``gamma - c`` from independent draws of both distributions."""
    _check_beta(beta)
    cs = sample(c, n, derive_seed(seed, "capability"))
    gs = sample(gamma, n, derive_seed(seed, "threshold"))
    return cvar(gs.values - cs.values, beta)


def distribution_from_dict(record: Mapping) -> Distribution:
    kind = record.get("kind")
    if kind == "gaussian":
        return Gaussian(float(record["mean"]), float(record["std"]))
    if kind == "point":
        return PointMass(float(record["value"]))
    if kind == "empirical":
        return Empirical(tuple(record["samples"]))
    raise ValueError(f"unknown distribution kind {kind!r}")


def distribution_to_dict(dist: Distribution) -> dict:
    if isinstance(dist, Gaussian):
        return {"kind": "gaussian", "mean": dist.mean, "std": dist.std}
    if isinstance(dist, PointMass):
        return {"kind": "point", "value": dist.value}
    if isinstance(dist, Empirical):
        return {"kind": "empirical", "samples": list(dist.samples)}
    raise TypeError(f"unsupported distribution {dist!r}")


def as_distribution(value: Union[Distribution, float, int, Sequence]) -> Distribution:
    """Coerce plain numbers to point masses; pass distributions through."""
    if isinstance(value, (Gaussian, PointMass, Empirical)):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return PointMass(float(value))
    raise TypeError(f"cannot interpret {value!r} as a distribution")
