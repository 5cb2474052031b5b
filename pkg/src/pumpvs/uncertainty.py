"""Power-demand forecast-error models: sampling, normal fitting, robust boxes.

Error vectors are laid out period-major, then bus, then phase (see
``PdnNetwork.error_coordinates``), in per-unit power.  Sampling is chunked;
chunk ``c`` of a draw seeded with ``seed`` always uses the generator
``SeedSequence(seed, spawn_key=(c,))``, so any slice of a sample can be
regenerated independently of how the work was split.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import special

logger = logging.getLogger(__name__)

CHUNK = 1024
NORMAL_TRUNCATION = 3.0
T_TRUNCATION = 10.0
MIN_ACCEPTANCE = 1e-6


class RejectionStall(RuntimeError):
    pass


class DegenerateSamples(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class ErrorDistribution:
    """Truncated multivariate normal or t forecast-error model.

    ``forecast`` holds the reference demand for each coordinate and
    ``periods`` the period of each coordinate; nominal standard deviations
    are fractions of ``forecast``.

    normal: a global term shared within each period (std ``sigma_global``)
    plus independent nodal terms (std ``sigma_node``), truncated at three
    nominal standard deviations.

    t: correlation ``correlation`` between every pair of coordinates, ``dof``
    degrees of freedom, std ``alpha * forecast``, truncated at ten nominal
    standard deviations.
    """

    variant: str
    forecast: np.ndarray
    periods: np.ndarray
    sigma_global: float = 0.0
    sigma_node: float = 0.0
    dof: float = 3.0
    correlation: float = 0.2
    alpha: float = 0.0
    label: str = "actual"

    def __post_init__(self):
        if self.variant not in ("normal", "t"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if min(self.sigma_global, self.sigma_node, self.alpha) < 0:
            raise ValueError("scale parameters must be nonnegative")
        if self.variant == "t":
            if self.dof <= 2:
                raise ValueError("t variant needs dof > 2 for a finite standard deviation")
            n = self.dim
            if n > 1 and not (-1.0 / (n - 1) <= self.correlation <= 1.0):
                raise ValueError("equicorrelation matrix would not be positive semidefinite")
        if len(self.periods) != len(self.forecast):
            raise ValueError("periods and forecast must have equal length")

    @property
    def dim(self) -> int:
        return len(self.forecast)

    @property
    def nominal_std(self) -> np.ndarray:
        f = np.abs(self.forecast)
        if self.variant == "normal":
            return f * math.hypot(self.sigma_global, self.sigma_node)
        return f * self.alpha

    @property
    def truncation(self) -> float:
        return NORMAL_TRUNCATION if self.variant == "normal" else T_TRUNCATION

    @cached_property
    def correlation_factor(self) -> np.ndarray:
        n = self.dim
        R = np.full((n, n), self.correlation)
        np.fill_diagonal(R, 1.0)
        return np.linalg.cholesky(R + 1e-12 * np.eye(n))

    def _raw(self, rng: np.random.Generator, m: int, chol) -> np.ndarray:
        f = np.abs(self.forecast)
        if self.variant == "normal":
            n_periods = int(self.periods.max()) + 1 if self.dim else 0
            g = rng.standard_normal((m, n_periods))[:, self.periods]
            z = rng.standard_normal((m, self.dim))
            return f * (self.sigma_global * g + self.sigma_node * z)
        z = rng.standard_normal((m, self.dim)) @ chol.T
        w = rng.chisquare(self.dof, size=(m, 1)) / self.dof
        unit = z / np.sqrt(w) / math.sqrt(self.dof / (self.dof - 2.0))
        return f * self.alpha * unit


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk,)))


def sample_chunk(dist, size: int, seed: int, chunk: int) -> np.ndarray:
    """Draw ``size`` vectors for chunk index ``chunk`` of a seeded stream."""
    rng = _chunk_rng(seed, chunk)
    if isinstance(dist, FittedNormal):
        return dist.mean + rng.standard_normal((size, dist.dim)) @ dist.factor.T
    chol = dist.correlation_factor if dist.variant == "t" else None
    bound = dist.truncation * dist.nominal_std
    out = np.empty((size, dist.dim))
    got = drawn = 0
    while got < size:
        m = max(2 * (size - got), 64)
        cand = dist._raw(rng, m, chol)
        keep = np.all(np.abs(cand) <= bound, axis=1)
        drawn += m
        acc = cand[keep][: size - got]
        out[got : got + len(acc)] = acc
        got += len(acc)
        if got < size and drawn >= 10 / MIN_ACCEPTANCE and got / drawn < MIN_ACCEPTANCE:
            raise RejectionStall(f"truncation acceptance rate {got / drawn:.2e} is below {MIN_ACCEPTANCE}")
    return out


def sample(dist, count: int, seed: int, chunk_size: int = CHUNK) -> np.ndarray:
    """``count`` i.i.d. error vectors, reproducible from ``seed``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    parts = []
    for c, start in enumerate(range(0, count, chunk_size)):
        parts.append(sample_chunk(dist, min(chunk_size, count - start), seed, c))
    return np.concatenate(parts, axis=0)


@dataclass(frozen=True, eq=False)
class FittedNormal:
    mean: np.ndarray
    cov: np.ndarray
    factor: np.ndarray = field(default=None)
    label: str = "fitted"

    def __post_init__(self):
        if self.factor is None:
            object.__setattr__(self, "factor", psd_factor(self.cov))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def block(self, idx) -> tuple[np.ndarray, np.ndarray]:
        """Mean and a factor of the marginal covariance on coordinates ``idx``."""
        idx = np.asarray(idx)
        return self.mean[idx], psd_factor(self.cov[np.ix_(idx, idx)])


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """L with L @ L.T == cov; Cholesky when possible, else a symmetric root."""
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (cov + cov.T))
        return V * np.sqrt(np.clip(w, 0.0, None))


def fit_mle(samples) -> FittedNormal:
    """Maximum-likelihood normal fit (1/N covariance) plus a tiny ridge."""
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    N, n = X.shape
    if N < 2:
        raise ValueError("need more than one sample to fit")
    mu = X.mean(axis=0)
    D = X - mu
    S = D.T @ D / N
    tr = float(np.trace(S))
    if tr == 0.0:
        warnings.warn("all samples identical; covariance is zero", DegenerateSamples, stacklevel=2)
    S = S + (1e-12 * tr / n) * np.eye(n)
    return FittedNormal(mean=mu, cov=S)


@dataclass(frozen=True, eq=False)
class RobustBox:
    half_width: np.ndarray

    def __post_init__(self):
        if np.any(self.half_width < 0):
            raise ValueError("box half-widths must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.half_width)

    def scaled(self, factor: float) -> "RobustBox":
        return RobustBox(self.half_width * factor)

    def clip(self, X: np.ndarray) -> np.ndarray:
        return np.clip(X, -self.half_width, self.half_width)


def robust_box(samples) -> RobustBox:
    X = np.asarray(samples, dtype=float)
    if X.size == 0:
        raise ValueError("robust box needs at least one sample")
    if X.ndim == 1:
        X = X[:, None]
    return RobustBox(np.abs(X).max(axis=0))


def std_normal_quantile(q):
    """Inverse standard normal CDF."""
    qa = np.asarray(q, dtype=float)
    if np.any((qa <= 0.0) | (qa >= 1.0)):
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    out = special.ndtri(qa)
    return float(out) if out.ndim == 0 else out
