"""Synthetic stochastic processes used as training and reference data.

Three families live here: a 1-d regression signal with three noise
mechanisms (constant additive, input-dependent additive, and noise that
also enters the phase of the signal), exact Gaussian-process sampling
utilities, and a correlated two-fidelity GP pair observed at a handful
of sensor locations.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DimensionError, NotPsdError
from .model import PairedDataset

# ---------------------------------------------------------------------------
# noisy 1-d regression


def base_signal(x):
    """Deterministic regression curve on [-2, 2].

    s(x) = |x - 0.03| + 0.03 keeps the argument of the log positive and
    puts a kink near the origin; the curve is log(10 s) * sin(pi s).
    """
    s = np.abs(np.asarray(x, dtype=np.float64) - 0.03) + 0.03
    return np.log(10.0 * s) * np.sin(np.pi * s)


def hetero_envelope(x):
    """Pointwise noise standard deviation of the input-dependent cases.

    delta(x) = eps * exp(-2 s(x)) with eps ~ N(0, 0.5^2), so the envelope
    is 0.5 * exp(-2 s(x)); it peaks near x = 0.03.
    """
    s = np.abs(np.asarray(x, dtype=np.float64) - 0.03) + 0.03
    return 0.5 * np.exp(-2.0 * s)


@lru_cache(maxsize=1)
def signal_std() -> float:
    """Standard deviation of the base signal over x ~ U(-2, 2).

    Computed by trapezoid quadrature on a grid dense enough that the
    kink at x = 0.03 contributes error far below float display precision.
    """
    x = np.linspace(-2.0, 2.0, 400001)
    g = base_signal(x)
    mean = np.trapezoid(g, x) / 4.0
    second = np.trapezoid(g * g, x) / 4.0
    return float(np.sqrt(second - mean * mean))


class NoiseCase(str, enum.Enum):
    HOMOSCEDASTIC = "homoscedastic"
    HETEROSCEDASTIC = "heteroscedastic"
    NON_ADDITIVE = "non_additive"


def noisy_regression_dataset(
    case: NoiseCase,
    n: int,
    rng: np.random.Generator,
    noise_std: float | None = None,
) -> PairedDataset:
    """n pairs (x, y) with x ~ U(-2, 2) and the requested noise mechanism.

    ``noise_std`` overrides the homoscedastic scale (default: 5% of the
    signal's standard deviation over the domain); it is ignored by the
    input-dependent cases, whose scale is fixed by the envelope.
    """
    case = NoiseCase(case)
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    x = rng.uniform(-2.0, 2.0, size=n)
    s = np.abs(x - 0.03) + 0.03
    if case is NoiseCase.HOMOSCEDASTIC:
        sigma = 0.05 * signal_std() if noise_std is None else float(noise_std)
        y = base_signal(x) + sigma * rng.standard_normal(n)
        meta_sigma = sigma
    else:
        eps = rng.normal(0.0, 0.5, size=n)
        delta = eps * np.exp(-2.0 * s)
        if case is NoiseCase.HETEROSCEDASTIC:
            y = base_signal(x) + delta
        else:
            # the perturbation also shifts the phase of the oscillation
            y = np.log(10.0 * s) * np.sin(np.pi * s + 2.0 * delta) + delta
        meta_sigma = None
    return PairedDataset(
        x=x[:, None],
        y=y[:, None],
        meta={"case": case.value, "noise_std": meta_sigma, "n": n},
    )


# ---------------------------------------------------------------------------
# Gaussian process utilities


def mean_high(x):
    """High-fidelity benchmark mean: (6x - 2)^2 sin(12x - 4) on [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    return (6.0 * x - 2.0) ** 2 * np.sin(12.0 * x - 4.0)


def mean_low(x):
    """Low-fidelity companion: 0.5 * mean_high(x) + 10 (x - 0.5) - 5."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * mean_high(x) + 10.0 * (x - 0.5) - 5.0


def mean_zero(x):
    return np.zeros_like(np.asarray(x, dtype=np.float64))


MEAN_FUNCTIONS = {
    "zero": mean_zero,
    "high_fidelity": mean_high,
    "low_fidelity": mean_low,
}


@dataclass(frozen=True)
class GpSpec:
    """Squared-exponential kernel parameters plus a named mean function."""

    sigma_f2: float
    l2: float
    mean: str = "zero"

    def __post_init__(self):
        if self.sigma_f2 <= 0.0 or self.l2 <= 0.0:
            raise ConfigError(
                f"kernel parameters must be positive, got sigma_f2={self.sigma_f2}, l2={self.l2}"
            )
        if self.mean not in MEAN_FUNCTIONS:
            raise ConfigError(
                f"unknown mean function {self.mean!r}; choose from {sorted(MEAN_FUNCTIONS)}"
            )

    def mean_at(self, x):
        return MEAN_FUNCTIONS[self.mean](x)


def rbf_kernel(xa, xb, spec: GpSpec) -> np.ndarray:
    """Gram matrix sigma_f^2 exp(-(xa - xb)^2 / (2 l^2)) for 1-d inputs."""
    xa = np.atleast_1d(np.asarray(xa, dtype=np.float64))
    xb = np.atleast_1d(np.asarray(xb, dtype=np.float64))
    if xa.ndim != 1 or xb.ndim != 1:
        raise DimensionError("rbf_kernel expects 1-d location arrays")
    d2 = (xa[:, None] - xb[None, :]) ** 2
    return spec.sigma_f2 * np.exp(-d2 / (2.0 * spec.l2))


_JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


def chol_with_jitter(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, escalating diagonal jitter from 1e-10 to 1e-6."""
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DimensionError(f"covariance must be square, got shape {cov.shape}")
    eye = np.eye(cov.shape[0])
    for jitter in _JITTER_LADDER:
        try:
            return np.linalg.cholesky(cov + jitter * eye)
        except np.linalg.LinAlgError:
            continue
    smallest = float(np.linalg.eigvalsh(cov).min())
    raise NotPsdError(
        f"covariance is not positive definite even with jitter {_JITTER_LADDER[-1]:g}; "
        f"smallest eigenvalue {smallest:.6g}",
        min_eigenvalue=smallest,
    )


def sample_gp(
    mean: np.ndarray, cov: np.ndarray, n_samples: int, rng: np.random.Generator
) -> np.ndarray:
    """n_samples exact draws from N(mean, cov), shape (n_samples, len(mean))."""
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
        raise DimensionError(
            f"mean shape {mean.shape} and covariance shape {cov.shape} are inconsistent"
        )
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    if not cov.any():
        # a deterministic process: every draw is the mean, no jitter noise
        return np.tile(mean, (n_samples, 1))
    chol = chol_with_jitter(cov)
    xi = rng.standard_normal((n_samples, mean.size))
    return mean[None, :] + xi @ chol.T


# ---------------------------------------------------------------------------
# correlated two-fidelity process


@dataclass(frozen=True)
class MultiFidelitySpec:
    """Joint GP over (low, high) outputs: high = rho * low-part + independent part."""

    low: GpSpec = field(default_factory=lambda: GpSpec(0.1, 0.5, mean="low_fidelity"))
    high: GpSpec = field(default_factory=lambda: GpSpec(0.5, 0.5, mean="high_fidelity"))
    rho: float = 0.8
    sensors: tuple = (0.0, 0.4, 0.6, 1.0)
    n_realizations: int = 50

    def __post_init__(self):
        if self.n_realizations < 1:
            raise ConfigError(
                f"n_realizations must be >= 1, got {self.n_realizations}"
            )


def mf_joint_moments(spec: MultiFidelitySpec, xs):
    """Mean and covariance of the stacked vector (low(xs), high(xs)).

    Blocks: K_LL = k_L, K_LH = rho k_L, K_HH = rho^2 k_L + k_H, which is
    the usual autoregressive coupling of two fidelities.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=np.float64))
    k_l = rbf_kernel(xs, xs, spec.low)
    k_h = rbf_kernel(xs, xs, spec.high)
    m = xs.size
    cov = np.empty((2 * m, 2 * m))
    cov[:m, :m] = k_l
    cov[:m, m:] = spec.rho * k_l
    cov[m:, :m] = spec.rho * k_l
    cov[m:, m:] = spec.rho**2 * k_l + k_h
    mean = np.concatenate([spec.low.mean_at(xs), spec.high.mean_at(xs)])
    return mean, cov


@dataclass
class MultiFidelityData:
    """Realizations of the two-fidelity process at fixed sensor locations."""

    x: np.ndarray        # (m,) sensor locations
    y_low: np.ndarray    # (n_realizations, m)
    y_high: np.ndarray   # (n_realizations, m)

    def paired_rows(self) -> PairedDataset:
        """Rows ((x_s, y_L), y_H): conditioning on both location and low output."""
        m = self.x.size
        r = self.y_low.shape[0]
        x_col = np.tile(self.x, r)
        return PairedDataset(
            x=np.column_stack([x_col, self.y_low.ravel()]),
            y=self.y_high.ravel()[:, None],
            meta={"kind": "multifidelity", "n_realizations": r, "n_sensors": m},
        )

    def high_only_rows(self) -> PairedDataset:
        """Rows (x_s, y_H): the single-fidelity view of the same data."""
        m = self.x.size
        r = self.y_high.shape[0]
        return PairedDataset(
            x=np.tile(self.x, r)[:, None],
            y=self.y_high.ravel()[:, None],
            meta={"kind": "multifidelity_single", "n_realizations": r, "n_sensors": m},
        )


def multifidelity_dataset(
    spec: MultiFidelitySpec, rng: np.random.Generator
) -> MultiFidelityData:
    """Joint draws of (low, high) at the sensor locations, one row per realization."""
    xs = np.asarray(spec.sensors, dtype=np.float64)
    mean, cov = mf_joint_moments(spec, xs)
    joint = sample_gp(mean, cov, spec.n_realizations, rng)
    m = xs.size
    return MultiFidelityData(x=xs, y_low=joint[:, :m], y_high=joint[:, m:])
