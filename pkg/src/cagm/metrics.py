"""Distributional evaluation: Gaussian fits, KL divergences, summary scores.

The headline metric fits a Gaussian to Monte Carlo samples of the model's
conditional density at each test location, computes the closed-form KL
divergence against the exact marginal in both directions, and averages
over locations. Locations where the sample set is degenerate (zero
variance) are excluded and counted rather than poisoning the average.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateDistributionError, EvaluationError


@dataclass(frozen=True)
class Gaussian1D:
    """A univariate normal with standard deviation sigma > 0."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not np.isfinite(self.mu) or not np.isfinite(self.sigma):
            raise ConfigError(f"non-finite Gaussian parameters ({self.mu}, {self.sigma})")
        if self.sigma <= 0.0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")


def gauss_kl(p1: Gaussian1D, p2: Gaussian1D) -> float:
    """KL(p1 || p2) in closed form.

    log(s2/s1) + (s1^2 + (mu1 - mu2)^2) / (2 s2^2) - 1/2; zero iff the
    distributions coincide.
    """
    var_ratio = (p1.sigma**2 + (p1.mu - p2.mu) ** 2) / (2.0 * p2.sigma**2)
    return float(np.log(p2.sigma / p1.sigma) + var_ratio - 0.5)


def fit_gaussian(samples) -> Gaussian1D:
    """Moment-matched Gaussian (variance normalized by n, not n - 1)."""
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size < 2:
        raise ConfigError(f"need at least 2 samples to fit, got {samples.size}")
    if not np.all(np.isfinite(samples)):
        raise EvaluationError("samples contain non-finite values")
    mu = float(samples.mean())
    var = float(np.mean((samples - mu) ** 2))
    if var <= 0.0:
        raise DegenerateDistributionError(
            f"sample variance is zero ({samples.size} identical values); no Gaussian fit exists"
        )
    return Gaussian1D(mu=mu, sigma=float(np.sqrt(var)))


@dataclass
class MarginalReport:
    """Per-location KL divergences between model and exact marginals."""

    xs: np.ndarray
    kl_forward: np.ndarray   # KL(exact || model), nan where excluded
    kl_reverse: np.ndarray   # KL(model || exact), nan where excluded
    n_mc: int
    excluded: int

    @property
    def avg_forward(self) -> float:
        return float(np.nanmean(self.kl_forward))

    @property
    def avg_reverse(self) -> float:
        return float(np.nanmean(self.kl_reverse))

    def write_csv(self, path, comment: str | None = None) -> None:
        """Columns {x, kl_forward, kl_reverse} plus an appended average row."""
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["x", "kl_forward", "kl_reverse"])
            for x, f, r in zip(self.xs, self.kl_forward, self.kl_reverse):
                writer.writerow([f"{x:.17g}", f"{f:.17g}", f"{r:.17g}"])
            writer.writerow(["average", f"{self.avg_forward:.17g}", f"{self.avg_reverse:.17g}"])


def default_test_grid(lo: float = 0.0, hi: float = 1.0, n: int = 100) -> np.ndarray:
    """Deterministic, evenly spaced test locations (endpoints included)."""
    return np.linspace(lo, hi, n)


def avg_marginal_kl(
    sampler,
    exact_marginals,
    test_xs,
    n_mc: int = 2000,
    rng: np.random.Generator | None = None,
) -> MarginalReport:
    """Average Gaussian KL between model samples and exact marginals.

    ``sampler(x, n_mc, rng)`` must return a flat array of model draws at
    x; ``exact_marginals(x)`` the true Gaussian1D there. Both divergence
    directions are computed; degenerate locations are skipped and counted.
    """
    test_xs = np.atleast_1d(np.asarray(test_xs, dtype=np.float64))
    if rng is None:
        rng = np.random.default_rng(0)
    fwd = np.full(test_xs.size, np.nan)
    rev = np.full(test_xs.size, np.nan)
    excluded = 0
    for i, x in enumerate(test_xs):
        exact = exact_marginals(x)
        draws = np.asarray(sampler(x, n_mc, rng), dtype=np.float64).ravel()
        try:
            fitted = fit_gaussian(draws)
        except DegenerateDistributionError:
            excluded += 1
            continue
        fwd[i] = gauss_kl(exact, fitted)
        rev[i] = gauss_kl(fitted, exact)
    if excluded == test_xs.size:
        raise EvaluationError("every test location was excluded as degenerate")
    return MarginalReport(
        xs=test_xs, kl_forward=fwd, kl_reverse=rev, n_mc=n_mc, excluded=excluded
    )


# ---------------------------------------------------------------------------
# field and interval summaries


def coverage_fraction(y_true, mean, std, width: float = 2.0) -> float:
    """Fraction of observations inside mean +- width * std."""
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    mean = np.asarray(mean, dtype=np.float64).ravel()
    std = np.asarray(std, dtype=np.float64).ravel()
    if y_true.shape != mean.shape or y_true.shape != std.shape:
        raise ConfigError("coverage inputs must have matching lengths")
    inside = np.abs(y_true - mean) <= width * std
    return float(inside.mean())


def relative_l2(reference, candidate) -> float:
    """||candidate - reference||_2 / ||reference||_2."""
    reference = np.asarray(reference, dtype=np.float64).ravel()
    candidate = np.asarray(candidate, dtype=np.float64).ravel()
    denom = float(np.linalg.norm(reference))
    if denom == 0.0:
        raise EvaluationError("reference field has zero norm")
    return float(np.linalg.norm(candidate - reference) / denom)


def pearson_r(a, b) -> float:
    """Pearson correlation of two flat arrays."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size or a.size < 2:
        raise ConfigError("pearson_r needs two equal-length arrays of size >= 2")
    am, bm = a - a.mean(), b - b.mean()
    denom = float(np.sqrt((am * am).sum() * (bm * bm).sum()))
    if denom == 0.0:
        raise DegenerateDistributionError("constant input; correlation undefined")
    return float((am * bm).sum() / denom)
