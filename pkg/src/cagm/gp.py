"""Exact Gaussian-process regression baseline.

Zero prior mean (the data are centered before fitting and the mean is
restored at prediction), squared-exponential kernel, Gaussian
observation noise. Hyperparameters are chosen by multi-start Adam
ascent on the log marginal likelihood in log-parameter space, with the
gradient computed from the standard trace identities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import GpSpec, rbf_kernel
from .errors import ConfigError, DimensionError, IllConditionedError, NotPsdError

_JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
_LOG2PI = float(np.log(2.0 * np.pi))


@dataclass
class GpRegressor:
    """A fitted GP: training data, kernel, noise level, and solved factors."""

    x: np.ndarray
    y_mean: float
    kernel: GpSpec
    noise2: float
    chol: np.ndarray
    alpha: np.ndarray
    log_marginal: float


def _chol_gram(x, sigma_f2, l2, noise2):
    """Cholesky of K + sigma_n^2 I with escalating jitter; None if hopeless."""
    k = rbf_kernel(x, x, GpSpec(sigma_f2, l2))
    for jitter in _JITTER_LADDER:
        try:
            return k, np.linalg.cholesky(k + (noise2 + jitter) * np.eye(x.size))
        except np.linalg.LinAlgError:
            continue
    return k, None


def _lml_and_grads(x, yc, log_params):
    """Log marginal likelihood and its gradient in log-parameter space.

    log_params = (log sigma_f2, log l2, log noise2). Uses
    d lml / dp = 0.5 alpha' dK/dp alpha - 0.5 tr(K^{-1} dK/dp).
    """
    sigma_f2, l2, noise2 = np.exp(log_params)
    k, chol = _chol_gram(x, sigma_f2, l2, noise2)
    if chol is None:
        raise NotPsdError("Gram matrix is not positive definite at these parameters")
    n = x.size
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, yc))
    lml = (
        -0.5 * float(yc @ alpha)
        - float(np.log(np.diag(chol)).sum())
        - 0.5 * n * _LOG2PI
    )
    k_inv = np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(n)))
    d2 = (x[:, None] - x[None, :]) ** 2
    # dK in log space: each parameter p contributes p * dK/dp
    dk_sigma = k
    dk_l2 = k * d2 / (2.0 * l2)
    dk_noise = noise2 * np.eye(n)
    grads = np.empty(3)
    for i, dk in enumerate((dk_sigma, dk_l2, dk_noise)):
        grads[i] = 0.5 * float(alpha @ dk @ alpha) - 0.5 * float(np.sum(k_inv * dk))
    return lml, grads


def gp_fit(
    x,
    y,
    init: GpSpec | None = None,
    noise2_init: float = 0.1,
    restarts: int = 5,
    steps: int = 500,
    learning_rate: float = 0.05,
    seed: int = 0,
) -> GpRegressor:
    """Fit hyperparameters by multi-start Adam ascent on the evidence.

    The first start uses ``init``; the rest jitter data-driven guesses.
    The best parameters ever evaluated (across all starts and steps) win.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise DimensionError(f"x has {x.size} points but y has {y.size}")
    if x.size < 2:
        raise ConfigError("need at least 2 training points")
    if init is None:
        init = GpSpec(1.0, 1.0)
    y_mean = float(y.mean())
    yc = y - y_mean
    rng = np.random.default_rng(seed)

    var_y = max(float(yc.var()), 1e-8)
    d = np.abs(x[:, None] - x[None, :])[np.triu_indices(x.size, 1)]
    med2 = max(float(np.median(d)) ** 2, 1e-6)
    starts = [np.log([init.sigma_f2, init.l2, max(noise2_init, 1e-10)])]
    for _ in range(max(restarts - 1, 0)):
        starts.append(
            np.array(
                [
                    np.log(var_y) + rng.normal(0.0, 0.7),
                    np.log(med2) + rng.normal(0.0, 0.7),
                    np.log(0.1 * var_y) + rng.normal(0.0, 1.0),
                ]
            )
        )

    best_lml = -np.inf
    best_params = None
    any_evaluated = False
    for start in starts:
        p = start.copy()
        m = np.zeros(3)
        v = np.zeros(3)
        for t in range(1, steps + 1):
            try:
                lml, grads = _lml_and_grads(x, yc, p)
            except NotPsdError:
                break
            any_evaluated = True
            if lml > best_lml:
                best_lml = lml
                best_params = p.copy()
            m = 0.9 * m + 0.1 * grads
            v = 0.999 * v + 0.001 * grads * grads
            mhat = m / (1.0 - 0.9**t)
            vhat = v / (1.0 - 0.999**t)
            p = p + learning_rate * mhat / (np.sqrt(vhat) + 1e-8)
            # keep log-parameters in a sane band; the evidence is flat out here
            p = np.clip(p, -20.0, 20.0)
    if not any_evaluated or best_params is None:
        raise IllConditionedError(
            "no hyperparameter start produced a positive-definite Gram matrix"
        )

    sigma_f2, l2, noise2 = np.exp(best_params)
    k, chol = _chol_gram(x, sigma_f2, l2, noise2)
    if chol is None:
        raise IllConditionedError("refit at the selected parameters lost definiteness")
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, yc))
    return GpRegressor(
        x=x,
        y_mean=y_mean,
        kernel=GpSpec(float(sigma_f2), float(l2)),
        noise2=float(noise2),
        chol=chol,
        alpha=alpha,
        log_marginal=float(best_lml),
    )


def gp_predict(model: GpRegressor, x_star, include_noise: bool = True):
    """Posterior mean and variance at the query points.

    The returned variance is predictive (latent plus observation noise)
    unless ``include_noise`` is False.
    """
    x_star = np.atleast_1d(np.asarray(x_star, dtype=np.float64))
    k_star = rbf_kernel(model.x, x_star, model.kernel)
    mean = model.y_mean + k_star.T @ model.alpha
    half = np.linalg.solve(model.chol, k_star)
    var = model.kernel.sigma_f2 - np.sum(half * half, axis=0)
    var = np.maximum(var, 0.0)
    if include_noise:
        var = var + model.noise2
    return mean, var
