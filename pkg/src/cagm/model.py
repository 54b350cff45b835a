"""Conditional adversarial generative model: losses, training, prediction.

The model is a triple of networks. The generator maps (x, z) with
z ~ N(0, I) to a response sample. The discriminator maps (x, y) to a
scalar logit and is trained to score generated pairs high and observed
pairs low. The encoder maps (x, y) back to a latent estimate; keeping
the latent recoverable from the generated output bounds the conditional
entropy of the generator from below, which is what prevents it from
collapsing onto a deterministic curve.

Discriminator objective (ascended):

    mean log sigmoid(T(x, f(x, z)))  +  mean log(1 - sigmoid(T(x, y)))

Generator/encoder objective (descended):

    mean over the batch of
        T(x, f(x, z)) + (lam - 1)/2 * ||z - e(x, f(x, z))||^2
                      + beta * ||f(x, z) - y||^2

with lam >= 1; lam = 1 and beta = 0 reduce it to the plain adversarial
score. Logits are clamped to +-30 before the sigmoid/log composition so
a saturated discriminator degrades into a counted event instead of an
overflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_mod
from .autodiff import Tape, backward
from .errors import ConfigError, DimensionError, DivergenceError
from .nn import MLP, AdamState, adam_step, forward, forward_graph, wrap_params, xavier_init

LOGIT_CLAMP = 30.0


@dataclass
class PairedDataset:
    """Observed pairs (x_i, y_i) with optional provenance metadata."""

    x: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=np.float64))
        if self.x.shape[0] != self.y.shape[0]:
            raise DimensionError(
                f"x has {self.x.shape[0]} rows but y has {self.y.shape[0]}"
            )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def x_dim(self) -> int:
        return self.x.shape[1]

    @property
    def y_dim(self) -> int:
        return self.y.shape[1]


@dataclass
class TrainConfig:
    """Knobs of the alternating optimization."""

    iterations: int = 20000
    batch_size: int = 100
    k_d: int = 1
    k_g: int = 1
    lam: float = 1.5
    beta: float = 0.0
    learning_rate: float = 1e-4
    seed: int = 0

    def validate(self) -> None:
        if self.lam < 1.0:
            raise ConfigError(f"lam must be >= 1 (entropy weight), got {self.lam}")
        if self.beta < 0.0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.k_d < 1 or self.k_g < 1:
            raise ConfigError(f"k_d and k_g must be >= 1, got ({self.k_d}, {self.k_g})")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class CagmModel:
    """Generator, encoder, and discriminator with consistent widths."""

    generator: MLP
    encoder: MLP
    discriminator: MLP
    latent_dim: int

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.generator.in_width <= self.latent_dim:
            raise ConfigError(
                f"generator input width {self.generator.in_width} must exceed "
                f"latent_dim {self.latent_dim}"
            )
        x_dim, y_dim = self.x_dim, self.y_dim
        if self.encoder.in_width != x_dim + y_dim:
            raise ConfigError(
                f"encoder input width {self.encoder.in_width} != x_dim + y_dim = {x_dim + y_dim}"
            )
        if self.encoder.out_width != self.latent_dim:
            raise ConfigError(
                f"encoder output width {self.encoder.out_width} != latent_dim {self.latent_dim}"
            )
        if self.discriminator.in_width != x_dim + y_dim:
            raise ConfigError(
                f"discriminator input width {self.discriminator.in_width} != "
                f"x_dim + y_dim = {x_dim + y_dim}"
            )
        if self.discriminator.out_width != 1:
            raise ConfigError(
                f"discriminator must emit a scalar logit, got width {self.discriminator.out_width}"
            )

    @property
    def x_dim(self) -> int:
        return self.generator.in_width - self.latent_dim

    @property
    def y_dim(self) -> int:
        return self.generator.out_width


@dataclass
class PredictiveStats:
    """Monte Carlo mean and variance of the model's conditional density."""

    mean: np.ndarray
    variance: np.ndarray
    n_mc: int

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


@dataclass
class LossHistory:
    """Last discriminator and generator loss recorded at each iteration."""

    d_loss: np.ndarray
    g_loss: np.ndarray
    saturation_events: int = 0

    def __len__(self) -> int:
        return len(self.d_loss)


def build_model(
    x_dim: int,
    y_dim: int,
    latent_dim: int,
    gen_hidden,
    enc_hidden,
    disc_hidden,
    seed: int = 0,
) -> CagmModel:
    """Xavier-initialized model triple, deterministic in ``seed``."""
    gen = xavier_init([x_dim + latent_dim, *gen_hidden, y_dim], rng_mod.stream(seed, rng_mod.INIT, 0))
    enc = xavier_init([x_dim + y_dim, *enc_hidden, latent_dim], rng_mod.stream(seed, rng_mod.INIT, 1))
    disc = xavier_init([x_dim + y_dim, *disc_hidden, 1], rng_mod.stream(seed, rng_mod.INIT, 2))
    return CagmModel(generator=gen, encoder=enc, discriminator=disc, latent_dim=latent_dim)


def sample_latent(n: int, latent_dim: int, rng: np.random.Generator) -> np.ndarray:
    """n draws from the standard normal latent prior."""
    return rng.standard_normal((n, latent_dim))


def generate(model: CagmModel, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Generator samples for conditioning inputs x and latents z."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if x.shape[0] != z.shape[0]:
        raise DimensionError(f"x has {x.shape[0]} rows but z has {z.shape[0]}")
    if x.shape[1] != model.x_dim:
        raise DimensionError(f"x width {x.shape[1]} != model x_dim {model.x_dim}")
    if z.shape[1] != model.latent_dim:
        raise DimensionError(f"z width {z.shape[1]} != latent_dim {model.latent_dim}")
    return forward(model.generator, np.concatenate([x, z], axis=1))


def _log_sigmoid_chain(tape: Tape, logits, flip: bool):
    """clip -> sigmoid -> (optionally 1 - s) -> log, plus the saturation count."""
    n_saturated = int(np.count_nonzero(np.abs(logits.value) > LOGIT_CLAMP))
    t = tape.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    s = tape.sigmoid(t)
    if flip:
        s = tape.shift(tape.neg(s), 1.0)
    return tape.log(s), n_saturated


def _discriminator_graph(model: CagmModel, x, y, z, tape: Tape):
    """Discriminator objective on the tape; returns (loss, psi, n_sat).

    The generator runs as plain NumPy: its parameters receive no update
    in this phase, so there is no reason to record them.
    """
    y_fake = generate(model, x, z)
    psi = wrap_params(tape, model.discriminator)
    logit_fake = forward_graph(
        model.discriminator, tape.leaf(np.concatenate([x, y_fake], axis=1)), tape, psi
    )
    logit_real = forward_graph(
        model.discriminator, tape.leaf(np.concatenate([x, y], axis=1)), tape, psi
    )
    log_fake, sat_f = _log_sigmoid_chain(tape, logit_fake, flip=False)
    log_real, sat_r = _log_sigmoid_chain(tape, logit_real, flip=True)
    loss = tape.add(tape.mean(log_fake), tape.mean(log_real))
    return loss, psi, sat_f + sat_r


def discriminator_loss(model: CagmModel, real_batch, fake_z) -> float:
    """Value of the discriminator objective on one batch (no gradients)."""
    x, y = real_batch
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    z = np.atleast_2d(np.asarray(fake_z, dtype=np.float64))
    loss, _, _ = _discriminator_graph(model, x, y, z, Tape())
    return float(loss.value)


def _generator_graph(model: CagmModel, x, y, z, lam: float, beta: float, tape: Tape):
    """Generator/encoder objective on the tape; returns (loss, theta, phi).

    The discriminator is evaluated through the tape so the adversarial
    score backpropagates into the generator, but its own parameter nodes
    are discarded: psi stays frozen in this phase.
    """
    theta = wrap_params(tape, model.generator)
    phi = wrap_params(tape, model.encoder)
    psi = wrap_params(tape, model.discriminator)
    x_node = tape.leaf(x)
    z_node = tape.leaf(z)
    y_pred = forward_graph(
        model.generator, tape.concat_cols([x_node, z_node]), tape, theta
    )
    xy_pred = tape.concat_cols([x_node, y_pred])
    t_logit = forward_graph(model.discriminator, xy_pred, tape, psi)
    z_rec = forward_graph(model.encoder, xy_pred, tape, phi)
    per_row = tape.sum_rows(t_logit)
    coef = (lam - 1.0) / 2.0
    if coef != 0.0:
        entropy = tape.scale(tape.sum_rows(tape.square(tape.sub(z_node, z_rec))), coef)
        per_row = tape.add(per_row, entropy)
    if beta != 0.0:
        residual = tape.sum_rows(tape.square(tape.sub(y_pred, tape.leaf(y))))
        per_row = tape.add(per_row, tape.scale(residual, beta))
    return tape.mean(per_row), theta, phi


def generator_loss(model: CagmModel, batch, z, lam: float, beta: float) -> float:
    """Value of the generator/encoder objective on one batch (no gradients)."""
    if lam < 1.0:
        raise ConfigError(f"lam must be >= 1, got {lam}")
    x, y = batch
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    loss, _, _ = _generator_graph(model, x, y, z, lam, beta, Tape())
    return float(loss.value)


def _draw_batch(dataset: PairedDataset, batch_size: int, rng: np.random.Generator):
    # batch >= dataset: use every row, in stored order; else uniform with replacement
    if batch_size >= dataset.n:
        return dataset.x, dataset.y
    idx = rng.integers(0, dataset.n, size=batch_size)
    return dataset.x[idx], dataset.y[idx]


def _grads(params: list) -> list:
    return [
        p.grad if p.grad is not None else np.zeros_like(p.value) for p in params
    ]


def train(model: CagmModel, dataset: PairedDataset, config: TrainConfig):
    """Alternating ascent/descent; mutates ``model`` and returns (model, history).

    Each iteration runs k_d discriminator ascent steps then k_g
    generator/encoder descent steps, every step on a fresh minibatch and
    fresh latent draws. Three Adam states (discriminator, generator,
    encoder) evolve independently. Fully deterministic given
    ``config.seed`` and the dataset.
    """
    config.validate()
    if dataset.x_dim != model.x_dim or dataset.y_dim != model.y_dim:
        raise DimensionError(
            f"dataset dims ({dataset.x_dim}, {dataset.y_dim}) != model dims "
            f"({model.x_dim}, {model.y_dim})"
        )
    rng = rng_mod.stream(config.seed, rng_mod.TRAIN)
    gen_params = model.generator.params()
    enc_params = model.encoder.params()
    disc_params = model.discriminator.params()
    opt_d = AdamState.for_params(disc_params, config.learning_rate)
    opt_g = AdamState.for_params(gen_params, config.learning_rate)
    opt_e = AdamState.for_params(enc_params, config.learning_rate)
    d_hist = np.zeros(config.iterations)
    g_hist = np.zeros(config.iterations)
    saturation = 0

    def _partial(it):
        return LossHistory(
            d_loss=d_hist[:it].copy(), g_loss=g_hist[:it].copy(),
            saturation_events=saturation,
        )

    for it in range(config.iterations):
        try:
            for _ in range(config.k_d):
                x, y = _draw_batch(dataset, config.batch_size, rng)
                z = sample_latent(x.shape[0], model.latent_dim, rng)
                tape = Tape()
                loss, psi, n_sat = _discriminator_graph(model, x, y, z, tape)
                saturation += n_sat
                d_value = float(loss.value)
                if not np.isfinite(d_value):
                    raise DivergenceError(
                        f"discriminator loss diverged at iteration {it}", iteration=it
                    )
                backward(tape, loss)
                # ascent on the objective = descent on its negation
                adam_step(disc_params, [-g for g in _grads(psi)], opt_d)
            for _ in range(config.k_g):
                x, y = _draw_batch(dataset, config.batch_size, rng)
                z = sample_latent(x.shape[0], model.latent_dim, rng)
                tape = Tape()
                loss, theta, phi = _generator_graph(
                    model, x, y, z, config.lam, config.beta, tape
                )
                g_value = float(loss.value)
                if not np.isfinite(g_value):
                    raise DivergenceError(
                        f"generator loss diverged at iteration {it}", iteration=it
                    )
                backward(tape, loss)
                adam_step(gen_params, _grads(theta), opt_g)
                adam_step(enc_params, _grads(phi), opt_e)
        except DivergenceError as err:
            raise DivergenceError(str(err), iteration=it, history=_partial(it)) from None
        d_hist[it] = d_value
        g_hist[it] = g_value
    return model, LossHistory(d_loss=d_hist, g_loss=g_hist, saturation_events=saturation)


def moments_from_samples(samples: np.ndarray):
    """Monte Carlo mean and (1/N-normalized) variance over axis 0."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] < 1:
        raise DimensionError("need at least one sample")
    mean = samples.mean(axis=0)
    variance = np.mean((samples - mean) ** 2, axis=0)
    return mean, variance


def predict_samples(
    model: CagmModel, x_star, n_mc: int, rng: np.random.Generator
) -> np.ndarray:
    """n_mc generator draws at a single conditioning input."""
    x_star = np.asarray(x_star, dtype=np.float64).reshape(1, -1)
    if n_mc < 1:
        raise ConfigError(f"n_mc must be >= 1, got {n_mc}")
    x = np.repeat(x_star, n_mc, axis=0)
    z = sample_latent(n_mc, model.latent_dim, rng)
    return generate(model, x, z)


def predict_moments(
    model: CagmModel, x_star, n_mc: int, rng: np.random.Generator
) -> PredictiveStats:
    """Monte Carlo predictive mean and variance at one conditioning input."""
    samples = predict_samples(model, x_star, n_mc, rng)
    mean, variance = moments_from_samples(samples)
    return PredictiveStats(mean=mean, variance=variance, n_mc=n_mc)
