"""Discrete-time denoising diffusion: noise schedule, noise-prediction
training objective, guidance mixing of conditional and unconditional
predictions, and a deterministic first-order sampler.

The network predicts the injected noise; the score of the noised marginal is
recovered as -eps / sigma_t where sigma_t = sqrt(1 - alpha_bar_t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


class SamplingDiverged(ArithmeticError):
    """Sampling produced a non-finite state; carries the failing step index."""

    def __init__(self, step: int, timestep: int):
        super().__init__(f"sampling diverged at step {step} (t={timestep})")
        self.step = step
        self.timestep = timestep


class NoiseSchedule:
    """Linear beta schedule with cumulative signal/noise coefficients.

    alpha_bar decreases strictly from ~1 at t=0 to ~0 at t=T-1;
    sigma_t = sqrt(1 - alpha_bar_t) increases accordingly.
    """

    def __init__(self, num_steps: int = 1000, beta_start: float = 1e-4,
                 beta_end: float = 2e-2):
        if num_steps < 1:
            raise T.UsageError("schedule needs at least one step")
        if not (0.0 < beta_start <= beta_end < 1.0):
            raise T.UsageError("betas must satisfy 0 < beta_start <= beta_end < 1")
        self.num_steps = num_steps
        self.betas = np.linspace(beta_start, beta_end, num_steps)
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)
        self.sigmas = np.sqrt(1.0 - self.alpha_bars)

    def check_timesteps(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t))
        if not np.issubdtype(t.dtype, np.integer):
            raise T.UsageError("timesteps must be integers")
        if t.size and (t.min() < 0 or t.max() >= self.num_steps):
            raise T.UsageError(f"timestep out of range [0, {self.num_steps})")
        return t


@dataclass(frozen=True)
class GuidanceConfig:
    guidance_scale: float = 1.0
    caption_keep_prob: float = 0.9
    null_id: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.caption_keep_prob <= 1.0:
            raise T.UsageError("caption_keep_prob must lie in [0, 1]")


@dataclass(frozen=True)
class SamplerConfig:
    num_steps: int = 50

    def timesteps(self, train_steps: int) -> np.ndarray:
        """Strictly decreasing evaluation times from T-1 down to 0, uniform stride."""
        if self.num_steps < 1:
            raise T.UsageError("sampler needs at least one step")
        knots = np.round(np.linspace(train_steps - 1, 0, self.num_steps)).astype(int)
        return np.unique(knots)[::-1]


# ---------------------------------------------------------------------------
# forward process and objective
# ---------------------------------------------------------------------------

def _per_example(coeff: np.ndarray, t: np.ndarray, ndim: int):
    """Index per-example coefficients and shape them for broadcasting."""
    values = coeff[t]
    return values.reshape(values.shape + (1,) * (ndim - 1))


def forward_noise(x0, t, eps, sched: NoiseSchedule):
    """x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.

    Accepts arrays or Tensors; per-example integer t is broadcast over the
    trailing extents. Returns the same container kind as ``x0``.
    """
    t = sched.check_timesteps(t)
    as_tensor = isinstance(x0, Tensor)
    x0_data = x0.data if as_tensor else np.asarray(x0)
    eps_data = eps.data if isinstance(eps, Tensor) else np.asarray(eps)
    if eps_data.shape != x0_data.shape:
        raise T.ShapeError("noise must match the data shape")
    if t.size not in (1, x0_data.shape[0] if x0_data.ndim else 1):
        raise T.UsageError("need one timestep per example (or a single shared one)")
    signal = np.sqrt(_per_example(sched.alpha_bars, t, x0_data.ndim))
    noise = _per_example(sched.sigmas, t, x0_data.ndim)
    if as_tensor:
        return x0 * signal.astype(x0.dtype) + (
            eps if isinstance(eps, Tensor) else Tensor(eps_data, dtype=x0.dtype)
        ) * noise.astype(x0.dtype)
    return signal * x0_data + noise * eps_data


def training_loss(model, x0: np.ndarray, text_ids: np.ndarray, sched: NoiseSchedule,
                  guidance: GuidanceConfig, rng: np.random.Generator) -> Tensor:
    """Mean squared error between injected and predicted noise.

    Draw order from ``rng`` (fixed, so runs are reproducible per seed and a
    test oracle can replay it): per-example timesteps, then the noise field,
    then the per-example caption-keep coin flips.
    """
    x0 = np.asarray(x0)
    if x0.ndim != 4 or x0.shape[0] == 0:
        raise T.UsageError("x0 must be a non-empty (B, C, H, W) batch")
    guidance.validate()
    batch = x0.shape[0]
    t = rng.integers(0, sched.num_steps, size=batch)
    eps = rng.standard_normal(x0.shape)
    keep = rng.random(batch) < guidance.caption_keep_prob
    ids = np.where(keep[:, None], text_ids, guidance.null_id)
    x_t = forward_noise(x0, t, eps, sched)
    dtype = model.dtype if hasattr(model, "dtype") else np.float64
    pred = model.forward(Tensor(x_t.astype(dtype)), ids, t)
    diff = pred - Tensor(eps.astype(dtype))
    return (diff * diff).mean()


def score_from_eps(eps_hat, t, sched: NoiseSchedule):
    """Score of the noised marginal: S = -eps_hat / sigma_t."""
    t = sched.check_timesteps(t)
    sigma = sched.sigmas[t]
    if np.any(sigma <= 0.0):
        raise T.UsageError("score undefined where sigma_t = 0 (alpha_bar = 1)")
    ndim = eps_hat.ndim if hasattr(eps_hat, "ndim") else np.asarray(eps_hat).ndim
    factor = -1.0 / sigma.reshape(sigma.shape + (1,) * (ndim - 1))
    if isinstance(eps_hat, Tensor):
        return eps_hat * factor.astype(eps_hat.dtype)
    return factor * np.asarray(eps_hat)


def cfg_eps(model, x_t: Tensor, text_ids: np.ndarray, t, omega: float,
            null_id: int = 0) -> Tensor:
    """Guided prediction (1 + omega) * eps(cond) - omega * eps(uncond).

    Affine in omega; omega = 0 returns the conditional branch bitwise and
    omega = -1 the unconditional one.
    """
    cond = model.forward(x_t, text_ids, t)
    uncond = model.forward(x_t, np.full_like(np.asarray(text_ids), null_id), t)
    return cond * (1.0 + omega) - uncond * omega


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sample(model, text_ids: np.ndarray, sched: NoiseSchedule,
           sampler: SamplerConfig, omega: float, rng_seed: int,
           null_id: int = 0) -> Tensor:
    """Deterministic first-order denoising from seeded Gaussian noise.

    Each update maps the state at evaluation time t to the next time t' via
    x' = sqrt(abar')/sqrt(abar) * x - (sqrt(abar')/sqrt(abar) * sigma - sigma') * eps_hat.
    The transition out of the last evaluation (t=0) targets the clean state
    (abar' = 1, sigma' = 0), so a one-step schedule collapses exactly to the
    predicted clean image (x - sigma * eps_hat) / sqrt(abar).
    """
    cfg = model.config
    text_ids = np.asarray(text_ids)
    batch = text_ids.shape[0]
    shape = (batch, cfg.in_channels, cfg.image_side, cfg.image_side)
    x = np.random.default_rng(rng_seed).standard_normal(shape).astype(model.dtype)
    times = sampler.timesteps(sched.num_steps)
    with T.no_grad():
        state = Tensor(x)
        for step, t in enumerate(times):
            try:
                eps_hat = cfg_eps(model, state, text_ids,
                                  np.full(batch, t, dtype=int), omega, null_id)
                if step + 1 < len(times):
                    t_next = int(times[step + 1])
                    root_next = float(np.sqrt(sched.alpha_bars[t_next]))
                    sigma_next = float(sched.sigmas[t_next])
                else:
                    root_next, sigma_next = 1.0, 0.0
                ratio = root_next / float(np.sqrt(sched.alpha_bars[t]))
                state = state * ratio - eps_hat * (ratio * float(sched.sigmas[t]) - sigma_next)
            except T.NonFiniteError as exc:
                raise SamplingDiverged(step, int(t)) from exc
            if not np.isfinite(state.data).all():  # pragma: no cover - engine raises first
                raise SamplingDiverged(step, int(t))
    return state


__all__ = [
    "GuidanceConfig",
    "NoiseSchedule",
    "SamplerConfig",
    "SamplingDiverged",
    "cfg_eps",
    "forward_noise",
    "sample",
    "score_from_eps",
    "training_loss",
]
