"""Variance-preserving noise schedule and the Gaussian noising/denoising chain.

Time steps are 1-based (t = 1..T) everywhere. Functions that take ``t`` accept
either a python int or an integer array with one step per batch element; the
per-step coefficients then broadcast over the trailing (bins, frames) axes.
Array inputs may be numpy arrays or autodiff tensors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor, no_grad


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    beta_min: float
    beta_max: float
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_tilde: np.ndarray

    def at(self, name: str, t) -> np.ndarray:
        """Vector ``name`` evaluated at 1-based step(s) ``t``."""
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"time step {t.tolist()} outside 1..{self.T}")
        return getattr(self, name)[t - 1]

    def alpha_bar_prev(self, t) -> np.ndarray:
        """ᾱ_{t-1}, with ᾱ_0 = 1."""
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"time step {t.tolist()} outside 1..{self.T}")
        padded = np.concatenate([[1.0], self.alpha_bar])
        return padded[t - 1]

    def to_rows(self) -> list[tuple[int, float, float, float, float]]:
        return [
            (t + 1, float(self.beta[t]), float(self.alpha[t]), float(self.alpha_bar[t]), float(self.beta_tilde[t]))
            for t in range(self.T)
        ]


def compute_schedule(T: int, beta_min: float = 0.1, beta_max: float = 20.0) -> DiffusionSchedule:
    """Discretised VP-SDE schedule.

    beta_t = 1 - exp(beta_min / T - 0.5 (beta_max - beta_min) (2t - 1) / T^2)
    """
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if not (0.0 < beta_min < beta_max):
        raise ValueError(f"need 0 < beta_min < beta_max, got {beta_min}, {beta_max}")
    T = int(T)
    t = np.arange(1, T + 1, dtype=np.float64)
    beta = 1.0 - np.exp(beta_min / T - 0.5 * (beta_max - beta_min) * (2.0 * t - 1.0) / T**2)
    if np.any(beta <= 0.0) or np.any(beta >= 1.0):
        raise ValueError(f"schedule ({T}, {beta_min}, {beta_max}) gives beta outside (0, 1): {beta}")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    beta_tilde = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
    beta_tilde[0] = 0.0
    for arr in (beta, alpha, alpha_bar, beta_tilde):
        arr.setflags(write=False)
    return DiffusionSchedule(T, float(beta_min), float(beta_max), beta, alpha, alpha_bar, beta_tilde)


def _coef(values: np.ndarray, like) -> np.ndarray | float:
    """Reshape per-sample coefficients so they broadcast over trailing axes."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 0:
        return float(values)
    ndim = like.ndim
    return values.reshape(values.shape + (1,) * (ndim - values.ndim))


def _check_same(a, b, what: str) -> None:
    if tuple(np.shape(a.data if isinstance(a, Tensor) else a)) != tuple(
        np.shape(b.data if isinstance(b, Tensor) else b)
    ):
        raise ValueError(f"{what}: shape mismatch {np.shape(getattr(a, 'data', a))} vs {np.shape(getattr(b, 'data', b))}")


def forward_noise(x0, t, eps, sched: DiffusionSchedule):
    """Sample x_t ~ q(x_t | x_0) in one step: sqrt(ᾱ_t) x0 + sqrt(1 - ᾱ_t) eps."""
    _check_same(x0, eps, "forward_noise")
    ab = sched.at("alpha_bar", t)
    return _coef(np.sqrt(ab), x0) * x0 + _coef(np.sqrt(1.0 - ab), x0) * eps


def single_step_noise(x_prev, t, eps, sched: DiffusionSchedule):
    """One noising transition: sqrt(1 - β_t) x_{t-1} + sqrt(β_t) eps."""
    _check_same(x_prev, eps, "single_step_noise")
    b = sched.at("beta", t)
    return _coef(np.sqrt(1.0 - b), x_prev) * x_prev + _coef(np.sqrt(b), x_prev) * eps


def posterior_coefficients(t, sched: DiffusionSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Weights of x0 and x_t in the posterior mean of q(x_{t-1} | x_t, x0)."""
    ab = sched.at("alpha_bar", t)
    ab_prev = sched.alpha_bar_prev(t)
    b = sched.at("beta", t)
    a = sched.at("alpha", t)
    c0 = np.sqrt(ab_prev) * b / (1.0 - ab)
    ct = np.sqrt(a) * (1.0 - ab_prev) / (1.0 - ab)
    # ᾱ_0 = 1 makes these exactly (1, 0) at t = 1; avoid the rounding in 1 - (1 - β_1)
    first = np.asarray(t) == 1
    return np.where(first, 1.0, c0), np.where(first, 0.0, ct)


def posterior_params(x0, x_t, t, sched: DiffusionSchedule):
    """Mean and variance of q(x_{t-1} | x_t, x0)."""
    _check_same(x0, x_t, "posterior_params")
    c0, ct = posterior_coefficients(t, sched)
    mean = _coef(c0, x0) * x0 + _coef(ct, x0) * x_t
    return mean, sched.at("beta_tilde", t)


def denoise_step(x_t, t, x0_hat, noise, sched: DiffusionSchedule):
    """Sample x̂_{t-1} from q(x_{t-1} | x_t, x̂_0). Deterministic at t = 1."""
    if np.any(np.asarray(t) < 1):
        raise ValueError(f"denoise_step needs t >= 1, got {t}")
    mean, var = posterior_params(x0_hat, x_t, t, sched)
    if noise is None:
        return mean
    _check_same(x_t, noise, "denoise_step")
    return mean + _coef(np.sqrt(var), x_t) * noise


def sample_loop(
    generator: Callable,
    ms,
    singer_id,
    sched: DiffusionSchedule,
    rng: np.random.Generator,
    n_mels: int,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Run the reverse chain from x_T ~ N(0, I) down to x̂_0.

    ``generator(x_t, t, ms, singer_id)`` must return the clean estimate x̂_0
    with the same (B, n_mels, L_f) shape as ``x_t``. ``ms`` is the
    frame-level score encoding of shape (B, C, L_f).
    """
    frames = ms.shape[-1]
    batch = ms.shape[0]
    shape = (batch, n_mels, frames)
    x = rng.standard_normal(shape)
    with no_grad():
        for t in range(sched.T, 0, -1):
            steps = np.full(batch, t)
            x0_hat = generator(Tensor(x), steps, ms, singer_id)
            x0_hat = x0_hat.data if isinstance(x0_hat, Tensor) else np.asarray(x0_hat, dtype=np.float64)
            if x0_hat.shape != shape:
                raise ValueError(f"generator returned shape {x0_hat.shape}, expected {shape}")
            noise = rng.standard_normal(shape) if t > 1 else None
            x = denoise_step(x, steps, x0_hat, noise, sched)
            if mask is not None:
                x = x * mask[:, None, :]
    return x
