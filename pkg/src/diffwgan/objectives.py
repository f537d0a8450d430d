"""Loss terms for the acoustic model and the Wasserstein critic.

Every function takes and returns autodiff tensors so the trainer can
differentiate through them. Masks are boolean arrays marking valid entries;
with a mask, a loss is the mean of the per-item losses, so padding a batch
never changes its value.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def _per_item_mean(err: Tensor, mask: np.ndarray | None) -> Tensor:
    """Mean of ``err`` within each item (axis 0), then across items."""
    if mask is None:
        return ad.mean(err)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), err.shape)
    b = err.shape[0]
    counts = mask.reshape(b, -1).sum(axis=1).astype(np.float64)
    if np.any(counts == 0):
        raise ValueError("mask leaves an item with no valid entries")
    masked = ad.mul(err, Tensor(mask.astype(np.float64)))
    per_item = ad.div(ad.sum(ad.reshape(masked, (b, -1)), axis=1), Tensor(counts))
    return ad.mean(per_item)


def duration_loss(d, d_hat, mask: np.ndarray | None = None) -> Tensor:
    """Mean squared error between true and predicted phone durations (in frames)."""
    d = d if isinstance(d, Tensor) else Tensor(np.asarray(d, dtype=np.float64))
    d_hat = d_hat if isinstance(d_hat, Tensor) else Tensor(np.asarray(d_hat, dtype=np.float64))
    if d.shape != d_hat.shape:
        raise ValueError(f"duration_loss: shapes {d.shape} and {d_hat.shape} differ")
    err = ad.square(ad.sub(d_hat, d))
    if err.ndim == 1:
        return _per_item_mean(ad.reshape(err, (1, -1)), None if mask is None else np.reshape(mask, (1, -1)))
    return _per_item_mean(err, mask)


def recon_loss(x0, x0_hat, mask: np.ndarray | None = None) -> Tensor:
    """L1 distance between mel-spectrograms.

    ``x0`` is (B, M, L_f) or (M, L_f); ``mask`` is the (B, L_f) frame mask.
    """
    x0, x0_hat = ad.as_tensor(x0), ad.as_tensor(x0_hat)
    if x0.shape != x0_hat.shape:
        raise ValueError(f"recon_loss: shapes {x0.shape} and {x0_hat.shape} differ")
    err = ad.abs(ad.sub(x0_hat, x0))
    if err.ndim == 2:
        err = ad.reshape(err, (1,) + err.shape)
        mask = None if mask is None else np.reshape(mask, (1, -1))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)[:, None, :]
    return _per_item_mean(err, mask)


def wasserstein_loss(d_real, d_fake) -> Tensor:
    """Critic objective: -mean D(real) + mean D(fake)."""
    return ad.add(ad.neg(ad.mean(ad.as_tensor(d_real))), ad.mean(ad.as_tensor(d_fake)))


def interpolate_pair(x_prev, x_prev_hat, alpha) -> Tensor:
    """x̃ = α x + (1 - α) x̂ with one α per batch element."""
    x_prev, x_prev_hat = ad.as_tensor(x_prev), ad.as_tensor(x_prev_hat)
    if x_prev.shape != x_prev_hat.shape:
        raise ValueError(f"interpolate_pair: shapes {x_prev.shape} and {x_prev_hat.shape} differ")
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim == 1:
        alpha = alpha.reshape((-1,) + (1,) * (x_prev.ndim - 1))
    a = Tensor(alpha)
    return ad.add(ad.mul(a, x_prev), ad.mul(ad.sub(1.0, a), x_prev_hat))


def gradient_penalty(critic: Callable[..., Tensor], x_tilde: Tensor, *cond, **kwcond) -> Tensor:
    """mean over the batch of (‖∇_x̃ D(x̃, ...)‖₂ - 1)².

    ``critic(x_tilde, *cond, **kwcond)`` returns one score per item. The norm
    runs over all elements of each item. The gradient is built with
    ``create_graph=True``, so the returned penalty is differentiable with
    respect to the critic's parameters.
    """
    if not isinstance(x_tilde, Tensor) or not x_tilde.requires_grad:
        x_tilde = Tensor(ad.as_tensor(x_tilde).data, requires_grad=True)
    with ad.enable_grad():
        scores = critic(x_tilde, *cond, **kwcond)
        if not scores.requires_grad:
            # critic ignores its input: gradient norm is zero everywhere
            return Tensor(np.array(1.0))
        (g,) = ad.grad(ad.sum(scores), [x_tilde], create_graph=True)
        b = x_tilde.shape[0]
        norms = ad.l2_norm(ad.reshape(g, (b, -1)), axis=1)
        return ad.mean(ad.square(ad.sub(norms, 1.0)))


def generator_adv_loss(d_fake, printed_sign: bool = False) -> Tensor:
    """Adversarial generator loss.

    The default minimises -mean D(fake), pushing the critic's score of
    generated samples up. ``printed_sign=True`` gives +mean D(fake) instead,
    which rewards low critic scores and only exists for comparison runs.
    """
    m = ad.mean(ad.as_tensor(d_fake))
    return m if printed_sign else ad.neg(m)


@dataclass
class LossBreakdown:
    l_dur: float = 0.0
    l_recon: float = 0.0
    l_adv: float = 0.0
    l_wd: float = 0.0
    l_gp: float = 0.0
    l_g_total: float = 0.0
    l_d_total: float = 0.0
    lambda_recon: float = 1.0
    lambda_adv: float = 1.0
    lambda_gp: float = 10.0

    def to_dict(self) -> dict:
        return asdict(self)

    def check(self, tol: float = 1e-9) -> None:
        g = self.l_dur + self.lambda_recon * self.l_recon + self.lambda_adv * self.l_adv
        d = self.l_wd + self.lambda_gp * self.l_gp
        if abs(g - self.l_g_total) > tol * max(1.0, abs(g)) or abs(d - self.l_d_total) > tol * max(1.0, abs(d)):
            raise AssertionError(f"inconsistent loss breakdown: {self}")


def _val(x) -> float:
    return float(x.data) if isinstance(x, Tensor) else float(x)


def total_losses(parts: dict, lambda_recon: float = 1.0, lambda_adv: float = 1.0,
                 lambda_gp: float = 10.0) -> tuple[Tensor, Tensor, LossBreakdown]:
    """Weighted generator and critic totals.

    ``parts`` may hold tensors or floats under keys l_dur, l_recon, l_adv,
    l_wd and l_gp (missing keys count as 0). Returns the two differentiable
    totals and a float breakdown. A zero weight drops its term from the
    graph entirely, so it contributes no gradient.
    """
    def term(key):
        return ad.as_tensor(parts.get(key, 0.0))

    g_total = term("l_dur")
    if lambda_recon != 0.0:
        g_total = ad.add(g_total, ad.mul(term("l_recon"), lambda_recon))
    if lambda_adv != 0.0:
        g_total = ad.add(g_total, ad.mul(term("l_adv"), lambda_adv))
    d_total = term("l_wd")
    if lambda_gp != 0.0:
        d_total = ad.add(d_total, ad.mul(term("l_gp"), lambda_gp))
    bd = LossBreakdown(
        l_dur=_val(parts.get("l_dur", 0.0)),
        l_recon=_val(parts.get("l_recon", 0.0)),
        l_adv=_val(parts.get("l_adv", 0.0)),
        l_wd=_val(parts.get("l_wd", 0.0)),
        l_gp=_val(parts.get("l_gp", 0.0)),
        l_g_total=_val(g_total),
        l_d_total=_val(d_total),
        lambda_recon=lambda_recon,
        lambda_adv=lambda_adv,
        lambda_gp=lambda_gp,
    )
    return g_total, d_total, bd


def gp_gradcheck(seed: int = 0, batch: int = 3, n_in: int = 5, hidden: int = 4) -> float:
    """Finite-difference check of the penalty's gradient w.r.t. critic weights.

    The critic is a 2-layer perceptron D(x) = v . tanh(x W + b) + c, so the
    analytic gradient needs a second differentiation through the input
    gradient. Returns the worst relative error over (W, b, v).
    """
    from .autodiff.gradcheck import gradcheck

    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, n_in))

    def penalty(w, b, v):
        def critic(xt):
            h = ad.tanh(ad.add(ad.matmul(xt, w), b))
            return ad.add(ad.reshape(ad.matmul(h, ad.reshape(v, (-1, 1))), (-1,)), 0.3)

        return gradient_penalty(critic, Tensor(x, requires_grad=True))

    return gradcheck(penalty, [rng.standard_normal((n_in, hidden)), rng.standard_normal(hidden),
                               rng.standard_normal(hidden)], seed=seed)
