"""Training objectives: VAE terms, classification, distillation, and the
path-integral weight-importance regularizer.

Every loss returns a scalar Tensor built from tape ops, so gradients flow to
whatever inputs require them. Reductions are means over the batch; the mse
and bernoulli reconstruction terms sum over feature dimensions per sample
first, which keeps their scale comparable across input widths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DomainError, ShapeError
from .model import GaussianMixturePrior, LatentGaussian, reparameterize

_LOG2PI = float(np.log(2.0 * np.pi))
_CLIP = 1e-12  # keeps bernoulli logs finite when a sigmoid saturates


@dataclass
class LossBreakdown:
    """Mix-weighted components of one optimization step.

    ``total`` must equal the weighted sum of the other fields:
    w_rec*reconstruction + w_kl*kl + w_cls*classification +
    w_dist*distillation + si_penalty (the SI term carries its own strength).
    """

    reconstruction: float = 0.0
    kl: float = 0.0
    classification: float = 0.0
    distillation: float = 0.0
    si_penalty: float = 0.0
    total: float = 0.0

    def weighted_sum(self, w_rec: float, w_kl: float, w_cls: float,
                     w_dist: float) -> float:
        return (w_rec * self.reconstruction + w_kl * self.kl
                + w_cls * self.classification + w_dist * self.distillation
                + self.si_penalty)


def _batch_mean_of_row_sums(per_element: Tensor) -> Tensor:
    rows = ad.reduce_sum(per_element, axis=1, keepdims=True)
    return ad.mul(ad.reduce_sum(rows), 1.0 / per_element.shape[0])


def reconstruction_loss(prediction, target, kind: str = "mse") -> Tensor:
    """mse: mean over batch of per-sample summed squared error.
    bernoulli: mean over batch of per-sample negative log likelihood."""
    prediction = ad.as_tensor(prediction)
    target = ad.as_tensor(target)
    if prediction.shape != target.shape or prediction.data.ndim != 2:
        raise ShapeError(f"prediction {prediction.shape} and target "
                         f"{target.shape} must be matching 2-D arrays")
    if kind == "mse":
        diff = ad.sub(prediction, target)
        return _batch_mean_of_row_sums(ad.mul(diff, diff))
    if kind == "bernoulli":
        t = target.data
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise DomainError("bernoulli targets must lie in [0, 1]")
        p = ad.add(ad.mul(prediction, 1.0 - 2.0 * _CLIP), _CLIP)
        ll = ad.add(ad.mul(target, ad.log(p)),
                    ad.mul(ad.sub(1.0, target), ad.log(ad.sub(1.0, p))))
        return ad.mul(_batch_mean_of_row_sums(ll), -1.0)
    raise ContractError(f"unknown reconstruction kind {kind!r}")


def kl_standard_normal(latent: LatentGaussian) -> Tensor:
    """Closed-form KL(q || N(0, I)), mean over the batch."""
    mu, lv = latent.mu, latent.logvar
    inner = ad.sub(ad.add(ad.mul(mu, mu), ad.exp(lv)), ad.add(lv, 1.0))
    return ad.mul(_batch_mean_of_row_sums(inner), 0.5)


def _log_q_rows(z: Tensor, latent: LatentGaussian) -> Tensor:
    """log q(z|x) for a diagonal Gaussian posterior, [batch x 1]."""
    diff = ad.sub(z, latent.mu)
    quad = ad.mul(ad.mul(diff, diff), ad.exp(ad.mul(latent.logvar, -1.0)))
    inner = ad.add(quad, latent.logvar)
    rows = ad.mul(ad.reduce_sum(inner, axis=1, keepdims=True), -0.5)
    return ad.add(rows, -0.5 * latent.mu.shape[1] * _LOG2PI)


def kl_mc_from_z(z: Tensor, latent: LatentGaussian,
                 prior: GaussianMixturePrior) -> Tensor:
    """Single-draw estimate of KL(q || mixture) at an already-drawn z.

    This is the training-time form: the reparameterized z used for the
    reconstruction term doubles as the one Monte Carlo sample.
    """
    rows = ad.sub(_log_q_rows(z, latent), prior.log_mixture(z))
    return ad.mul(ad.reduce_sum(rows), 1.0 / z.shape[0])


def kl_mc_conditional(z: Tensor, latent: LatentGaussian,
                      prior: GaussianMixturePrior, class_ids) -> Tensor:
    """Single-draw estimate of KL(q || p(z|class)), each row scored under
    its own class's mode.

    Training uses this rather than the full-mixture form so that mode k
    actually models class k; sampling a class's mode then yields samples
    of that class rather than of whichever class the mode drifted to.
    """
    rows = ad.sub(_log_q_rows(z, latent), prior.log_conditional(z, class_ids))
    return ad.mul(ad.reduce_sum(rows), 1.0 / z.shape[0])


def kl_mc_gmm(latent: LatentGaussian, prior: GaussianMixturePrior,
              n_samples: int, rng: np.random.Generator) -> Tensor:
    """Monte Carlo estimate of E_q[log q(z|x) - log p(z)], p a uniform
    mixture over the prior's seen classes."""
    if n_samples < 1:
        raise ContractError(f"n_samples must be >= 1, got {n_samples}")
    if not prior.seen_classes:
        raise ContractError("prior has no seen classes; mark_seen first")
    total = None
    for _ in range(n_samples):
        noise = rng.standard_normal(latent.mu.shape)
        z = reparameterize(latent, noise)
        term = kl_mc_from_z(z, latent, prior)
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, 1.0 / n_samples)


def kl_mc_per_draw(latent: LatentGaussian, prior: GaussianMixturePrior,
                   n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Raw per-sample, per-draw KL integrand values, [batch x n_samples].

    Diagnostic twin of kl_mc_gmm for Monte Carlo error bars; plain numpy.
    """
    if not prior.seen_classes:
        raise ContractError("prior has no seen classes; mark_seen first")
    mu, lv = latent.mu.data, latent.logvar.data
    d = mu.shape[1]
    means = prior.means.data[prior.seen_classes]
    logvars = prior.logvars.data[prior.seen_classes]
    out = np.empty((mu.shape[0], n_samples))
    for s in range(n_samples):
        z = mu + np.exp(0.5 * lv) * rng.standard_normal(mu.shape)
        log_q = -0.5 * (((z - mu) ** 2 * np.exp(-lv) + lv).sum(axis=1) + d * _LOG2PI)
        comp = -0.5 * ((((z[:, None, :] - means[None]) ** 2) * np.exp(-logvars[None])
                        + logvars[None]).sum(axis=2) + d * _LOG2PI)
        m = comp.max(axis=1, keepdims=True)
        log_p = (m[:, 0] + np.log(np.exp(comp - m).sum(axis=1))
                 - np.log(len(prior.seen_classes)))
        out[:, s] = log_q - log_p
    return out


def classification_loss(logits, labels, active_classes) -> Tensor:
    """Cross-entropy with the softmax restricted to the active classes."""
    logits = ad.as_tensor(logits)
    active = [int(c) for c in active_classes]
    if len(active) < 1:
        raise ContractError("active_classes must be non-empty")
    position = {c: i for i, c in enumerate(active)}
    labels = np.asarray(labels, dtype=np.int64)
    bad = [int(l) for l in labels if int(l) not in position]
    if bad:
        raise ContractError(f"labels {sorted(set(bad))} outside active classes {active}")
    sel = ad.col_select(logits, active)
    lse = ad.logsumexp_rows(sel)
    picked = ad.take_per_row(sel, [position[int(l)] for l in labels])
    rows = ad.sub(lse, picked)
    return ad.mul(ad.reduce_sum(rows), 1.0 / logits.shape[0])


def distillation_loss(student_logits, teacher_probs, temperature: float) -> Tensor:
    """T^2-scaled cross-entropy against teacher soft targets.

    The student's logits are softened at the same temperature the teacher
    used; columns must already be restricted to the teacher's active set.
    """
    if not temperature > 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    student_logits = ad.as_tensor(student_logits)
    probs = np.asarray(teacher_probs, dtype=np.float64)
    if probs.shape != student_logits.shape:
        raise ShapeError(f"teacher probs {probs.shape} != student logits "
                         f"{student_logits.shape}")
    sums = probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        worst = int(np.argmax(np.abs(sums - 1.0)))
        raise ContractError(f"teacher probability row {worst} sums to {sums[worst]!r}")
    s = ad.mul(student_logits, 1.0 / temperature)
    log_p = ad.sub(s, ad.logsumexp_rows(s))
    ce_rows = ad.mul(ad.reduce_sum(ad.mul(Tensor(probs), log_p), axis=1,
                                   keepdims=True), -1.0)
    mean = ad.mul(ad.reduce_sum(ce_rows), 1.0 / student_logits.shape[0])
    return ad.mul(mean, temperature ** 2)


# ---------------------------------------------------------------------------
# Synaptic-Intelligence bookkeeping

@dataclass
class SIState:
    """Per-parameter path integral, anchors, and consolidated importance."""

    omega: dict[str, np.ndarray] = field(default_factory=dict)
    anchor: dict[str, np.ndarray] = field(default_factory=dict)
    importance: dict[str, np.ndarray] = field(default_factory=dict)
    xi: float = 0.1
    c: float = 1.0


def init_si_state(params: dict[str, Tensor], xi: float = 0.1,
                  c: float = 1.0) -> SIState:
    if xi <= 0:
        raise ContractError(f"damping xi must be positive, got {xi}")
    if c < 0:
        raise ContractError(f"strength c must be non-negative, got {c}")
    state = SIState(xi=float(xi), c=float(c))
    for name, p in params.items():
        state.omega[name] = np.zeros_like(p.data)
        state.anchor[name] = p.data.copy()
        state.importance[name] = np.zeros_like(p.data)
    return state


def si_accumulate(state: SIState, grads: dict[str, np.ndarray],
                  param_delta: dict[str, np.ndarray]) -> SIState:
    """omega_k += -g_k * delta_k for each parameter updated this step."""
    for name, g in grads.items():
        if name not in state.omega:
            raise ContractError(f"unknown parameter {name!r} in SI accumulation")
        if name not in param_delta:
            raise ContractError(f"gradient for {name!r} has no matching delta")
        if g.shape != state.omega[name].shape or param_delta[name].shape != g.shape:
            raise ContractError(f"SI shapes disagree for {name!r}")
        state.omega[name] = state.omega[name] + (-g) * param_delta[name]
    return state


def si_consolidate(state: SIState, current_params: dict[str, Tensor]) -> SIState:
    """Fold the path integral into importances at a task boundary.

    Negative integrals are clamped to zero so drift is never rewarded.
    """
    for name in state.omega:
        theta = current_params[name].data
        delta = theta - state.anchor[name]
        state.importance[name] = (state.importance[name]
                                  + np.maximum(state.omega[name], 0.0)
                                  / (delta ** 2 + state.xi))
        state.anchor[name] = theta.copy()
        state.omega[name] = np.zeros_like(theta)
    return state


def si_penalty(state: SIState, current_params: dict[str, Tensor]) -> Tensor:
    """c * sum_k importance_k * (theta_k - anchor_k)^2, differentiable in theta."""
    total = None
    for name in state.omega:
        p = current_params[name]
        diff = ad.sub(p, Tensor(state.anchor[name]))
        term = ad.reduce_sum(ad.mul(ad.mul(diff, diff), Tensor(state.importance[name])))
        total = term if total is None else ad.add(total, term)
    if total is None:
        return Tensor(0.0)
    return ad.mul(total, state.c)
