"""FFN ensemble risk head: member networks, attention gating, losses.

Each member maps the aggregated representation (N, q) through two hidden
layers to a two-class softmax (survive, die).  An attention layer over the
same input produces per-patient weights beta (N, L) that gate the members'
per-patient cross-entropies:

    total = (1/P) sum_p sum_i beta_pi * loss_pi

A scalar-gating mode averages beta over patients before gating, recovering
the reading where each member has one global weight.  Prediction is the
beta-weighted convex combination of member probability rows by default, with
an unweighted-mean option.

Inverted dropout applies to the two hidden activations of each member in
training; masks are passed in explicitly so the forward stays a pure
function (required by the finite-difference checks).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, ShapeError
from .numeric import Array, Rng, activation, activation_grad, dropout_mask, glorot_init, softmax

PROB_CLAMP = 1e-12

LOSS_GATINGS = ("per_patient", "scalar")
PREDICT_MODES = ("beta", "mean")


@dataclass
class FfnParams:
    """One member: input q -> hidden1 -> hidden2 -> 2 logits."""

    w1: Array
    b1: Array
    w2: Array
    b2: Array
    wy: Array
    by: Array

    def arrays(self) -> dict[str, Array]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class EnsembleParams:
    """L member networks plus the attention map q -> L."""

    members: list[FfnParams]
    w_beta: Array
    b_beta: Array

    @property
    def n_members(self) -> int:
        return len(self.members)


def init_ffn_params(input_width: int, hidden: tuple[int, int], rng: Rng) -> FfnParams:
    """Glorot hidden layers, zero biases, zero output layer.

    The zero output layer makes every initial probability pair (0.5, 0.5),
    so the first training loss is exactly ln 2 per patient.
    """
    h1, h2 = hidden
    s1, s2 = rng.split(2)
    return FfnParams(
        w1=glorot_init(input_width, h1, s1),
        b1=np.zeros(h1),
        w2=glorot_init(h1, h2, s2),
        b2=np.zeros(h2),
        wy=np.zeros((h2, 2)),
        by=np.zeros(2),
    )


def init_ensemble_params(input_width: int, hidden: tuple[int, int], n_members: int,
                         rng: Rng) -> EnsembleParams:
    if n_members < 1:
        raise ConfigError(f"ensemble needs at least one member, got {n_members}")
    streams = rng.split(n_members + 1)
    members = [init_ffn_params(input_width, hidden, streams[i]) for i in range(n_members)]
    return EnsembleParams(
        members=members,
        w_beta=glorot_init(input_width, n_members, streams[-1]),
        b_beta=np.zeros(n_members),
    )


def zero_ensemble_grads(ens: EnsembleParams) -> EnsembleParams:
    return EnsembleParams(
        members=[FfnParams(**{k: np.zeros_like(v) for k, v in m.arrays().items()})
                 for m in ens.members],
        w_beta=np.zeros_like(ens.w_beta),
        b_beta=np.zeros_like(ens.b_beta),
    )


def make_dropout_masks(n_rows: int, ens: EnsembleParams, rate: float, rng: Rng):
    """One inverted-dropout mask per hidden layer per member."""
    streams = rng.split(ens.n_members)
    masks = []
    for member, stream in zip(ens.members, streams):
        s1, s2 = stream.split(2)
        masks.append((
            dropout_mask((n_rows, member.w1.shape[1]), rate, s1),
            dropout_mask((n_rows, member.w2.shape[1]), rate, s2),
        ))
    return masks


# ---------------------------------------------------------------- forward


def _member_forward(x: Array, m: FfnParams, kind: str, mask_pair):
    pre1 = x @ m.w1 + m.b1
    h1 = activation(pre1, kind)
    h1d = h1 * mask_pair[0] if mask_pair is not None else h1
    pre2 = h1d @ m.w2 + m.b2
    h2 = activation(pre2, kind)
    h2d = h2 * mask_pair[1] if mask_pair is not None else h2
    logits = h2d @ m.wy + m.by
    probs = softmax(logits, axis=1)
    return probs, (x, pre1, h1d, pre2, h2d, probs, mask_pair)


def ffn_forward(x: Array, member: FfnParams, kind: str = "relu", mask_pair=None) -> Array:
    """Probability pairs (N, 2); rows sum to 1."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != member.w1.shape[0]:
        raise ShapeError(f"ffn input {x.shape}, expected (N, {member.w1.shape[0]})")
    probs, _ = _member_forward(x, member, kind, mask_pair)
    return probs


def attention_weights(x: Array, ens: EnsembleParams) -> Array:
    """Per-patient softmax over member logits, shape (N, L)."""
    x = np.asarray(x, dtype=np.float64)
    return softmax(x @ ens.w_beta + ens.b_beta, axis=1)


def head_forward(x: Array, ens: EnsembleParams, kind: str = "relu", masks=None):
    """All member probabilities plus attention weights; returns cache too."""
    x = np.asarray(x, dtype=np.float64)
    member_probs = []
    member_caches = []
    for i, m in enumerate(ens.members):
        probs, cache = _member_forward(x, m, kind, masks[i] if masks is not None else None)
        member_probs.append(probs)
        member_caches.append(cache)
    beta = attention_weights(x, ens)
    return member_probs, beta, (x, member_caches, beta, kind)


# ------------------------------------------------------------------ losses


def _check_labels(labels: Array) -> Array:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ShapeError(f"labels must be a vector, got shape {labels.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        raise ConfigError("labels must be 0 or 1")
    return labels.astype(np.float64)


def per_patient_losses(probs: Array, labels: Array) -> Array:
    """Cross-entropy of the death-probability column, clamped, per patient."""
    y = _check_labels(labels)
    p1 = np.clip(probs[:, 1], PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(y * np.log(p1) + (1.0 - y) * np.log(1.0 - p1))


def member_loss(probs: Array, labels: Array) -> float:
    """Mean cross-entropy of one member over the batch."""
    return float(per_patient_losses(probs, labels).mean())


def total_loss(member_probs: list[Array], beta: Array, labels: Array,
               gating: str = "per_patient") -> float:
    """Attention-gated ensemble loss.

    per_patient: (1/P) sum_p sum_i beta_pi * loss_pi.  scalar: average beta
    over patients first, then gate the member means; identical when beta is
    constant across patients.
    """
    if gating not in LOSS_GATINGS:
        raise ConfigError(f"loss gating must be one of {LOSS_GATINGS}, got {gating!r}")
    losses = np.stack([per_patient_losses(p, labels) for p in member_probs], axis=1)
    if beta.shape != losses.shape:
        raise ShapeError(f"beta shape {beta.shape}, expected {losses.shape}")
    if gating == "per_patient":
        return float((beta * losses).sum(axis=1).mean())
    beta_bar = beta.mean(axis=0)
    return float((beta_bar * losses.mean(axis=0)).sum())


def ensemble_predict(member_probs: list[Array], beta: Array, mode: str = "beta") -> Array:
    """Combine member probability rows into one (N, 2) prediction."""
    if mode not in PREDICT_MODES:
        raise ConfigError(f"predict mode must be one of {PREDICT_MODES}, got {mode!r}")
    stacked = np.stack(member_probs, axis=1)  # (N, L, 2)
    if mode == "mean":
        return stacked.mean(axis=1)
    if beta.shape != stacked.shape[:2]:
        raise ShapeError(f"beta shape {beta.shape}, expected {stacked.shape[:2]}")
    return (beta[:, :, None] * stacked).sum(axis=1)


# ----------------------------------------------------------------- backward


def _member_backward(d_logits: Array, cache, m: FfnParams, kind: str, grads: FfnParams):
    x, pre1, h1d, pre2, h2d, probs, mask_pair = cache
    grads.wy += h2d.T @ d_logits
    grads.by += d_logits.sum(axis=0)
    d_h2d = d_logits @ m.wy.T
    d_h2 = d_h2d * mask_pair[1] if mask_pair is not None else d_h2d
    d_pre2 = d_h2 * activation_grad(pre2, kind)
    grads.w2 += h1d.T @ d_pre2
    grads.b2 += d_pre2.sum(axis=0)
    d_h1d = d_pre2 @ m.w2.T
    d_h1 = d_h1d * mask_pair[0] if mask_pair is not None else d_h1d
    d_pre1 = d_h1 * activation_grad(pre1, kind)
    grads.w1 += x.T @ d_pre1
    grads.b1 += d_pre1.sum(axis=0)
    return d_pre1 @ m.w1.T


def _loss_prob_grad(probs: Array, labels: Array, d_loss_per_patient: Array) -> Array:
    """Gradient through clamp, cross-entropy, and the two-class softmax.

    Returns d_logits (N, 2).  With p1 the death probability,
    dp1/dlogit1 = p1 (1 - p1) and dlogit0 = -dlogit1.
    """
    y = labels.astype(np.float64)
    p1 = probs[:, 1]
    inside = (p1 > PROB_CLAMP) & (p1 < 1.0 - PROB_CLAMP)
    p1c = np.clip(p1, PROB_CLAMP, 1.0 - PROB_CLAMP)
    d_p1 = d_loss_per_patient * np.where(inside, -(y / p1c - (1.0 - y) / (1.0 - p1c)), 0.0)
    d_logit1 = d_p1 * p1 * (1.0 - p1)
    return np.stack([-d_logit1, d_logit1], axis=1)


def head_backward(cache, labels: Array, ens: EnsembleParams, gating: str = "per_patient"):
    """Gradients of total_loss; returns (d_x, EnsembleParams of gradients).

    The gating splits the loss gradient two ways: into each member's
    per-patient cross-entropy (scaled by its beta) and into beta itself
    (scaled by the per-patient losses), the latter flowing through the
    attention softmax row-wise:

        d_logit_pj = beta_pj * (d_beta_pj - sum_k d_beta_pk beta_pk)
    """
    x, member_caches, beta, kind = cache
    labels_f = _check_labels(labels)
    n, n_members = beta.shape
    member_probs = [c[5] for c in member_caches]
    losses = np.stack([per_patient_losses(p, labels) for p in member_probs], axis=1)

    if gating == "per_patient":
        d_losses = beta / n
        d_beta = losses / n
    elif gating == "scalar":
        beta_bar = beta.mean(axis=0)
        d_losses = np.broadcast_to(beta_bar / n, (n, n_members))
        d_beta = np.broadcast_to(losses.mean(axis=0) / n, (n, n_members))
    else:
        raise ConfigError(f"loss gating must be one of {LOSS_GATINGS}, got {gating!r}")

    grads = zero_ensemble_grads(ens)
    d_x = np.zeros_like(x)
    for i, (m, m_cache, m_grads) in enumerate(zip(ens.members, member_caches, grads.members)):
        d_logits = _loss_prob_grad(member_probs[i], labels_f, d_losses[:, i])
        d_x += _member_backward(d_logits, m_cache, m, kind, m_grads)

    inner = (d_beta * beta).sum(axis=1, keepdims=True)
    d_attn_logits = beta * (d_beta - inner)
    grads.w_beta += x.T @ d_attn_logits
    grads.b_beta += d_attn_logits.sum(axis=0)
    d_x += d_attn_logits @ ens.w_beta.T
    return d_x, grads
