"""End-to-end mortality model: encoder, hypergraph stack, similarity, head.

Forward pipeline per batch of N patients:

    series (N, M, T) --GRU--> h (N, d) --fuse icd--> x (N, d+g)
    x --residual hypergraph stack--> z (N, d+g)
    z --similarity + threshold--> adjacency (N, N)
    z --GCN aggregation--> x_star (N, q)
    x_star --FFN ensemble + attention--> member probs, beta, loss

Training mode uses the sigmoid-relaxed threshold and dropout masks;
evaluation mode uses the strict hard threshold and no dropout.  The backward
pass chains the hand-derived gradients of each stage.  Two ablation knobs
exist for controlled comparisons: hconv_layers=0 removes the hypergraph
stack, use_similarity=False forces an empty adjacency so aggregation sees
self-loops only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import encoder, head, hypergraph, simgraph
from .encoder import GruParams
from .errors import ConfigError, ShapeError
from .head import EnsembleParams
from .numeric import Array, Rng, glorot_init

SIMILARITY_MODES = ("scaled_dot", "cosine")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture widths and mode flags; defaults are the trained sizes."""

    n_variables: int = 16
    window_hours: int = 48
    n_codes: int = 20
    hidden_size: int = 59
    hconv_layers: int = 3
    phi_width: int = 37
    ffn_hidden: tuple[int, int] = (27, 17)
    n_members: int = 4
    zeta_init: float = 0.4
    temperature: float = 50.0
    dropout: float = 0.2
    activation: str = "relu"
    similarity_mode: str = "scaled_dot"
    loss_gating: str = "per_patient"
    predict_mode: str = "beta"
    use_similarity: bool = True

    def __post_init__(self):
        for name in ("n_variables", "window_hours", "hidden_size", "phi_width", "n_members"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_codes < 0:
            raise ConfigError(f"n_codes must be >= 0, got {self.n_codes}")
        if self.hconv_layers < 0:
            raise ConfigError(f"hconv_layers must be >= 0, got {self.hconv_layers}")
        if len(self.ffn_hidden) != 2 or any(w < 1 for w in self.ffn_hidden):
            raise ConfigError(f"ffn_hidden must be two positive widths, got {self.ffn_hidden}")
        if self.temperature <= 0.0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.similarity_mode not in SIMILARITY_MODES:
            raise ConfigError(f"similarity_mode must be one of {SIMILARITY_MODES}, "
                              f"got {self.similarity_mode!r}")
        if self.loss_gating not in head.LOSS_GATINGS:
            raise ConfigError(f"loss_gating must be one of {head.LOSS_GATINGS}, "
                              f"got {self.loss_gating!r}")
        if self.predict_mode not in head.PREDICT_MODES:
            raise ConfigError(f"predict_mode must be one of {head.PREDICT_MODES}, "
                              f"got {self.predict_mode!r}")
        if self.activation not in ("relu", "sigmoid", "tanh"):
            raise ConfigError(f"activation must be relu, sigmoid, or tanh, "
                              f"got {self.activation!r}")

    @property
    def fused_width(self) -> int:
        return self.hidden_size + self.n_codes


@dataclass
class ModelParams:
    """Every trainable array; also reused as the gradient container."""

    gru: GruParams
    thetas: list[Array]
    zeta: Array  # shape () scalar
    phi: Array
    ensemble: EnsembleParams

    def named_arrays(self) -> dict[str, Array]:
        """Flat name -> array view in a fixed, documented order."""
        out: dict[str, Array] = {}
        for name, arr in self.gru.arrays().items():
            out[f"gru.{name}"] = arr
        for i, theta in enumerate(self.thetas):
            out[f"theta.{i}"] = theta
        out["zeta"] = self.zeta
        out["phi"] = self.phi
        for i, m in enumerate(self.ensemble.members):
            for name, arr in m.arrays().items():
                out[f"ffn{i}.{name}"] = arr
        out["attn.w_beta"] = self.ensemble.w_beta
        out["attn.b_beta"] = self.ensemble.b_beta
        return out


@dataclass
class Batch:
    """One mini-batch: imputed series (N, M, T), codes (N, g), labels (N,)."""

    series: Array
    icd: Array
    labels: Array

    def __post_init__(self):
        if self.series.shape[0] != self.icd.shape[0] or self.series.shape[0] != self.labels.shape[0]:
            raise ShapeError(
                f"batch pieces disagree: series {self.series.shape}, icd {self.icd.shape}, "
                f"labels {self.labels.shape}")

    def __len__(self) -> int:
        return self.series.shape[0]


def init_params(config: ModelConfig, rng: Rng) -> ModelParams:
    """Glorot weights and zero biases; FFN output layers start at zero."""
    gru_rng, theta_rng, phi_rng, head_rng = rng.split(4)
    width = config.fused_width
    theta_streams = theta_rng.split(config.hconv_layers) if config.hconv_layers else []
    return ModelParams(
        gru=encoder.init_gru_params(config.n_variables, config.hidden_size, gru_rng),
        thetas=[glorot_init(width, width, s) for s in theta_streams],
        zeta=np.array(config.zeta_init),
        phi=glorot_init(width, config.phi_width, phi_rng),
        ensemble=head.init_ensemble_params(config.phi_width, config.ffn_hidden,
                                           config.n_members, head_rng),
    )


def zero_grads(params: ModelParams) -> ModelParams:
    return ModelParams(
        gru=encoder.zero_gru_grads(params.gru),
        thetas=[np.zeros_like(t) for t in params.thetas],
        zeta=np.zeros(()),
        phi=np.zeros_like(params.phi),
        ensemble=head.zero_ensemble_grads(params.ensemble),
    )


def make_dropout_masks(config: ModelConfig, params: ModelParams, n_rows: int, rng: Rng):
    if config.dropout == 0.0:
        return None
    return head.make_dropout_masks(n_rows, params.ensemble, config.dropout, rng)


# ---------------------------------------------------------------- forward


def _forward(params: ModelParams, batch: Batch, config: ModelConfig, mode: str, masks):
    kind = config.activation
    h, gru_cache = encoder.encode_batch(batch.series, params.gru)
    fused = encoder.fuse_batch(h, batch.icd)

    if params.thetas:
        hg = hypergraph.build_hypergraph(batch.icd)
        z, hconv_cache = hypergraph.hconv_stack(fused, hg, params.thetas, kind)
    else:
        z, hconv_cache = fused, None

    n = z.shape[0]
    sim_cache = None
    a_prime = np.zeros((n, n))
    if config.use_similarity:
        if config.similarity_mode == "cosine":
            a, sim_cache = simgraph.cosine_similarity(z)
        else:
            a = simgraph.similarity(z)
        a_prime = simgraph.threshold(a, float(params.zeta), config.temperature, mode)

    x_star, gcn_cache = simgraph.gcn_aggregate(z, a_prime, params.phi, kind)
    member_probs, beta, head_cache = head.head_forward(x_star, params.ensemble, kind, masks)
    stages = {"gru": h, "hconv": z, "aggregated": x_star}
    cache = (gru_cache, hconv_cache, z, sim_cache, a_prime, gcn_cache, head_cache)
    return member_probs, beta, stages, cache


def forward_train(params: ModelParams, batch: Batch, config: ModelConfig, masks=None):
    """Training-mode forward; returns (loss, cache for backward)."""
    if config.dropout > 0.0 and masks is None:
        raise ConfigError("training forward with dropout > 0 requires masks")
    member_probs, beta, _, cache = _forward(params, batch, config, "train", masks)
    loss = head.total_loss(member_probs, beta, batch.labels, config.loss_gating)
    return loss, cache


def backward(params: ModelParams, batch: Batch, config: ModelConfig, cache) -> ModelParams:
    """Gradient of forward_train's loss for every trainable array."""
    gru_cache, hconv_cache, z, sim_cache, a_prime, gcn_cache, head_cache = cache
    kind = config.activation

    d_xstar, ens_grads = head.head_backward(head_cache, batch.labels, params.ensemble,
                                            config.loss_gating)
    d_z, d_a_tilde, d_phi = simgraph.gcn_aggregate_backward(d_xstar, gcn_cache, params.phi)

    d_zeta = 0.0
    if config.use_similarity:
        d_a, d_zeta = simgraph.threshold_backward(d_a_tilde, a_prime, config.temperature)
        if config.similarity_mode == "cosine":
            d_z = d_z + simgraph.cosine_similarity_backward(d_a, sim_cache)
        else:
            d_z = d_z + simgraph.similarity_backward(d_a, z)

    if params.thetas:
        d_fused, d_thetas = hypergraph.hconv_stack_backward(d_z, hconv_cache, params.thetas, kind)
    else:
        d_fused, d_thetas = d_z, []

    d_h = d_fused[:, :config.hidden_size]
    gru_grads, _ = encoder.encode_batch_backward(d_h, gru_cache, params.gru)
    return ModelParams(
        gru=gru_grads,
        thetas=d_thetas,
        zeta=np.array(d_zeta),
        phi=d_phi,
        ensemble=ens_grads,
    )


@dataclass
class EvalOutput:
    """Evaluation-mode predictions plus exported intermediate stages."""

    probs: Array            # (N, 2) combined prediction
    scores: Array           # (N,) death probability
    member_probs: list[Array]
    beta: Array
    stages: dict[str, Array] = field(repr=False, default=None)


def forward_eval(params: ModelParams, batch: Batch, config: ModelConfig) -> EvalOutput:
    """Hard-threshold adjacency, no dropout; returns combined predictions."""
    member_probs, beta, stages, _ = _forward(params, batch, config, "eval", None)
    probs = head.ensemble_predict(member_probs, beta, config.predict_mode)
    return EvalOutput(probs=probs, scores=probs[:, 1], member_probs=member_probs,
                      beta=beta, stages=stages)
