"""The replay network: one VAE that is also the classifier.

A frozen "perceptual" block (pretrained as a plain autoencoder, then never
updated again) feeds a trainable fully connected encoder stack. From the top
of that stack hang three heads: latent mean, latent log-variance, and class
logits. The decoder mirrors the encoder widths in reverse and can stop early
at any encoder level, which is what hidden-level replay uses. A per-class
Gaussian-mixture prior supports class-conditional latent sampling, and
per-task random binary gates can modulate the decoder's hidden layers.

Encoder levels are indexed 0..P+F, where 0 is the input, P is the number of
perceptual layers, and F the number of fc layers. ``decode(z, stop_level=L)``
returns an array shaped like the encoder activation at level L.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (ConfigError, ContractError, DataError, ReplayContractError,
                     ShapeError)
from .optim import init_optimizer, optimizer_step, zero_grads


@dataclass
class NetworkConfig:
    """Architecture knobs shared by the model, trainer, and checkpoints.

    ``internal_replay_level`` indexes the full encoder stack (0 = input);
    ``None`` resolves to the output of the perceptual block. The default
    ``embedding_layer`` is the last fc layer, the encoder layer right below
    the latent and class heads.
    """

    input_dim: int
    perceptual_dims: list[int] = field(default_factory=lambda: [256])
    fc_dims: list[int] = field(default_factory=lambda: [256, 256])
    latent_dim: int = 32
    num_classes: int = 10
    num_tasks: int = 5
    internal_replay_level: int | None = None
    gate_fraction: float = 0.8
    embedding_layer: int | None = None
    reconstruction: str = "mse"
    perceptual_activation: str = "relu"

    def __post_init__(self):
        for name in ("input_dim", "latent_dim", "num_classes", "num_tasks"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be a positive int, got {getattr(self, name)!r}")
        for name in ("perceptual_dims", "fc_dims"):
            dims = getattr(self, name)
            if not dims or any((not isinstance(d, int)) or d <= 0 for d in dims):
                raise ConfigError(f"{name} must be a non-empty list of positive ints")
        if self.internal_replay_level is None:
            self.internal_replay_level = len(self.perceptual_dims)
        if not 0 <= self.internal_replay_level < self.num_encoder_layers:
            raise ConfigError(
                f"internal_replay_level {self.internal_replay_level} outside "
                f"[0, {self.num_encoder_layers})")
        if self.embedding_layer is None:
            self.embedding_layer = len(self.fc_dims) - 1
        if not 0 <= self.embedding_layer < len(self.fc_dims):
            raise ConfigError(f"embedding_layer {self.embedding_layer} outside "
                              f"[0, {len(self.fc_dims)})")
        if not 0.0 <= self.gate_fraction <= 1.0:
            raise ConfigError(f"gate_fraction must lie in [0,1], got {self.gate_fraction}")
        if self.reconstruction not in ("mse", "bernoulli"):
            raise ConfigError(f"reconstruction must be 'mse' or 'bernoulli', "
                              f"got {self.reconstruction!r}")
        if self.perceptual_activation not in ("relu", "linear"):
            raise ConfigError(f"perceptual_activation must be 'relu' or 'linear', "
                              f"got {self.perceptual_activation!r}")

    @property
    def num_encoder_layers(self) -> int:
        return len(self.perceptual_dims) + len(self.fc_dims)

    @property
    def level_widths(self) -> list[int]:
        """Width of the encoder activation at each level 0..P+F."""
        return [self.input_dim] + list(self.perceptual_dims) + list(self.fc_dims)

    @property
    def gated_layer_widths(self) -> list[int]:
        """Widths of the decoder layers that receive context gates."""
        return list(reversed(self.fc_dims))


@dataclass
class LatentGaussian:
    """Diagonal-Gaussian posterior parameters for one batch."""

    mu: Tensor
    logvar: Tensor

    def __post_init__(self):
        if self.mu.shape != self.logvar.shape:
            raise ShapeError(f"mu shape {self.mu.shape} != logvar shape {self.logvar.shape}")
        if not np.all(np.isfinite(self.logvar.data)):
            raise ContractError("logvar contains non-finite values")


class GaussianMixturePrior:
    """Latent prior: one Gaussian mode per class, mixed uniformly over the
    classes seen so far. The degenerate form collapses every mode onto the
    standard normal and is never trained."""

    def __init__(self, means: Tensor, logvars: Tensor, trainable: bool,
                 seen_classes: list[int] | None = None):
        if means.shape != logvars.shape or means.data.ndim != 2:
            raise ShapeError(f"prior means {means.shape} / logvars {logvars.shape} "
                             "must be matching 2-D arrays")
        self.means = means
        self.logvars = logvars
        self.trainable = bool(trainable)
        self.seen_classes: list[int] = list(seen_classes or [])

    @classmethod
    def per_class(cls, num_classes: int, latent_dim: int, rng: np.random.Generator,
                  init_scale: float = 0.5) -> "GaussianMixturePrior":
        """Trainable prior with randomly offset modes.

        Identical modes are a fixed point of the mixture-KL gradient (every
        mode sees the same responsibility), so the means must start apart
        for the modes to ever specialize.
        """
        means = rng.normal(0.0, init_scale, size=(num_classes, latent_dim))
        return cls(Tensor(means, requires_grad=True),
                   Tensor(np.zeros((num_classes, latent_dim)), requires_grad=True),
                   trainable=True)

    @classmethod
    def standard(cls, num_classes: int, latent_dim: int) -> "GaussianMixturePrior":
        z = np.zeros((num_classes, latent_dim))
        return cls(Tensor(z), Tensor(z.copy()), trainable=False)

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.means.shape[1]

    def mark_seen(self, class_ids) -> None:
        for c in class_ids:
            c = int(c)
            if not 0 <= c < self.num_classes:
                raise ContractError(f"class id {c} outside [0, {self.num_classes})")
            if c not in self.seen_classes:
                self.seen_classes.append(c)

    def log_mixture(self, z: Tensor) -> Tensor:
        """log p(z) under the uniform mixture over seen classes, [batch x 1].

        Differentiable in both z and (when trainable) the mode parameters.
        """
        if not self.seen_classes:
            raise ContractError("prior has no seen classes; mark_seen first")
        cols = []
        log2pi = float(np.log(2.0 * np.pi))
        d = self.latent_dim
        for c in self.seen_classes:
            m = ad.row_select(self.means, [c])        # [1 x D], broadcasts
            lv = ad.row_select(self.logvars, [c])
            diff = ad.sub(z, m)
            quad = ad.mul(ad.mul(diff, diff), ad.exp(ad.mul(lv, -1.0)))
            inner = ad.add(quad, lv)
            col = ad.mul(ad.reduce_sum(inner, axis=1, keepdims=True), -0.5)
            cols.append(ad.add(col, -0.5 * d * log2pi))
        stacked = ad.concat_cols(cols)
        return ad.add(ad.logsumexp_rows(stacked), -float(np.log(len(self.seen_classes))))

    def log_conditional(self, z: Tensor, class_ids) -> Tensor:
        """log p(z | class) with each row scored under its own class's mode,
        [batch x 1]. This is what ties mode k to class k during training:
        the uniform mixture alone would let any mode capture any class.
        """
        ids = np.asarray(class_ids, dtype=np.intp)
        if ids.shape != (z.shape[0],):
            raise ShapeError(f"need one class id per row, got {ids.shape} "
                             f"for {z.shape}")
        unseen = [int(c) for c in np.unique(ids) if int(c) not in self.seen_classes]
        if unseen:
            raise ContractError(f"classes {unseen} not marked seen in the prior")
        m = ad.row_select(self.means, ids)
        lv = ad.row_select(self.logvars, ids)
        diff = ad.sub(z, m)
        quad = ad.mul(ad.mul(diff, diff), ad.exp(ad.mul(lv, -1.0)))
        inner = ad.add(quad, lv)
        rows = ad.mul(ad.reduce_sum(inner, axis=1, keepdims=True), -0.5)
        return ad.add(rows, -0.5 * self.latent_dim * float(np.log(2.0 * np.pi)))

    def parameters(self) -> dict[str, Tensor]:
        if not self.trainable:
            return {}
        return {"prior.means": self.means, "prior.logvars": self.logvars}

    def copy(self) -> "GaussianMixturePrior":
        p = GaussianMixturePrior(Tensor(self.means.data.copy()),
                                 Tensor(self.logvars.data.copy()),
                                 trainable=False,
                                 seen_classes=list(self.seen_classes))
        p.trainable = self.trainable
        if self.trainable:
            p.means.requires_grad = True
            p.logvars.requires_grad = True
        return p


def sample_conditional(prior: GaussianMixturePrior, class_id: int, n: int,
                       rng: np.random.Generator) -> np.ndarray:
    """n latent draws from the requested class's mode."""
    class_id = int(class_id)
    if class_id not in prior.seen_classes:
        raise ReplayContractError(f"class {class_id} has not been seen; "
                                  f"seen = {sorted(prior.seen_classes)}")
    mean = prior.means.data[class_id]
    std = np.exp(0.5 * prior.logvars.data[class_id])
    return mean + std * rng.standard_normal((n, prior.latent_dim))


@dataclass
class ContextGateSet:
    """Per-task binary masks for the decoder's gated hidden layers.

    ``masks`` concatenates one segment per gated layer; ``layer_mask`` slices
    the segment for one (task, layer) pair.
    """

    masks: np.ndarray
    layer_widths: list[int]
    gate_fraction: float
    seed: int

    def layer_mask(self, task_id: int, layer: int) -> np.ndarray:
        if not 0 <= layer < len(self.layer_widths):
            raise ContractError(f"gate layer {layer} outside [0, {len(self.layer_widths)})")
        if not 0 <= task_id < self.masks.shape[0]:
            raise ContractError(f"task id {task_id} outside [0, {self.masks.shape[0]})")
        start = sum(self.layer_widths[:layer])
        return self.masks[task_id, start:start + self.layer_widths[layer]]

    def layer_masks(self, task_ids: np.ndarray, layer: int) -> np.ndarray:
        """One mask row per entry of task_ids, [len(task_ids) x width]."""
        start = sum(self.layer_widths[:layer])
        seg = self.masks[:, start:start + self.layer_widths[layer]]
        return seg[np.asarray(task_ids, dtype=np.intp)]


def make_context_gates(num_tasks: int, layer_widths: list[int],
                       gate_fraction: float, seed: int) -> ContextGateSet:
    """Deterministic masks: a pure function of (seed, task, layer)."""
    if not 0.0 <= gate_fraction <= 1.0:
        raise ConfigError(f"gate_fraction must lie in [0,1], got {gate_fraction}")
    if seed < 0:
        raise ConfigError("gate seed must be non-negative")
    rows = []
    for task in range(num_tasks):
        segs = []
        for layer, width in enumerate(layer_widths):
            n_zero = int(np.rint(gate_fraction * width))
            rng = np.random.default_rng(np.random.SeedSequence([seed, task, layer]))
            mask = np.ones(width)
            mask[rng.permutation(width)[:n_zero]] = 0.0
            segs.append(mask)
        rows.append(np.concatenate(segs) if segs else np.zeros(0))
    masks = np.stack(rows) if rows else np.zeros((0, sum(layer_widths)))
    return ContextGateSet(masks=masks, layer_widths=list(layer_widths),
                          gate_fraction=gate_fraction, seed=seed)


def _he_init(rng: np.random.Generator, fan_in: int, fan_out: int,
             linear: bool = False) -> np.ndarray:
    scale = np.sqrt(1.0 / fan_in) if linear else np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, scale, size=(fan_in, fan_out))


class ReplayModel:
    """Parameter container plus the wiring described in the module docstring."""

    def __init__(self, config: NetworkConfig, params: dict[str, Tensor],
                 prior: GaussianMixturePrior, gates: ContextGateSet):
        self.config = config
        self.params = params
        self.prior = prior
        self.gates = gates

    # -- parameter views ---------------------------------------------------

    def perceptual_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith("perceptual.")}

    def trainable_params(self) -> dict[str, Tensor]:
        out = {k: v for k, v in self.params.items() if v.requires_grad}
        out.update(self.prior.parameters())
        return out

    def all_params(self) -> dict[str, Tensor]:
        out = dict(self.params)
        out.update({"prior.means": self.prior.means, "prior.logvars": self.prior.logvars})
        return out

    def freeze_perceptual(self) -> None:
        for p in self.perceptual_params().values():
            p.requires_grad = False

    def snapshot(self) -> "ReplayModel":
        """Deep, gradient-free copy for use as a fixed teacher/generator."""
        params = {k: Tensor(v.data.copy()) for k, v in self.params.items()}
        prior = self.prior.copy()
        prior.means.requires_grad = False
        prior.logvars.requires_grad = False
        prior.trainable = self.prior.trainable
        gates = ContextGateSet(self.gates.masks.copy(), list(self.gates.layer_widths),
                               self.gates.gate_fraction, self.gates.seed)
        return ReplayModel(copy.deepcopy(self.config), params, prior, gates)

    # -- forward pieces ----------------------------------------------------

    def _affine(self, x: Tensor, name: str) -> Tensor:
        return ad.add(ad.matmul(x, self.params[f"{name}.weight"]),
                      self.params[f"{name}.bias"])

    def _perceptual_act(self, x: Tensor) -> Tensor:
        return x if self.config.perceptual_activation == "linear" else ad.relu(x)


def build_model(config: NetworkConfig, rng: np.random.Generator, gate_seed: int,
                prior: GaussianMixturePrior | None = None) -> ReplayModel:
    """Fresh model with seeded weights; the perceptual block starts frozen."""
    P = len(config.perceptual_dims)
    F = len(config.fc_dims)
    params: dict[str, Tensor] = {}
    linear_block = config.perceptual_activation == "linear"

    widths = [config.input_dim] + list(config.perceptual_dims)
    for i in range(P):
        params[f"perceptual.{i}.weight"] = Tensor(
            _he_init(rng, widths[i], widths[i + 1], linear=linear_block))
        params[f"perceptual.{i}.bias"] = Tensor(np.zeros(widths[i + 1]))

    widths = [config.perceptual_dims[-1]] + list(config.fc_dims)
    for j in range(F):
        params[f"fc.{j}.weight"] = Tensor(_he_init(rng, widths[j], widths[j + 1]),
                                          requires_grad=True)
        params[f"fc.{j}.bias"] = Tensor(np.zeros(widths[j + 1]), requires_grad=True)

    top = config.fc_dims[-1]
    for head, width in (("latent_mu", config.latent_dim),
                        ("latent_logvar", config.latent_dim),
                        ("classifier", config.num_classes)):
        params[f"{head}.weight"] = Tensor(_he_init(rng, top, width, linear=True),
                                          requires_grad=True)
        params[f"{head}.bias"] = Tensor(np.zeros(width), requires_grad=True)

    dec_widths = ([config.latent_dim] + config.gated_layer_widths
                  + list(reversed(config.perceptual_dims)) + [config.input_dim])
    for k in range(len(dec_widths) - 1):
        last = k == len(dec_widths) - 2
        params[f"decoder.{k}.weight"] = Tensor(
            _he_init(rng, dec_widths[k], dec_widths[k + 1], linear=last),
            requires_grad=True)
        params[f"decoder.{k}.bias"] = Tensor(np.zeros(dec_widths[k + 1]),
                                             requires_grad=True)

    if prior is None:
        prior = GaussianMixturePrior.standard(config.num_classes, config.latent_dim)
    gates = make_context_gates(config.num_tasks, config.gated_layer_widths,
                               config.gate_fraction, gate_seed)
    return ReplayModel(config, params, prior, gates)


def _check_width(x: Tensor, width: int, what: str) -> None:
    if x.data.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"{what} must be [batch x {width}], got {x.shape}")


def encode_from_level(model: ReplayModel, h, level: int
                      ) -> tuple[list[Tensor], LatentGaussian, Tensor]:
    """Run the encoder upward from an activation at the given level.

    Returns the fc-stack activations (indexed 0..F-1, so
    ``hidden[config.embedding_layer]`` is the analysis embedding), the
    latent posterior, and class logits.
    """
    cfg = model.config
    P = len(cfg.perceptual_dims)
    if not 0 <= level <= cfg.num_encoder_layers:
        raise ContractError(f"encoder level {level} outside [0, {cfg.num_encoder_layers}]")
    h = ad.as_tensor(h)
    _check_width(h, cfg.level_widths[level], f"activation at level {level}")

    for i in range(level, P):
        h = model._perceptual_act(model._affine(h, f"perceptual.{i}"))
    hidden: list[Tensor] = []
    for j in range(max(0, level - P), len(cfg.fc_dims)):
        h = ad.relu(model._affine(h, f"fc.{j}"))
        hidden.append(h)

    latent = LatentGaussian(mu=model._affine(h, "latent_mu"),
                            logvar=model._affine(h, "latent_logvar"))
    logits = model._affine(h, "classifier")
    return hidden, latent, logits


def encode(model: ReplayModel, x) -> tuple[list[Tensor], LatentGaussian, Tensor]:
    """Full forward pass from the input level. Gates never apply here, so
    classification needs no task identity."""
    return encode_from_level(model, x, 0)


def forward_to_level(model: ReplayModel, x, level: int) -> Tensor:
    """Encoder activation at one level (level 0 returns the input itself)."""
    cfg = model.config
    P = len(cfg.perceptual_dims)
    if not 0 <= level <= cfg.num_encoder_layers:
        raise ContractError(f"encoder level {level} outside [0, {cfg.num_encoder_layers}]")
    h = ad.as_tensor(x)
    _check_width(h, cfg.input_dim, "input")
    for i in range(min(level, P)):
        h = model._perceptual_act(model._affine(h, f"perceptual.{i}"))
    for j in range(max(0, level - P)):
        h = ad.relu(model._affine(h, f"fc.{j}"))
    return h


def reparameterize(latent: LatentGaussian, noise) -> Tensor:
    """z = mu + exp(logvar/2) * noise, differentiable in mu and logvar."""
    noise = ad.as_tensor(noise)
    if noise.shape != latent.mu.shape:
        raise ShapeError(f"noise shape {noise.shape} != mu shape {latent.mu.shape}")
    return ad.add(latent.mu, ad.mul(ad.exp(ad.mul(latent.logvar, 0.5)), noise))


def decode(model: ReplayModel, z, task_id=None, stop_level: int = 0) -> Tensor:
    """Run the decoder from latents down to ``stop_level``.

    ``task_id`` (an int or one id per row) switches on context gating for
    the decoder's mirrored-fc hidden layers; ``None`` leaves them ungated.
    The layer that produces the returned activation is never gated, so the
    output lives in the same space as the encoder activation it mirrors.
    Output activation: relu at hidden levels, sigmoid at the input level for
    bernoulli data, identity at the input level for real-valued data.
    """
    cfg = model.config
    top = cfg.num_encoder_layers  # the level the first decoder layer produces
    if not 0 <= stop_level < top:
        raise ContractError(f"stop_level {stop_level} outside [0, {top})")
    z = ad.as_tensor(z)
    _check_width(z, cfg.latent_dim, "latent z")

    gated_layers = len(cfg.gated_layer_widths)
    n_layers = top + 1 - stop_level
    task_rows = None
    if task_id is not None:
        task_rows = np.atleast_1d(np.asarray(task_id, dtype=np.intp))
        if task_rows.size not in (1, z.shape[0]):
            raise ContractError(f"task_id must be scalar or one per row, got "
                                f"{task_rows.size} for batch {z.shape[0]}")

    h = z
    for k in range(n_layers):
        h = model._affine(h, f"decoder.{k}")
        last = k == n_layers - 1
        if last and stop_level == 0:
            if cfg.reconstruction == "bernoulli":
                h = ad.sigmoid(h)
            # real-valued data reconstructs with a linear output
        else:
            if last and cfg.perceptual_activation == "linear" and stop_level <= len(
                    cfg.perceptual_dims):
                pass  # mirror a linear perceptual activation
            else:
                h = ad.relu(h)
        if task_rows is not None and k < gated_layers and not last:
            if task_rows.size == 1:
                mask = model.gates.layer_mask(int(task_rows[0]), k)[None, :]
            else:
                mask = model.gates.layer_masks(task_rows, k)
            h = ad.mul(h, Tensor(mask))
    return h


def pretrain_perceptual_block(raw_inputs: np.ndarray, config: NetworkConfig,
                              rng: np.random.Generator, epochs: int = 20,
                              batch_size: int = 64, learning_rate: float = 1e-3
                              ) -> dict[str, np.ndarray]:
    """Train the perceptual layers as the encoder half of a plain autoencoder.

    Returns the learned weights keyed by parameter name; install them with
    ``install_perceptual``. The mirror decoder used here is scratch space and
    is discarded.
    """
    x = np.asarray(raw_inputs, dtype=np.float64)
    if x.size == 0:
        raise DataError("perceptual pretraining needs a non-empty dataset")
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ShapeError(f"pretraining data must be [n x {config.input_dim}], "
                         f"got {x.shape}")
    P = len(config.perceptual_dims)
    linear_block = config.perceptual_activation == "linear"
    widths = [config.input_dim] + list(config.perceptual_dims)

    params: dict[str, Tensor] = {}
    for i in range(P):
        params[f"perceptual.{i}.weight"] = Tensor(
            _he_init(rng, widths[i], widths[i + 1], linear=linear_block),
            requires_grad=True)
        params[f"perceptual.{i}.bias"] = Tensor(np.zeros(widths[i + 1]),
                                                requires_grad=True)
    mirror = list(reversed(widths))
    for i in range(P):
        params[f"mirror.{i}.weight"] = Tensor(
            _he_init(rng, mirror[i], mirror[i + 1], linear=True), requires_grad=True)
        params[f"mirror.{i}.bias"] = Tensor(np.zeros(mirror[i + 1]), requires_grad=True)

    def forward(batch: np.ndarray) -> Tensor:
        h = Tensor(batch)
        for i in range(P):
            h = ad.add(ad.matmul(h, params[f"perceptual.{i}.weight"]),
                       params[f"perceptual.{i}.bias"])
            if not linear_block:
                h = ad.relu(h)
        for i in range(P):
            h = ad.add(ad.matmul(h, params[f"mirror.{i}.weight"]),
                       params[f"mirror.{i}.bias"])
            if i < P - 1 and not linear_block:
                h = ad.relu(h)
        return h

    opt = init_optimizer(params, kind="adam", lr=learning_rate)
    n = x.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for at in range(0, n, batch_size):
            idx = order[at:at + batch_size]
            batch = x[idx]
            with ad.Tape() as tape:
                recon = forward(batch)
                diff = ad.sub(recon, Tensor(batch))
                loss = ad.mul(ad.reduce_sum(ad.mul(diff, diff)), 1.0 / len(idx))
            zero_grads(params)
            ad.backward(loss, tape)
            optimizer_step(params, opt)

    return {k: v.data.copy() for k, v in params.items() if k.startswith("perceptual.")}


def perceptual_reconstruction_mse(weights: dict[str, np.ndarray],
                                  config: NetworkConfig, x: np.ndarray,
                                  mirror: dict[str, np.ndarray] | None = None
                                  ) -> float:
    """Mean per-sample summed squared error of the block's best linear
    read-out back to the input (least squares on the block's output).

    Used to judge pretraining quality without depending on the discarded
    mirror decoder: a block whose features retain the input admits a good
    linear reconstruction.
    """
    h = np.asarray(x, dtype=np.float64)
    for i in range(len(config.perceptual_dims)):
        h = h @ weights[f"perceptual.{i}.weight"] + weights[f"perceptual.{i}.bias"]
        if config.perceptual_activation != "linear":
            h = np.maximum(h, 0.0)
    ones = np.concatenate([h, np.ones((h.shape[0], 1))], axis=1)
    coef, *_ = np.linalg.lstsq(ones, x, rcond=None)
    resid = x - ones @ coef
    return float(np.mean(np.sum(resid ** 2, axis=1)))


def install_perceptual(model: ReplayModel, weights: dict[str, np.ndarray]) -> None:
    """Copy pretrained perceptual weights into the model and freeze them."""
    for name in model.perceptual_params():
        if name not in weights:
            raise ContractError(f"missing pretrained group {name!r}")
        if weights[name].shape != model.params[name].shape:
            raise ShapeError(f"pretrained {name} has shape {weights[name].shape}, "
                             f"expected {model.params[name].shape}")
        model.params[name] = Tensor(np.asarray(weights[name], dtype=np.float64).copy())
    model.freeze_perceptual()
