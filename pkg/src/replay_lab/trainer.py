"""Class-incremental training loop with generative replay.

One model is trained over a sequence of disjoint class groups. From the
second task on, a frozen snapshot of the previous model generates replay
batches: latents come from the snapshot's per-class prior (or the standard
normal), are decoded down to the replay level, and are labelled by the
snapshot's own softened predictions. Current and replayed losses are mixed
1/t : (1 - 1/t), and the path-integral regularizer can additionally anchor
parameters that previous tasks depended on.

Reproducibility: one seed feeds named child streams (init, pretrain, prior,
shuffle, noise, replay, eval), so ablation flags never shift the draws of an
unrelated stream.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import save_checkpoint
from .data import Dataset, TaskSplit, split_into_tasks
from .errors import ConfigError, ContractError, ReplayContractError
from .losses import (LossBreakdown, SIState, classification_loss,
                     distillation_loss, init_si_state, kl_mc_conditional,
                     kl_standard_normal, reconstruction_loss, si_accumulate,
                     si_consolidate, si_penalty)
from .metrics import (AccuracyMatrix, DistributionSummary, EmbeddingDump,
                      ProjectionResult, derive_task_metrics,
                      estimate_log_likelihood, evaluate_accuracy,
                      extract_embeddings, pca_project_2d,
                      per_sample_reconstruction_error, silhouette_from_arrays)
from .model import (GaussianMixturePrior, NetworkConfig, ReplayModel,
                    build_model, decode, encode_from_level, forward_to_level,
                    install_perceptual, pretrain_perceptual_block,
                    reparameterize, sample_conditional)
from .optim import init_optimizer, optimizer_step, zero_grads

STREAM_NAMES = ("init", "pretrain", "prior", "shuffle", "noise", "replay", "eval")


@dataclass(frozen=True)
class AblationFlags:
    """Mechanism toggles. Replay runs whenever any replay-shaped mechanism
    is on; with every flag off, training degenerates to plain sequential
    fine-tuning."""

    internal_replay: bool = True
    synaptic_intelligence: bool = False
    context_gating: bool = True
    conditional_replay: bool = True
    distillation: bool = True

    @property
    def replay_active(self) -> bool:
        return (self.internal_replay or self.conditional_replay
                or self.distillation or self.context_gating)


PAPER_VARIANTS: dict[str, AblationFlags] = {
    "BIR(w/ IR)": AblationFlags(internal_replay=True, synaptic_intelligence=False),
    "BIR(w/o IR)": AblationFlags(internal_replay=False, synaptic_intelligence=False),
    "BIR + SI(w/ IR)": AblationFlags(internal_replay=True, synaptic_intelligence=True),
    "BIR + SI(w/o IR)": AblationFlags(internal_replay=False, synaptic_intelligence=True),
}


@dataclass
class TrainerConfig:
    num_tasks: int = 5
    classes_per_task: int = 2
    epochs_per_task: int = 5
    batch_size: int = 64
    replay_batch_size: int | None = None  # None: match batch_size
    learning_rate: float = 1e-3
    seed: int = 0
    weight_reconstruction: float = 1.0
    weight_kl: float = 1.0
    weight_classification: float = 1.0
    weight_distillation: float = 1.0
    si_c: float = 1.0
    si_xi: float = 0.1
    distill_temperature: float = 2.0
    internal_replay_level: int | None = None  # None: the network's default
    replay_mix_current: float | None = None  # None: the 1/t rule
    prior_init_scale: float = 0.5
    pretrain_epochs: int = 20
    loglik_samples: int = 128  # 0 skips likelihood diagnostics
    network: NetworkConfig | None = None

    def __post_init__(self):
        for name in ("num_tasks", "classes_per_task", "epochs_per_task",
                     "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.replay_batch_size is not None and self.replay_batch_size < 1:
            raise ConfigError("replay_batch_size must be >= 1 when given")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.distill_temperature <= 0:
            raise ConfigError("distill_temperature must be positive")
        if self.si_xi <= 0:
            raise ConfigError("si_xi must be positive")
        if self.si_c < 0:
            raise ConfigError("si_c must be non-negative")
        if self.replay_mix_current is not None and not 0 < self.replay_mix_current <= 1:
            raise ConfigError("replay_mix_current must lie in (0, 1]")
        if self.loglik_samples < 0:
            raise ConfigError("loglik_samples must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass
class ReplayBatch:
    """One generated batch: targets at the replay level, the snapshot's soft
    labels over the full class width, and provenance."""

    targets: np.ndarray
    soft_labels: np.ndarray
    latents: np.ndarray
    source_classes: np.ndarray
    source_tasks: np.ndarray | None
    level: int


def named_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent child generators; names keep draw order stable across
    ablation variants."""
    children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
    return {name: np.random.default_rng(ss)
            for name, ss in zip(STREAM_NAMES, children)}


def mix_losses(current_loss, replay_loss, task_index: int,
               current_weight: float | None = None):
    """Task 1 trains on current data alone; later tasks mix current and
    replayed losses 1/t : (1 - 1/t) (or an explicit current weight)."""
    if task_index < 1:
        raise ContractError(f"task_index must be >= 1, got {task_index}")
    if task_index == 1:
        return current_loss
    if replay_loss is None:
        raise ContractError("replay loss required for task_index > 1")
    w = 1.0 / task_index if current_weight is None else float(current_weight)
    return ad.add(ad.mul(current_loss, w), ad.mul(replay_loss, 1.0 - w))


def generate_replay_batch(snapshot: ReplayModel, n: int, seen_classes, flags:
                          AblationFlags, rng: np.random.Generator,
                          temperature: float = 2.0,
                          class_to_task: dict[int, int] | None = None
                          ) -> ReplayBatch:
    """Draw a batch of generated data from the previous-task snapshot.

    Latents are class-conditional (or standard-normal), decoded to the
    hidden replay level (or the input level), and labelled with the
    snapshot's temperature-softened predictions over its own seen classes.
    """
    seen = sorted(int(c) for c in seen_classes)
    if not seen:
        raise ReplayContractError("replay requested with no seen classes")
    outside = [c for c in seen if c not in snapshot.prior.seen_classes]
    if outside:
        raise ReplayContractError(f"classes {outside} were never seen by the "
                                  "replay snapshot")
    cfg = snapshot.config
    if flags.conditional_replay:
        classes = rng.choice(np.asarray(seen, dtype=np.int64), size=n)
        z = np.empty((n, cfg.latent_dim))
        for c in seen:
            rows = np.flatnonzero(classes == c)
            if rows.size:
                z[rows] = sample_conditional(snapshot.prior, c, rows.size, rng)
        source_classes = classes
    else:
        z = rng.standard_normal((n, cfg.latent_dim))
        source_classes = None

    source_tasks = None
    if flags.context_gating:
        if class_to_task is None:
            raise ContractError("context gating needs a class-to-task mapping")
        if source_classes is not None:
            source_tasks = np.array([class_to_task[int(c)] for c in source_classes],
                                    dtype=np.int64)
        else:
            seen_tasks = sorted({class_to_task[c] for c in seen})
            source_tasks = rng.choice(np.asarray(seen_tasks, dtype=np.int64), size=n)

    level = cfg.internal_replay_level if flags.internal_replay else 0
    task_arg = source_tasks if flags.context_gating else None
    targets = decode(snapshot, z, task_id=task_arg, stop_level=level).data

    _, _, logits = encode_from_level(snapshot, targets, level)
    cols = np.asarray(seen, dtype=np.intp)
    restricted = logits.data[:, cols]
    soft = np.zeros((n, cfg.num_classes))
    if flags.distillation:
        scaled = restricted / temperature
        scaled -= scaled.max(axis=1, keepdims=True)
        e = np.exp(scaled)
        soft[:, cols] = e / e.sum(axis=1, keepdims=True)
    else:
        hard = cols[np.argmax(restricted, axis=1)]
        soft[np.arange(n), hard] = 1.0

    if source_classes is None:
        source_classes = cols[np.argmax(soft[:, cols], axis=1)]

    sums = soft.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ContractError("replay soft labels do not sum to 1")
    return ReplayBatch(targets=targets, soft_labels=soft, latents=z,
                       source_classes=np.asarray(source_classes, dtype=np.int64),
                       source_tasks=source_tasks, level=level)


def _weighted_total(rec, kl, cls, dist, config: TrainerConfig):
    """w_r*rec + w_kl*kl + w_c*cls [+ w_d*dist], in a fixed op order."""
    total = ad.add(ad.add(ad.mul(rec, config.weight_reconstruction),
                          ad.mul(kl, config.weight_kl)),
                   ad.mul(cls, config.weight_classification))
    if dist is not None:
        total = ad.add(total, ad.mul(dist, config.weight_distillation))
    return total


def _current_loss(model: ReplayModel, x: np.ndarray, y: np.ndarray,
                  active_classes, task_id: int, flags: AblationFlags,
                  config: TrainerConfig, noise_rng: np.random.Generator):
    level = model.config.internal_replay_level if flags.internal_replay else 0
    h = forward_to_level(model, x, level)
    _, latent, logits = encode_from_level(model, h, level)
    noise = noise_rng.standard_normal(latent.mu.shape)
    z = reparameterize(latent, noise)
    task_arg = task_id if flags.context_gating else None
    recon = decode(model, z, task_id=task_arg, stop_level=level)
    kind = "mse" if level > 0 else model.config.reconstruction
    rec = reconstruction_loss(recon, h, kind)
    if flags.conditional_replay:
        kl = kl_mc_conditional(z, latent, model.prior, y)
    else:
        kl = kl_standard_normal(latent)
    cls = classification_loss(logits, y, active_classes)
    total = _weighted_total(rec, kl, cls, None, config)
    return total, {"reconstruction": rec.item(), "kl": kl.item(),
                   "classification": cls.item(), "distillation": 0.0}


def _replay_loss(model: ReplayModel, batch: ReplayBatch, teacher_seen: list[int],
                 flags: AblationFlags, config: TrainerConfig,
                 noise_rng: np.random.Generator):
    h = Tensor(batch.targets)
    _, latent, logits = encode_from_level(model, h, batch.level)
    noise = noise_rng.standard_normal(latent.mu.shape)
    z = reparameterize(latent, noise)
    task_arg = batch.source_tasks if flags.context_gating else None
    recon = decode(model, z, task_id=task_arg, stop_level=batch.level)
    kind = "mse" if batch.level > 0 else model.config.reconstruction
    rec = reconstruction_loss(recon, h, kind)
    if flags.conditional_replay:
        kl = kl_mc_conditional(z, latent, model.prior, batch.source_classes)
    else:
        kl = kl_standard_normal(latent)
    cols = sorted(teacher_seen)
    if flags.distillation:
        dist = distillation_loss(ad.col_select(logits, cols),
                                 batch.soft_labels[:, cols],
                                 config.distill_temperature)
        cls = None
        parts = {"reconstruction": rec.item(), "kl": kl.item(),
                 "classification": 0.0, "distillation": dist.item()}
        total = ad.add(ad.add(ad.mul(rec, config.weight_reconstruction),
                              ad.mul(kl, config.weight_kl)),
                       ad.mul(dist, config.weight_distillation))
    else:
        hard = np.argmax(batch.soft_labels, axis=1)
        cls = classification_loss(logits, hard, cols)
        parts = {"reconstruction": rec.item(), "kl": kl.item(),
                 "classification": cls.item(), "distillation": 0.0}
        total = _weighted_total(rec, kl, cls, None, config)
    return total, parts


def train_task(model: ReplayModel, task_id: int, task_data: Dataset,
               prev_snapshot: ReplayModel | None, si_state: SIState | None, *,
               config: TrainerConfig, flags: AblationFlags,
               active_classes: list[int], seen_before: list[int],
               class_to_task: dict[int, int],
               optimizer, streams: dict[str, np.random.Generator]
               ) -> list[LossBreakdown]:
    """Run one task's epochs; mutates the model in place and returns the
    per-step loss breakdowns."""
    if task_id > 0 and flags.replay_active and prev_snapshot is None:
        raise ContractError("replay requires a snapshot of the previous model")
    params = model.trainable_params()
    replay_n = config.replay_batch_size or config.batch_size
    use_replay = task_id > 0 and flags.replay_active
    breakdowns: list[LossBreakdown] = []
    n = len(task_data)

    for _ in range(config.epochs_per_task):
        order = streams["shuffle"].permutation(n)
        for at in range(0, n, config.batch_size):
            idx = order[at:at + config.batch_size]
            x, y = task_data.inputs[idx], task_data.labels[idx]

            replay = None
            if use_replay:
                replay = generate_replay_batch(
                    prev_snapshot, replay_n, seen_before, flags,
                    streams["replay"], temperature=config.distill_temperature,
                    class_to_task=class_to_task)

            with ad.Tape() as tape:
                cur_total, cur = _current_loss(model, x, y, active_classes,
                                               task_id, flags, config,
                                               streams["noise"])
                if replay is not None:
                    rep_total, rep = _replay_loss(model, replay, seen_before,
                                                  flags, config, streams["noise"])
                    total = mix_losses(cur_total, rep_total, task_id + 1,
                                       config.replay_mix_current)
                    w_cur = (config.replay_mix_current
                             if config.replay_mix_current is not None
                             else 1.0 / (task_id + 1))
                    parts = {k: w_cur * cur[k] + (1.0 - w_cur) * rep[k] for k in cur}
                else:
                    total = cur_total
                    parts = cur
                pen = 0.0
                if flags.synaptic_intelligence and si_state.c > 0:
                    pen_t = si_penalty(si_state, params)
                    total = ad.add(total, pen_t)
                    pen = pen_t.item()

            zero_grads(params)
            ad.backward(total, tape)

            grads = before = None
            if flags.synaptic_intelligence:
                grads = {k: p.grad.copy() for k, p in params.items()
                         if p.grad is not None}
                before = {k: params[k].data for k in grads}
            optimizer_step(params, optimizer)
            if flags.synaptic_intelligence:
                delta = {k: params[k].data - before[k] for k in grads}
                si_accumulate(si_state, grads, delta)

            bd = LossBreakdown(reconstruction=parts["reconstruction"],
                               kl=parts["kl"],
                               classification=parts["classification"],
                               distillation=parts["distillation"],
                               si_penalty=pen)
            bd.total = bd.weighted_sum(config.weight_reconstruction,
                                       config.weight_kl,
                                       config.weight_classification,
                                       config.weight_distillation)
            breakdowns.append(bd)
    return breakdowns


@dataclass
class RunResult:
    """Everything one (variant, seed) run produces, before file export."""

    variant: str
    seed: int
    flags: AblationFlags
    accuracy_matrix: AccuracyMatrix
    task_metrics: list[dict]
    silhouette_per_task: list[float]
    log_likelihood: DistributionSummary | None
    reconstruction_error: DistributionSummary | None
    embeddings: EmbeddingDump
    projection: ProjectionResult
    timings: dict[str, float] = field(default_factory=dict)
    loss_trace: list[LossBreakdown] = field(default_factory=list)

    def mean_metric(self, key: str) -> float:
        vals = [r[key] for r in self.task_metrics if r[key] is not None]
        return float(np.mean(vals)) if vals else float("nan")


def _resolve_network(config: TrainerConfig, train: Dataset) -> NetworkConfig:
    if config.network is not None:
        net = config.network
        if net.input_dim != train.input_dim:
            raise ConfigError(f"network input_dim {net.input_dim} != dataset "
                              f"input dim {train.input_dim}")
        if net.num_classes < train.num_classes:
            raise ConfigError(f"network num_classes {net.num_classes} < dataset "
                              f"classes {train.num_classes}")
        if net.num_tasks != config.num_tasks:
            raise ConfigError(f"network num_tasks {net.num_tasks} != trainer "
                              f"num_tasks {config.num_tasks}")
        if config.internal_replay_level is not None:
            net = replace(net, internal_replay_level=config.internal_replay_level)
        return net
    kwargs = {}
    if config.internal_replay_level is not None:
        kwargs["internal_replay_level"] = config.internal_replay_level
    if train.inputs.size and 0.0 <= train.inputs.min() and train.inputs.max() <= 1.0:
        kwargs["reconstruction"] = "bernoulli"
    return NetworkConfig(input_dim=train.input_dim,
                         num_classes=train.num_classes,
                         num_tasks=config.num_tasks, **kwargs)


def run_experiment(config: TrainerConfig, flags: AblationFlags, train: Dataset,
                   test: Dataset, split: TaskSplit | None = None,
                   out_dir=None, variant: str = "run") -> RunResult:
    """Train through all tasks, populate the accuracy matrix after each,
    and compute the analysis battery on the final model."""
    needed = config.num_tasks * config.classes_per_task
    if needed > train.num_classes:
        raise ConfigError(f"{config.num_tasks} tasks x {config.classes_per_task} "
                          f"classes need {needed} classes; dataset has "
                          f"{train.num_classes}")
    if split is None:
        split = split_into_tasks(train, config.num_tasks, config.classes_per_task,
                                 test_dataset=test)
    if split.num_tasks != config.num_tasks:
        raise ConfigError(f"split has {split.num_tasks} tasks, config expects "
                          f"{config.num_tasks}")

    t_start = time.perf_counter()
    streams = named_streams(config.seed)
    network = _resolve_network(config, train)

    if flags.conditional_replay:
        prior = GaussianMixturePrior.per_class(network.num_classes,
                                               network.latent_dim,
                                               streams["prior"],
                                               config.prior_init_scale)
    else:
        prior = GaussianMixturePrior.standard(network.num_classes,
                                              network.latent_dim)
    model = build_model(network, streams["init"], gate_seed=config.seed,
                        prior=prior)

    pre = pretrain_perceptual_block(train.inputs[split.train_indices[0]],
                                    network, streams["pretrain"],
                                    epochs=config.pretrain_epochs,
                                    batch_size=config.batch_size,
                                    learning_rate=config.learning_rate)
    install_perceptual(model, pre)
    t_pretrain = time.perf_counter()

    params = model.trainable_params()
    optimizer = init_optimizer(params, kind="adam", lr=config.learning_rate)
    si_state = (init_si_state(params, xi=config.si_xi, c=config.si_c)
                if flags.synaptic_intelligence else None)
    class_to_task = split.class_to_task()

    matrix = AccuracyMatrix(config.num_tasks)
    prev_snapshot: ReplayModel | None = None
    loss_trace: list[LossBreakdown] = []

    for t in range(config.num_tasks):
        model.prior.mark_seen(split.task_classes[t])
        task_train = train.subset(split.train_indices[t])
        seen_before = split.classes_up_to(t - 1) if t > 0 else []
        active = split.classes_up_to(t)
        breakdowns = train_task(model, t, task_train, prev_snapshot, si_state,
                                config=config, flags=flags,
                                active_classes=active, seen_before=seen_before,
                                class_to_task=class_to_task,
                                optimizer=optimizer, streams=streams)
        loss_trace.extend(breakdowns)
        if flags.synaptic_intelligence:
            si_consolidate(si_state, params)
        prev_snapshot = model.snapshot()
        for e in range(t + 1):
            acc = evaluate_accuracy(model, test.subset(split.test_indices[e]),
                                    active)
            matrix.set_entry(t, e, acc)
        if out_dir is not None:
            save_checkpoint(model, f"{out_dir}/ckpt_task{t + 1}.bin")
    t_train = time.perf_counter()

    covered_idx = np.concatenate(split.test_indices)
    covered = test.subset(covered_idx)
    embeddings = extract_embeddings(model, covered, network.embedding_layer,
                                    class_to_task)
    sil_per_task = []
    for t in range(config.num_tasks):
        dump = extract_embeddings(model, test.subset(split.test_indices[t]),
                                  network.embedding_layer, class_to_task)
        sil_per_task.append(silhouette_from_arrays(dump.vectors, dump.classes))
    projection = pca_project_2d(embeddings)

    loglik = recon = None
    if config.loglik_samples > 0:
        ll = estimate_log_likelihood(model, covered.inputs,
                                     config.loglik_samples, streams["eval"])
        loglik = DistributionSummary.from_values(ll)
    recon = DistributionSummary.from_values(
        per_sample_reconstruction_error(model, covered.inputs))
    t_end = time.perf_counter()

    return RunResult(
        variant=variant, seed=config.seed, flags=flags,
        accuracy_matrix=matrix, task_metrics=derive_task_metrics(matrix),
        silhouette_per_task=sil_per_task, log_likelihood=loglik,
        reconstruction_error=recon, embeddings=embeddings,
        projection=projection,
        timings={"pretrain_s": t_pretrain - t_start,
                 "train_s": t_train - t_pretrain,
                 "analysis_s": t_end - t_train,
                 "total_s": t_end - t_start},
        loss_trace=loss_trace)


def run_plain_finetuning(config: TrainerConfig, train: Dataset, test: Dataset,
                         split: TaskSplit | None = None
                         ) -> tuple[ReplayModel, AccuracyMatrix]:
    """Reference path: sequential training with no replay machinery at all.

    Written as its own straight-line loop (rather than calling train_task)
    so the all-flags-off trainer has an independent twin to be compared
    against bit for bit.
    """
    if split is None:
        split = split_into_tasks(train, config.num_tasks, config.classes_per_task,
                                 test_dataset=test)
    streams = named_streams(config.seed)
    network = _resolve_network(config, train)
    prior = GaussianMixturePrior.standard(network.num_classes, network.latent_dim)
    model = build_model(network, streams["init"], gate_seed=config.seed,
                        prior=prior)
    pre = pretrain_perceptual_block(train.inputs[split.train_indices[0]],
                                    network, streams["pretrain"],
                                    epochs=config.pretrain_epochs,
                                    batch_size=config.batch_size,
                                    learning_rate=config.learning_rate)
    install_perceptual(model, pre)
    params = model.trainable_params()
    optimizer = init_optimizer(params, kind="adam", lr=config.learning_rate)
    matrix = AccuracyMatrix(config.num_tasks)

    for t in range(config.num_tasks):
        model.prior.mark_seen(split.task_classes[t])
        task_train = train.subset(split.train_indices[t])
        active = split.classes_up_to(t)
        n = len(task_train)
        for _ in range(config.epochs_per_task):
            order = streams["shuffle"].permutation(n)
            for at in range(0, n, config.batch_size):
                idx = order[at:at + config.batch_size]
                x, y = task_train.inputs[idx], task_train.labels[idx]
                with ad.Tape() as tape:
                    h = forward_to_level(model, x, 0)
                    _, latent, logits = encode_from_level(model, h, 0)
                    noise = streams["noise"].standard_normal(latent.mu.shape)
                    z = reparameterize(latent, noise)
                    recon = decode(model, z, task_id=None, stop_level=0)
                    rec = reconstruction_loss(recon, h, model.config.reconstruction)
                    kl = kl_standard_normal(latent)
                    cls = classification_loss(logits, y, active)
                    total = _weighted_total(rec, kl, cls, None, config)
                zero_grads(params)
                ad.backward(total, tape)
                optimizer_step(params, optimizer)
        for e in range(t + 1):
            acc = evaluate_accuracy(model, test.subset(split.test_indices[e]),
                                    active)
            matrix.set_entry(t, e, acc)
    return model, matrix
