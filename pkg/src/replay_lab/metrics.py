"""Evaluation battery: accuracy matrix and the retention/forgetting metrics
derived from it, importance-sampled log-likelihoods, reconstruction-error
distributions, embedding extraction with silhouette scores, and a 2-D
principal-component projection for cluster visualisation.

Task indices in file outputs are 1-based (task 1 is the first task trained);
in-memory indices are 0-based.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import model as m
from .data import Dataset
from .errors import ContractError, DataError
from .model import ReplayModel

_LOG2PI = float(np.log(2.0 * np.pi))
_CHUNK = 8192


# ---------------------------------------------------------------------------
# accuracy bookkeeping

class AccuracyMatrix:
    """Lower-triangular grid: entry (t, e) is accuracy on task e's test set
    measured right after training task t (0-based; defined iff e <= t)."""

    def __init__(self, num_tasks: int):
        if num_tasks < 1:
            raise ContractError(f"num_tasks must be >= 1, got {num_tasks}")
        self.num_tasks = num_tasks
        self.entries = np.full((num_tasks, num_tasks), np.nan)

    def set_entry(self, trained_task: int, eval_task: int, accuracy: float) -> None:
        if not 0 <= eval_task <= trained_task < self.num_tasks:
            raise ContractError(f"entry ({trained_task}, {eval_task}) outside the "
                                f"lower triangle of a {self.num_tasks}-task matrix")
        if not 0.0 <= accuracy <= 1.0:
            raise ContractError(f"accuracy {accuracy} outside [0, 1]")
        self.entries[trained_task, eval_task] = accuracy

    def get(self, trained_task: int, eval_task: int) -> float:
        v = self.entries[trained_task, eval_task]
        if np.isnan(v):
            raise ContractError(f"entry ({trained_task}, {eval_task}) was never set")
        return float(v)

    def initial_accuracy(self, task: int) -> float:
        return self.get(task, task)

    def final_accuracy(self, task: int) -> float:
        return self.get(self.num_tasks - 1, task)

    def iter_entries(self):
        for t in range(self.num_tasks):
            for e in range(t + 1):
                yield t, e, self.get(t, e)


def evaluate_accuracy(model: ReplayModel, test_set: Dataset, active_classes) -> float:
    """Fraction of samples whose argmax over active-class logits matches the
    label. Ties resolve to the lowest class index."""
    if len(test_set) == 0:
        raise DataError("cannot evaluate accuracy on an empty test set")
    active = sorted(int(c) for c in active_classes)
    if not active:
        raise ContractError("active_classes must be non-empty")
    missing = set(test_set.labels.tolist()) - set(active)
    if missing:
        raise ContractError(f"test labels {sorted(missing)} not in active classes")
    cols = np.asarray(active, dtype=np.intp)
    correct = 0
    for at in range(0, len(test_set), _CHUNK):
        x = test_set.inputs[at:at + _CHUNK]
        _, _, logits = m.encode(model, x)
        picked = cols[np.argmax(logits.data[:, cols], axis=1)]
        correct += int(np.sum(picked == test_set.labels[at:at + _CHUNK]))
    return correct / len(test_set)


def retention_ratio(initial: float, final: float) -> float | None:
    """final/initial; undefined (None) when the initial accuracy is zero."""
    if initial == 0:
        return None
    return final / initial


def forgetting_score(initial: float, final: float) -> float:
    """initial - final; negative values mean backward transfer and are kept."""
    return initial - final


def derive_task_metrics(matrix: AccuracyMatrix) -> list[dict]:
    """One row per task: initial/final accuracy plus the derived metrics."""
    rows = []
    for e in range(matrix.num_tasks):
        initial = matrix.initial_accuracy(e)
        final = matrix.final_accuracy(e)
        rows.append({
            "task": e + 1,
            "initial_acc": initial,
            "final_acc": final,
            "retention_ratio": retention_ratio(initial, final),
            "forgetting_score": forgetting_score(initial, final),
        })
    return rows


# ---------------------------------------------------------------------------
# likelihood and reconstruction diagnostics

def importance_sampled_log_marginal(log_joint, mu: np.ndarray, logvar: np.ndarray,
                                    n_samples: int, rng: np.random.Generator
                                    ) -> np.ndarray:
    """log p(x) ~= logsumexp_s[log p(x, z_s) - log q(z_s|x)] - log S with
    z_s drawn from the diagonal-Gaussian proposal q = N(mu, exp(logvar)).

    ``log_joint(z)`` must return the per-row log p(x, z) for the batch the
    proposal parameters describe. Returns one estimate per row.
    """
    if n_samples < 1:
        raise ContractError(f"n_samples must be >= 1, got {n_samples}")
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    n, d = mu.shape
    vals = np.empty((n, n_samples))
    std = np.exp(0.5 * logvar)
    for s in range(n_samples):
        z = mu + std * rng.standard_normal(mu.shape)
        log_q = -0.5 * (((z - mu) ** 2 * np.exp(-logvar) + logvar).sum(axis=1)
                        + d * _LOG2PI)
        vals[:, s] = np.asarray(log_joint(z)) - log_q
    peak = vals.max(axis=1, keepdims=True)
    return (peak[:, 0] + np.log(np.exp(vals - peak).sum(axis=1))
            - np.log(n_samples))


def _log_prior_np(prior: m.GaussianMixturePrior, z: np.ndarray) -> np.ndarray:
    if not prior.seen_classes:
        raise ContractError("prior has no seen classes")
    means = prior.means.data[prior.seen_classes]
    logvars = prior.logvars.data[prior.seen_classes]
    d = z.shape[1]
    comp = -0.5 * ((((z[:, None, :] - means[None]) ** 2) * np.exp(-logvars[None])
                    + logvars[None]).sum(axis=2) + d * _LOG2PI)
    peak = comp.max(axis=1, keepdims=True)
    return (peak[:, 0] + np.log(np.exp(comp - peak).sum(axis=1))
            - np.log(len(prior.seen_classes)))


def _log_obs(model: ReplayModel, target: np.ndarray, z: np.ndarray,
             level: int) -> np.ndarray:
    """log p(target | z) at the given encoder level: unit-variance Gaussian
    at hidden levels, the configured family at the input level."""
    recon = m.decode(model, z, task_id=None, stop_level=level).data
    if level == 0 and model.config.reconstruction == "bernoulli":
        p = np.clip(recon, 1e-12, 1.0 - 1e-12)
        return (target * np.log(p) + (1.0 - target) * np.log(1.0 - p)).sum(axis=1)
    d = target.shape[1]
    return -0.5 * (((target - recon) ** 2).sum(axis=1) + d * _LOG2PI)


def estimate_log_likelihood(model: ReplayModel, x, n_importance_samples: int,
                            rng: np.random.Generator,
                            level: int | None = None) -> np.ndarray:
    """Per-sample importance-sampled log-likelihood at an encoder level.

    The default level is the model's hidden-replay level, which makes
    estimates comparable across models that share the same frozen
    perceptual block.
    """
    level = model.config.internal_replay_level if level is None else level
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.shape[0])
    for at in range(0, x.shape[0], _CHUNK):
        chunk = x[at:at + _CHUNK]
        h = m.forward_to_level(model, chunk, level).data
        _, latent, _ = m.encode_from_level(model, h, level)

        def log_joint(z, _h=h):
            return _log_obs(model, _h, z, level) + _log_prior_np(model.prior, z)

        out[at:at + chunk.shape[0]] = importance_sampled_log_marginal(
            log_joint, latent.mu.data, latent.logvar.data,
            n_importance_samples, rng)
    return out


def per_sample_reconstruction_error(model: ReplayModel, x,
                                    level: int | None = None) -> np.ndarray:
    """Deterministic per-sample reconstruction error using the mean latent.

    Summed squared error at hidden levels; the configured loss family's
    per-sample negative log likelihood at the input level.
    """
    level = model.config.internal_replay_level if level is None else level
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.shape[0])
    for at in range(0, x.shape[0], _CHUNK):
        chunk = x[at:at + _CHUNK]
        h = m.forward_to_level(model, chunk, level).data
        _, latent, _ = m.encode_from_level(model, h, level)
        recon = m.decode(model, latent.mu, task_id=None, stop_level=level).data
        if level == 0 and model.config.reconstruction == "bernoulli":
            p = np.clip(recon, 1e-12, 1.0 - 1e-12)
            err = -(h * np.log(p) + (1.0 - h) * np.log(1.0 - p)).sum(axis=1)
        else:
            err = ((h - recon) ** 2).sum(axis=1)
        out[at:at + chunk.shape[0]] = err
    return out


@dataclass
class DistributionSummary:
    """Raw values plus a histogram and the usual location statistics."""

    values: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    mean: float
    median: float
    p5: float
    p95: float

    @classmethod
    def from_values(cls, values) -> "DistributionSummary":
        v = np.asarray(values, dtype=np.float64).ravel()
        if v.size == 0:
            raise DataError("cannot summarize an empty sample")
        edges = _fd_edges(v)
        counts, edges = np.histogram(v, bins=edges)
        return cls(values=v, bin_edges=edges, counts=counts,
                   mean=float(np.mean(v)), median=float(np.median(v)),
                   p5=float(np.percentile(v, 5)), p95=float(np.percentile(v, 95)))

    def to_json_dict(self, metric: str, model_variant: str) -> dict:
        return {
            "metric": metric,
            "model_variant": model_variant,
            "values": [float(x) for x in self.values],
            "histogram": {"edges": [float(e) for e in self.bin_edges],
                          "counts": [int(c) for c in self.counts]},
            "summary": {"mean": self.mean, "median": self.median,
                        "p5": self.p5, "p95": self.p95},
        }


def _fd_edges(v: np.ndarray) -> np.ndarray:
    """Freedman-Diaconis bin edges, capped at 50 bins, with degenerate-data
    fallbacks (constant samples get one unit-wide bin)."""
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.array([lo - 0.5, lo + 0.5])
    iqr = float(np.percentile(v, 75) - np.percentile(v, 25))
    width = 2.0 * iqr / v.size ** (1.0 / 3.0)
    if width <= 0:
        bins = min(50, max(1, int(math.ceil(math.sqrt(v.size)))))
    else:
        bins = min(50, max(1, int(math.ceil((hi - lo) / width))))
    return np.linspace(lo, hi, bins + 1)


def reconstruction_error_distribution(model: ReplayModel, test_set: Dataset,
                                      level: int | None = None
                                      ) -> DistributionSummary:
    if len(test_set) == 0:
        raise DataError("cannot summarize an empty test set")
    return DistributionSummary.from_values(
        per_sample_reconstruction_error(model, test_set.inputs, level))


# ---------------------------------------------------------------------------
# embeddings, silhouettes, projection

@dataclass
class EmbeddingDump:
    """Activation vectors tagged with task and class ids."""

    layer: str
    tasks: np.ndarray
    classes: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        self.tasks = np.asarray(self.tasks, dtype=np.int64)
        self.classes = np.asarray(self.classes, dtype=np.int64)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        n = self.vectors.shape[0]
        if self.vectors.ndim != 2:
            raise ContractError("embedding vectors must form a 2-D array")
        if self.tasks.shape != (n,) or self.classes.shape != (n,):
            raise ContractError("tasks/classes must have one entry per vector row")


def extract_embeddings(model: ReplayModel, dataset: Dataset, layer_index: int,
                       class_to_task: dict[int, int] | None = None
                       ) -> EmbeddingDump:
    """Hidden activations of one fc encoder layer, in dataset row order."""
    n_layers = len(model.config.fc_dims)
    if not 0 <= layer_index < n_layers:
        raise ContractError(f"layer index {layer_index} outside [0, {n_layers})")
    chunks = []
    for at in range(0, len(dataset), _CHUNK):
        hidden, _, _ = m.encode(model, dataset.inputs[at:at + _CHUNK])
        chunks.append(hidden[layer_index].data)
    vectors = np.concatenate(chunks) if chunks else np.zeros((0, 0))
    lookup = class_to_task or {}
    tasks = np.array([lookup.get(int(c), -1) for c in dataset.labels], dtype=np.int64)
    return EmbeddingDump(layer=f"fc.{layer_index}", tasks=tasks,
                         classes=dataset.labels.copy(), vectors=vectors)


def silhouette_from_arrays(vectors: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette s = (b - a)/max(a, b) with Euclidean distances.

    Members of singleton clusters contribute s = 0, as do samples whose
    intra- and inter-cluster distances are both zero.
    """
    x = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise ContractError(f"silhouette needs >= 2 clusters, got {uniq.size}")
    masks = {u: labels == u for u in uniq}
    scores = np.zeros(x.shape[0])
    for i in range(x.shape[0]):
        d = np.sqrt(((x - x[i]) ** 2).sum(axis=1))
        own = labels[i]
        own_mask = masks[own].copy()
        own_mask[i] = False
        if not own_mask.any():
            continue  # singleton cluster: s stays 0
        a = d[own_mask].mean()
        b = min(d[masks[u]].mean() for u in uniq if u != own)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def silhouette_score(embeddings: EmbeddingDump, label_key: str = "class") -> float:
    if label_key == "class":
        labels = embeddings.classes
    elif label_key == "task":
        labels = embeddings.tasks
    else:
        raise ContractError(f"label_key must be 'class' or 'task', got {label_key!r}")
    return silhouette_from_arrays(embeddings.vectors, labels)


@dataclass
class ProjectionResult:
    """2-D principal-component projection of an embedding dump."""

    coords: np.ndarray
    tasks: np.ndarray
    classes: np.ndarray
    components: np.ndarray
    eigenvalues: tuple[float, float]
    rank_deficient: bool = False


def _power_iteration(cov: np.ndarray, tol: float = 1e-9,
                     max_iters: int = 1000) -> tuple[np.ndarray, float]:
    d = cov.shape[0]
    # deterministic, never axis-aligned start
    v = 1.0 + np.arange(d) / (2.0 * d)
    v /= np.sqrt((v ** 2).sum())
    for _ in range(max_iters):
        w = cov @ v
        norm = np.sqrt((w ** 2).sum())
        if norm == 0.0:
            return v, 0.0
        w /= norm
        if np.sqrt(((w - v) ** 2).sum()) < tol or np.sqrt(((w + v) ** 2).sum()) < tol:
            v = w
            break
        v = w
    eig = float(v @ cov @ v)
    return v, eig


def pca_project_2d(embeddings: EmbeddingDump) -> ProjectionResult:
    """Mean-centered projection onto the top two principal directions.

    Power iteration with deflation; each component's sign is fixed by making
    its largest-magnitude loading positive. Rank-deficient data keeps a
    zero second axis and sets ``rank_deficient``.
    """
    x = embeddings.vectors
    n, d = x.shape
    if n < 2 or d < 2:
        raise ContractError(f"projection needs >= 2 samples and >= 2 dims, "
                            f"got {n} x {d}")
    centered = x - x.mean(axis=0)
    cov = (centered.T @ centered) / (n - 1)

    v1, lam1 = _power_iteration(cov)
    deflated = cov - lam1 * np.outer(v1, v1)
    v2, lam2 = _power_iteration(deflated)

    scale = max(lam1, 1.0)
    rank_deficient = lam2 <= 1e-12 * scale
    if lam1 <= 1e-300:
        v1 = np.zeros(d)
        lam1 = 0.0
        rank_deficient = True
    if rank_deficient:
        v2 = np.zeros(d)
        lam2 = 0.0

    for v in (v1, v2):
        if v.any():
            peak = np.argmax(np.abs(v))
            if v[peak] < 0:
                np.negative(v, out=v)

    coords = np.stack([centered @ v1, centered @ v2], axis=1)
    return ProjectionResult(coords=coords, tasks=embeddings.tasks.copy(),
                            classes=embeddings.classes.copy(),
                            components=np.stack([v1, v2]),
                            eigenvalues=(lam1, lam2),
                            rank_deficient=rank_deficient)


# ---------------------------------------------------------------------------
# file outputs

def fmt_float(v: float) -> str:
    """Shortest exact decimal form; the basis of byte-stable CSVs."""
    return repr(float(v))


def write_accuracy_matrix_csv(matrix: AccuracyMatrix, path) -> None:
    lines = ["trained_task,eval_task,accuracy"]
    for t, e, v in matrix.iter_entries():
        lines.append(f"{t + 1},{e + 1},{fmt_float(v)}")
    _write_text(path, lines)


def write_metrics_csv(rows: list[dict], path) -> None:
    lines = ["task,initial_acc,final_acc,retention_ratio,forgetting_score"]
    for r in rows:
        ret = "" if r["retention_ratio"] is None else fmt_float(r["retention_ratio"])
        lines.append(f'{r["task"]},{fmt_float(r["initial_acc"])},'
                     f'{fmt_float(r["final_acc"])},{ret},'
                     f'{fmt_float(r["forgetting_score"])}')
    _write_text(path, lines)


def write_distribution_json(summary: DistributionSummary, metric: str,
                            model_variant: str, path) -> None:
    payload = summary.to_json_dict(metric, model_variant)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def write_embedding_csv(dump: EmbeddingDump, path) -> None:
    width = dump.vectors.shape[1]
    lines = ["task,class," + ",".join(f"d{i}" for i in range(width))]
    for t, c, vec in zip(dump.tasks, dump.classes, dump.vectors):
        lines.append(f"{t},{c}," + ",".join(fmt_float(v) for v in vec))
    _write_text(path, lines)


def write_projection_csv(proj: ProjectionResult, path) -> None:
    lines = ["task,class,x,y"]
    for t, c, (px, py) in zip(proj.tasks, proj.classes, proj.coords):
        lines.append(f"{t},{c},{fmt_float(px)},{fmt_float(py)}")
    _write_text(path, lines)


def _write_text(path, lines: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
