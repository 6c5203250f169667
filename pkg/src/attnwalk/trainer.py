"""Toy pre-LN attention classifier trained with SGD or CG-FAC.

Model: token ids -> embedding -> layer norm -> self-attention -> mean pool
-> linear head -> softmax cross-entropy. Only the embedding table and the
head carry parameters.
"""

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from attnwalk import rng
from attnwalk.attention import attention_backward, attention_forward, softmax
from attnwalk.errors import BadConfig, IndexOutOfRange, NonFiniteLoss
from attnwalk.geometry import LayerNormParams, layer_norm, layer_norm_backward
from attnwalk.kfac import DampedFisher, SolverConfig, natural_gradient_step

OPTIMIZERS = ("sgd", "cgfac")
TRAIN_EPS = 1e-12
INIT_SCALE = 0.02

# stream indices under the run seed
_INIT_STREAM, _DATA_STREAM, _BATCH_STREAM = 0, 1, 2


@dataclass
class TrainConfig:
    seed: int = 0
    n: int = 8
    d: int = 16
    vocab: int = 32
    classes: int = 4
    batch_size: int = 64
    steps: int = 200
    optimizer: str = "sgd"
    eta: float | None = None
    gamma: float = 1e-2
    cg_max_iters: int | None = None
    cg_rel_tol: float = 1e-10
    warm_start: bool = True
    n_samples: int = 1024

    def __post_init__(self):
        self.optimizer = str(self.optimizer).lower()
        if self.optimizer not in OPTIMIZERS:
            raise BadConfig(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        for name in ("n", "d", "vocab", "classes", "batch_size", "n_samples"):
            if getattr(self, name) < 1:
                raise BadConfig(f"{name} must be positive")
        if self.steps < 0 or self.seed < 0:
            raise BadConfig("steps and seed must be nonnegative")
        if self.d < 2:
            raise BadConfig("d must be >= 2")
        if self.vocab < 2 * self.classes:
            raise BadConfig("vocab must be at least twice the number of classes")
        if self.eta is not None and not self.eta > 0:
            raise BadConfig("eta must be positive")
        if not (self.gamma > 0 and self.cg_rel_tol > 0):
            raise BadConfig("gamma and cg_rel_tol must be positive")
        if self.cg_max_iters is not None and self.cg_max_iters < 1:
            raise BadConfig("cg_max_iters must be positive")

    @property
    def learning_rate(self) -> float:
        if self.eta is not None:
            return self.eta
        return 0.5 if self.optimizer == "sgd" else 0.05

    def resolved(self) -> dict:
        out = asdict(self)
        out["eta"] = self.learning_rate
        return out


@dataclass
class Dataset:
    ids: np.ndarray
    labels: np.ndarray
    cluster_of: np.ndarray

    def __len__(self) -> int:
        return self.labels.size


def synth_dataset(seed: int, n: int, d: int, vocab: int, classes: int, n_samples: int) -> Dataset:
    """Sequences whose majority of tokens come from the cluster of their class.

    The vocabulary is split into ``classes`` contiguous clusters. Each sample
    draws ``n // 2 + 1`` tokens from its own cluster and the rest uniformly
    from the whole vocabulary, so the own cluster is always the plurality.
    """
    if vocab < 2 * classes:
        raise BadConfig("vocab must be at least twice the number of classes")
    if min(n, d - 1, classes, n_samples) < 1:
        raise BadConfig("need n >= 1, d >= 2, classes >= 1, n_samples >= 1")
    g = rng.stream(seed, _DATA_STREAM)
    cluster_of = np.arange(vocab) * classes // vocab
    members = [np.flatnonzero(cluster_of == c) for c in range(classes)]
    labels = g.permutation(np.arange(n_samples) % classes)
    n_own = n // 2 + 1
    ids = np.empty((n_samples, n), dtype=np.int64)
    for s, c in enumerate(labels):
        row = np.concatenate([g.choice(members[c], size=n_own), g.integers(0, vocab, size=n - n_own)])
        ids[s] = g.permutation(row)
    return Dataset(ids=ids, labels=labels, cluster_of=cluster_of)


@dataclass
class ToyModel:
    embedding: np.ndarray
    head: np.ndarray
    ln: LayerNormParams = field(default_factory=lambda: LayerNormParams(eps=TRAIN_EPS))

    @classmethod
    def init(cls, config: TrainConfig) -> "ToyModel":
        g = rng.stream(config.seed, _INIT_STREAM)
        return cls(
            embedding=INIT_SCALE * g.standard_normal((config.vocab, config.d)),
            head=np.zeros((config.classes, config.d)),
        )

    def copy(self) -> "ToyModel":
        return ToyModel(self.embedding.copy(), self.head.copy(), self.ln)


@dataclass
class ForwardPass:
    loss: float
    per_sample_loss: np.ndarray
    logits: np.ndarray
    grads: dict
    captures: dict


def forward(model: ToyModel, ids, labels) -> ForwardPass:
    """Loss on a batch plus gradients and per-sample K-FAC captures.

    Captures use the (out, in) weight orientation: the head block is
    ``(C, d)`` with ``a`` the pooled feature and ``g`` the logit gradient;
    the embedding block is the transposed table ``(d, V)`` with ``a`` the
    one-hot token indicator and ``g`` the gradient at the embedded token, one
    pair per position.
    """
    ids = np.asarray(ids)
    labels = np.asarray(labels)
    vocab, d = model.embedding.shape
    if ids.ndim != 2 or labels.shape != ids.shape[:1]:
        raise ValueError("ids must be (batch, n) with one label per row")
    if np.any(ids < 0) or np.any(ids >= vocab):
        raise IndexOutOfRange(f"token id outside [0, {vocab})")
    if np.any(labels < 0) or np.any(labels >= model.head.shape[0]):
        raise IndexOutOfRange("label outside the class range")
    batch, n = ids.shape

    x = model.embedding[ids]
    z = layer_norm(x, model.ln)
    att = attention_forward(z)
    pooled = att.y.mean(axis=1)
    logits = pooled @ model.head.T
    probs = softmax(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    per_sample = log_norm - shifted[np.arange(batch), labels]

    # per-sample gradients of each sample's own loss
    dlogits = probs.copy()
    dlogits[np.arange(batch), labels] -= 1.0
    dpooled = dlogits @ model.head
    dy = np.repeat(dpooled[:, None, :] / n, n, axis=1)
    dz = attention_backward(z, dy, att)
    dx = layer_norm_backward(x, dz, model.ln)

    grad_head = dlogits.T @ pooled / batch
    grad_emb = np.zeros_like(model.embedding)
    np.add.at(grad_emb, ids.reshape(-1), dx.reshape(-1, d))
    grad_emb /= batch

    onehot = np.zeros((batch, n, vocab))
    np.put_along_axis(onehot, ids[:, :, None], 1.0, axis=2)
    return ForwardPass(
        loss=float(per_sample.mean()),
        per_sample_loss=per_sample,
        logits=logits,
        grads={"embedding": grad_emb, "head": grad_head},
        captures={"embedding": (onehot, dx), "head": (pooled, dlogits)},
    )


@dataclass
class StepRecord:
    step: int
    loss: float
    grad_norm: float
    cg_iterations: int
    wall_time: float


@dataclass
class LossCurve:
    records: list[StepRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def deterministic_part(self) -> list[tuple]:
        """Everything except wall time, which is the one non-reproducible column."""
        return [(r.step, r.loss, r.grad_norm, r.cg_iterations) for r in self.records]


def update_directions(model: ToyModel, fp: ForwardPass, config: TrainConfig, warm: dict | None = None) -> tuple[dict, int]:
    """Parameter deltas for one step (to be added) and the CG iteration count.

    ``warm`` holds previous CG solutions per block and is updated in place.
    """
    eta = config.learning_rate
    if config.optimizer == "sgd":
        return {k: -eta * g for k, g in fp.grads.items()}, 0
    solver = SolverConfig(max_iters=config.cg_max_iters, rel_tol=config.cg_rel_tol)
    deltas, iters = {}, 0
    blocks = {
        "head": (model.head, fp.grads["head"], lambda w: w),
        "embedding": (model.embedding.T, fp.grads["embedding"].T, lambda w: w.T),
    }
    for name, (theta, grad, back) in blocks.items():
        a, g = fp.captures[name]
        fisher = DampedFisher(a, g, config.gamma)
        start = warm.get(name) if (warm is not None and config.warm_start) else None
        new_theta, result = natural_gradient_step(theta, grad, fisher, eta, solver, warm_start=start)
        if warm is not None:
            warm[name] = result.x
        deltas[name] = back(new_theta - theta)
        iters += result.iterations
    return deltas, iters


def batch_indices(config: TrainConfig, step: int) -> np.ndarray:
    g = rng.stream(config.seed, _BATCH_STREAM + step)
    return g.choice(config.n_samples, size=config.batch_size, replace=config.batch_size > config.n_samples)


def train(config: TrainConfig, model: ToyModel | None = None, dataset: Dataset | None = None) -> tuple[LossCurve, ToyModel]:
    """Run ``config.steps`` optimizer steps; returns the curve and the trained model."""
    if dataset is None:
        dataset = synth_dataset(config.seed, config.n, config.d, config.vocab, config.classes, config.n_samples)
    model = ToyModel.init(config) if model is None else model.copy()
    curve = LossCurve()
    warm: dict = {}
    start = time.perf_counter()
    for step in range(config.steps):
        idx = batch_indices(config, step)
        fp = forward(model, dataset.ids[idx], dataset.labels[idx])
        if not np.isfinite(fp.loss):
            raise NonFiniteLoss(
                f"loss became {fp.loss!r} at step {step} "
                f"(optimizer={config.optimizer}, eta={config.learning_rate}, gamma={config.gamma})"
            )
        deltas, iters = update_directions(model, fp, config, warm)
        model.embedding = model.embedding + deltas["embedding"]
        model.head = model.head + deltas["head"]
        grad_norm = float(np.sqrt(sum(np.vdot(g, g) for g in fp.grads.values())))
        if not (np.all(np.isfinite(model.embedding)) and np.all(np.isfinite(model.head))):
            raise NonFiniteLoss(
                f"parameters became non-finite after step {step} (loss {fp.loss!r}, "
                f"optimizer={config.optimizer}, eta={config.learning_rate}, gamma={config.gamma})"
            )
        curve.records.append(StepRecord(step, fp.loss, grad_norm, iters, time.perf_counter() - start))
    return curve, model
