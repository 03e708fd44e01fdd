"""Back-propagation through time, SGD, finite-difference checks and the training loop.

Every backward pass takes the per-step deltas of the loss with respect to the
*output pre-activations* ``o_t`` (``None`` for unsupervised steps). With the
cross-entropy losses used here that delta is simply ``y_t - target``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ordinal
from .corpus import Corpus, EmbeddingTable, LabeledSequence
from .errors import DomainError, NonFiniteError, ShapeError
from .models import (
    ElmanParams,
    HeadKind,
    MatrixSpaceParams,
    MRnnParams,
    Trace,
    init_elman,
    init_matrix_space,
    init_mrnn,
    model_kind,
    predict,
    run,
)
from .numerics import Activation, activation_jacobian_diag, sigmoid, softmax

log = logging.getLogger(__name__)

# blocks whose gradient is kept per row (one entry per token id)
ROW_BLOCKS = ("M", "embedding")


# -- losses ---------------------------------------------------------------------


def _xlogy(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x == 0, 0.0, x * np.log(y))


def target(head, label: int, K: int) -> np.ndarray:
    head = HeadKind.parse(head)
    if not 0 <= label < K:
        raise DomainError(f"label {label} outside [0, {K - 1}]")
    if head is HeadKind.ORDINAL:
        return ordinal.encode(label, K)
    if head is HeadKind.CLASSIFY:
        t = np.zeros(K)
        t[label] = 1.0
        return t
    if K != 2:
        raise DomainError(f"scalar head is binary, got K={K}")
    return np.array([float(label)])


def _check_output(head, y, K):
    n = head.n_outputs(K)
    if y.shape != (n,):
        raise ShapeError(f"{head.value} head with K={K} expects {n} outputs, got shape {y.shape}")


def loss(head, raw_output, label: int, K: int):
    """Loss of output probabilities ``raw_output`` and its delta w.r.t. the pre-activations.

    Binary cross-entropy summed over units for the ordinal and scalar heads,
    categorical cross-entropy for the classify head.
    """
    head = HeadKind.parse(head)
    y = np.asarray(raw_output, dtype=np.float64)
    _check_output(head, y, K)
    r = target(head, label, K)
    if head is HeadKind.CLASSIFY:
        value = -float(_xlogy(r, y).sum())
    else:
        value = -float((_xlogy(r, y) + _xlogy(1.0 - r, 1.0 - y)).sum())
    return value, y - r


def loss_from_preact(head, out_preact, label: int, K: int):
    """Same loss as :func:`loss`, evaluated stably from the pre-activations."""
    head = HeadKind.parse(head)
    o = np.asarray(out_preact, dtype=np.float64)
    _check_output(head, o, K)
    r = target(head, label, K)
    if head is HeadKind.CLASSIFY:
        m = o.max()
        value = float(m + math.log(np.exp(o - m).sum()) - o[label])
        return value, softmax(o) - r
    value = float((np.logaddexp(0.0, o) - r * o).sum())
    return value, sigmoid(o) - r


# -- gradients --------------------------------------------------------------------


@dataclass
class Gradients:
    """Gradient buffers mirroring a parameter object.

    ``dense`` holds full-shape arrays; ``rows`` holds row-indexed blocks
    (matrix-space word matrices, embedding rows) as ``{row_id: array}``.
    """

    dense: dict[str, np.ndarray] = field(default_factory=dict)
    rows: dict[str, dict[int, np.ndarray]] = field(default_factory=dict)

    def add_row(self, block: str, row: int, g: np.ndarray):
        bucket = self.rows.setdefault(block, {})
        if row in bucket:
            bucket[row] = bucket[row] + g
        else:
            bucket[row] = np.array(g, dtype=np.float64)

    def arrays(self):
        """Yield ``(block_name, array)`` for every buffer."""
        for name, g in self.dense.items():
            yield name, g
        for name, bucket in self.rows.items():
            for row in sorted(bucket):
                yield name, bucket[row]

    def global_norm(self) -> float:
        return math.sqrt(sum(float(np.vdot(g, g)) for _, g in self.arrays()))

    def scaled(self, s: float) -> "Gradients":
        return Gradients(
            {k: v * s for k, v in self.dense.items()},
            {k: {r: g * s for r, g in b.items()} for k, b in self.rows.items()},
        )

    def densify(self, name: str, shape) -> np.ndarray:
        if name in self.dense:
            return self.dense[name]
        out = np.zeros(shape)
        for row, g in self.rows.get(name, {}).items():
            out[row] += g
        return out


def _check_trace(trace: Trace, deltas, d_h):
    T = len(trace.preact)
    if len(deltas) != T or len(trace.hidden) != T + 1:
        raise ValueError(f"trace covers {T} steps but {len(deltas)} deltas were given")
    if trace.hidden[0].shape != (d_h,):
        raise ValueError(
            f"trace hidden size {trace.hidden[0].shape[0]} does not match parameters (d_h={d_h})"
        )


def backward_elman(p: ElmanParams, trace: Trace, deltas, embedding_ids=None) -> Gradients:
    """BPTT for ``h_t = f(W x_t + V h_{t-1} + b)``, ``o_t = U h_t + c``.

    When ``embedding_ids`` is given, input gradients are accumulated into the
    ``embedding`` row block under those ids.
    """
    _check_trace(trace, deltas, p.d_h)
    dW, dV, db = np.zeros_like(p.W), np.zeros_like(p.V), np.zeros_like(p.b)
    dU, dc = np.zeros_like(p.U), np.zeros_like(p.c)
    grads = Gradients({"W": dW, "V": dV, "b": db, "U": dU, "c": dc})
    dh_next = np.zeros(p.d_h)
    for t in reversed(range(len(deltas))):
        h_t, h_prev = trace.hidden[t + 1], trace.hidden[t]
        dh = dh_next
        if deltas[t] is not None:
            d = np.asarray(deltas[t], dtype=np.float64)
            dU += np.outer(d, h_t)
            dc += d
            dh = dh + p.U.T @ d
        dz = dh * activation_jacobian_diag(p.f, trace.preact[t])
        dW += np.outer(dz, trace.inputs[t])
        dV += np.outer(dz, h_prev)
        db += dz
        if embedding_ids is not None:
            grads.add_row("embedding", embedding_ids[t], p.W.T @ dz)
        dh_next = p.V.T @ dz
    return grads


def backward_mrnn(p: MRnnParams, trace: Trace, deltas, embedding_ids=None) -> Gradients:
    """BPTT through ``h_t = f(x'^T A' h'_{t-1})``, ``o_t = U' [h_t; 1]``.

    ``d z_i / d B_j[i, k] = x'_j h'_k``, so each step adds the outer product
    ``x' (x) dz (x) h'`` to the tensor gradient.
    """
    _check_trace(trace, deltas, p.d_h)
    A = p.A.data
    d_h, d_x = p.d_h, p.d_x
    dA, dU = np.zeros_like(A), np.zeros_like(p.U)
    grads = Gradients({"A": dA, "U": dU})
    U_h = p.U[:, :d_h]
    dh_next = np.zeros(d_h)
    for t in reversed(range(len(deltas))):
        h_t, h_prev = trace.hidden[t + 1], trace.hidden[t]
        dh = dh_next
        if deltas[t] is not None:
            d = np.asarray(deltas[t], dtype=np.float64)
            dU += np.outer(d, np.append(h_t, 1.0))
            dh = dh + U_h.T @ d
        dz = dh * activation_jacobian_diag(p.f, trace.preact[t])
        xb = np.append(trace.inputs[t], 1.0)
        hb = np.append(h_prev, 1.0)
        dA += xb[:, None, None] * np.outer(dz, hb)[None, :, :]
        M = np.tensordot(xb, A, axes=1)
        dh_next = (M.T @ dz)[:d_h]
        if embedding_ids is not None:
            # the constant bias unit of x' receives nothing
            dx = np.tensordot(A, np.outer(dz, hb), axes=([1, 2], [0, 1]))[:d_x]
            grads.add_row("embedding", embedding_ids[t], dx)
    return grads


def backward_matrix_space(p: MatrixSpaceParams, trace: Trace, deltas) -> Gradients:
    """Chain rule through ``h_t = f(M[w_t] h_{t-1})``; repeated words accumulate."""
    _check_trace(trace, deltas, p.m)
    U, _ = p.readout()
    trainable_readout = p.head is not HeadKind.SCALAR
    grads = Gradients()
    if trainable_readout:
        dU, dc = np.zeros_like(p.U), np.zeros_like(p.c)
        grads.dense.update(U=dU, c=dc)
    grads.rows["M"] = {}
    dh_next = np.zeros(p.m)
    for t in reversed(range(len(deltas))):
        w = trace.inputs[t]
        h_t, h_prev = trace.hidden[t + 1], trace.hidden[t]
        dh = dh_next
        if deltas[t] is not None:
            d = np.asarray(deltas[t], dtype=np.float64)
            if trainable_readout:
                dU += np.outer(d, h_t)
                dc += d
            dh = dh + U.T @ d
        dz = dh * activation_jacobian_diag(p.f, trace.preact[t])
        grads.add_row("M", w, np.outer(dz, h_prev))
        dh_next = p.word_matrices[w].T @ dz
    return grads


def backward(p, trace: Trace, deltas, embedding_ids=None) -> Gradients:
    if isinstance(p, MatrixSpaceParams):
        return backward_matrix_space(p, trace, deltas)
    if isinstance(p, ElmanParams):
        return backward_elman(p, trace, deltas, embedding_ids)
    return backward_mrnn(p, trace, deltas, embedding_ids)


def supervision_steps(ex: LabeledSequence, prefix_labels: dict | None):
    """``{step_index: label}``: the final step always, labeled prefixes when known."""
    steps = {}
    if prefix_labels:
        for t in range(1, len(ex.token_ids)):
            label = prefix_labels.get(ex.token_ids[:t])
            if label is not None:
                steps[t - 1] = label
    steps[len(ex.token_ids) - 1] = ex.label
    return steps


def example_gradients(p, ex: LabeledSequence, embeddings: EmbeddingTable | None, K: int,
                      prefix_labels: dict | None = None):
    """Forward, loss and backward for one example; returns ``(loss, Gradients)``."""
    tr = run(p, ex.token_ids, embeddings)
    steps = supervision_steps(ex, prefix_labels)
    deltas = [None] * len(ex.token_ids)
    total = 0.0
    for t, label in steps.items():
        value, deltas[t] = loss_from_preact(p.head, tr.out_preact[t], label, K)
        total += value
    emb_ids = None
    if embeddings is not None and embeddings.trainable and not isinstance(p, MatrixSpaceParams):
        emb_ids = ex.token_ids
    return total, backward(p, tr, deltas, emb_ids)


def example_loss(p, ex: LabeledSequence, embeddings, K: int, prefix_labels=None) -> float:
    tr = run(p, ex.token_ids, embeddings)
    return sum(
        loss_from_preact(p.head, tr.out_preact[t], label, K)[0]
        for t, label in supervision_steps(ex, prefix_labels).items()
    )


# -- finite-difference gradient check ----------------------------------------------


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def lines(self) -> list[str]:
        return [f"{name}\t{err:.3e}" for name, err in self.errors.items()]


def relative_error(a, n) -> np.ndarray:
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def _as_example(example) -> LabeledSequence:
    if isinstance(example, LabeledSequence):
        return example
    token_ids, label = example
    return LabeledSequence(tuple(token_ids), int(label))


EXTENDED = np.longdouble


def _ld_act(f, z):
    if f is Activation.IDENTITY:
        return z
    if f is Activation.TANH:
        return np.tanh(z)
    if f is Activation.RECTIFIER:
        return np.maximum(z, 0)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e))


def _ld_step_loss(head, o, label, K):
    r = target(head, label, K).astype(EXTENDED)
    if head is HeadKind.CLASSIFY:
        m = o.max()
        return m + np.log(np.exp(o - m).sum()) - o[label]
    return (np.logaddexp(EXTENDED(0), o) - r * o).sum()


def _extended_objective(p, blocks: dict, emb_vectors, ex: LabeledSequence, K: int, steps: dict):
    """Sequence loss recomputed from scratch in extended precision.

    Written independently of the float64 forward passes so the finite
    differences it feeds are not limited by float64 cancellation.
    """
    one = EXTENDED(1)
    h = p.h0.astype(EXTENDED)
    total = EXTENDED(0)
    for t, w in enumerate(ex.token_ids):
        if isinstance(p, MatrixSpaceParams):
            h = _ld_act(p.f, blocks["M"][w] @ h)
            if p.head is HeadKind.SCALAR:
                o = (p.u.astype(EXTENDED) @ h)[None]
            else:
                o = blocks["U"] @ h + blocks["c"]
        elif isinstance(p, ElmanParams):
            x = emb_vectors[w]
            h = _ld_act(p.f, blocks["W"] @ x + blocks["V"] @ h + blocks["b"])
            o = blocks["U"] @ h + blocks["c"]
        else:
            xb = np.append(emb_vectors[w], one)
            hb = np.append(h, one)
            A = blocks["A"]
            z = np.zeros(p.d_h, dtype=EXTENDED)
            for j in range(A.shape[0]):
                z = z + xb[j] * (A[j] @ hb)
            h = _ld_act(p.f, z)
            o = blocks["U"] @ np.append(h, one)
        if t in steps:
            total = total + _ld_step_loss(p.head, o, steps[t], K)
    return total


def grad_check(p, example, embeddings: EmbeddingTable | None = None, epsilon: float = 1e-5,
               tolerance: float = 1e-4, K: int | None = None, prefix_labels: dict | None = None,
               gradient_fn: Callable | None = None) -> GradCheckReport:
    """Compare analytic gradients with central differences, block by block.

    ``gradient_fn(p, example, embeddings, K, prefix_labels) -> (loss, Gradients)``
    replaces :func:`example_gradients`, which is how faults are injected in tests.
    Row blocks are checked on the rows the example touches; the others are
    structurally zero on both sides. The differenced objective is evaluated in
    extended precision.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise DomainError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    ex = _as_example(example)
    if K is None:
        K = p.head.n_classes(p.n_out)
    gradient_fn = gradient_fn or example_gradients
    _, grads = gradient_fn(p, ex, embeddings, K, prefix_labels)
    steps = supervision_steps(ex, prefix_labels)

    base = {name: value.astype(EXTENDED) for name, value in p.blocks().items()}
    emb_trainable = (embeddings is not None and embeddings.trainable
                     and not isinstance(p, MatrixSpaceParams))
    emb = embeddings.vectors.astype(EXTENDED) if embeddings is not None else None
    if emb_trainable:
        base["embedding"] = emb
    used_rows = sorted(set(ex.token_ids))
    eps = EXTENDED(epsilon)

    errors = {}
    for name, value in base.items():
        if name == "embedding":
            analytic = grads.densify("embedding", embeddings.vectors.shape)
        else:
            analytic = grads.densify(name, value.shape)
        if name in ROW_BLOCKS:
            coords = [(r,) + idx for r in used_rows for idx in np.ndindex(value.shape[1:])]
        else:
            coords = list(np.ndindex(value.shape))
        worst = 0.0
        for idx in coords:
            diff = EXTENDED(0)
            for sign in (1, -1):
                bumped = value.copy()
                bumped[idx] += sign * eps
                blocks = dict(base, **{name: bumped})
                diff += sign * _extended_objective(p, blocks, blocks.get("embedding", emb), ex, K, steps)
            numeric = float(diff / (2 * eps))
            worst = max(worst, float(relative_error(analytic[idx], numeric)))
        errors[name] = worst
    return GradCheckReport(errors, tolerance)


# -- optimizer --------------------------------------------------------------------


MODEL_KINDS = ("matrix_space", "elman", "mrnn")
AUTO = "auto"
DEFAULT_CLIP = {"mrnn": 5.0}


@dataclass(frozen=True)
class TrainConfig:
    model_kind: str = "mrnn"
    head: HeadKind = HeadKind.ORDINAL
    f: Activation = Activation.TANH
    d_h: int = 8
    d_x: int | None = None
    K: int = 5
    learning_rate: float = 0.05
    l2: float = 0.0
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    init_scale: float = 0.01
    clip_norm: float | None | str = AUTO
    intermediate_supervision: bool = False
    shuffle: bool = True

    def __post_init__(self):
        set_ = object.__setattr__
        kind = str(self.model_kind).replace("-", "_")
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        set_(self, "model_kind", kind)
        set_(self, "head", HeadKind.parse(self.head))
        set_(self, "f", Activation.parse(self.f))
        if self.f is Activation.SOFTMAX:
            raise ValueError("softmax is not a recurrence nonlinearity")
        if self.clip_norm == AUTO:
            set_(self, "clip_norm", DEFAULT_CLIP.get(kind))
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.l2 < 0:
            raise ValueError(f"l2 must be non-negative, got {self.l2}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.d_h < 1:
            raise ValueError(f"d_h must be >= 1, got {self.d_h}")
        if self.K < 2:
            raise ValueError(f"K must be >= 2, got {self.K}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.init_scale <= 0:
            raise ValueError(f"init_scale must be positive, got {self.init_scale}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive or None, got {self.clip_norm}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["head"] = self.head.value
        d["f"] = self.f.value
        return d


def sgd_update(p, grads: Gradients, config: TrainConfig, embeddings: EmbeddingTable | None = None):
    """One step ``theta <- theta - lr * (g + l2 * theta)`` with optional global-norm clipping.

    Returns new parameters. A trainable embedding table is owned by the caller
    and is updated in place; a frozen one is never touched.
    """
    for name, g in grads.arrays():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter block {name!r}")
    if config.clip_norm is not None:
        norm = grads.global_norm()
        if norm > config.clip_norm:
            grads = grads.scaled(config.clip_norm / norm)
    lr, l2 = config.learning_rate, config.l2
    new_blocks = {}
    for name, value in p.blocks().items():
        step = value * l2 if l2 else np.zeros_like(value)
        if name in grads.dense:
            step = step + grads.dense[name]
        for row, g in grads.rows.get(name, {}).items():
            step[row] += g
        new_blocks[name] = value - lr * step
    if embeddings is not None and embeddings.trainable:
        vec = embeddings.vectors
        if l2:
            vec -= lr * l2 * vec
        for row, g in grads.rows.get("embedding", {}).items():
            vec[row] -= lr * g
    return p.with_blocks(new_blocks)


# -- training loop ----------------------------------------------------------------


class TrainingDivergedError(NonFiniteError):
    def __init__(self, message, epoch=None, example=None):
        self.epoch = epoch
        self.example = example
        super().__init__(message)


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    dev_metric: list[float] = field(default_factory=list)
    metric_name: str = "ranking_loss"
    best_epoch: int = 0
    epochs_run: int = 0
    snapshot_id: str = ""


def init_params(config: TrainConfig, vocab_size: int | None = None):
    rng = np.random.default_rng([config.seed, 0])
    args = (config.K, config.head, config.f, config.init_scale, rng)
    if config.model_kind == "matrix_space":
        if vocab_size is None:
            raise ValueError("matrix-space initialization needs the vocabulary size")
        return init_matrix_space(vocab_size, config.d_h, *args)
    if config.d_x is None:
        raise ValueError(f"{config.model_kind} initialization needs d_x")
    if config.model_kind == "elman":
        return init_elman(config.d_x, config.d_h, *args)
    return init_mrnn(config.d_x, config.d_h, *args)


def dev_metric_name(head) -> str:
    return "ranking_loss" if HeadKind.parse(head) is HeadKind.ORDINAL else "accuracy"


def predict_corpus(p, corpus: Corpus, embeddings=None) -> list[int]:
    return [predict(p.head, run(p, ex.token_ids, embeddings).outputs[-1]) for ex in corpus]


def evaluate(p, corpus: Corpus, embeddings=None) -> dict:
    preds = predict_corpus(p, corpus, embeddings)
    truth = corpus.labels
    return {
        "n": len(truth),
        "ranking_loss": ordinal.ranking_loss(preds, truth),
        "accuracy": ordinal.accuracy(preds, truth),
    }


def snapshot_id(p, embeddings=None) -> str:
    h = hashlib.sha256()
    for name, value in sorted(p.blocks().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(value).tobytes())
    if embeddings is not None and embeddings.trainable:
        h.update(embeddings.vectors.tobytes())
    return h.hexdigest()[:16]


def prefix_label_map(corpus: Corpus) -> dict:
    out = {}
    for ex in corpus:
        out.setdefault(ex.token_ids, ex.label)
    return out


def train(config: TrainConfig, train_set: Corpus, dev_set: Corpus,
          embeddings: EmbeddingTable | None = None, vocab_size: int | None = None,
          on_epoch: Callable[[int, float, float], None] | None = None, init=None):
    """Per-example SGD with early stopping on the dev metric.

    Returns ``(best_params, best_embeddings, report)``. A trainable embedding
    table is copied first, so the caller's table is never modified.
    ``init`` overrides parameter initialization.
    """
    if len(train_set) == 0:
        raise DomainError("training corpus is empty")
    if len(dev_set) == 0:
        raise DomainError("development corpus is empty")
    if train_set.n_classes != config.K or dev_set.n_classes != config.K:
        raise DomainError(
            f"corpora have K={train_set.n_classes}/{dev_set.n_classes}, config has K={config.K}"
        )
    if config.model_kind != "matrix_space":
        if embeddings is None:
            raise ValueError(f"{config.model_kind} needs an embedding table")
        if config.d_x is not None and config.d_x != embeddings.dim:
            raise ShapeError(f"config d_x={config.d_x} but embeddings have dim {embeddings.dim}")
        config = dataclasses.replace(config, d_x=embeddings.dim)
        if embeddings.trainable:
            embeddings = EmbeddingTable(embeddings.vectors.copy(), trainable=True)
        if vocab_size is None:
            vocab_size = len(embeddings)
    else:
        embeddings = None
        if vocab_size is None:
            vocab_size = 1 + max(max(ex.token_ids) for ex in (*train_set, *dev_set))

    p = init if init is not None else init_params(config, vocab_size)
    if config.model_kind != model_kind(p):
        raise ValueError(f"initial parameters are {model_kind(p)}, config says {config.model_kind}")
    K = config.K
    order_rng = np.random.default_rng([config.seed, 1])
    prefixes = prefix_label_map(train_set) if config.intermediate_supervision else None
    metric = dev_metric_name(config.head)
    lower_is_better = metric == "ranking_loss"
    report = TrainReport(metric_name=metric)
    best = None
    best_value = None
    stale = 0
    examples = train_set.examples

    for epoch in range(1, config.max_epochs + 1):
        order = order_rng.permutation(len(examples)) if config.shuffle else range(len(examples))
        total = 0.0
        for i in order:
            value, grads = example_gradients(p, examples[i], embeddings, K, prefixes)
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, example {i}", epoch, int(i)
                )
            total += value
            try:
                p = sgd_update(p, grads, config, embeddings)
            except NonFiniteError as exc:
                raise TrainingDivergedError(f"epoch {epoch}, example {i}: {exc}", epoch, int(i)) from exc
        train_loss = total / len(examples)
        dev_value = evaluate(p, dev_set, embeddings)[metric]
        report.train_loss.append(train_loss)
        report.dev_metric.append(dev_value)
        report.epochs_run = epoch
        if on_epoch is not None:
            on_epoch(epoch, train_loss, dev_value)
        log.debug("epoch %d train_loss=%.6f dev_%s=%.6f", epoch, train_loss, metric, dev_value)

        improved = best_value is None or (
            dev_value < best_value if lower_is_better else dev_value > best_value
        )
        if improved:
            best_value = dev_value
            emb_copy = embeddings
            if embeddings is not None and embeddings.trainable:
                emb_copy = EmbeddingTable(embeddings.vectors.copy(), trainable=True)
            best = (p, emb_copy)
            report.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    best_p, best_emb = best
    report.snapshot_id = snapshot_id(best_p, best_emb)
    return best_p, best_emb, report


def label_frequency_baseline(train_labels: Sequence[int]) -> int:
    """Constant label minimizing the training ranking loss (the label median)."""
    counts = np.bincount(np.asarray(train_labels, dtype=np.int64))
    cum = np.cumsum(counts)
    return int(np.searchsorted(cum, cum[-1] / 2.0))
