"""Forward passes for matrix-space models, Elman RNNs and multiplicative RNNs.

All three families share the same trace layout so one training loop can drive
them: ``hidden`` holds ``h_0 .. h_T``, ``preact`` the recurrence inputs
``z_1 .. z_T`` with ``h_t = f(z_t)``, and ``out_preact``/``outputs`` the
readout ``o_t`` and ``y_t = g(o_t)`` at every step.

The mRNN tensor acts on bias-augmented vectors ``x' = [x; 1]``, ``h' = [h; 1]``.
With base matrices ``B_j`` of shape ``d_h x (d_h + 1)`` the blocks are::

    B_j[:, :d_h]   j < d_x   multiplicative core
    B_j[:, d_h]    j < d_x   column j of W   (x_j times the h-bias unit)
    B_dx[:, :d_h]            V                (x-bias unit times h)
    B_dx[:, d_h]             b
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from . import ordinal
from .errors import DomainError, ShapeError
from .numerics import (
    Activation,
    Tensor3,
    apply_activation,
    contract_word,
    matvec,
    require_recurrent,
)


class HeadKind(str, Enum):
    ORDINAL = "ordinal"
    CLASSIFY = "classify"
    SCALAR = "scalar"

    @classmethod
    def parse(cls, value) -> "HeadKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown head {value!r}; expected ordinal, classify or scalar") from None

    def n_outputs(self, K: int) -> int:
        if self is HeadKind.ORDINAL:
            return K - 1
        if self is HeadKind.CLASSIFY:
            return K
        return 1

    def n_classes(self, n_out: int) -> int:
        if self is HeadKind.ORDINAL:
            return n_out + 1
        if self is HeadKind.CLASSIFY:
            return n_out
        return 2

    @property
    def output_activation(self) -> Activation:
        return Activation.SOFTMAX if self is HeadKind.CLASSIFY else Activation.SIGMOID


def default_h0(d_h: int, multiplicative: bool) -> np.ndarray:
    # a multiplicative recurrence maps h0 = 0 to 0 forever
    if multiplicative:
        return np.full(d_h, 1.0 / np.sqrt(d_h))
    return np.zeros(d_h)


def _check_shape(name, arr, shape):
    if arr.shape != shape:
        raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")


def _f64(x):
    return np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class MatrixSpaceParams:
    """One ``m x m`` matrix per vocabulary id.

    ``u`` scores ``h_T`` for the scalar head (``score = u . h_T``); the ordinal
    and classify heads read ``h_T`` through the trainable ``U, c`` instead.
    """

    word_matrices: np.ndarray  # (vocab, m, m)
    h0: np.ndarray
    u: np.ndarray
    U: np.ndarray | None = None
    c: np.ndarray | None = None
    f: Activation = Activation.IDENTITY
    head: HeadKind = HeadKind.SCALAR

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "word_matrices", _f64(self.word_matrices))
        set_(self, "h0", _f64(self.h0))
        set_(self, "u", _f64(self.u))
        set_(self, "f", require_recurrent(self.f))
        set_(self, "head", HeadKind.parse(self.head))
        M = self.word_matrices
        if M.ndim != 3 or M.shape[1] != M.shape[2] or 0 in M.shape:
            raise ShapeError(f"word_matrices must be (vocab, m, m), got {M.shape}")
        m = M.shape[1]
        _check_shape("h0", self.h0, (m,))
        _check_shape("u", self.u, (m,))
        if not np.any(self.h0):
            raise DomainError("matrix-space h0 must be non-zero")
        if self.head is HeadKind.SCALAR:
            set_(self, "U", None)
            set_(self, "c", None)
        else:
            if self.U is None or self.c is None:
                raise ShapeError(f"{self.head.value} head needs a readout U, c")
            set_(self, "U", _f64(self.U))
            set_(self, "c", _f64(self.c))
            if self.U.ndim != 2 or self.U.shape[1] != m:
                raise ShapeError(f"U has shape {self.U.shape}, expected (n_out, {m})")
            _check_shape("c", self.c, (self.U.shape[0],))

    @property
    def m(self) -> int:
        return self.word_matrices.shape[1]

    @property
    def d_h(self) -> int:
        return self.m

    @property
    def vocab_size(self) -> int:
        return self.word_matrices.shape[0]

    @property
    def n_out(self) -> int:
        return 1 if self.U is None else self.U.shape[0]

    def readout(self):
        if self.head is HeadKind.SCALAR:
            return self.u[None, :], np.zeros(1)
        return self.U, self.c

    def blocks(self) -> dict[str, np.ndarray]:
        out = {"M": self.word_matrices}
        if self.head is not HeadKind.SCALAR:
            out["U"] = self.U
            out["c"] = self.c
        return out

    def with_blocks(self, blocks) -> "MatrixSpaceParams":
        kw = {}
        if "M" in blocks:
            kw["word_matrices"] = blocks["M"]
        for name in ("U", "c"):
            if name in blocks:
                kw[name] = blocks[name]
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class ElmanParams:
    W: np.ndarray  # (d_h, d_x)
    V: np.ndarray  # (d_h, d_h)
    b: np.ndarray
    U: np.ndarray  # (n_out, d_h)
    c: np.ndarray
    h0: np.ndarray
    f: Activation = Activation.TANH
    head: HeadKind = HeadKind.ORDINAL

    def __post_init__(self):
        set_ = object.__setattr__
        for name in ("W", "V", "b", "U", "c", "h0"):
            set_(self, name, _f64(getattr(self, name)))
        set_(self, "f", require_recurrent(self.f))
        set_(self, "head", HeadKind.parse(self.head))
        if self.W.ndim != 2 or 0 in self.W.shape:
            raise ShapeError(f"W must be a (d_h, d_x) matrix, got {self.W.shape}")
        d_h = self.W.shape[0]
        _check_shape("V", self.V, (d_h, d_h))
        _check_shape("b", self.b, (d_h,))
        _check_shape("h0", self.h0, (d_h,))
        if self.U.ndim != 2 or self.U.shape[1] != d_h:
            raise ShapeError(f"U has shape {self.U.shape}, expected (n_out, {d_h})")
        _check_shape("c", self.c, (self.U.shape[0],))

    @property
    def d_h(self) -> int:
        return self.W.shape[0]

    @property
    def d_x(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.U.shape[0]

    @property
    def g(self) -> Activation:
        return self.head.output_activation

    def blocks(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "V": self.V, "b": self.b, "U": self.U, "c": self.c}

    def with_blocks(self, blocks) -> "ElmanParams":
        return dataclasses.replace(self, **{k: v for k, v in blocks.items() if k in ("W", "V", "b", "U", "c")})


@dataclass(frozen=True)
class MRnnParams:
    """Bias-augmented multiplicative RNN: tensor ``A'`` and readout ``U' = [U, c]``."""

    A: Tensor3  # n_out=d_h, n_in_x=d_x+1, n_in_h=d_h+1
    U: np.ndarray  # (n_out, d_h + 1)
    h0: np.ndarray
    f: Activation = Activation.TANH
    head: HeadKind = HeadKind.ORDINAL

    def __post_init__(self):
        set_ = object.__setattr__
        if not isinstance(self.A, Tensor3):
            set_(self, "A", Tensor3(self.A))
        set_(self, "U", _f64(self.U))
        set_(self, "h0", _f64(self.h0))
        set_(self, "f", require_recurrent(self.f))
        set_(self, "head", HeadKind.parse(self.head))
        d_h = self.A.n_out
        if self.A.n_in_h != d_h + 1 or self.A.n_in_x < 2:
            raise ShapeError(
                f"tensor shape {self.A.shape} is not (d_h, d_x+1, d_h+1) for any d_x >= 1"
            )
        _check_shape("h0", self.h0, (d_h,))
        if self.U.ndim != 2 or self.U.shape[1] != d_h + 1:
            raise ShapeError(f"U' has shape {self.U.shape}, expected (n_out, {d_h + 1})")
        if not np.any(self.h0) and not np.any(self.additive_part()):
            raise DomainError("purely multiplicative mRNN needs a non-zero h0")

    @property
    def d_h(self) -> int:
        return self.A.n_out

    @property
    def d_x(self) -> int:
        return self.A.n_in_x - 1

    @property
    def n_out(self) -> int:
        return self.U.shape[0]

    @property
    def g(self) -> Activation:
        return self.head.output_activation

    def additive_part(self) -> np.ndarray:
        """Entries of ``A'`` that touch a bias unit (W, V and b)."""
        d = self.A.data
        return np.concatenate([d[:-1, :, -1].ravel(), d[-1].ravel()])

    def is_purely_multiplicative(self) -> bool:
        return not np.any(self.additive_part())

    def blocks(self) -> dict[str, np.ndarray]:
        return {"A": self.A.data, "U": self.U}

    def with_blocks(self, blocks) -> "MRnnParams":
        kw = {}
        if "A" in blocks:
            kw["A"] = Tensor3(blocks["A"])
        if "U" in blocks:
            kw["U"] = blocks["U"]
        return dataclasses.replace(self, **kw)


ModelParams = MatrixSpaceParams | ElmanParams | MRnnParams

MODEL_KINDS = {"matrix_space": MatrixSpaceParams, "elman": ElmanParams, "mrnn": MRnnParams}


def model_kind(p) -> str:
    for kind, cls in MODEL_KINDS.items():
        if isinstance(p, cls):
            return kind
    raise TypeError(f"not a model parameter object: {type(p).__name__}")


class Trace(NamedTuple):
    outputs: list  # y_1 .. y_T
    hidden: list  # h_0 .. h_T
    preact: list  # z_1 .. z_T
    out_preact: list  # o_1 .. o_T
    inputs: list  # x_1 .. x_T, or token ids for matrix-space


def forward_matrix_space(p: MatrixSpaceParams, token_ids: Sequence[int]):
    """``h_t = f(M[w_t] h_{t-1})`` from ``h0``; returns ``(u . h_T, trace)``."""
    if len(token_ids) == 0:
        raise DomainError("cannot score an empty sequence")
    U, c = p.readout()
    g = p.head.output_activation
    h = p.h0
    hidden, preact, out_pre, outputs = [h], [], [], []
    for w in token_ids:
        if not 0 <= w < p.vocab_size:
            raise KeyError(f"token id {w} has no word matrix (vocab size {p.vocab_size})")
        z = matvec(p.word_matrices[w], h)
        h = apply_activation(p.f, z)
        o = matvec(U, h) + c
        preact.append(z)
        hidden.append(h)
        out_pre.append(o)
        outputs.append(apply_activation(g, o))
    score = float(p.u @ h)
    return score, Trace(outputs, hidden, preact, out_pre, list(token_ids))


def _check_inputs(embeddings, d_x):
    if len(embeddings) == 0:
        raise DomainError("cannot run a recurrent model on an empty sequence")
    xs = []
    for t, x in enumerate(embeddings):
        x = _f64(x)
        if x.shape != (d_x,):
            raise ShapeError(f"input {t} has shape {x.shape}, expected ({d_x},)")
        xs.append(x)
    return xs


def forward_elman(p: ElmanParams, embeddings) -> Trace:
    xs = _check_inputs(embeddings, p.d_x)
    h = p.h0
    hidden, preact, out_pre, outputs = [h], [], [], []
    for x in xs:
        z = matvec(p.W, x) + matvec(p.V, h) + p.b
        h = apply_activation(p.f, z)
        o = matvec(p.U, h) + p.c
        preact.append(z)
        hidden.append(h)
        out_pre.append(o)
        outputs.append(apply_activation(p.g, o))
    return Trace(outputs, hidden, preact, out_pre, xs)


def forward_mrnn(p: MRnnParams, embeddings) -> Trace:
    xs = _check_inputs(embeddings, p.d_x)
    h = p.h0
    hidden, preact, out_pre, outputs = [h], [], [], []
    for x in xs:
        M = contract_word(np.append(x, 1.0), p.A)
        z = matvec(M, np.append(h, 1.0))
        h = apply_activation(p.f, z)
        o = matvec(p.U, np.append(h, 1.0))
        preact.append(z)
        hidden.append(h)
        out_pre.append(o)
        outputs.append(apply_activation(p.g, o))
    return Trace(outputs, hidden, preact, out_pre, xs)


def run(p, token_ids: Sequence[int], embeddings=None) -> Trace:
    """Forward pass over token ids, looking up embedding rows for the RNN families."""
    if isinstance(p, MatrixSpaceParams):
        return forward_matrix_space(p, token_ids)[1]
    if embeddings is None:
        raise ValueError(f"{model_kind(p)} needs an embedding table")
    xs = [embeddings.vectors[i] for i in token_ids]
    if isinstance(p, ElmanParams):
        return forward_elman(p, xs)
    return forward_mrnn(p, xs)


def predict(head, output_vector) -> int:
    head = HeadKind.parse(head)
    y = _f64(output_vector)
    if y.ndim != 1 or y.size == 0:
        raise ShapeError(f"output must be a non-empty vector, got shape {y.shape}")
    if head is HeadKind.CLASSIFY:
        return int(np.argmax(y))  # first maximum wins ties
    if head is HeadKind.ORDINAL:
        return ordinal.decode(y)
    if y.shape != (1,):
        raise ShapeError(f"scalar head expects one output, got {y.shape[0]}")
    return int(y[0] >= 0.5)


def predict_sequence(p, token_ids, embeddings=None):
    """``(label, y_T, h_T)`` for one sequence."""
    tr = run(p, token_ids, embeddings)
    y = tr.outputs[-1]
    return predict(p.head, y), y, tr.hidden[-1]


# -- equivalence constructions ------------------------------------------------


def pack_additive(W, V, b, core: np.ndarray | None = None) -> Tensor3:
    """Embed Elman weights ``W, V, b`` into the bias blocks of a tensor ``A'``.

    ``core`` optionally fills the multiplicative block, shape ``(d_x, d_h, d_h)``.
    """
    W, V, b = _f64(W), _f64(V), _f64(b)
    d_h, d_x = W.shape
    data = np.zeros((d_x + 1, d_h, d_h + 1))
    if core is not None:
        core = _f64(core)
        _check_shape("core", core, (d_x, d_h, d_h))
        data[:d_x, :, :d_h] = core
    data[:d_x, :, d_h] = W.T
    data[d_x, :, :d_h] = V
    data[d_x, :, d_h] = b
    return Tensor3(data)


def mrnn_from_elman(p: ElmanParams, core: np.ndarray | None = None) -> MRnnParams:
    A = pack_additive(p.W, p.V, p.b, core)
    return MRnnParams(A, np.hstack([p.U, p.c[:, None]]), p.h0, p.f, p.head)


def mrnn_from_matrix_space(p: MatrixSpaceParams) -> MRnnParams:
    """mRNN over one-hot inputs (``d_x = |V|``) that computes exactly the matrix-space model.

    Base matrix ``j`` is ``M_j`` with a zero bias column, the bias slice is
    zero, ``f`` is the identity and the scalar readout is ``[u, 0]``.
    """
    n, m = p.vocab_size, p.m
    data = np.zeros((n + 1, m, m + 1))
    data[:n, :, :m] = p.word_matrices
    U = np.append(p.u, 0.0)[None, :]
    return MRnnParams(Tensor3(data), U, p.h0.copy(), Activation.IDENTITY, HeadKind.SCALAR)


def unfold_product(matrices: Sequence[np.ndarray], h0) -> np.ndarray:
    """``M_T ... M_1 h0`` computed as an explicit matrix product, then applied."""
    m = len(h0)
    P = np.eye(m)
    for M in matrices:
        P = M @ P
    return P @ _f64(h0)


# -- initialization -------------------------------------------------------------


def init_elman(d_x, d_h, K, head, f, scale, rng) -> ElmanParams:
    head = HeadKind.parse(head)
    n_out = head.n_outputs(K)
    u = lambda *shape: rng.uniform(-scale, scale, size=shape)  # noqa: E731
    return ElmanParams(
        W=u(d_h, d_x), V=u(d_h, d_h), b=u(d_h), U=u(n_out, d_h), c=u(n_out),
        h0=default_h0(d_h, multiplicative=False), f=f, head=head,
    )


def init_mrnn(d_x, d_h, K, head, f, scale, rng) -> MRnnParams:
    head = HeadKind.parse(head)
    n_out = head.n_outputs(K)
    A = Tensor3(rng.uniform(-scale, scale, size=(d_x + 1, d_h, d_h + 1)))
    U = rng.uniform(-scale, scale, size=(n_out, d_h + 1))
    return MRnnParams(A, U, default_h0(d_h, multiplicative=True), f, head)


def init_matrix_space(vocab_size, m, K, head, f, scale, rng) -> MatrixSpaceParams:
    head = HeadKind.parse(head)
    M = np.eye(m)[None, :, :] + rng.uniform(-scale, scale, size=(vocab_size, m, m))
    u = np.zeros(m)
    u[0] = 1.0
    U = c = None
    if head is not HeadKind.SCALAR:
        n_out = head.n_outputs(K)
        U = rng.uniform(-scale, scale, size=(n_out, m))
        c = rng.uniform(-scale, scale, size=n_out)
    return MatrixSpaceParams(M, default_h0(m, multiplicative=True), u, U, c, f, head)
