"""Dense numeric kernel: vectors, matrices, 3-tensors, bilinear forms and activations.

Vectors and matrices are plain float64 numpy arrays (1-D and 2-D). A
``Tensor3`` is stored as a stack of base matrices, one per input dimension,
so that ``contract_word`` is a weighted sum over the stack::

    bilinear(x, A, h)_i = sum_jk B_j[i, k] x_j h_k = ((sum_j x_j B_j) h)_i
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeError, UnsupportedActivationError

Vector = np.ndarray
Matrix = np.ndarray


def as_vector(data) -> Vector:
    v = np.asarray(data, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ShapeError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    return v


def as_matrix(data) -> Matrix:
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class Tensor3:
    """Order-3 tensor held as ``n_in_x`` base matrices of shape ``n_out x n_in_h``.

    ``data[j]`` is base matrix ``B_j``. The output-slice view ``A^[i]``
    (an ``n_in_x x n_in_h`` matrix) is available through :meth:`output_slice`.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or 0 in arr.shape:
            raise ShapeError(f"Tensor3 needs a non-empty 3-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Tensor3 entries must be finite")
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_base_matrices(cls, base_matrices) -> "Tensor3":
        mats = [as_matrix(b) for b in base_matrices]
        if not mats:
            raise ShapeError("Tensor3 needs at least one base matrix")
        shape = mats[0].shape
        for j, b in enumerate(mats):
            if b.shape != shape:
                raise ShapeError(f"base matrix {j} has shape {b.shape}, expected {shape}")
        return cls(np.stack(mats))

    @classmethod
    def zeros(cls, n_out: int, n_in_x: int, n_in_h: int) -> "Tensor3":
        return cls(np.zeros((n_in_x, n_out, n_in_h)))

    @property
    def n_in_x(self) -> int:
        return self.data.shape[0]

    @property
    def n_out(self) -> int:
        return self.data.shape[1]

    @property
    def n_in_h(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        """(n_out, n_in_x, n_in_h), the ``d_h x d_x x d_h`` ordering."""
        return (self.n_out, self.n_in_x, self.n_in_h)

    @property
    def base_matrices(self) -> list[Matrix]:
        return [self.data[j] for j in range(self.n_in_x)]

    def output_slice(self, i: int) -> Matrix:
        return self.data[:, i, :]


def _shape_error(op: str, *arrays) -> ShapeError:
    shapes = " and ".join(str(getattr(a, "shape", None)) for a in arrays)
    return ShapeError(f"{op}: incompatible shapes {shapes}")


def matvec(m: Matrix, v: Vector) -> Vector:
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise _shape_error("matvec", m, v)
    return m @ v


def contract_word(x: Vector, a: Tensor3) -> Matrix:
    """Collapse the tensor along its input axis: ``M = sum_j x_j B_j``."""
    if x.ndim != 1 or x.shape[0] != a.n_in_x:
        raise _shape_error("contract_word", x, a.data)
    return np.tensordot(x, a.data, axes=1)


def bilinear(x: Vector, a: Tensor3, h: Vector) -> Vector:
    if x.ndim != 1 or h.ndim != 1 or x.shape[0] != a.n_in_x or h.shape[0] != a.n_in_h:
        raise _shape_error("bilinear", x, a.data, h)
    return np.tensordot(x, a.data, axes=1) @ h


class Activation(str, Enum):
    IDENTITY = "identity"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    RECTIFIER = "rectifier"
    SOFTMAX = "softmax"

    @classmethod
    def parse(cls, value) -> "Activation":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(a.value for a in cls)
            raise ValueError(f"unknown activation {value!r}; expected one of {names}") from None


RECURRENT_ACTIVATIONS = (Activation.IDENTITY, Activation.SIGMOID, Activation.TANH, Activation.RECTIFIER)


def require_recurrent(a) -> Activation:
    a = Activation.parse(a)
    if a is Activation.SOFTMAX:
        raise UnsupportedActivationError("softmax can only be used as an output nonlinearity")
    return a


def sigmoid(v):
    # branch form: exp is only ever taken of a non-positive argument
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax(v):
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - np.max(v))
    return e / e.sum()


def apply_activation(a, v: Vector) -> Vector:
    a = Activation.parse(a)
    v = np.asarray(v, dtype=np.float64)
    if a is Activation.IDENTITY:
        return v.copy()
    if a is Activation.SIGMOID:
        return sigmoid(v)
    if a is Activation.TANH:
        return np.tanh(v)
    if a is Activation.RECTIFIER:
        return np.maximum(v, 0.0)
    return softmax(v)


def activation_jacobian_diag(a, preact: Vector) -> Vector:
    """Elementwise derivative of ``a`` at ``preact``; softmax is rejected."""
    a = Activation.parse(a)
    preact = np.asarray(preact, dtype=np.float64)
    if a is Activation.IDENTITY:
        return np.ones_like(preact)
    if a is Activation.SIGMOID:
        s = sigmoid(preact)
        return s * (1.0 - s)
    if a is Activation.TANH:
        t = np.tanh(preact)
        return 1.0 - t * t
    if a is Activation.RECTIFIER:
        return (preact > 0).astype(np.float64)
    raise UnsupportedActivationError(
        "softmax has a full Jacobian; its gradient is taken jointly with cross-entropy"
    )
