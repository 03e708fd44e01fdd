"""Versioned, human-readable model files.

A model file is a JSON document. Every array is stored as ``{"shape": [...],
"data": "v v v ..."}`` with row-major values printed to 17 significant
digits, which round-trips float64 exactly, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import EmbeddingTable, Vocabulary
from .models import ElmanParams, HeadKind, MatrixSpaceParams, MRnnParams, model_kind
from .numerics import Tensor3

FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


def encode_array(a) -> dict:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ModelFileError("refusing to serialize non-finite values")
    return {"shape": list(a.shape), "data": " ".join("%.17g" % v for v in a.ravel())}


def decode_array(obj, name) -> np.ndarray:
    try:
        shape = tuple(int(n) for n in obj["shape"])
        values = [float(v) for v in obj["data"].split()]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"array {name!r} is malformed: {exc}") from None
    if len(values) != int(np.prod(shape)):
        raise ModelFileError(
            f"array {name!r} declares shape {list(shape)} but holds {len(values)} values"
        )
    arr = np.array(values, dtype=np.float64).reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ModelFileError(f"array {name!r} contains non-finite values")
    return arr


@dataclass
class ModelFile:
    params: object
    vocabulary: Vocabulary
    K: int
    embeddings: EmbeddingTable | None = None
    config: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def model_kind(self) -> str:
        return model_kind(self.params)

    @property
    def head(self) -> HeadKind:
        return self.params.head

    @property
    def d_h(self) -> int:
        return self.params.d_h

    @property
    def d_x(self) -> int | None:
        if isinstance(self.params, MatrixSpaceParams):
            return None
        return self.params.d_x


def _param_arrays(p) -> dict:
    if isinstance(p, MatrixSpaceParams):
        out = {"M": p.word_matrices, "h0": p.h0, "u": p.u}
        if p.U is not None:
            out.update(U=p.U, c=p.c)
        return out
    if isinstance(p, ElmanParams):
        return {"W": p.W, "V": p.V, "b": p.b, "U": p.U, "c": p.c, "h0": p.h0}
    return {"A": p.A.data, "U": p.U, "h0": p.h0}


def to_document(mf: ModelFile) -> dict:
    p = mf.params
    doc = {
        "format_version": FORMAT_VERSION,
        "model_kind": mf.model_kind,
        "head": p.head.value,
        "K": int(mf.K),
        "d_x": mf.d_x,
        "d_h": int(mf.d_h),
        "f": p.f.value,
        "vocabulary": list(mf.vocabulary.tokens),
        "params": {k: encode_array(v) for k, v in _param_arrays(p).items()},
        "embeddings": None,
        "config": mf.config,
        "metadata": mf.metadata,
    }
    if mf.embeddings is not None:
        doc["embeddings"] = dict(encode_array(mf.embeddings.vectors),
                                 trainable=bool(mf.embeddings.trainable))
    return doc


def dumps(mf: ModelFile) -> str:
    return json.dumps(to_document(mf), indent=1, ensure_ascii=False) + "\n"


def from_document(doc: dict) -> ModelFile:
    if not isinstance(doc, dict):
        raise ModelFileError("model file must hold a JSON object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelFileError(f"unsupported format_version {doc.get('format_version')!r}")
    try:
        kind, head, f = doc["model_kind"], doc["head"], doc["f"]
        K, d_h, d_x = int(doc["K"]), int(doc["d_h"]), doc["d_x"]
        arrays = {k: decode_array(v, k) for k, v in doc["params"].items()}
        vocab = Vocabulary(doc["vocabulary"])
    except KeyError as exc:
        raise ModelFileError(f"missing field {exc}") from None
    try:
        if kind == "matrix_space":
            p = MatrixSpaceParams(arrays["M"], arrays["h0"], arrays["u"], arrays.get("U"),
                                  arrays.get("c"), f, head)
            if p.vocab_size != len(vocab):
                raise ModelFileError(f"{p.vocab_size} word matrices for {len(vocab)} tokens")
        elif kind == "elman":
            p = ElmanParams(arrays["W"], arrays["V"], arrays["b"], arrays["U"], arrays["c"],
                            arrays["h0"], f, head)
        elif kind == "mrnn":
            p = MRnnParams(Tensor3(arrays["A"]), arrays["U"], arrays["h0"], f, head)
        else:
            raise ModelFileError(f"unknown model_kind {kind!r}")
    except KeyError as exc:
        raise ModelFileError(f"{kind} model is missing array {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ModelFileError):
            raise
        raise ModelFileError(f"inconsistent parameters: {exc}") from None
    if p.d_h != d_h:
        raise ModelFileError(f"declared d_h={d_h} but parameters have d_h={p.d_h}")
    if p.n_out != p.head.n_outputs(K):
        raise ModelFileError(f"{p.head.value} head with K={K} needs {p.head.n_outputs(K)} outputs")
    emb = None
    if doc.get("embeddings") is not None:
        e = doc["embeddings"]
        emb = EmbeddingTable(decode_array(e, "embeddings"), trainable=bool(e.get("trainable")))
        if len(emb) != len(vocab):
            raise ModelFileError(f"{len(emb)} embedding rows for {len(vocab)} tokens")
    if kind != "matrix_space":
        if emb is None:
            raise ModelFileError(f"{kind} model file has no embedding table")
        if d_x is None or int(d_x) != p.d_x or emb.dim != p.d_x:
            raise ModelFileError(f"declared d_x={d_x} disagrees with parameters/embeddings")
    return ModelFile(p, vocab, K, emb, doc.get("config", {}), doc.get("metadata", {}))


def loads(text: str) -> ModelFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"not valid JSON: {exc}") from None
    return from_document(doc)


def atomic_write_text(path, text: str):
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(path, mf: ModelFile):
    atomic_write_text(path, dumps(mf))


def load_model(path) -> ModelFile:
    return loads(Path(path).read_text(encoding="utf-8"))
