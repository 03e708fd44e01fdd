"""Seeded self-checks: gradient verification over a configuration matrix and
exhaustive one-hot equivalence between matrix-space models and mRNNs."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .corpus import EmbeddingTable, LabeledSequence, one_hot_embeddings
from .models import (
    MRnnParams,
    MatrixSpaceParams,
    forward_matrix_space,
    forward_mrnn,
    init_elman,
    init_matrix_space,
    init_mrnn,
    mrnn_from_matrix_space,
    run,
)
from .numerics import Activation, Tensor3
from .training import grad_check

GRADCHECK_KINDS = ("matrix_space", "elman", "mrnn")
GRADCHECK_HEADS = ("ordinal", "classify")
GRADCHECK_ACTIVATIONS = ("identity", "tanh", "rectifier")

PARAM_SCALE = 0.5
KINK_MARGIN = 1e-4


@dataclass
class Instance:
    params: object
    example: LabeledSequence
    embeddings: EmbeddingTable | None
    K: int


def random_instance(kind, head, f, rng, max_d_h=6, max_d_x=8, max_len=5, vocab_size=6,
                    purely_multiplicative=False) -> Instance:
    """A small random model plus one labeled sequence.

    Rectifier instances are redrawn until every hidden pre-activation is at
    least ``KINK_MARGIN`` away from the kink.
    """
    while True:
        d_h = int(rng.integers(2, max_d_h + 1))
        d_x = int(rng.integers(2, max_d_x + 1))
        T = int(rng.integers(1, max_len + 1))
        K = int(rng.integers(3, 6))
        emb = None
        if kind == "matrix_space":
            p = init_matrix_space(vocab_size, d_h, K, head, f, PARAM_SCALE, rng)
        else:
            emb = EmbeddingTable(rng.uniform(-1, 1, size=(vocab_size, d_x)), trainable=True)
            init = init_elman if kind == "elman" else init_mrnn
            p = init(d_x, d_h, K, head, f, PARAM_SCALE, rng)
            if kind == "mrnn" and purely_multiplicative:
                data = p.A.data.copy()
                data[:-1, :, -1] = 0.0
                data[-1] = 0.0
                p = p.with_blocks({"A": data})
        ex = LabeledSequence(tuple(int(i) for i in rng.integers(0, vocab_size, size=T)),
                             int(rng.integers(0, K)))
        if Activation.parse(f) is Activation.RECTIFIER:
            tr = run(p, ex.token_ids, emb)
            if min(float(np.min(np.abs(z))) for z in tr.preact) < KINK_MARGIN:
                continue
        return Instance(p, ex, emb, K)


@dataclass
class GradCheckRow:
    kind: str
    head: str
    activation: str
    block: str
    max_error: float

    def line(self) -> str:
        return f"{self.kind}\t{self.head}\t{self.activation}\t{self.block}\t{self.max_error:.3e}"


def gradcheck_matrix(seed=0, kinds=GRADCHECK_KINDS, heads=GRADCHECK_HEADS,
                     activations=GRADCHECK_ACTIVATIONS, instances=20, epsilon=1e-5,
                     gradient_fn=None) -> list[GradCheckRow]:
    """Worst relative error per (kind, head, activation, block) over seeded instances."""
    rows = []
    for ci, (kind, head, f) in enumerate(itertools.product(kinds, heads, activations)):
        rng = np.random.default_rng([seed, ci])
        worst: dict[str, float] = {}
        for _ in range(instances):
            inst = random_instance(kind, head, f, rng)
            report = grad_check(inst.params, inst.example, inst.embeddings, epsilon=epsilon,
                                K=inst.K, gradient_fn=gradient_fn)
            for block, err in report.errors.items():
                worst[block] = max(worst.get(block, 0.0), err)
        rows.extend(GradCheckRow(kind, head, f, b, e) for b, e in worst.items())
    return rows


def random_matrix_space(rng, vocab_size=3, m=3) -> MatrixSpaceParams:
    M = rng.uniform(-1, 1, size=(vocab_size, m, m))
    h0 = rng.uniform(-1, 1, size=m)
    u = rng.uniform(-1, 1, size=m)
    return MatrixSpaceParams(M, h0, u)


def all_sequences(vocab_size, max_len):
    for T in range(1, max_len + 1):
        yield from itertools.product(range(vocab_size), repeat=T)


def onehot_discrepancy(ms: MatrixSpaceParams, mr: MRnnParams, max_len: int) -> float:
    """Largest |matrix-space score - mRNN scalar pre-activation| over all sequences."""
    onehot = one_hot_embeddings(ms.vocab_size)
    worst = 0.0
    for seq in all_sequences(ms.vocab_size, max_len):
        score, _ = forward_matrix_space(ms, seq)
        tr = forward_mrnn(mr, [onehot.vectors[w] for w in seq])
        worst = max(worst, abs(score - float(tr.out_preact[-1][0])))
    return worst


def equivcheck(seed=0, max_len=4, draws=10, vocab_size=3, m=3, perturb=0.0) -> list[float]:
    """Per-draw discrepancy of the one-hot conversion; ``perturb`` nudges one tensor entry."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(draws):
        ms = random_matrix_space(rng, vocab_size, m)
        mr = mrnn_from_matrix_space(ms)
        if perturb:
            data = mr.A.data.copy()
            data[0, 0, 0] += perturb
            mr = MRnnParams(Tensor3(data), mr.U, mr.h0, mr.f, mr.head)
        out.append(onehot_discrepancy(ms, mr, max_len))
    return out
