import math

import numpy as np
import pytest

from mrnn import ordinal
from mrnn.checks import random_instance
from mrnn.corpus import Corpus, EmbeddingTable, LabeledSequence, init_random_embeddings, synthetic_splits
from mrnn.errors import DomainError, NonFiniteError
from mrnn.models import (
    ElmanParams,
    MatrixSpaceParams,
    MRnnParams,
    forward_elman,
    forward_mrnn,
    init_elman,
    init_mrnn,
    run,
)
from mrnn.numerics import Tensor3, sigmoid
from mrnn.training import (
    Gradients,
    TrainConfig,
    TrainingDivergedError,
    backward,
    backward_elman,
    backward_matrix_space,
    backward_mrnn,
    evaluate,
    example_gradients,
    grad_check,
    label_frequency_baseline,
    loss,
    loss_from_preact,
    sgd_update,
    supervision_steps,
    train,
)


# -- losses -------------------------------------------------------------------


def test_uniform_classify_loss_is_log_k():
    value, delta = loss("classify", np.full(5, 0.2), 3, 5)
    assert value == pytest.approx(math.log(5), rel=1e-14)
    np.testing.assert_allclose(delta, [0.2, 0.2, 0.2, -0.8, 0.2])


def test_half_ordinal_loss_is_four_log_two():
    value, _ = loss("ordinal", np.full(4, 0.5), 2, 5)
    assert value == pytest.approx(4 * math.log(2), rel=1e-14)


@pytest.mark.parametrize("head, y, label, K", [
    ("ordinal", [1.0, 1.0, 0.0, 0.0], 2, 5),
    ("classify", [0.0, 1.0, 0.0], 1, 3),
    ("scalar", [1.0], 1, 2),
])
def test_perfect_prediction_has_zero_loss(head, y, label, K):
    value, delta = loss(head, y, label, K)
    assert value == 0.0
    assert not np.any(delta)


@pytest.mark.parametrize("head, n", [("ordinal", 4), ("classify", 5)])
def test_stable_loss_matches_probability_loss(head, n, rng):
    for _ in range(20):
        o = rng.normal(scale=3, size=n)
        label = int(rng.integers(0, 5))
        y = sigmoid(o) if head == "ordinal" else np.exp(o) / np.exp(o).sum()
        a, da = loss(head, y, label, 5)
        b, db = loss_from_preact(head, o, label, 5)
        assert a == pytest.approx(b, rel=1e-10)
        np.testing.assert_allclose(da, db, atol=1e-14)


def test_stable_loss_stays_finite_for_huge_preact():
    value, delta = loss_from_preact("ordinal", np.array([800.0, -800.0]), 0, 3)
    assert value == pytest.approx(800.0)
    assert np.all(np.isfinite(delta))


# -- hand-derived gradients ---------------------------------------------------------


def test_elman_single_step_gradients(rng):
    p = init_elman(3, 2, 5, "ordinal", "identity", 0.7, rng)
    x = rng.normal(size=3)
    tr = forward_elman(p, [x])
    d = rng.normal(size=4)
    g = backward_elman(p, tr, [d])
    dz = p.U.T @ d
    np.testing.assert_allclose(g.dense["W"], np.outer(dz, x), atol=1e-15)
    np.testing.assert_allclose(g.dense["b"], dz, atol=1e-15)
    np.testing.assert_allclose(g.dense["V"], 0.0)  # h0 = 0
    np.testing.assert_allclose(g.dense["U"], np.outer(d, tr.hidden[1]), atol=1e-15)
    np.testing.assert_allclose(g.dense["c"], d)


def test_mrnn_single_step_base_matrix_gradients(rng):
    p = init_mrnn(3, 2, 5, "classify", "identity", 0.7, rng)
    x = rng.normal(size=3)
    tr = forward_mrnn(p, [x])
    d = rng.normal(size=5)
    g = backward_mrnn(p, tr, [d])
    xb, hb = np.append(x, 1.0), np.append(p.h0, 1.0)
    dz = p.U[:, :2].T @ d
    for j in range(4):
        np.testing.assert_allclose(g.dense["A"][j], xb[j] * np.outer(dz, hb), atol=1e-15)


def test_matrix_space_identity_word_gradient():
    m = 3
    h0 = np.array([0.2, 0.5, -0.1])
    u = np.array([1.0, -2.0, 0.5])
    p = MatrixSpaceParams(np.stack([np.eye(m)] * 2), h0, u)
    tr = run(p, [1])
    g = backward_matrix_space(p, tr, [np.array([1.0])])
    np.testing.assert_allclose(g.rows["M"][1], np.outer(u, h0))
    assert 0 not in g.rows["M"]


def test_matrix_space_repeated_word_accumulates():
    u, h0 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    M = np.array([[0.5, 1.0], [0.0, 2.0]])
    p = MatrixSpaceParams(M[None], h0, u)
    tr = run(p, [0, 0])
    g = backward_matrix_space(p, tr, [None, np.array([1.0])])
    # d(u^T M M h0)/dM = u (M h0)^T + M^T u h0^T
    expected = np.outer(u, M @ h0) + np.outer(M.T @ u, h0)
    np.testing.assert_allclose(g.rows["M"][0], expected)


@pytest.mark.parametrize("kind", ["matrix_space", "elman", "mrnn"])
def test_zero_deltas_give_zero_gradients(kind, rng):
    inst = random_instance(kind, "ordinal", "tanh", rng)
    tr = run(inst.params, inst.example.token_ids, inst.embeddings)
    g = backward(inst.params, tr, [np.zeros(inst.params.n_out)] * len(tr.preact),
                 inst.example.token_ids)
    for _, arr in g.arrays():
        assert not np.any(arr)


# -- finite-difference checks -------------------------------------------------------


@pytest.mark.parametrize("kind", ["matrix_space", "elman", "mrnn"])
@pytest.mark.parametrize("head", ["ordinal", "classify"])
@pytest.mark.parametrize("f", ["identity", "tanh", "rectifier", "sigmoid"])
def test_grad_check_passes(kind, head, f, rng):
    for _ in range(3):
        inst = random_instance(kind, head, f, rng)
        report = grad_check(inst.params, inst.example, inst.embeddings, K=inst.K)
        assert report.passed, report.lines()
        if kind != "matrix_space":
            assert "embedding" in report.errors


def test_grad_check_scalar_matrix_space(rng):
    inst = random_instance("matrix_space", "scalar", "identity", rng)
    report = grad_check(inst.params, LabeledSequence(inst.example.token_ids, 1), K=2)
    assert report.passed and set(report.errors) == {"M"}


def test_grad_check_purely_multiplicative_tanh(rng):
    for _ in range(5):
        inst = random_instance("mrnn", "ordinal", "tanh", rng, purely_multiplicative=True)
        assert inst.params.is_purely_multiplicative()
        assert grad_check(inst.params, inst.example, inst.embeddings, K=inst.K).passed


def test_grad_check_with_intermediate_supervision(rng):
    inst = random_instance("elman", "ordinal", "tanh", rng, max_len=5)
    ids = inst.example.token_ids + (0, 1)
    ex = LabeledSequence(ids, 1)
    prefixes = {ids[:2]: 0, ids[:4]: 2}
    report = grad_check(inst.params, ex, inst.embeddings, K=inst.K, prefix_labels=prefixes)
    assert report.passed


def doubled_entry(block):
    def fn(p, ex, emb, K, prefix):
        value, g = example_gradients(p, ex, emb, K, prefix)
        arr = g.densify(block, p.blocks()[block].shape)
        idx = np.unravel_index(np.argmax(np.abs(arr)), arr.shape)
        if block in g.dense:
            g.dense[block][idx] *= 2.0
        else:
            g.rows[block][idx[0]][idx[1:]] *= 2.0
        return value, g
    return fn


@pytest.mark.parametrize("kind, block", [("elman", "V"), ("mrnn", "A"), ("matrix_space", "M")])
def test_grad_check_catches_faults(kind, block, rng):
    inst = random_instance(kind, "ordinal", "tanh", rng)
    report = grad_check(inst.params, inst.example, inst.embeddings, K=inst.K,
                        gradient_fn=doubled_entry(block))
    assert report.errors[block] > 1e-2
    assert not report.passed


def test_grad_check_epsilon_bounds(rng):
    inst = random_instance("elman", "ordinal", "tanh", rng)
    for eps in (1e-8, 1e-2):
        with pytest.raises(DomainError):
            grad_check(inst.params, inst.example, inst.embeddings, epsilon=eps, K=inst.K)


def test_supervision_steps():
    ex = LabeledSequence((1, 2, 3), 4)
    assert supervision_steps(ex, None) == {2: 4}
    assert supervision_steps(ex, {(1,): 0, (1, 2, 3): 1, (2,): 3}) == {0: 0, 2: 4}


# -- SGD --------------------------------------------------------------------------


def elman_fixture():
    return ElmanParams(W=[[1.0]], V=[[0.5]], b=[0.0], U=[[2.0]], c=[1.0], h0=[0.0],
                       f="tanh", head="scalar")


def test_sgd_step_by_hand():
    p = elman_fixture()
    g = Gradients({"W": np.array([[1.0]]), "V": np.array([[0.0]]), "b": np.array([2.0]),
                   "U": np.array([[0.0]]), "c": np.array([-1.0])})
    cfg = TrainConfig(model_kind="elman", learning_rate=0.1, l2=0.5, clip_norm=None, K=2)
    q = sgd_update(p, g, cfg)
    assert q.W[0, 0] == pytest.approx(1.0 - 0.1 * (1.0 + 0.5))
    assert q.V[0, 0] == pytest.approx(0.5 - 0.1 * 0.25)
    assert q.b[0] == pytest.approx(-0.2)
    assert q.c[0] == pytest.approx(1.0 - 0.1 * (-1.0 + 0.5))
    assert p.W[0, 0] == 1.0


def test_sgd_clips_global_norm():
    p = elman_fixture()
    g = Gradients({"W": np.array([[3.0]]), "b": np.array([4.0])})
    cfg = TrainConfig(model_kind="elman", learning_rate=1.0, clip_norm=1.0, K=2)
    q = sgd_update(p, g, cfg)
    assert q.W[0, 0] == pytest.approx(1.0 - 0.6)
    assert q.b[0] == pytest.approx(-0.8)


def test_default_clip_depends_on_model():
    assert TrainConfig(model_kind="mrnn").clip_norm == 5.0
    assert TrainConfig(model_kind="elman").clip_norm is None
    assert TrainConfig(model_kind="elman", clip_norm=2.0).clip_norm == 2.0


def test_sgd_rejects_non_finite():
    g = Gradients({"W": np.array([[np.nan]])})
    with pytest.raises(NonFiniteError, match="'W'"):
        sgd_update(elman_fixture(), g, TrainConfig(model_kind="elman", K=2))


def test_small_step_decreases_loss(rng):
    inst = random_instance("mrnn", "ordinal", "tanh", rng)
    emb = inst.embeddings
    before, g = example_gradients(inst.params, inst.example, emb, inst.K)
    gsq = sum(float((a * a).sum()) for _, a in g.arrays())
    lr = 1e-5
    cfg = TrainConfig(model_kind="mrnn", learning_rate=lr, clip_norm=None, K=inst.K)
    emb2 = EmbeddingTable(emb.vectors.copy(), trainable=True)
    q = sgd_update(inst.params, g, cfg, emb2)
    after, _ = example_gradients(q, inst.example, emb2, inst.K)
    # first-order bound: L(theta - lr g) = L - lr |g|^2 + O(lr^2)
    assert after - before == pytest.approx(-lr * gsq, rel=1e-2)


def test_sgd_updates_trainable_embedding_rows_only():
    emb = EmbeddingTable(np.ones((3, 1)), trainable=True)
    g = Gradients({"W": np.zeros((1, 1))}, {"embedding": {1: np.array([2.0])}})
    sgd_update(elman_fixture(), g, TrainConfig(model_kind="elman", learning_rate=0.5, K=2), emb)
    np.testing.assert_array_equal(emb.vectors[:, 0], [1.0, 0.0, 1.0])
    frozen = EmbeddingTable(np.ones((3, 1)))
    sgd_update(elman_fixture(), g, TrainConfig(model_kind="elman", learning_rate=0.5, K=2), frozen)
    np.testing.assert_array_equal(frozen.vectors, 1.0)


# -- training loop --------------------------------------------------------------


@pytest.fixture(scope="module")
def synthetic():
    vocab, tr, dev = synthetic_splits(0, 200, 50, 5)
    emb = init_random_embeddings(vocab, 8, 0.5, seed=0)
    return vocab, tr, dev, emb


def test_mrnn_fits_synthetic_training_set(synthetic):
    _, tr, dev, emb = synthetic
    cfg = TrainConfig(model_kind="mrnn", d_h=8, max_epochs=20, patience=20, seed=0)
    p, e, report = train(cfg, tr, dev, emb)
    assert evaluate(p, tr, e)["ranking_loss"] < 0.05
    assert report.epochs_run <= 20
    assert report.dev_metric[report.best_epoch - 1] == min(report.dev_metric)


def test_patience_one_stops_after_second_epoch(synthetic):
    _, tr, dev, emb = synthetic
    cfg = TrainConfig(model_kind="elman", learning_rate=1e-9, max_epochs=50, patience=1)
    _, _, report = train(cfg, tr, dev, emb)
    assert report.epochs_run == 2 and report.best_epoch == 1


def test_training_is_deterministic(synthetic):
    _, tr, dev, emb = synthetic
    cfg = TrainConfig(model_kind="mrnn", d_h=4, max_epochs=3, seed=11)
    runs = [train(cfg, tr, dev, emb) for _ in range(2)]
    assert runs[0][2].snapshot_id == runs[1][2].snapshot_id
    assert runs[0][2].train_loss == runs[1][2].train_loss
    other = train(TrainConfig(model_kind="mrnn", d_h=4, max_epochs=3, seed=12), tr, dev, emb)
    assert other[2].snapshot_id != runs[0][2].snapshot_id


def test_frozen_embeddings_untouched_and_caller_table_protected(synthetic):
    _, tr, dev, emb = synthetic
    before = emb.vectors.copy()
    frozen = EmbeddingTable(before.copy(), trainable=False)
    cfg = TrainConfig(model_kind="elman", d_h=4, max_epochs=2)
    _, e, _ = train(cfg, tr, dev, frozen)
    assert e.vectors.tobytes() == before.tobytes()
    _, e2, _ = train(cfg, tr, dev, emb)
    assert emb.vectors.tobytes() == before.tobytes()
    assert e2.vectors.tobytes() != before.tobytes()


def test_elman_training_loss_mostly_decreases(synthetic):
    _, tr, dev, emb = synthetic
    cfg = TrainConfig(model_kind="elman", d_h=8, max_epochs=25, patience=25, learning_rate=0.02)
    _, _, report = train(cfg, tr, dev, emb)
    tl = report.train_loss
    ok = sum(b <= a for a, b in zip(tl, tl[1:]))
    assert ok >= 0.9 * (len(tl) - 1)


def test_matrix_space_training_runs(synthetic):
    vocab, tr, dev, _ = synthetic
    cfg = TrainConfig(model_kind="matrix_space", d_h=4, max_epochs=3, f="identity",
                      learning_rate=0.01)
    p, e, report = train(cfg, tr, dev, vocab_size=len(vocab))
    assert e is None and isinstance(p, MatrixSpaceParams) and report.epochs_run >= 1


def test_divergence_is_reported(synthetic):
    _, tr, dev, emb = synthetic
    cfg = TrainConfig(model_kind="elman", f="identity", learning_rate=1e6, init_scale=1.0,
                      max_epochs=5)
    with pytest.raises(TrainingDivergedError) as exc:
        with np.errstate(all="ignore"):
            train(cfg, tr, dev, emb)
    assert exc.value.epoch >= 1 and exc.value.example is not None


def test_empty_or_mismatched_corpora(synthetic):
    _, tr, dev, emb = synthetic
    cfg = TrainConfig(model_kind="elman")
    with pytest.raises(DomainError):
        train(cfg, Corpus([], 5), dev, emb)
    with pytest.raises(DomainError):
        train(cfg, tr, Corpus([], 5), emb)
    with pytest.raises(DomainError):
        train(TrainConfig(model_kind="elman", K=3), tr, dev, emb)


def test_intermediate_supervision_uses_labeled_prefixes(synthetic):
    *_, emb = synthetic
    # (3,) and (3, 5) are labeled examples and prefixes of (3, 5, 7)
    tr = Corpus([LabeledSequence((3,), 1), LabeledSequence((3, 5), 2),
                 LabeledSequence((3, 5, 7), 4)], 5)
    base = dict(model_kind="mrnn", d_h=4, max_epochs=2, seed=3)
    a = train(TrainConfig(**base), tr, tr, emb)[2]
    b = train(TrainConfig(intermediate_supervision=True, **base), tr, tr, emb)[2]
    assert a.snapshot_id != b.snapshot_id
    assert b.train_loss[0] > a.train_loss[0]


def test_intermediate_supervision_is_inert_without_labeled_prefixes(synthetic):
    _, tr, dev, emb = synthetic
    base = dict(model_kind="mrnn", d_h=4, max_epochs=2, seed=3)
    a = train(TrainConfig(**base), tr, dev, emb)[2]
    b = train(TrainConfig(intermediate_supervision=True, **base), tr, dev, emb)[2]
    assert a.snapshot_id == b.snapshot_id


def test_label_frequency_baseline_is_median():
    assert label_frequency_baseline([0, 0, 4]) == 0
    assert label_frequency_baseline([1, 2, 3, 3, 4]) == 3
    labels = [0, 1, 1, 4, 4, 4, 2]
    best = min(range(5), key=lambda k: ordinal.ranking_loss([k] * len(labels), labels))
    assert ordinal.ranking_loss([label_frequency_baseline(labels)] * 7, labels) == \
        ordinal.ranking_loss([best] * 7, labels)
