"""Command-line entry points.

Exit codes: 0 success, 1 data or runtime failure, 2 usage error. Logs go to
standard output as JSON lines, diagnostics to standard error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Callable

from . import checks
from .corpus import (
    EmptyVocabularyError,
    Vocabulary,
    init_random_embeddings,
    load_corpus_tsv,
    load_embeddings_text,
    scan_tsv,
    synthetic_splits,
    tokenize,
)
from .errors import DomainError, NonFiniteError, ParseError, ShapeError
from .modelfile import ModelFile, ModelFileError, atomic_write_text, load_model, save_model
from .models import predict_sequence
from .training import AUTO, TrainConfig, evaluate, train

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2

DATA_ERRORS = (ParseError, EmptyVocabularyError, DomainError, ShapeError, ModelFileError,
               NonFiniteError, OSError, KeyError)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# -- run configuration ---------------------------------------------------------


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _clip(value):
    if value is None or value == AUTO:
        return value
    if str(value).strip().lower() == "none":
        return None
    return float(value)


@dataclass(frozen=True)
class Key:
    name: str
    type: Callable[[Any], Any]
    default: Any = None
    choices: tuple | None = None
    help: str = ""
    switch: bool = False

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


# CLI flag > config file > the defaults listed here.
TRAIN_KEYS = (
    Key("model", str, None, ("matrix-space", "elman", "mrnn"), "model family (required)"),
    Key("head", str, None, ("ordinal", "classify"), "output head (required)"),
    Key("train", str, None, help="training TSV (required unless --synthetic)"),
    Key("dev", str, None, help="development TSV (required unless --synthetic)"),
    Key("classes", int, None, help="number of ordinal classes K (required)"),
    Key("synthetic", int, None, help="train on N generated phrases, N/4 more as dev"),
    Key("embeddings", str, None, help="pretrained text embeddings, kept frozen"),
    Key("random_dim", int, None, help="dimension of trainable random embeddings"),
    Key("embed_scale", float, 0.5, help="uniform range of random embeddings"),
    Key("hidden", int, 8, help="hidden size d_h (matrix size for matrix-space)"),
    Key("activation", str, "tanh", ("identity", "tanh", "rectifier"), "recurrence nonlinearity"),
    Key("lr", float, 0.05, help="SGD learning rate"),
    Key("l2", float, 0.0, help="L2 regularization strength"),
    Key("epochs", int, 100, help="maximum number of epochs"),
    Key("patience", int, 10, help="early-stopping patience in epochs"),
    Key("seed", int, 0, help="random seed"),
    Key("clip", _clip, AUTO, help="global gradient-norm clip, 'none' to disable (mrnn default 5)"),
    Key("init_scale", float, 0.01, help="uniform range of initial weights"),
    Key("out", str, None, help="where to write the model file (required)"),
    Key("intermediate_supervision", _bool, False, help="supervise labeled prefixes too",
        switch=True),
)
TRAIN_SCHEMA = {k.name: k for k in TRAIN_KEYS}
NOT_ECHOED = ("out",)
SYNTHETIC_RANDOM_DIM = 8


def read_config_file(path) -> dict:
    """``key = value`` lines, ``#`` comments; keys are checked against the schema."""
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = list(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for line_no, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise UsageError(f"{path}:{line_no}: expected 'key = value'")
        key, value = (s.strip() for s in text.split("=", 1))
        key = key.replace("-", "_")
        if key not in TRAIN_SCHEMA:
            raise UsageError(f"{path}:{line_no}: unknown config key {key!r}")
        values[key] = value
    return values


def _convert(key: Key, value):
    if value is None:
        return None
    try:
        out = key.type(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{key.flag}: invalid value {value!r} ({exc})") from None
    if key.choices is not None and out not in key.choices:
        raise UsageError(f"{key.flag}: {out!r} is not one of {', '.join(key.choices)}")
    return out


def resolve_run_config(flags: dict, config_path=None) -> dict:
    merged = {k.name: k.default for k in TRAIN_KEYS}
    if config_path is not None:
        for name, value in read_config_file(config_path).items():
            merged[name] = _convert(TRAIN_SCHEMA[name], value)
    for name, value in flags.items():
        merged[name] = _convert(TRAIN_SCHEMA[name], value)
    return merged


def _require(cfg, *names):
    for name in names:
        if cfg.get(name) is None:
            raise UsageError(f"missing required option {TRAIN_SCHEMA[name].flag}")


# -- commands -------------------------------------------------------------------


def _emit(stdout, obj):
    stdout.write(json.dumps(obj) + "\n")
    stdout.flush()


def _creation_stamp():
    # reproducible builds: only stamp when SOURCE_DATE_EPOCH pins the clock
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is None:
        return None
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).isoformat()


def _load_training_data(cfg):
    K = cfg["classes"]
    kind = cfg["model"].replace("-", "_")
    if cfg["synthetic"] is not None:
        n = cfg["synthetic"]
        if n < K:
            raise UsageError(f"--synthetic needs at least K={K} examples")
        vocab, train_set, dev_set = synthetic_splits(cfg["seed"], n, max(n // 4, K), K)
    else:
        train_tokens = [tok for _, _, toks, _ in scan_tsv(cfg["train"]) for tok in toks]
        if cfg["embeddings"] is not None and kind != "matrix_space":
            dev_tokens = [tok for _, _, toks, _ in scan_tsv(cfg["dev"]) for tok in toks]
            wanted = Vocabulary.build(train_tokens + dev_tokens)
            vocab, emb = load_embeddings_text(cfg["embeddings"], vocab_filter=wanted)
        else:
            vocab = Vocabulary.build(train_tokens)
        train_set = load_corpus_tsv(cfg["train"], vocab, K, "train")
        dev_set = load_corpus_tsv(cfg["dev"], vocab, K, "dev")
        if len(train_set) == 0:
            raise DataError(f"{cfg['train']}: no examples")
        if len(dev_set) == 0:
            raise DataError(f"{cfg['dev']}: no examples")
        if cfg["embeddings"] is not None and kind != "matrix_space":
            return vocab, train_set, dev_set, emb
    emb = None
    if kind != "matrix_space":
        dim = cfg["random_dim"]
        if dim is None and cfg["synthetic"] is not None:
            dim = SYNTHETIC_RANDOM_DIM
        if dim is None:
            raise UsageError("--embeddings or --random-dim is required for recurrent models")
        emb = init_random_embeddings(vocab, dim, cfg["embed_scale"], cfg["seed"])
    return vocab, train_set, dev_set, emb


def cmd_train(args, stdout) -> int:
    flags = {k: v for k, v in vars(args).items() if k in TRAIN_SCHEMA}
    cfg = resolve_run_config(flags, args.config)
    _require(cfg, "model", "head", "classes", "out")
    if cfg["synthetic"] is None:
        _require(cfg, "train", "dev")
    if cfg["embeddings"] is not None and cfg["random_dim"] is not None:
        raise UsageError("--embeddings and --random-dim are mutually exclusive")
    try:
        config = TrainConfig(
            model_kind=cfg["model"], head=cfg["head"], f=cfg["activation"], d_h=cfg["hidden"],
            K=cfg["classes"], learning_rate=cfg["lr"], l2=cfg["l2"], max_epochs=cfg["epochs"],
            patience=cfg["patience"], seed=cfg["seed"], init_scale=cfg["init_scale"],
            clip_norm=cfg["clip"], intermediate_supervision=cfg["intermediate_supervision"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    vocab, train_set, dev_set, emb = _load_training_data(cfg)

    def on_epoch(epoch, train_loss, dev_value):
        _emit(stdout, {"epoch": epoch, "train_loss": train_loss, "dev_metric": dev_value})

    params, best_emb, report = train(config, train_set, dev_set, emb, vocab_size=len(vocab),
                                     on_epoch=on_epoch)
    echo = {k: v for k, v in cfg.items() if k not in NOT_ECHOED}
    mf = ModelFile(params, vocab, config.K, best_emb, config=echo,
                   metadata={"seed": cfg["seed"], "created": _creation_stamp()})
    save_model(cfg["out"], mf)
    _emit(stdout, {
        "best_epoch": report.best_epoch,
        "epochs_run": report.epochs_run,
        "dev_metric_name": report.metric_name,
        "best_dev_metric": report.dev_metric[report.best_epoch - 1],
        "snapshot_id": report.snapshot_id,
    })
    return EXIT_OK


def _load_eval_corpus(mf: ModelFile, path, classes=None):
    if classes is not None and classes != mf.K:
        raise DataError(f"model has K={mf.K} classes but --classes={classes} was given")
    try:
        corpus = load_corpus_tsv(path, mf.vocabulary, mf.K, "test")
    except ParseError as exc:
        raise DataError(f"{exc} (model has K={mf.K})") from None
    if len(corpus) == 0:
        raise DataError(f"{path}: no examples")
    return corpus


def cmd_eval(args, stdout) -> int:
    mf = load_model(args.model_file)
    corpus = _load_eval_corpus(mf, args.data, args.classes)
    _emit(stdout, evaluate(mf.params, corpus, mf.embeddings))
    return EXIT_OK


def _fmt(v) -> str:
    return repr(float(v))


def cmd_predict(args, stdout, stdin) -> int:
    mf = load_model(args.model_file)
    phrases = []
    for line_no, line in enumerate(stdin, start=1):
        tokens = tokenize(line)
        if not tokens:
            raise DataError(f"<stdin>:{line_no}: empty phrase")
        phrases.append(mf.vocabulary.encode(tokens))
    out = []
    for ids in phrases:
        label, y, _ = predict_sequence(mf.params, ids, mf.embeddings)
        out.append(f"{label}\t" + ",".join(_fmt(v) for v in y) + "\n")
    stdout.write("".join(out))
    return EXIT_OK


def cmd_inspect(args, stdout) -> int:
    mf = load_model(args.model_file)
    corpus = _load_eval_corpus(mf, args.data)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["text", "label", "predicted"] + [f"h{i + 1}" for i in range(mf.d_h)])
    for ex in corpus:
        label, _, h = predict_sequence(mf.params, ex.token_ids, mf.embeddings)
        text = ex.text if ex.text is not None else " ".join(mf.vocabulary.token(i) for i in ex.token_ids)
        writer.writerow([text.strip(), ex.label, label] + [_fmt(v) for v in h])
    atomic_write_text(args.out, buf.getvalue())
    return EXIT_OK


def cmd_gradcheck(args, stdout) -> int:
    kinds = checks.GRADCHECK_KINDS if args.model is None else (args.model.replace("-", "_"),)
    rows = checks.gradcheck_matrix(seed=args.seed, kinds=kinds, instances=args.instances,
                                   epsilon=args.epsilon)
    for row in rows:
        stdout.write(row.line() + "\n")
    worst = max(r.max_error for r in rows)
    ok = worst < args.tolerance
    print(f"gradcheck: worst relative error {worst:.3e} "
          f"({'below' if ok else 'ABOVE'} {args.tolerance:g})", file=sys.stderr)
    return EXIT_OK if ok else EXIT_DATA


def cmd_equivcheck(args, stdout) -> int:
    errs = checks.equivcheck(seed=args.seed, max_len=args.max_len, draws=args.draws,
                             vocab_size=args.vocab, m=args.dim, perturb=args.perturb)
    for i, e in enumerate(errs):
        stdout.write(f"{i}\t{e:.3e}\n")
    worst = max(errs)
    ok = worst < args.tolerance
    print(f"equivcheck: worst absolute discrepancy {worst:.3e} "
          f"({'below' if ok else 'ABOVE'} {args.tolerance:g})", file=sys.stderr)
    return EXIT_OK if ok else EXIT_DATA


# -- argument parsing ---------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mrnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write a model file")
    for key in TRAIN_KEYS:
        if key.switch:
            p.add_argument(key.flag, dest=key.name, action="store_const", const="true",
                           default=argparse.SUPPRESS, help=key.help)
        else:
            p.add_argument(key.flag, dest=key.name, default=argparse.SUPPRESS, help=key.help,
                           choices=key.choices)
    p.add_argument("--config", help="key = value file; flags take precedence")

    p = sub.add_parser("eval", help="ranking loss and accuracy on a labeled TSV")
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--classes", type=int, help="expected K; must match the model")

    p = sub.add_parser("predict", help="label phrases read from standard input")
    p.add_argument("--model-file", required=True)

    p = sub.add_parser("inspect", help="export final hidden vectors as CSV")
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--model", choices=("matrix-space", "elman", "mrnn"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("equivcheck", help="one-hot mRNN vs matrix-space equivalence")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int, default=4)
    p.add_argument("--draws", type=int, default=10)
    p.add_argument("--vocab", type=int, default=3)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--perturb", type=float, default=0.0,
                   help="add this to one tensor entry after conversion (sensitivity test)")
    p.add_argument("--tolerance", type=float, default=1e-10)
    return parser


def main(argv=None, stdout=None, stdin=None) -> int:
    stdout = stdout if stdout is not None else sys.stdout
    stdin = stdin if stdin is not None else sys.stdin
    try:
        args = build_parser().parse_args(argv)
        if args.command == "train":
            return cmd_train(args, stdout)
        if args.command == "eval":
            return cmd_eval(args, stdout)
        if args.command == "predict":
            return cmd_predict(args, stdout, stdin)
        if args.command == "inspect":
            return cmd_inspect(args, stdout)
        if args.command == "gradcheck":
            return cmd_gradcheck(args, stdout)
        return cmd_equivcheck(args, stdout)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry_point():
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
