"""Command-line entry point: ``python -m rlab <subcommand> ...``.

Exit codes: 0 success, 1 validation or usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from .config import CHOICES, FIELD_TYPES, RunConfig, read_config_file, resolve
from .errors import ContractError, NumericError, ParseError, RlabError

log = logging.getLogger("rlab")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
SPLIT_RATIOS = (0.7, 0.1, 0.2)

COMMAND_KEYS = {
    "synth": ("out", "n_docs", "vocab_size", "noise_rate", "positive_rate", "seed"),
    "cohort": ("admissions", "out", "anchor"),
    "train": ("model", "corpus", "out", "history", "epochs", "seed", "split_seed", "min_count",
              "batch_size", "hidden", "embedding_dim", "embedding_epochs", "embeddings",
              "target_proportion", "initial_lr", "lambda_sparsity", "lambda_continuity",
              "lambda_adv", "lambda_lm", "lm_regularizer", "gumbel_temperature", "optimizer",
              "d_model", "n_layers", "heads", "lr", "patience", "l2", "n_trees", "max_depth"),
    "eval": ("model_path", "corpus", "split", "out", "histogram", "threshold"),
    "explain": ("model_path", "corpus", "split", "method", "out", "layer", "strategy", "epsilon"),
    "report": ("corpus", "doc_id", "rationale", "attention", "lrp", "format", "out", "top_k"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser():
    parser = _Parser(prog="rlab", description="Rationale extraction and explanation toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    for command, keys in COMMAND_KEYS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", help="key = value file; flags override its entries")
        for key in keys:
            kind = FIELD_TYPES[key]
            kw = {"default": None, "dest": key}
            if key in CHOICES:
                kw["choices"] = CHOICES[key]
            if kind == "bool":
                kw["type"] = lambda s: s
                kw["metavar"] = "{true,false}"
            elif kind in ("int", "float"):
                kw["type"] = {"int": int, "float": float}[kind]
            p.add_argument("--" + key.replace("_", "-"), **kw)
    return parser


# ---------------------------------------------------------------------------
# shared helpers


def _require(cfg, *keys):
    for k in keys:
        if not getattr(cfg, k):
            raise ContractError(f"--{k.replace('_', '-')} is required")


def _corpus_splits(path, split_seed):
    from .cohort import split_dataset
    from .text import read_corpus

    docs = read_corpus(path)
    return split_dataset(docs, SPLIT_RATIOS, seed=split_seed)


def _pick_split(splits, name):
    train, val, test = splits
    return {"train": train, "val": val, "test": test, "heldout": list(val) + list(test)}[name]


def _emit_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _write_history(path, rows):
    keys = list(rows[0]) if rows else ["epoch", "lr"]
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _train_config(cfg):
    from .infocal import TrainConfig

    return TrainConfig(epochs=cfg.epochs, initial_lr=cfg.initial_lr, lambda_sparsity=cfg.lambda_sparsity,
                       lambda_continuity=cfg.lambda_continuity, lambda_adv=cfg.lambda_adv,
                       lambda_lm=cfg.lambda_lm, target_proportion=cfg.target_proportion,
                       gumbel_temperature=cfg.gumbel_temperature,
                       lm_regularizer_enabled=cfg.lm_regularizer, hidden=cfg.hidden,
                       batch_size=cfg.batch_size, optimizer=cfg.optimizer, seed=cfg.seed)


def _transformer_config(cfg):
    from .transformer import TransformerConfig

    return TransformerConfig(d_model=cfg.d_model, n_layers=cfg.n_layers, heads=cfg.heads,
                             epochs=cfg.epochs, lr=cfg.lr, batch_size=cfg.batch_size,
                             patience=cfg.patience, optimizer=cfg.optimizer, seed=cfg.seed)


def load_model(path):
    """Rebuild ``(kind, model, vocab, meta)`` from a checkpoint written by ``train``."""
    from .baselines import LogisticModel, RandomForest
    from .checkpoint import load_checkpoint
    from .text import Vocab

    params, meta = load_checkpoint(path)
    try:
        kind = meta["model"]
        vocab = Vocab(meta["vocab"][3:])
        train_cfg = meta["config"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: checkpoint metadata incomplete ({exc})") from exc
    cfg = resolve(overrides={k: v for k, v in train_cfg.items() if k in FIELD_TYPES})
    if kind == "infocal":
        from .infocal import InfoCalModel

        model = InfoCalModel(vocab, params["embedding"], cfg.hidden, cfg.seed)
        model.load_state(params)
    elif kind == "transformer":
        from .transformer import TinyTransformer

        model = TinyTransformer(len(vocab), _transformer_config(cfg))
        model.load_state(params)
    elif kind == "logreg":
        model = LogisticModel.from_state(params)
    elif kind == "rf":
        model = RandomForest.from_state(params)
    else:
        raise ParseError(f"{path}: unknown model kind {kind!r}")
    return kind, model, vocab, meta


def predict(kind, model, vocab, docs):
    if kind == "infocal":
        from .infocal import predict_batch

        return predict_batch(model, docs)["pred"]
    if kind == "transformer":
        from .transformer import predict_proba

        return predict_proba(model, docs, vocab)
    from .text import bow_matrix

    return model.predict_proba(bow_matrix(docs, vocab))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: RunConfig):
    from .synth import SynthConfig, generate_synthetic_corpus
    from .text import write_corpus

    _require(cfg, "out")
    ds = generate_synthetic_corpus(SynthConfig(n_docs=cfg.n_docs, vocab_size=cfg.vocab_size,
                                               noise_rate=cfg.noise_rate,
                                               positive_rate=cfg.positive_rate, seed=cfg.seed))
    write_corpus(cfg.out, ds.documents)
    _emit_json(ds.summary, None)


def cmd_cohort(cfg: RunConfig):
    from .cohort import build_cohort, load_admissions
    from .text import write_corpus

    _require(cfg, "admissions", "out")
    ds = build_cohort(load_admissions(cfg.admissions), anchor=cfg.anchor)
    write_corpus(cfg.out, ds.documents)
    _emit_json(ds.summary, None)


def cmd_train(cfg: RunConfig):
    from .checkpoint import save_checkpoint
    from .text import build_vocab

    _require(cfg, "corpus")
    out = cfg.out or f"{cfg.model}.ckpt"
    history_path = cfg.history or out + ".history.csv"
    train, val, test = _corpus_splits(cfg.corpus, cfg.split_seed)
    vocab = build_vocab(train, cfg.min_count)
    log.info("split sizes train=%d val=%d test=%d, vocab=%d", len(train), len(val), len(test), len(vocab))
    if cfg.model == "infocal":
        from .infocal import train_infocal

        if cfg.embeddings:
            matrix = _aligned_embeddings(cfg.embeddings, vocab)
        else:
            from .embeddings import train_skipgram

            matrix = train_skipgram(train, vocab, dim=cfg.embedding_dim, epochs=cfg.embedding_epochs,
                                    seed=cfg.seed).matrix
        model, history = train_infocal(train, val, vocab, matrix, _train_config(cfg))
        rows, state = history.rows, model.state()
    elif cfg.model == "transformer":
        from .transformer import train_transformer

        model, rows = train_transformer(train, val, vocab, _transformer_config(cfg))
        state = model.state()
    else:
        from .baselines import train_logreg, train_random_forest
        from .text import bow_matrix

        X, y = bow_matrix(train, vocab), [d.label for d in train]
        if cfg.model == "logreg":
            model = train_logreg(X, y, l2=cfg.l2, seed=cfg.seed)
        else:
            model = train_random_forest(X, y, n_trees=cfg.n_trees, max_depth=cfg.max_depth or None,
                                        seed=cfg.seed)
        state = model.state()
        rows = [{"epoch": 0, "lr": float("nan")}]
    meta = {"model": cfg.model, "vocab": vocab.itos, "config": cfg.to_dict()}
    save_checkpoint(out, state, meta)
    _write_history(history_path, rows)
    _emit_json({"checkpoint": out, "history": history_path, "epochs_run": len(rows)}, None)


def _aligned_embeddings(path, vocab):
    from .text import read_embeddings

    tokens, matrix = read_embeddings(path)
    index = {t: i for i, t in enumerate(tokens)}
    out = np.zeros((len(vocab), matrix.shape[1]))
    for i, t in enumerate(vocab.itos):
        if t in index:
            out[i] = matrix[index[t]]
    return out


def cmd_eval(cfg: RunConfig):
    from .metrics import evaluate_scores, rationale_stats, write_histogram_csv

    _require(cfg, "model_path")
    kind, model, vocab, meta = load_model(cfg.model_path)
    corpus = cfg.corpus or meta["config"]["corpus"]
    docs = _pick_split(_corpus_splits(corpus, meta["config"]["split_seed"]), cfg.split)
    scores = predict(kind, model, vocab, docs)
    labels = [d.label for d in docs]
    echo = {"model": kind, "model_path": cfg.model_path, "corpus": corpus, "split": cfg.split,
            "seed": meta["config"]["seed"], "split_seed": meta["config"]["split_seed"]}
    report = evaluate_scores(scores, labels, cfg.threshold)
    if cfg.histogram:
        if kind != "infocal":
            raise ContractError("--histogram needs an infocal model (rationale proportions)")
        from .infocal import extract_rationale

        rats = [extract_rationale(model, d) for d in docs]
        planted = {d.doc_id: d.planted_rationale for d in docs} \
            if all(d.planted_rationale is not None for d in docs) else None
        stats = rationale_stats(rats, {d.doc_id: float(s) for d, s in zip(docs, scores)},
                                {d.doc_id: d.label for d in docs}, planted, cfg.threshold)
        write_histogram_csv(cfg.histogram, stats)
        log.info("rationale recovery %s", stats.recovery)
    _emit_json(report.to_dict(echo), cfg.out)


def cmd_explain(cfg: RunConfig):
    from .report import write_jsonl

    _require(cfg, "model_path", "out")
    kind, model, vocab, meta = load_model(cfg.model_path)
    corpus = cfg.corpus or meta["config"]["corpus"]
    docs = _pick_split(_corpus_splits(corpus, meta["config"]["split_seed"]), cfg.split)
    records = []
    if cfg.method == "rationale":
        if kind != "infocal":
            raise ContractError("rationale explanations need an infocal model")
        from .infocal import extract_rationale, predict_batch

        preds = predict_batch(model, docs)["pred"]
        for d, p in zip(docs, preds):
            r = extract_rationale(model, d)
            records.append({"doc_id": d.doc_id, "kept_positions": r.kept_positions,
                            "proportion": r.proportion, "prediction": float(p), "label": d.label})
    else:
        if kind != "transformer":
            raise ContractError(f"{cfg.method} explanations need a transformer model")
        from .transformer import attention_importance, lrp_relevance, transformer_forward

        for d in docs:
            fr = transformer_forward(model, d, vocab)
            if cfg.method == "attention":
                scores = attention_importance(fr.attention, cfg.layer, cfg.strategy, fr.n_tokens)
            else:
                scores = lrp_relevance(model, d, fr.cache, cfg.epsilon).scores
            records.append({"doc_id": d.doc_id, "method": cfg.method,
                            "scores": [float(s) for s in scores],
                            "prediction": fr.probability, "label": d.label})
    write_jsonl(cfg.out, records)
    _emit_json({"method": cfg.method, "n_docs": len(records), "out": cfg.out}, None)


def cmd_report(cfg: RunConfig):
    from .report import compare_methods, read_explanations
    from .text import read_corpus

    _require(cfg, "corpus")
    dumps = {m: read_explanations(getattr(cfg, m)) for m in ("rationale", "attention", "lrp")
             if getattr(cfg, m)}
    if not dumps:
        raise ContractError("give at least one of --rationale, --attention, --lrp")
    docs = {d.doc_id: d for d in read_corpus(cfg.corpus)}
    doc_id = cfg.doc_id or sorted(set.intersection(*(set(v) for v in dumps.values())) or [""])[0]
    if doc_id not in docs:
        raise ContractError(f"document {doc_id!r} not found in {cfg.corpus}")
    outputs = {m: v[doc_id] for m, v in dumps.items() if doc_id in v}
    cmp = compare_methods(docs[doc_id], outputs, fmt=cfg.format, top_k=cfg.top_k or None)
    text = cmp.to_html() if cfg.format == "html" else cmp.to_text()
    for notice in cmp.notices:
        log.warning(notice)
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


COMMANDS = {"synth": cmd_synth, "cohort": cmd_cohort, "train": cmd_train, "eval": cmd_eval,
            "explain": cmd_explain, "report": cmd_report}


def main(argv=None) -> int:
    os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
        file_values = read_config_file(args.config) if args.config else {}
        extra = set(file_values) - set(COMMAND_KEYS[args.command])
        if extra:
            raise ContractError(f"config keys not used by {args.command}: {sorted(extra)}")
        cfg = resolve(file_values, flags)
        cfg.log_resolved(args.command, COMMAND_KEYS[args.command])
        COMMANDS[args.command](cfg)
        return EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except (ContractError, ParseError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"rlab: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, RlabError, RuntimeError, ArithmeticError) as exc:
        print(f"rlab: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def cli(argv=None) -> int:
    return main(argv)
