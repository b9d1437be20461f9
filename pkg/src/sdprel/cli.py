"""Command line interface tying the pipeline stages to files on disk.

Every subcommand reads only the files named on its command line and writes
only to its named outputs, so runs compose in shell scripts and Makefiles.
Exit codes: 0 success, 1 usage error, 2 data or format error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (DROPPED, Dataset, NONE_LABEL, assign_sentence, dataset_stats,
                     ingest_conll, parse_abstracts, parse_relations,
                     read_sentence_files, render_relation, split_sentences,
                     write_sentence_files)
from .depgraph import (LEFT_TOKEN, RIGHT_TOKEN, SdpExample, read_examples,
                       render_sdp, shortest_dependency_path, write_examples)
from .embeddings import (PAD_TOKEN, UNK_TOKEN, Vocabulary, build_channel,
                         load_w2v_file, lookup_sequence)
from .errors import DataError, SdprelError, UsageError
from .evaluation import macro_f1, subtask2_eval
from .labels import (NegativeSamplingConfig, RelationSchema, TaskMode,
                     encode_label, generate_negatives)
from .network import (CnnModel, KinkError, ModelConfig, gradient_check,
                      load_model)
from .pipeline import (PROTOCOL_DEVELOPMENT, PROTOCOLS, cross_validate,
                       majority_vote, write_atomic)
from .training import TrainingConfig, predict_strings
from .variants import VARIANTS

log = logging.getLogger(__name__)

TASK_MODES = tuple(mode.value for mode in TaskMode)


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad flags through the normal error path."""

    def error(self, message):
        raise UsageError(message)


def _add_mode_flag(parser):
    parser.add_argument("--mode", choices=TASK_MODES, default=TaskMode.CLASSIFY_6.value,
                        help="label schema: 6-way classification or 12-way "
                             "extraction+classification with NONE negatives")


def _write_run_config(args, out_dir):
    """Record the fully resolved options of a run next to its artifacts."""
    skip = {"func", "config"}
    resolved = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, tuple):
            value = list(value)
        resolved[key] = value
    resolved["version"] = __version__
    write_atomic(Path(out_dir) / "run_config.json",
                 json.dumps(resolved, sort_keys=True, indent=2, ensure_ascii=False) + "\n")


def _read_text(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None


# ---------------------------------------------------------------- encode

def cmd_encode(args):
    entities, documents = parse_abstracts(_read_text(args.abstracts),
                                          source=str(args.abstracts))
    sentences = []
    for doc_id, text in documents:
        sentences.extend(split_sentences(text, doc_id))
    write_sentence_files(sentences, entities, args.out_sents, args.out_map)
    log.info("encoded %d documents: %d sentences, %d entities",
             len(documents), len(sentences), len(entities))
    return 0


# ---------------------------------------------------------------- ingest

def _assemble(args, need_negatives):
    """Shared front half of ingest/stats: sentences, entities, instances.

    Returns (dataset, kept, dropped_count).  `kept` are the within-sentence
    positives with sentence_index set; cross-sentence annotations are counted
    but excluded.  NONE negatives are appended when requested.
    """
    sentences, entities = read_sentence_files(args.sents, args.map)
    relations = parse_relations(_read_text(args.relations), source=str(args.relations))
    dataset = Dataset(sentences=sentences, entities=entities, instances=[])

    kept, dropped = [], 0
    for instance in relations:
        index = assign_sentence(instance, dataset)
        if index is DROPPED:
            dropped += 1
            log.info("dropping cross-sentence relation %s", render_relation(instance))
            continue
        instance.sentence_index = index
        kept.append(instance)

    negatives = []
    if need_negatives:
        config = NegativeSamplingConfig(max_gap=args.max_gap)
        gold_pairs = {instance.pair() for instance in relations}
        for sentence in sentences:
            negatives.extend(generate_negatives(sentence, entities, gold_pairs, config))
    return dataset, relations, kept, dropped, negatives


def cmd_ingest(args):
    mode = TaskMode(args.mode)
    dataset, _, kept, dropped, negatives = _assemble(
        args, need_negatives=mode is TaskMode.EXTRACT_CLASSIFY_12)
    graphs = ingest_conll(_read_text(args.conll), dataset.sentences,
                          source=str(args.conll))
    surfaces = {eid: mention.surface_tokens for eid, mention in dataset.entities.items()}

    examples = []
    for instance in kept + negatives:
        _, _, position = dataset.locate(instance.e1)
        sentence = dataset.sentences[position]
        graph = graphs[position]
        a = sentence.tokens.index(instance.e1) + 1
        b = sentence.tokens.index(instance.e2) + 1
        path = shortest_dependency_path(graph, a, b)
        display, model_tokens = render_sdp(path, graph, surfaces)
        examples.append(SdpExample(
            doc_id=instance.doc_id, sentence_index=instance.sentence_index,
            e1=instance.e1, e2=instance.e2, label=instance.label,
            reverse=instance.reverse, path_string=display, model_tokens=model_tokens))

    write_examples(args.out, examples)
    log.info("wrote %d examples (%d positives kept, %d cross-sentence dropped, "
             "%d negatives) to %s", len(examples), len(kept), dropped,
             len(negatives), args.out)
    return 0


# ---------------------------------------------------------------- stats

def cmd_stats(args):
    mode = TaskMode(args.mode)
    dataset, relations, _, dropped, negatives = _assemble(
        args, need_negatives=mode is TaskMode.EXTRACT_CLASSIFY_12)
    # Counts cover every annotated relation, including cross-sentence ones
    # that the ingest step cannot turn into path examples.
    dataset.instances = relations + negatives
    stats = dataset_stats(dataset)

    if args.json:
        payload = {label: {"forward": f, "reverse": r, "total": t}
                   for label, (f, r, t) in stats.items()}
        payload["_cross_sentence"] = dropped
        print(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False))
        return 0

    width = max(len(label) for label in stats)
    print(f"{'label':<{width}}  {'forward':>8}  {'reverse':>8}  {'total':>8}")
    totals = [0, 0, 0]
    for label, (fwd, rev, tot) in stats.items():
        print(f"{label:<{width}}  {fwd:>8}  {rev:>8}  {tot:>8}")
        totals = [totals[0] + fwd, totals[1] + rev, totals[2] + tot]
    print(f"{'all':<{width}}  {totals[0]:>8}  {totals[1]:>8}  {totals[2]:>8}")
    print(f"cross-sentence annotations: {dropped}")
    return 0


# ---------------------------------------------------------------- train

def _model_overrides(args):
    overrides = {}
    if args.dim is not None:
        overrides["embedding_dim"] = args.dim
    if args.widths is not None:
        overrides["filter_widths"] = tuple(args.widths)
    if args.filters is not None:
        overrides["filters_per_width"] = args.filters
    if args.dropout is not None:
        overrides["dropout_rate"] = args.dropout
    if args.norm_cap is not None:
        overrides["norm_cap"] = args.norm_cap
    return overrides


def _resolve_variant(args):
    if args.variant not in VARIANTS:
        raise UsageError(f"unknown variant {args.variant!r}; valid variants: "
                         + ", ".join(sorted(VARIANTS)))
    variant = VARIANTS[args.variant]
    if variant.pretrained_source is not None and args.embeddings is None:
        raise UsageError(f"variant {variant.name} needs --embeddings "
                         f"({variant.pretrained_source} vectors)")
    if variant.pretrained_source is None and args.embeddings is not None:
        log.warning("variant %s uses no pretrained vectors; ignoring --embeddings",
                    variant.name)
        args.embeddings = None
    if variant.pretrained_source is None and args.dim is None:
        raise UsageError(f"variant {variant.name} has no pretrained vectors to "
                         "take the dimension from; pass --dim")
    return variant


def cmd_train(args):
    variant = _resolve_variant(args)
    schema = RelationSchema(TaskMode(args.mode))
    examples = read_examples(args.examples)
    pretrained = load_w2v_file(args.embeddings) if args.embeddings else None
    train_config = TrainingConfig(lr=args.lr, batch_size=args.batch_size,
                                  max_epochs=args.max_epochs, patience=args.patience)

    report = cross_validate(examples, schema, variant, pretrained,
                            _model_overrides(args), train_config,
                            k=args.folds, seed=args.seed, protocol=args.protocol,
                            out_dir=args.out, jobs=args.jobs)
    _write_run_config(args, args.out)

    print(f"variant {variant.name} ({args.mode}, {args.protocol} protocol, "
          f"k={args.folds}, seed={args.seed})")
    print(f"mean dev macro-F1:  {report['mean_dev_macro_f1']:.4f}")
    if "mean_test_macro_f1" in report:
        print(f"mean test macro-F1: {report['mean_test_macro_f1']:.4f}")
    if "subtask2" in report:
        ext = report["subtask2"]["extraction"]
        cls = report["subtask2"]["classification"]
        print(f"extraction F1:      {ext['f1']:.4f}")
        print(f"classification F1:  {cls['macro_f1']:.4f}")
    print(f"artifacts in {args.out}")
    return 0


# ---------------------------------------------------------------- eval

def _read_predictions(path):
    """predictions.tsv -> ordered {(doc_id, e1, e2): label}."""
    rows = {}
    with open(path, "r", encoding="utf-8") as handle:
        header = handle.readline().rstrip("\n")
        if header.split("\t") != ["doc_id", "e1", "e2", "label"]:
            raise DataError(f"{path}:1: expected the doc_id/e1/e2/label header, "
                            f"got {header!r}")
        for lineno, line in enumerate(handle, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields, "
                                f"got {len(parts)}")
            key = tuple(parts[:3])
            if key in rows:
                raise DataError(f"{path}:{lineno}: duplicate prediction for {key}")
            rows[key] = parts[3]
    return rows


def cmd_eval(args):
    schema = RelationSchema(TaskMode(args.mode))
    examples = read_examples(args.examples)
    rows = _read_predictions(args.predictions)

    gold, predicted = [], []
    seen = set()
    for example in examples:
        key = (example.doc_id, example.e1, example.e2)
        if key in seen:
            raise DataError(f"duplicate gold example for {key}")
        seen.add(key)
        if key not in rows:
            raise DataError(f"no prediction for {key} in {args.predictions}")
        gold.append(encode_label(example, schema))
        predicted.append(rows[key])
    extra = set(rows) - seen
    if extra:
        raise DataError(f"{len(extra)} predictions without gold examples, "
                        f"e.g. {sorted(extra)[0]}")

    overall = macro_f1(gold, predicted, schema.class_set)
    payload = {"num_examples": len(gold), "overall": overall.to_json_dict()}
    if schema.task_mode is TaskMode.EXTRACT_CLASSIFY_12:
        related = [ex for ex in examples if ex.label != NONE_LABEL]
        extraction, classification = subtask2_eval(related, examples, predicted, schema)
        payload["subtask2"] = {"extraction": extraction,
                               "classification": classification.to_json_dict()}

    if args.json:
        print(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False))
        return 0
    width = max(len(c) for c in overall.classes)
    print(f"{'class':<{width}}  {'precision':>9}  {'recall':>9}  {'f1':>9}")
    for label in overall.classes:
        row = overall.per_class[label]
        print(f"{label:<{width}}  {row['precision']:>9.4f}  "
              f"{row['recall']:>9.4f}  {row['f1']:>9.4f}")
    print(f"{'macro':<{width}}  {overall.macro_precision:>9.4f}  "
          f"{overall.macro_recall:>9.4f}  {overall.macro_f1:>9.4f}")
    if "subtask2" in payload:
        ext = payload["subtask2"]["extraction"]
        cls = payload["subtask2"]["classification"]
        print(f"extraction     P {ext['precision']:.4f}  R {ext['recall']:.4f}  "
              f"F1 {ext['f1']:.4f}")
        print(f"classification macro-F1 {cls['macro_f1']:.4f} over non-NONE classes")
    return 0


# ---------------------------------------------------------------- predict

def _write_predictions(out_dir, examples, labels):
    lines = ["doc_id\te1\te2\tlabel"]
    for example, label in zip(examples, labels):
        lines.append(f"{example.doc_id}\t{example.e1}\t{example.e2}\t{label}")
    write_atomic(Path(out_dir) / "predictions.tsv", "\n".join(lines) + "\n")


def _encode_for_model(model, examples):
    return np.stack([lookup_sequence(model.vocab, ex.model_tokens,
                                     model.config.max_length)
                     for ex in examples])


def cmd_predict(args):
    model = load_model(args.model)
    examples = read_examples(args.examples)
    if not examples:
        raise DataError(f"no examples in {args.examples}")
    labels, _ = predict_strings(model, _encode_for_model(model, examples))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_predictions(out, examples, labels)
    _write_run_config(args, out)
    log.info("wrote %d predictions to %s", len(labels), out / "predictions.tsv")
    return 0


# ---------------------------------------------------------------- ensemble

def cmd_ensemble(args):
    vote = args.vote
    single = None
    if vote != "mv":
        if not vote.startswith("single:"):
            raise UsageError(f"vote mode {vote!r} is not 'mv' or 'single:<i>'")
        try:
            single = int(vote.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"vote mode {vote!r} needs an integer fold index") from None
        if not 0 <= single < len(args.models):
            raise UsageError(f"vote mode {vote!r} out of range for "
                             f"{len(args.models)} models")

    models = [load_model(path) for path in args.models]
    classes = models[0].classes
    for path, model in zip(args.models, models):
        if model.classes != classes:
            raise DataError(f"model {path} has label set {list(model.classes)}, "
                            f"expected {list(classes)}")

    examples = read_examples(args.examples)
    if not examples:
        raise DataError(f"no examples in {args.examples}")
    per_model = [predict_strings(m, _encode_for_model(m, examples)) for m in models]

    if single is not None:
        labels = per_model[single][0]
    else:
        labels = majority_vote([p[0] for p in per_model],
                               [p[1] for p in per_model], classes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_predictions(out, examples, labels)
    _write_run_config(args, out)
    log.info("wrote %d %s predictions from %d models to %s",
             len(labels), vote, len(models), out / "predictions.tsv")
    return 0


# ---------------------------------------------------------------- gradcheck

def _tiny_model(args, seed):
    tokens = [PAD_TOKEN, UNK_TOKEN, LEFT_TOKEN, RIGHT_TOKEN]
    tokens += [f"w{i}" for i in range(args.vocab_size - len(tokens))]
    vocab = Vocabulary(tokens)
    channels = []
    if args.multichannel:
        channels.append(build_channel(vocab, None, trainable=False,
                                      seed=[seed, 10], dim=args.dim))
    channels.append(build_channel(vocab, None, trainable=True,
                                  seed=[seed, 11], dim=args.dim))
    config = ModelConfig(embedding_dim=args.dim, max_length=args.max_length,
                         num_classes=args.num_classes,
                         filter_widths=tuple(args.widths),
                         filters_per_width=args.filters)
    classes = tuple(f"C{i}" for i in range(args.num_classes))
    model = CnnModel.initialize(config, channels, vocab, classes, seed=[seed, 20])
    # Zero-initialized biases put all-padding windows exactly on the ReLU
    # kink; jitter them off it, as any training step would.
    jitter = np.random.default_rng([seed, 42])
    for width in model.conv_b:
        model.conv_b[width] += jitter.uniform(-0.5, 0.5,
                                              model.conv_b[width].shape).astype(np.float32)
    model.fc_b += jitter.uniform(-0.5, 0.5, model.fc_b.shape).astype(np.float32)
    return model


def cmd_gradcheck(args):
    attempts = 25
    report = None
    for attempt in range(attempts):
        seed = args.seed + attempt
        model = _tiny_model(args, seed)
        rng = np.random.default_rng([seed, 40])
        indices = rng.integers(1, len(model.vocab), size=(args.batch, args.max_length))
        indices[0, args.max_length // 2:] = 0  # exercise the padded tail too
        gold = rng.integers(0, args.num_classes, size=args.batch)
        weights = np.ones(args.num_classes)
        try:
            report = gradient_check(model, indices, gold, weights,
                                    epsilon=args.epsilon, tolerance=args.tolerance,
                                    num_samples=args.samples, seed=[seed, 41])
            break
        except KinkError as exc:
            log.warning("seed %d rejected (%s); retrying", seed, exc)
    else:
        raise DataError(f"no kink-free configuration in {attempts} attempts "
                        f"from seed {args.seed}")

    report["seed"] = seed
    print(json.dumps(report, sort_keys=True, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_atomic(out / "gradcheck.json",
                     json.dumps(report, sort_keys=True, indent=2) + "\n")
        _write_run_config(args, out)
    return 0 if report["passed"] else 2


# ---------------------------------------------------------------- parser

def build_parser():
    parser = _Parser(prog="sdprel",
                     description="Relation classification over shortest "
                                 "dependency paths with a small CNN.")
    parser.add_argument("--version", action="version", version=f"sdprel {__version__}")
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    sub.required = True

    def add(name, help_text, func):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", metavar="FILE",
                       help="key=value file of defaults; explicit flags win")
        return p

    p = add("encode", "replace entity spans with id tokens and split sentences",
            cmd_encode)
    p.add_argument("--abstracts", required=True, help="XML-style annotated abstracts")
    p.add_argument("--out-sents", required=True, help="one encoded sentence per line")
    p.add_argument("--out-map", required=True, help="JSONL entity sidecar map")

    p = add("ingest", "align parses, attach relations, extract path examples",
            cmd_ingest)
    p.add_argument("--sents", required=True, help="encoded sentence file")
    p.add_argument("--map", required=True, help="entity sidecar map")
    p.add_argument("--conll", required=True, help="CoNLL parses, one block per sentence")
    p.add_argument("--relations", required=True, help="LABEL(e1,e2[,REVERSE]) lines")
    p.add_argument("--out", required=True, help="output example JSONL")
    _add_mode_flag(p)
    p.add_argument("--max-gap", type=int, default=6,
                   help="max tokens between entities of a NONE pair")

    p = add("stats", "per-label instance counts for a corpus", cmd_stats)
    p.add_argument("--sents", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--relations", required=True)
    _add_mode_flag(p)
    p.add_argument("--max-gap", type=int, default=6)
    p.add_argument("--json", action="store_true", help="machine-readable output")

    p = add("train", "stratified k-fold cross-validated training", cmd_train)
    p.add_argument("--examples", required=True, help="example JSONL from ingest")
    p.add_argument("--variant", required=True,
                   help="one of: " + ", ".join(sorted(VARIANTS)))
    p.add_argument("--out", required=True, help="run directory")
    _add_mode_flag(p)
    p.add_argument("--embeddings", help="word2vec text file for pretrained variants")
    p.add_argument("--protocol", choices=PROTOCOLS, default=PROTOCOL_DEVELOPMENT,
                   help="development holds out a test fold per run; "
                        "evaluation trains on k-1 folds")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="parallel fold workers")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=50)
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--dim", type=int, help="embedding dimension for random channels")
    p.add_argument("--widths", type=int, nargs="+", help="convolution filter widths")
    p.add_argument("--filters", type=int, help="filters per width")
    p.add_argument("--dropout", type=float, help="dropout rate on the pooled layer")
    p.add_argument("--norm-cap", type=float, help="max-norm cap on classifier rows")

    p = add("eval", "score a predictions file against gold examples", cmd_eval)
    p.add_argument("--examples", required=True, help="gold example JSONL")
    p.add_argument("--predictions", required=True, help="predictions.tsv to score")
    _add_mode_flag(p)
    p.add_argument("--json", action="store_true", help="machine-readable output")

    p = add("predict", "label examples with one saved model", cmd_predict)
    p.add_argument("--model", required=True, help="saved .sdprel model file")
    p.add_argument("--examples", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = add("ensemble", "combine several saved models over one example file",
            cmd_ensemble)
    p.add_argument("--models", required=True, nargs="+", help="saved .sdprel models")
    p.add_argument("--examples", required=True)
    p.add_argument("--vote", default="mv", help="'mv' or 'single:<i>'")
    p.add_argument("--out", required=True, help="output directory")

    p = add("gradcheck", "finite-difference check of the network gradients",
            cmd_gradcheck)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="optional directory for gradcheck.json")
    p.add_argument("--vocab-size", type=int, default=20)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--max-length", type=int, default=7)
    p.add_argument("--num-classes", type=int, default=3)
    p.add_argument("--widths", type=int, nargs="+", default=[2, 3])
    p.add_argument("--filters", type=int, default=4)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--multichannel", action="store_true",
                   help="add a static embedding channel")

    return parser


def _inject_config(argv):
    """Splice `key=value` lines from --config FILE in as low-priority flags.

    Injected tokens go right after the subcommand so that explicit command
    line flags, parsed later, override them.
    """
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    if at + 1 >= len(argv):
        raise UsageError("--config needs a file argument")
    extra = []
    path = argv[at + 1]
    for lineno, line in enumerate(_read_text(path).splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise DataError(f"{path}:{lineno}: expected key=value, got {line!r}")
        extra.append("--" + key.strip().replace("_", "-"))
        extra.extend(value.split())
    return [argv[0]] + extra + argv[1:]


def run(argv=None):
    """Parse argv and dispatch; returns the process exit code."""
    if argv is None:
        argv = sys.argv[1:]
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(_inject_config(list(argv)))
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("run `sdprel --help` or `sdprel SUBCOMMAND --help` for usage",
              file=sys.stderr)
        return 1
    except SdprelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse --help / --version
        code = exc.code
        return code if isinstance(code, int) else 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
