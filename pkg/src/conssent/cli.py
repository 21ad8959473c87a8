"""Command-line entry points.

Subcommands: gen | train | probe | sweep | ensemble | gradcheck. Every
command resolves its settings from, in increasing precedence: built-in
defaults, a JSON config file (--config, unknown keys rejected), then
explicit flags. The seed specifically resolves flag > config file >
CONSSENT_SEED env var > 0. The resolved config's SHA-256 is written into a
``<out>.meta.json`` sidecar next to every file artifact, so any output can
be traced back to the exact settings that produced it.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Human-readable progress goes to stderr; machine output goes to files and
stdout only.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import ensemble as ens
from . import probes as pr
from .corpus import load_corpus_file, prepare_corpus, save_vocab_file
from .encoder import encode_sentences, load_checkpoint, save_checkpoint
from .errors import ConsSentError, DataError, NumericError, UsageError
from .perturb import gen_pair_batches, gen_single_examples, write_pair_dataset, write_single_dataset
from .rng import PROBE, VALID, stream
from .toydata import make_toy_corpus
from .train import (
    TASKS,
    TrainConfig,
    run_gradcheck,
    train_multitask,
    train_single_task,
    write_metrics_jsonl,
)

# Every config key with its documented default. `None` means "no value":
# either the command supplies its own (out paths) or a fallback chain
# resolves it (seed).
CONFIG_DEFAULTS = {
    # task selection
    "task": "R",              # D | P | I | R | C | N | MT
    "k": 2,                   # perturbation size / candidate count
    "gate_p": 0.5,            # probability an example is perturbed
    # model
    "hidden_size": 32,        # LSTM units per direction
    "embed_dim": 64,          # word embedding width
    "head_dim": 64,           # classifier-head hidden width
    "init_gain": 4.0,         # initialization scale for non-embedding weights
    # optimization
    "batch_size": 64,
    "lr0": 0.1,
    "epoch_decay": 0.99,
    "drop_decay": 0.2,
    "clip_norm": 5.0,
    "max_epochs": 20,
    "valid_draws": 10,        # perturbation draws averaged per validation
    "allow_custom_k": False,
    # data
    "corpus": None,           # path to one-sentence-per-line text; None -> toy
    "toy_n": 2000,            # toy corpus size when corpus is None
    "valid_fraction": 0.1,
    "min_freq": 1,
    # probes
    "probes": ["SentLen", "WordContent", "BigramShift"],
    "probe_classifier": "logreg",   # logreg | mlp | both
    "mlp_hidden": [50, 100, 200],
    "dropout": [0.0, 0.1, 0.2],
    "l2_grid": [1e-4, 1e-3, 1e-2, 1e-1, 1.0],
    "probe_epochs": 40,
    "probe_lr": 0.2,
    "probe_batch": 32,
    "baseline": False,        # also evaluate an untrained encoder
    # execution
    "seed": None,             # None -> CONSSENT_SEED env var -> 0
    "threads": 1,             # data-prep parallelism cap (prep is serial today)
    "deterministic": False,   # force single-threaded bit-stable runs
    # artifacts
    "out": None,              # main output path; default depends on command
    "metrics": None,          # metrics JSONL path (train/sweep)
}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; the contract here is exit 1."""

    def error(self, message):
        raise UsageError(message)


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------


def load_run_config(path: str | None) -> dict:
    config = dict(CONFIG_DEFAULTS)
    if path is None:
        return config
    try:
        loaded = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(loaded, dict):
        raise DataError(f"{path}: config must be a JSON object")
    unknown = sorted(set(loaded) - set(CONFIG_DEFAULTS))
    if unknown:
        raise UsageError(f"{path}: unknown config keys {unknown}")
    config.update(loaded)
    return config


def resolve_config(args: argparse.Namespace) -> dict:
    """defaults < config file < command-line flags; then seed fallbacks."""
    config = load_run_config(getattr(args, "config", None))
    for key in CONFIG_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    if config["seed"] is None:
        env = os.environ.get("CONSSENT_SEED")
        if env is not None:
            try:
                config["seed"] = int(env)
            except ValueError as exc:
                raise UsageError(f"CONSSENT_SEED={env!r} is not an integer") from exc
        else:
            config["seed"] = 0
    config["seed"] = int(config["seed"])
    if config["threads"] < 1:
        raise UsageError(f"--threads must be >= 1, got {config['threads']}")
    if config["deterministic"]:
        config["threads"] = 1
    return config


def config_sha256(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True).encode("utf-8")
    ).hexdigest()


def write_meta(out_path: str | Path, config: dict, **extra) -> None:
    """Sidecar recording the exact resolved config and its hash.

    Deliberately contains no timestamps or host details so that repeated
    runs with the same config are byte-identical.
    """
    payload = {"config": config, "config_sha256": config_sha256(config), **extra}
    Path(str(out_path) + ".meta.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_sentences(config: dict) -> list:
    if config["corpus"] is not None:
        return load_corpus_file(config["corpus"])
    return make_toy_corpus(config["toy_n"], seed=config["seed"])


def _prepare(config: dict):
    sentences = _load_sentences(config)
    return prepare_corpus(
        sentences,
        min_freq=config["min_freq"],
        valid_fraction=config["valid_fraction"],
        seed=config["seed"],
    )


def _train_config(config: dict, task=None, k=None) -> TrainConfig:
    try:
        return _train_config_raw(config, task, k)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _train_config_raw(config: dict, task=None, k=None) -> TrainConfig:
    return TrainConfig(
        task=task if task is not None else config["task"],
        k=k if k is not None else config["k"],
        hidden_size=config["hidden_size"],
        embed_dim=config["embed_dim"],
        head_dim=config["head_dim"],
        batch_size=config["batch_size"],
        lr0=config["lr0"],
        epoch_decay=config["epoch_decay"],
        drop_decay=config["drop_decay"],
        clip_norm=config["clip_norm"],
        max_epochs=config["max_epochs"],
        gate_p=config["gate_p"],
        init_gain=config["init_gain"],
        valid_draws=config["valid_draws"],
        seed=config["seed"],
        allow_custom_k=config["allow_custom_k"],
    )


def _probe_config(config: dict) -> pr.ProbeConfig:
    return pr.ProbeConfig(
        mlp_hidden=tuple(config["mlp_hidden"]),
        dropout=tuple(config["dropout"]),
        l2_grid=tuple(config["l2_grid"]),
        epochs=config["probe_epochs"],
        lr=config["probe_lr"],
        batch_size=config["probe_batch"],
        seed=config["seed"],
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(config: dict) -> int:
    out = config["out"] or "dataset.tsv"
    data = _prepare(config)
    task, k, seed = config["task"], config["k"], config["seed"]
    if task == "MT":
        raise UsageError("gen writes one task's dataset; pick one of D P I R C N")
    # validate k through the same gate training uses
    _train_config(config)
    if task in ("C", "N"):
        batches, stats = gen_pair_batches(
            data.all_ids, task, k, config["batch_size"], seed
        )
        groups = []
        for batch, sources in batches:
            groups.extend(batch.candidate_sets(sources))
        write_pair_dataset(out, groups)
    else:
        examples, stats = gen_single_examples(
            data.all_ids, task, k, config["gate_p"], data.vocab, seed
        )
        write_single_dataset(out, examples)
    vocab_path = str(out) + ".vocab"
    save_vocab_file(data.vocab, vocab_path)
    write_meta(out, config, written=stats.written,
               skipped=dict(stats.skipped), vocab=vocab_path)
    _progress(
        f"gen {task}({k}): wrote {stats.written} records to {out} "
        f"({stats.total_skipped} inputs skipped)"
    )
    return 0


def cmd_train(config: dict) -> int:
    out = config["out"] or "model.ckpt"
    metrics_path = config["metrics"] or str(out) + ".metrics.jsonl"
    data = _prepare(config)
    tc = _train_config(config)
    _progress(f"train {tc.task}(k={tc.k}) on {len(data.train)} sentences "
              f"(vocab {data.vocab.size})")
    if tc.task == "MT":
        state = train_multitask(tc, data, progress=_progress)
        paths = {"group1": str(out) + ".g1", "group2": str(out) + ".g2"}
        save_checkpoint(paths["group1"], state.group1.params, {"task": "MT/group1"})
        save_checkpoint(paths["group2"], state.group2.params, {"task": "MT/group2"})
        history = state.history
        summary = {
            "task": "MT", "k": tc.k,
            "member_accs": state.member_accs,
            "output_dim": state.output_dim,
            "checkpoints": paths,
        }
    else:
        state = train_single_task(tc, data, progress=_progress)
        save_checkpoint(out, state.params,
                        {"task": tc.task, "k": tc.k, "best_valid": state.best_valid})
        history = state.history
        summary = {
            "task": tc.task, "k": tc.k,
            "best_valid": state.best_valid,
            "best_epoch": state.best_epoch,
            "checkpoint": str(out),
        }
    write_metrics_jsonl(metrics_path, history)
    write_meta(out, config, **summary)
    final_losses = [h["train_loss"] for h in history if h["epoch"] == history[-1]["epoch"]]
    summary["final_loss"] = sum(final_losses) / len(final_losses)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _probe_tasks(config: dict, sentences: list) -> dict:
    seed = config["seed"]
    tasks = {}
    for name in config["probes"]:
        if name == "SentLen":
            tasks[name] = pr.gen_probe_sentlen(
                sentences, pr.default_length_bins(sentences), seed=seed)
        elif name == "WordContent":
            tasks[name] = pr.gen_probe_wordcontent(
                sentences, pr.default_wordcontent_targets(sentences), seed=seed)
        elif name == "BigramShift":
            tasks[name] = pr.gen_probe_bigramshift(
                sentences, stream(seed, PROBE, epoch=2, item=0), seed=seed)
        else:
            raise UsageError(f"unknown probe {name!r}; "
                             f"choose from {', '.join(pr.PROBE_NAMES)}")
    return tasks


def cmd_probe(config: dict, ckpt: str) -> int:
    if config["out"] is None:
        raise UsageError("probe needs --out for the results file stem")
    params, _meta = load_checkpoint(ckpt)
    sentences = _load_sentences(config)
    data = prepare_corpus(
        sentences,
        min_freq=config["min_freq"],
        valid_fraction=config["valid_fraction"],
        seed=config["seed"],
    )
    if data.vocab.size != params.vocab_size:
        raise DataError(
            f"checkpoint vocab size {params.vocab_size} != corpus vocab "
            f"{data.vocab.size}; probe with the corpus the model was trained on"
        )
    tasks = _probe_tasks(config, sentences)
    pc = _probe_config(config)
    classifiers = {"logreg": ("logreg",), "mlp": ("mlp",),
                   "both": ("logreg", "mlp")}.get(config["probe_classifier"])
    if classifiers is None:
        raise UsageError(f"probe_classifier must be logreg|mlp|both, "
                         f"got {config['probe_classifier']!r}")
    results = {}
    for name, task in tasks.items():
        enc = pr.encode_probe(task, params, data.vocab)
        for clf in classifiers:
            key = f"{name}/{clf}"
            results[key] = (pr.eval_logreg(enc, pc.l2_grid) if clf == "logreg"
                            else pr.eval_mlp_probe(enc, pc))
            _progress(f"probe {key}: test acc {results[key].test_accuracy:.4f}")
    out = config["out"]
    pr.write_results_json(str(out) + ".json", results)
    pr.write_results_tsv(str(out) + ".tsv", results)
    table = pr.results_to_table(results)
    if config["baseline"]:
        table["untrained"] = pr.eval_untrained_baseline(
            tasks, data.vocab,
            hidden_size=params.hidden_size, embed_dim=params.embed_dim,
            seed=config["seed"], config=pc,
            classifier=classifiers[0], expect_dim=params.output_dim,
        )
    write_meta(out, config, results={k: r.test_accuracy for k, r in results.items()},
               checkpoint=str(ckpt))
    print(json.dumps(table, sort_keys=True))
    return 0


def cmd_sweep(config: dict, k_range: str) -> int:
    try:
        lo, hi = k_range.split("..")
        ks = list(range(int(lo), int(hi) + 1))
    except ValueError as exc:
        raise UsageError(f"--k-range must look like 2..6, got {k_range!r}") from exc
    if not ks:
        raise UsageError(f"empty k range {k_range!r}")
    data = _prepare(config)
    rows = []
    print("task\tk\tbest_valid\tbest_epoch")
    for k in ks:
        tc = _train_config(config, k=k)
        _progress(f"sweep {tc.task}(k={k})")
        if tc.task == "MT":
            state = train_multitask(tc, data, progress=_progress)
            best = sum(state.member_accs.values()) / len(state.member_accs)
            epoch = max(h["epoch"] for h in state.history)
        else:
            state = train_single_task(tc, data, progress=_progress)
            best, epoch = state.best_valid, state.best_epoch
        rows.append({"task": tc.task, "k": k, "best_valid": best, "best_epoch": epoch})
        print(f"{tc.task}\t{k}\t{best:.4f}\t{epoch}", flush=True)
    if config["out"]:
        Path(config["out"]).write_text(
            json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        write_meta(config["out"], config)
    return 0


def _member_probs(params, task: str, examples) -> np.ndarray:
    """Softmax of a member's head over its encodings of labeled examples."""
    if task not in params.heads:
        raise DataError(f"checkpoint has no classifier head for task {task!r}")
    from . import autodiff as ad
    from .encoder import encode_batch, head_logits

    head = params.heads[task]
    tape = ad.Tape(recording=False)
    probs = []
    for start in range(0, len(examples), 256):
        chunk = examples[start : start + 256]
        enc = encode_batch([ex.tokens for ex in chunk], params, tape)
        logits = head_logits(enc, head).value
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs.append(e / e.sum(axis=1, keepdims=True))
    return np.concatenate(probs, axis=0)


def cmd_ensemble(config: dict, manifest_path: str) -> int:
    spec = ens.read_manifest(manifest_path)
    task, k, seed = config["task"], config["k"], config["seed"]
    if task not in ("D", "P", "I", "R"):
        raise UsageError(
            "ensemble evaluation averages classifier-head probabilities, "
            "so it applies to the binary tasks D P I R"
        )
    if task not in spec.weights:
        raise DataError(f"manifest has no validation scores for task {task!r}")
    data = _prepare(config)
    examples, _ = gen_single_examples(
        data.valid, task, k, config["gate_p"], data.vocab, seed, purpose=VALID
    )
    labels = np.array([ex.label for ex in examples])
    member_probs, member_accs = [], []
    for path in spec.checkpoints:
        params, _meta = load_checkpoint(path)
        if params.vocab_size != data.vocab.size:
            raise DataError(
                f"{path}: vocab size {params.vocab_size} != corpus vocab "
                f"{data.vocab.size}; evaluate with the training corpus"
            )
        probs = _member_probs(params, task, examples)
        member_probs.append(probs)
        member_accs.append(float(np.mean(np.argmax(probs, axis=1) == labels)))
    weights = spec.weights[task]
    acc = ens.ensemble_accuracy(member_probs, weights, labels)
    report = {
        "task": task, "k": k,
        "members": member_accs,
        "weights": list(weights),
        "ensemble": acc,
        "n_examples": len(examples),
    }
    for i, a in enumerate(member_accs):
        _progress(f"member {i}: acc {a:.4f} (weight {weights[i]:.4f})")
    _progress(f"ensemble: acc {acc:.4f}")
    if config["out"]:
        Path(config["out"]).write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        write_meta(config["out"], config, manifest=str(manifest_path))
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_gradcheck(config: dict, n_models: int, tolerance: float) -> int:
    report = run_gradcheck(n_models=n_models, seed=config["seed"], progress=_progress)
    print(json.dumps({"max_rel_err": report["worst"], "models": n_models,
                      "tolerance": tolerance}, sort_keys=True))
    if not report["worst"] < tolerance:
        raise NumericError(
            f"gradient check failed: max rel err {report['worst']:.3e} "
            f">= {tolerance:.1e}"
        )
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common(p: _Parser) -> None:
    p.add_argument("--config", help="JSON config file (unknown keys rejected)")
    p.add_argument("--seed", type=int, help="master seed (beats config and env)")
    p.add_argument("--corpus", help="text corpus, one sentence per line")
    p.add_argument("--toy-n", dest="toy_n", type=int,
                   help="toy corpus size when --corpus is absent")
    p.add_argument("--valid-fraction", dest="valid_fraction", type=float)
    p.add_argument("--min-freq", dest="min_freq", type=int)
    p.add_argument("--threads", type=int, help="data-prep parallelism cap")
    p.add_argument("--deterministic", action="store_const", const=True,
                   help="force single-threaded bit-stable execution")
    p.add_argument("--out", help="output path")


def _add_model_flags(p: _Parser) -> None:
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--k", type=int)
    p.add_argument("--gate-p", dest="gate_p", type=float)
    p.add_argument("--hidden-size", dest="hidden_size", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--head-dim", dest="head_dim", type=int)
    p.add_argument("--init-gain", dest="init_gain", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--valid-draws", dest="valid_draws", type=int)


def build_parser() -> _Parser:
    parser = _Parser(prog="conssent",
                     description="Sentence encoders trained to tell consistent "
                                 "token sequences from perturbed ones.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[], help="write a perturbation dataset")
    _add_common(p)
    _add_model_flags(p)

    p = sub.add_parser("train", help="train an encoder, save checkpoint + metrics")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--metrics", help="metrics JSONL path")

    p = sub.add_parser("probe", help="probe a trained checkpoint")
    _add_common(p)
    p.add_argument("checkpoint", help="trained model checkpoint")
    p.add_argument("--probes", nargs="+", choices=pr.PROBE_NAMES)
    p.add_argument("--probe-classifier", dest="probe_classifier",
                   choices=("logreg", "mlp", "both"))
    p.add_argument("--baseline", action="store_const", const=True,
                   help="also report an untrained encoder of the same shape")

    p = sub.add_parser("sweep", help="train across a k range, print a table")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--k-range", dest="k_range", default="2..6",
                   help="inclusive range, e.g. 2..6")

    p = sub.add_parser("ensemble", help="evaluate a checkpoint ensemble")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("manifest", help="ensemble manifest JSON")

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    _add_common(p)
    p.add_argument("--models", type=int, default=20,
                   help="number of random small models")
    p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        config = resolve_config(args)
        if args.command == "gen":
            return cmd_gen(config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "probe":
            return cmd_probe(config, args.checkpoint)
        if args.command == "sweep":
            return cmd_sweep(config, args.k_range)
        if args.command == "ensemble":
            return cmd_ensemble(config, args.manifest)
        if args.command == "gradcheck":
            return cmd_gradcheck(config, args.models, args.tolerance)
        raise UsageError(f"unknown command {args.command!r}")
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return 1
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except ConsSentError as exc:   # pragma: no cover - base-class safety net
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
