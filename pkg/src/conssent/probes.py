"""Probing harness: synthesized linguistic tasks over frozen encoders.

Three probes whose ground truth is derivable from the raw sentence alone:

* SentLen - sentence length quantized into bins;
* WordContent - which one of an ordered set of target words the sentence
  contains (sentences with zero or several targets are dropped);
* BigramShift - whether one adjacent token pair was swapped.

Each probe yields a fixed, disjoint 70/15/15 train/valid/test split.
Encoders are evaluated frozen: sentences are encoded once per split, then
either a multinomial logistic regression (L2 grid, validation-selected) or
a one-hidden-layer sigmoid MLP (hidden x dropout grid, validation-selected)
is fit on the encodings. Classifier internals draw their minibatch order,
init, and dropout masks from numpy generators seeded off this package's
deterministic streams, so results are reproducible per seed.
"""

from __future__ import annotations

import json
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .corpus import Vocabulary
from .encoder import EncoderParams, encode_sentences, init_params
from .errors import DataError, UsageError
from .rng import PROBE, stream

PROBE_NAMES = ("SentLen", "WordContent", "BigramShift")
_PROBE_ITEM = {name: i for i, name in enumerate(PROBE_NAMES)}

DEFAULT_L2_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
MLP_HIDDEN_GRID = (50, 100, 200)
MLP_DROPOUT_GRID = (0.0, 0.1, 0.2)


class UncoveredLength(DataError):
    """A sentence length falls outside the given bins."""


class InsufficientExamples(DataError):
    """Some probe class ended up below the minimum example count."""


class TooShort(DataError):
    """A sentence is too short to host the probe's perturbation."""


# ---------------------------------------------------------------------------
# Task construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeTask:
    """Labeled sentences plus a fixed train/valid/test index split."""

    name: str
    examples: tuple  # of (tokens tuple, class int)
    num_classes: int
    train_idx: tuple
    valid_idx: tuple
    test_idx: tuple

    def __post_init__(self):
        seen = [cls for _, cls in self.examples]
        missing = [c for c in range(self.num_classes) if c not in seen]
        if self.num_classes < 2 or missing:
            raise InsufficientExamples(
                f"{self.name}: classes {missing or 'n/a'} have no examples "
                f"(num_classes={self.num_classes})"
            )
        splits = (set(self.train_idx), set(self.valid_idx), set(self.test_idx))
        if (
            splits[0] & splits[1]
            or splits[0] & splits[2]
            or splits[1] & splits[2]
            or not all(splits)
        ):
            raise DataError(f"{self.name}: splits must be disjoint and non-empty")

    def split(self, which: str) -> list:
        idx = {"train": self.train_idx, "valid": self.valid_idx, "test": self.test_idx}[which]
        return [self.examples[i] for i in idx]


def _split_indices(n: int, name: str, seed: int) -> tuple[tuple, tuple, tuple]:
    order = list(range(n))
    stream(seed, PROBE, epoch=0, item=_PROBE_ITEM.get(name, 7)).shuffle(order)
    n_train = int(n * 0.70)
    n_valid = int(n * 0.15)
    # membership is random; storing each split sorted keeps serialization
    # round-trips and within-split iteration order canonical
    return (
        tuple(sorted(order[:n_train])),
        tuple(sorted(order[n_train : n_train + n_valid])),
        tuple(sorted(order[n_train + n_valid :])),
    )


def _make_task(name, examples, num_classes, seed) -> ProbeTask:
    train, valid, test = _split_indices(len(examples), name, seed)
    return ProbeTask(name, tuple(examples), num_classes, train, valid, test)


def length_class(n: int, edges: tuple) -> int:
    """Index of the first bin whose inclusive upper edge covers ``n``."""
    if n > edges[-1]:
        raise UncoveredLength(f"length {n} exceeds the last bin edge {edges[-1]}")
    return bisect_left(edges, n)


def gen_probe_sentlen(corpus: list, bin_edges, seed: int = 0) -> ProbeTask:
    """Quantize token counts into bins given by their (increasing) upper edges."""
    edges = tuple(bin_edges)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])) or edges[0] < 1:
        raise UsageError(f"bin edges must be >= 1 and strictly increasing, got {edges}")
    examples = [(tuple(s), length_class(len(s), edges)) for s in corpus]
    return _make_task("SentLen", examples, len(edges), seed)


def default_length_bins(corpus: list) -> tuple:
    """One bin per distinct length: every class non-empty by construction."""
    return tuple(sorted({len(s) for s in corpus}))


def gen_probe_wordcontent(corpus, targets, seed: int = 0, min_count: int = 10) -> ProbeTask:
    """Keep sentences with exactly one occurrence of exactly one target;
    the class is the target's position in the given (ordered) targets."""
    targets = list(targets)
    if len(targets) < 2:
        raise UsageError("need at least 2 target words")
    if len(set(targets)) != len(targets):
        raise UsageError("duplicate target words")
    index = {t: i for i, t in enumerate(targets)}
    examples = []
    for s in corpus:
        hits = [index[tok] for tok in s if tok in index]
        if len(hits) == 1:
            examples.append((tuple(s), hits[0]))
    counts = [sum(1 for _, c in examples if c == i) for i in range(len(targets))]
    lacking = {targets[i]: c for i, c in enumerate(counts) if c < min_count}
    if lacking:
        raise InsufficientExamples(
            f"classes below the minimum of {min_count} examples: {lacking}"
        )
    return _make_task("WordContent", examples, len(targets), seed)


def default_wordcontent_targets(corpus, n: int = 6, skip: int = 8) -> tuple:
    """Mid-frequency tokens: skip the top-``skip`` most frequent (closed-class
    words), then take the next ``n`` by (frequency, token) rank."""
    freq: dict = {}
    for s in corpus:
        for tok in s:
            freq[tok] = freq.get(tok, 0) + 1
    ranked = sorted(freq, key=lambda t: (-freq[t], t))
    if len(ranked) < skip + n:
        raise UsageError(f"corpus has only {len(ranked)} token types, need {skip + n}")
    return tuple(ranked[skip : skip + n])


def gen_probe_bigramshift(corpus, rng, seed: int = 0) -> ProbeTask:
    """With probability 1/2 swap one uniformly chosen adjacent pair.

    Class 1 marks swapped provenance (a swap of equal tokens still counts).
    ``rng`` drives the gates and positions; ``seed`` fixes the split.
    """
    examples = []
    for s in corpus:
        n = len(s)
        if n < 3:
            raise TooShort(f"sentence of length {n} cannot host an informative swap")
        if rng.random() < 0.5:
            pos = rng.randint(n - 1)
            swapped = list(s)
            swapped[pos], swapped[pos + 1] = swapped[pos + 1], swapped[pos]
            examples.append((tuple(swapped), 1))
        else:
            examples.append((tuple(s), 0))
    return _make_task("BigramShift", examples, 2, seed)


# ---------------------------------------------------------------------------
# Frozen encodings
# ---------------------------------------------------------------------------


@dataclass
class ProbeEncodings:
    name: str
    num_classes: int
    x: dict  # split -> (N, D) float64
    y: dict  # split -> (N,) int64

    @property
    def dim(self) -> int:
        return self.x["train"].shape[1]


def encode_probe(task: ProbeTask, encoder, vocab: Vocabulary | None = None) -> ProbeEncodings:
    """Encode every split with a frozen encoder.

    ``encoder`` is either EncoderParams (sentences are encoded with this
    package's BiLSTM-max, token strings mapped through ``vocab``) or any
    callable list-of-sentences -> (N, D) array.
    """
    if isinstance(encoder, EncoderParams):
        if vocab is None:
            raise UsageError("vocab is required when passing raw EncoderParams")
        params = encoder

        def encoder(batch):  # noqa: F811 - deliberate shadowing
            return encode_sentences([vocab.encode(list(s)) for s in batch], params)

    x, y = {}, {}
    for split in ("train", "valid", "test"):
        rows = task.split(split)
        x[split] = np.asarray(encoder([s for s, _ in rows]), dtype=np.float64)
        y[split] = np.array([c for _, c in rows], dtype=np.int64)
    dims = {m.shape[1] for m in x.values()}
    if len(dims) != 1:
        raise DataError(f"{task.name}: inconsistent encoding dims {sorted(dims)}")
    return ProbeEncodings(task.name, task.num_classes, x, y)


# ---------------------------------------------------------------------------
# Logistic-regression probe
# ---------------------------------------------------------------------------


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _logreg_value_and_grad(wb, x, y, l2, n_classes):
    n, d = x.shape
    w = wb[: d * n_classes].reshape(d, n_classes)
    b = wb[d * n_classes :]
    probs = _softmax(x @ w + b)
    nll = -np.log(probs[np.arange(n), y] + 1e-300).mean()
    value = nll + 0.5 * l2 * float(np.sum(w * w))
    delta = probs
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grad_w = x.T @ delta + l2 * w
    grad_b = delta.sum(axis=0)
    return value, np.concatenate([grad_w.ravel(), grad_b])


def fit_logreg(x, y, num_classes: int, l2: float, init=None):
    """Minimize mean cross-entropy + (l2/2)||W||^2 (bias unregularized).

    Convex, so the optimum is init-independent; returns (W, b, final_loss).
    """
    d = x.shape[1]
    wb0 = np.zeros(d * num_classes + num_classes) if init is None else np.asarray(init, float)
    res = minimize(
        _logreg_value_and_grad,
        wb0,
        args=(x, y, l2, num_classes),
        method="L-BFGS-B",
        jac=True,
        options={"maxiter": 500, "ftol": 1e-12, "gtol": 1e-9},
    )
    w = res.x[: d * num_classes].reshape(d, num_classes)
    b = res.x[d * num_classes :]
    return w, b, float(res.fun)


def _accuracy(w, b, x, y) -> float:
    return float(np.mean(np.argmax(x @ w + b, axis=1) == y))


@dataclass
class ProbeResult:
    name: str
    classifier: str
    test_accuracy: float
    valid_accuracy: float
    selected: dict
    table: list = field(default_factory=list)  # (config dict, valid accuracy)


def eval_logreg(enc: ProbeEncodings, l2_grid=DEFAULT_L2_GRID) -> ProbeResult:
    """Fit one regression per L2 value; select on validation (ties -> the
    smaller L2, i.e. the first maximum in ascending grid order)."""
    best = None
    table = []
    for l2 in sorted(l2_grid):
        w, b, _ = fit_logreg(enc.x["train"], enc.y["train"], enc.num_classes, l2)
        acc = _accuracy(w, b, enc.x["valid"], enc.y["valid"])
        table.append(({"l2": l2}, acc))
        if best is None or acc > best[0]:
            best = (acc, l2, w, b)
    valid_acc, l2, w, b = best
    return ProbeResult(
        name=enc.name,
        classifier="logreg",
        test_accuracy=_accuracy(w, b, enc.x["test"], enc.y["test"]),
        valid_accuracy=valid_acc,
        selected={"l2": l2},
        table=table,
    )


# ---------------------------------------------------------------------------
# MLP probe: linear -> sigmoid -> dropout -> classification layer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeConfig:
    mlp_hidden: tuple = MLP_HIDDEN_GRID
    dropout: tuple = MLP_DROPOUT_GRID
    l2_grid: tuple = DEFAULT_L2_GRID
    epochs: int = 40
    lr: float = 0.2
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if any(h < 1 for h in self.mlp_hidden) or not self.mlp_hidden:
            raise UsageError("mlp_hidden must be positive")
        if any(not 0 <= p < 1 for p in self.dropout) or not self.dropout:
            raise UsageError("dropout rates must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise UsageError("epochs, batch_size and lr must be positive")


def _np_rng(seed: int, item: int) -> np.random.Generator:
    # classifier-internal stochasticity only; data decisions stay on the
    # package's own streams
    s = stream(seed, PROBE, epoch=1, item=item)
    return np.random.default_rng((s.next_u32(), s.next_u32()))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def fit_mlp(x, y, num_classes, hidden, dropout, rng, epochs=40, lr=0.2, batch_size=32):
    """Minibatch SGD on CE; dropout sits between sigmoid and classifier."""
    n, d = x.shape
    w1 = rng.uniform(-1 / np.sqrt(d), 1 / np.sqrt(d), size=(d, hidden))
    b1 = np.zeros(hidden)
    w2 = rng.uniform(-1 / np.sqrt(hidden), 1 / np.sqrt(hidden), size=(hidden, num_classes))
    b2 = np.zeros(num_classes)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            xb, yb = x[idx], y[idx]
            h = _sigmoid(xb @ w1 + b1)
            if dropout > 0.0:
                mask = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
                hd = h * mask
            else:
                mask = None
                hd = h
            probs = _softmax(hd @ w2 + b2)
            delta = probs
            delta[np.arange(len(idx)), yb] -= 1.0
            delta /= len(idx)
            g_w2 = hd.T @ delta
            g_b2 = delta.sum(axis=0)
            g_h = delta @ w2.T
            if mask is not None:
                g_h = g_h * mask
            g_z1 = g_h * h * (1.0 - h)
            g_w1 = xb.T @ g_z1
            g_b1 = g_z1.sum(axis=0)
            w2 -= lr * g_w2
            b2 -= lr * g_b2
            w1 -= lr * g_w1
            b1 -= lr * g_b1
    return w1, b1, w2, b2


def _mlp_accuracy(model, x, y) -> float:
    w1, b1, w2, b2 = model
    h = _sigmoid(x @ w1 + b1)  # dropout off at eval time
    return float(np.mean(np.argmax(h @ w2 + b2, axis=1) == y))


def eval_mlp_probe(enc: ProbeEncodings, config: ProbeConfig | None = None) -> ProbeResult:
    """3x3 grid over (hidden, dropout); select on validation accuracy with
    ties resolved toward smaller hidden, then smaller dropout."""
    config = config or ProbeConfig()
    best = None
    table = []
    cell = 0
    for hidden in sorted(config.mlp_hidden):
        for dropout in sorted(config.dropout):
            rng = _np_rng(config.seed, item=16 + cell)
            cell += 1
            model = fit_mlp(
                enc.x["train"], enc.y["train"], enc.num_classes, hidden, dropout,
                rng, config.epochs, config.lr, config.batch_size,
            )
            acc = _mlp_accuracy(model, enc.x["valid"], enc.y["valid"])
            table.append(({"hidden": hidden, "dropout": dropout}, acc))
            if best is None or acc > best[0]:
                best = (acc, hidden, dropout, model)
    valid_acc, hidden, dropout, model = best
    return ProbeResult(
        name=enc.name,
        classifier="mlp",
        test_accuracy=_mlp_accuracy(model, enc.x["test"], enc.y["test"]),
        valid_accuracy=valid_acc,
        selected={"hidden": hidden, "dropout": dropout},
        table=table,
    )


def eval_untrained_baseline(
    tasks: dict,
    vocab: Vocabulary,
    hidden_size: int = 32,
    embed_dim: int = 64,
    seed: int = 0,
    config: ProbeConfig | None = None,
    classifier: str = "mlp",
    expect_dim: int | None = None,
) -> dict:
    """Probe accuracies of a frozen random-initialized encoder.

    ``expect_dim`` guards comparisons against a trained encoder: a
    mismatch raises instead of silently comparing different widths.
    """
    params = init_params(vocab.size, embed_dim, hidden_size, seed=seed)
    if expect_dim is not None and params.output_dim != expect_dim:
        raise UsageError(
            f"untrained encoder dim {params.output_dim} != expected {expect_dim}"
        )
    out = {}
    for name, task in tasks.items():
        enc = encode_probe(task, params, vocab)
        if classifier == "logreg":
            result = eval_logreg(enc, (config or ProbeConfig()).l2_grid)
        elif classifier == "mlp":
            result = eval_mlp_probe(enc, config)
        else:
            raise UsageError(f"unknown classifier {classifier!r}")
        out[name] = result.test_accuracy
    return out


# ---------------------------------------------------------------------------
# Serialization: dataset lines and result tables
# ---------------------------------------------------------------------------


def write_probe_dataset(path: str | Path, task: ProbeTask) -> None:
    """Same line discipline as the perturbation datasets (tab-separated
    metadata, space-joined tokens) with the class in the label column."""
    split_of = {}
    for name in ("train", "valid", "test"):
        for i in getattr(task, f"{name}_idx"):
            split_of[i] = name
    with open(path, "w", encoding="utf-8") as fh:
        for i, (tokens, cls) in enumerate(task.examples):
            fh.write(f"{cls}\t{task.name}\t{split_of[i]}\t{i}\t" + " ".join(tokens) + "\n")


def read_probe_dataset(path: str | Path) -> ProbeTask:
    examples, splits, names = [], {"train": [], "valid": [], "test": []}, set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 fields, got {len(fields)}")
            cls, name, split, idx, toks = fields
            if split not in splits:
                raise DataError(f"{path}:{lineno}: bad split {split!r}")
            if int(idx) != len(examples):
                raise DataError(f"{path}:{lineno}: indices must be dense and ordered")
            names.add(name)
            splits[split].append(int(idx))
            examples.append((tuple(toks.split()), int(cls)))
    if len(names) != 1:
        raise DataError(f"{path}: mixed task names {sorted(names)}")
    return ProbeTask(
        names.pop(),
        tuple(examples),
        max(c for _, c in examples) + 1,
        tuple(splits["train"]),
        tuple(splits["valid"]),
        tuple(splits["test"]),
    )


def results_to_table(results: dict) -> dict:
    """{task: {"<classifier>": accuracy, ...}} from ProbeResult values."""
    table: dict = {}
    for key, res in results.items():
        table.setdefault(res.name, {})[res.classifier] = res.test_accuracy
    return table


def write_results_json(path: str | Path, results: dict) -> None:
    rows = {
        key: {
            "task": r.name,
            "classifier": r.classifier,
            "test_accuracy": r.test_accuracy,
            "valid_accuracy": r.valid_accuracy,
            "selected": r.selected,
            "grid": [[cfg, acc] for cfg, acc in r.table],
        }
        for key, r in results.items()
    }
    Path(path).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_results_tsv(path: str | Path, results: dict) -> None:
    lines = ["task\tclassifier\tconfig\tvalid_accuracy\ttest_accuracy"]
    for _, r in sorted(results.items()):
        for cfg, acc in r.table:
            label = ",".join(f"{k}={v}" for k, v in sorted(cfg.items()))
            lines.append(f"{r.name}\t{r.classifier}\t{label}\t{acc:.6f}\t")
        sel = ",".join(f"{k}={v}" for k, v in sorted(r.selected.items()))
        lines.append(
            f"{r.name}\t{r.classifier}\t[selected {sel}]\t{r.valid_accuracy:.6f}\t{r.test_accuracy:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
