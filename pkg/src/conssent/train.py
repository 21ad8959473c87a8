"""Losses, clipped SGD, and the single-task / multitask trainers.

One engine (`_run_training`) drives every configuration: a single binary
task is a one-task rotation with one classification head, a single ranking
task is a one-task rotation with no head, and the multitask groups are the
same loop over several tasks sharing one encoder. Each epoch re-samples
perturbations (epoch index mixed into the RNG stream), shuffles batches,
measures validation accuracy on a fixed held-out set, snapshots the best
parameters, and updates the learning rate: multiply by `epoch_decay` when
accuracy did not drop below the best seen so far, by `drop_decay` when it
did.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .corpus import SplitCorpus
from .encoder import (
    EncoderParams,
    bind_params,
    copy_params,
    encode_batch,
    head_logits,
    init_params,
    params_view,
)
from .errors import DataError, NumericError
from .perturb import (
    PAIR_TASKS,
    SINGLE_TASKS,
    BatchTooSmall,
    PairBatch,
    gen_pair_batches,
    gen_single_examples,
    make_pair_batch,
    min_sentence_len,
)
from .rng import EXAMPLES, GRADCHECK, ORDER, PAIRS, VALID, stream

TASKS = SINGLE_TASKS + PAIR_TASKS + ("MT",)

# Default k sweep ranges per task; construction rejects anything outside
# unless allow_custom_k is set.
K_RANGES = {
    "D": range(1, 6),
    "I": range(1, 6),
    "R": range(1, 6),
    "P": range(2, 7),
    "C": range(2, 7),
    "N": range(2, 7),
    "MT": range(2, 7),
}

# Multitask groups: group 1 trains one encoder with a head per task, group 2
# trains a second encoder through ranking losses alone. Tuple order is the
# round-robin rotation order.
GROUP1 = ("D", "P", "I", "R")
GROUP2 = ("N", "C")

# Every task keeps its own data streams even when several share an encoder;
# the member index is folded into the stream's epoch field (epochs stay far
# below 256, so the channels never collide).
_MEMBER_INDEX = {"D": 0, "P": 1, "I": 2, "R": 3, "N": 4, "C": 5}


def _chan(epoch: int, task: str) -> int:
    return epoch + 256 * _MEMBER_INDEX[task]


class DimMismatch(NumericError):
    """Ranking inputs do not share one encoding dimension."""


class NonFiniteGradient(NumericError):
    """A NaN or infinity reached the optimizer; the step was abandoned."""


@dataclass(frozen=True)
class TrainConfig:
    task: str
    k: int = 2
    hidden_size: int = 32
    embed_dim: int = 64
    head_dim: int = 64
    batch_size: int = 64
    lr0: float = 0.1
    epoch_decay: float = 0.99
    drop_decay: float = 0.2
    clip_norm: float = 5.0
    max_epochs: int = 20
    gate_p: float = 0.5
    init_gain: float = 4.0
    valid_draws: int = 10
    seed: int = 0
    allow_custom_k: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        hard_floor = 1 if self.task in ("D", "I", "R") else 2
        if self.k < hard_floor:
            raise ValueError(f"task {self.task} needs k >= {hard_floor}, got {self.k}")
        if not self.allow_custom_k and self.k not in K_RANGES[self.task]:
            r = K_RANGES[self.task]
            raise ValueError(
                f"k={self.k} outside the default range {r.start}..{r.stop - 1} "
                f"for task {self.task}; pass allow_custom_k=True to override"
            )
        if self.task in ("C", "N", "MT") and self.batch_size < self.k:
            raise ValueError(
                f"batch_size {self.batch_size} < k {self.k}: the minibatch is the "
                "candidate pool for ranking tasks"
            )
        for name in ("hidden_size", "embed_dim", "head_dim", "batch_size", "max_epochs", "valid_draws"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr0 <= 0 or self.clip_norm <= 0 or self.init_gain <= 0:
            raise ValueError("lr0, clip_norm and init_gain must be positive")
        if not (0 < self.epoch_decay <= 1 and 0 < self.drop_decay <= 1):
            raise ValueError("decay factors must lie in (0, 1]")
        if not 0 <= self.gate_p <= 1:
            raise ValueError(f"gate_p must be in [0, 1], got {self.gate_p}")


@dataclass
class TrainState:
    """Best-validation snapshot plus the full per-epoch metrics history."""

    params: EncoderParams
    best_valid: float
    best_epoch: int
    lr: float
    history: list[dict]
    config: TrainConfig
    member_accs: dict = field(default_factory=dict)  # task -> acc at the best epoch
    skipped_steps: int = 0


@dataclass
class MultitaskState:
    group1: TrainState
    group2: TrainState
    config: TrainConfig

    @property
    def output_dim(self) -> int:
        return self.group1.params.output_dim + self.group2.params.output_dim

    @property
    def history(self) -> list[dict]:
        return self.group1.history + self.group2.history

    @property
    def member_accs(self) -> dict:
        return {**self.group1.member_accs, **self.group2.member_accs}


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _as_var(x, tape: ad.Tape) -> ad.Var:
    return x if isinstance(x, ad.Var) else tape.leaf(np.asarray(x, dtype=np.float64))


def binary_loss(logits, labels) -> ad.Var:
    """Softmax cross-entropy over two logits; accepts (2,) or (B, 2)."""
    if not isinstance(logits, ad.Var):
        logits = ad.Tape(recording=False).leaf(np.asarray(logits, dtype=np.float64))
    if logits.value.ndim == 1:
        logits = ad.reshape(logits, (1, logits.value.shape[0]))
    targets = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    return ad.softmax_xent(logits, targets)


def ranking_loss(anchor, candidates, target: int) -> ad.Var:
    """Cross-entropy of the target among k candidate dot products.

    The minibatch inequality "anchor · true part >= anchor · impostor part"
    becomes a k-way classification over dot-product scores, so no extra
    parameters are introduced. At indifference the loss is exactly ln k.
    """
    k = len(candidates)
    if k < 2:
        raise ValueError(f"need at least 2 candidates, got {k}")
    if not 0 <= target < k:
        raise ValueError(f"target {target} outside 0..{k - 1}")
    dims = {tuple(np.shape(c if not isinstance(c, ad.Var) else c.value)) for c in candidates}
    a_dim = tuple(np.shape(anchor if not isinstance(anchor, ad.Var) else anchor.value))
    if len(dims) != 1 or dims != {a_dim} or len(a_dim) != 1:
        raise DimMismatch(
            f"anchor {a_dim} and candidate shapes {sorted(dims)} must all be one "
            "equal-length vector shape"
        )
    tape = next(
        (x.tape for x in [anchor, *candidates] if isinstance(x, ad.Var)),
        None,
    ) or ad.Tape(recording=False)
    anchor = _as_var(anchor, tape)
    cands = ad.stack_rows([_as_var(c, tape) for c in candidates])  # (k, d)
    dots = ad.matmul(ad.reshape(anchor, (1, a_dim[0])), ad.transpose(cands))  # (1, k)
    return ad.softmax_xent(dots, np.array([target], dtype=np.int64))


def pair_batch_loss(batch: PairBatch, params, tape: ad.Tape) -> ad.Var:
    """Mean ranking loss over a whole batch via one (B, B) score matrix."""
    left = encode_batch(batch.lefts, params, tape)
    right = encode_batch(batch.rights, params, tape)
    all_scores = ad.matmul(left, ad.transpose(right))  # (B, B) dot products
    scores = ad.gather_cols(all_scores, batch.cand_idx)  # (B, k)
    return ad.softmax_xent(scores, np.asarray(batch.targets, dtype=np.int64))


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


def global_grad_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    return float(np.sqrt(total))


def sgd_step(params: EncoderParams, grads: dict, lr: float, clip_norm: float) -> float:
    """In-place update theta <- theta - lr * g with global-norm clipping.

    Returns the post-clip global norm, i.e. min(raw norm, clip_norm).
    Parameters without a gradient entry (heads of tasks not in the current
    minibatch) are left untouched.
    """
    raw = global_grad_norm(grads)
    if not np.isfinite(raw):
        raise NonFiniteGradient(f"global gradient norm is {raw}")
    scale = 1.0 if raw <= clip_norm else clip_norm / raw
    arrays = params.named_arrays()
    for name, g in grads.items():
        arrays[name] -= lr * scale * g
    return min(raw, clip_norm)


def lr_schedule(
    lr: float, valid_acc: float, best_so_far: float, drop_decay: float = 0.2, epoch_decay: float = 0.99
) -> tuple[float, float]:
    """End-of-epoch update; returns (new_lr, new_best).

    Accuracy below the best seen so far counts as a drop and cuts the rate
    hard; matching or beating it applies the gentle per-epoch decay.
    """
    if valid_acc < best_so_far:
        lr = lr * drop_decay
    else:
        lr = lr * epoch_decay
    return lr, max(best_so_far, valid_acc)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def binary_accuracy(params: EncoderParams, task: str, examples: list, batch_size: int = 256) -> float:
    """Fraction of examples whose head argmax matches the label."""
    if not examples:
        raise DataError("no validation examples")
    correct = 0
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        tape = ad.Tape(recording=False)
        enc = encode_batch([list(ex.tokens) for ex in chunk], params, tape)
        logits = head_logits(enc, params.heads[task])
        pred = np.argmax(logits.value, axis=1)
        correct += int(np.sum(pred == np.array([ex.label for ex in chunk])))
    return correct / len(examples)


def pair_accuracy(params: EncoderParams, batches: list) -> float:
    """Fraction of candidate sets where the true part wins strictly.

    A tie at the top counts as a miss: the ranking constraint asks for the
    true dot product to exceed every impostor's.
    """
    if not batches:
        raise DataError("no validation batches")
    correct = total = 0
    for batch in batches:
        tape = ad.Tape(recording=False)
        left = encode_batch(batch.lefts, params, tape).value
        right = encode_batch(batch.rights, params, tape).value
        scores = np.take_along_axis(left @ right.T, batch.cand_idx, axis=1)
        rows = np.arange(scores.shape[0])
        targets = np.asarray(batch.targets)
        target_scores = scores[rows, targets]
        masked = scores.copy()
        masked[rows, targets] = -np.inf
        correct += int(np.sum(target_scores > masked.max(axis=1)))
        total += scores.shape[0]
    return correct / total


# ---------------------------------------------------------------------------
# Batch construction (training data is re-sampled every epoch)
# ---------------------------------------------------------------------------


def _epoch_batches(train_sents, task, config: TrainConfig, epoch: int, vocab):
    ch = _chan(epoch, task)
    if task in SINGLE_TASKS:
        examples, _ = gen_single_examples(
            train_sents, task, config.k, config.gate_p, vocab, config.seed, epoch=ch, purpose=EXAMPLES
        )
        order = stream(config.seed, ORDER, ch)
        idx = list(range(len(examples)))
        order.shuffle(idx)
        return [
            [examples[j] for j in idx[s : s + config.batch_size]]
            for s in range(0, len(idx), config.batch_size)
        ]
    need = min_sentence_len(task, config.k)
    eligible = [s for s in train_sents if len(s) >= need]
    order = stream(config.seed, ORDER, ch)
    order.shuffle(eligible)
    batches = []
    for b, start in enumerate(range(0, len(eligible), config.batch_size)):
        chunk = eligible[start : start + config.batch_size]
        rng = stream(config.seed, PAIRS, ch, b)
        try:
            batches.append(make_pair_batch(chunk, task, config.k, rng))
        except BatchTooSmall:
            continue
    return batches


def _build_validation(data: SplitCorpus, task: str, config: TrainConfig):
    """Fixed validation data: several independent draws over the valid split.

    Each draw uses its own slot of the VALID stream, so enlarging
    ``valid_draws`` extends rather than reshuffles the set. More draws
    shrink the noise on the accuracy estimate, which matters because any
    dip below the running best permanently cuts the learning rate.
    """
    out = []
    for d in range(config.valid_draws):
        ch = _chan(d, task)
        if task in SINGLE_TASKS:
            examples, _ = gen_single_examples(
                data.valid, task, config.k, config.gate_p, data.vocab, config.seed,
                epoch=ch, purpose=VALID,
            )
            out.extend(examples)
        else:
            batches, _ = gen_pair_batches(
                data.valid, task, config.k, config.batch_size, config.seed,
                epoch=ch, purpose=VALID,
            )
            out.extend(b for b, _ in batches)
    if not out:
        raise DataError(f"validation split yields no {task}(k={config.k}) data")
    return out


def _validate(params: EncoderParams, task: str, valid_set) -> float:
    if task in SINGLE_TASKS:
        return binary_accuracy(params, task, valid_set)
    return pair_accuracy(params, valid_set)


# ---------------------------------------------------------------------------
# Training engine
# ---------------------------------------------------------------------------


def _train_one_batch(params, task, batch, lr, clip_norm):
    """One forward/backward/update; returns (loss, post-clip norm)."""
    tape = ad.Tape()
    bound, leaves = bind_params(params, tape)
    if task in SINGLE_TASKS:
        enc = encode_batch([list(ex.tokens) for ex in batch], bound, tape)
        logits = head_logits(enc, bound.heads[task])
        labels = np.array([ex.label for ex in batch], dtype=np.int64)
        loss = ad.softmax_xent(logits, labels)
    else:
        loss = pair_batch_loss(batch, bound, tape)
    tape.backward(loss)
    grads = {name: leaf.grad for name, leaf in leaves.items() if leaf.grad is not None}
    norm = sgd_step(params, grads, lr, clip_norm)
    return float(loss.value), norm


def _run_training(
    tasks: tuple, data: SplitCorpus, config: TrainConfig, init_item: int = 0, progress=None
) -> TrainState:
    head_tasks = tuple(t for t in tasks if t in SINGLE_TASKS)
    params = init_params(
        data.vocab.size,
        config.embed_dim,
        config.hidden_size,
        head_tasks=head_tasks,
        head_dim=config.head_dim,
        seed=config.seed,
        stream_item=init_item,
        init_gain=config.init_gain,
    )
    valid_sets = {t: _build_validation(data, t, config) for t in tasks}

    lr = config.lr0
    best = float("-inf")
    best_params = copy_params(params)
    best_epoch = 0
    best_accs: dict = {}
    history: list[dict] = []
    skipped = 0

    for epoch in range(config.max_epochs):
        batch_lists = {t: _epoch_batches(data.train, t, config, epoch, data.vocab) for t in tasks}
        n_rounds = min(len(b) for b in batch_lists.values())
        if n_rounds == 0:
            raise DataError(
                f"epoch {epoch}: no training batches for "
                f"{[t for t in tasks if not batch_lists[t]]}"
            )
        losses = {t: [] for t in tasks}
        max_norm = 0.0
        for r in range(n_rounds):
            for t in tasks:
                try:
                    loss, norm = _train_one_batch(params, t, batch_lists[t][r], lr, config.clip_norm)
                except NonFiniteGradient:
                    skipped += 1
                    continue
                losses[t].append(loss)
                max_norm = max(max_norm, norm)

        accs = {t: _validate(params, t, valid_sets[t]) for t in tasks}
        mean_acc = statistics.fmean(accs.values())
        for t in tasks:
            history.append(
                {
                    "epoch": epoch,
                    "task": t,
                    "k": config.k,
                    "train_loss": statistics.fmean(losses[t]) if losses[t] else float("nan"),
                    "valid_acc": accs[t],
                    "lr": lr,
                    "max_grad_norm": max_norm,
                }
            )
        if progress is not None:
            progress(
                f"epoch {epoch:2d} lr {lr:.6f} "
                + " ".join(f"{t}:{accs[t]:.3f}" for t in tasks)
            )
        if mean_acc > best:
            best_params = copy_params(params)
            best_epoch = epoch
            best_accs = dict(accs)
        lr, best = lr_schedule(lr, mean_acc, best, config.drop_decay, config.epoch_decay)

    return TrainState(
        params=best_params,
        best_valid=best,
        best_epoch=best_epoch,
        lr=lr,
        history=history,
        config=config,
        member_accs=best_accs,
        skipped_steps=skipped,
    )


def train_single_task(config: TrainConfig, data: SplitCorpus, progress=None) -> TrainState:
    """Train one encoder on one consistency task; returns the best snapshot."""
    if config.task == "MT":
        raise ValueError("use train_multitask for task MT")
    return _run_training((config.task,), data, config, init_item=0, progress=progress)


def train_multitask(config: TrainConfig, data: SplitCorpus, progress=None) -> MultitaskState:
    """Round-robin multitask training: two encoders, two task groups.

    Encoder 1 serves D, P, I, R through four separate heads; encoder 2
    serves N and C with no heads at all. Within a group, consecutive
    minibatches rotate through the member tasks in fixed order, and the
    learning-rate schedule follows the unweighted mean of the members'
    validation accuracies. The groups share no parameters, so they are
    trained one after the other; downstream representations concatenate
    both encoders' outputs.
    """
    if config.task != "MT":
        raise ValueError(f"train_multitask requires task MT, got {config.task}")
    g1 = _run_training(GROUP1, data, config, init_item=0, progress=progress)
    g2 = _run_training(GROUP2, data, config, init_item=1, progress=progress)
    return MultitaskState(group1=g1, group2=g2, config=config)


def encode_multitask(seqs: list, state: MultitaskState, batch_size: int = 128) -> np.ndarray:
    """Concatenated (N, 2*H1 + 2*H2) frozen encodings from both encoders."""
    from .encoder import encode_sentences

    left = encode_sentences(seqs, state.group1.params, batch_size)
    right = encode_sentences(seqs, state.group2.params, batch_size)
    return np.concatenate([left, right], axis=1)


# ---------------------------------------------------------------------------
# Metrics files: one JSON object per line
# ---------------------------------------------------------------------------


def write_metrics_jsonl(path, history: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_metrics_jsonl(path) -> list:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


# ---------------------------------------------------------------------------
# Whole-model gradient verification
# ---------------------------------------------------------------------------


def run_gradcheck(n_models: int = 20, seed: int = 0, step: float = 1e-5, progress=None) -> dict:
    """Finite-difference check of full random models, alternating losses.

    Each model gets random sizes, fresh parameters, and a random minibatch;
    even indices check the binary head path, odd indices the ranking path.
    Returns {"worst": float, "models": [...]} where worst is the maximum
    relative gradient error over every parameter of every model.
    """
    worst = 0.0
    models = []
    for i in range(n_models):
        r = stream(seed, GRADCHECK, item=i)
        vocab_size = 8 + r.randint(25)
        embed_dim = 2 + r.randint(5)
        hidden = 2 + r.randint(7)
        binary = i % 2 == 0

        def rand_sentences(count):
            return [
                [r.randint(vocab_size) for _ in range(1 + r.randint(5))] for _ in range(count)
            ]

        if binary:
            head_dim = 3 + r.randint(6)
            params = init_params(
                vocab_size, embed_dim, hidden, head_tasks=("D",), head_dim=head_dim,
                seed=seed, stream_item=1000 + i,
            )
            batch = 2 + r.randint(3)
            seqs = rand_sentences(batch)
            labels = np.array([r.randint(2) for _ in range(batch)], dtype=np.int64)

            def build_loss(tape, leaves, seqs=seqs, labels=labels):
                view = params_view(leaves)
                enc = encode_batch(seqs, view, tape)
                return ad.softmax_xent(head_logits(enc, view.heads["D"]), labels)

        else:
            params = init_params(
                vocab_size, embed_dim, hidden, seed=seed, stream_item=1000 + i
            )
            batch = 3 + r.randint(2)
            k = 3
            lefts, rights = rand_sentences(batch), rand_sentences(batch)
            rows, targets = [], []
            for b in range(batch):
                row = r.sample([j for j in range(batch) if j != b], k - 1) + [b]
                r.shuffle(row)
                rows.append(row)
                targets.append(row.index(b))
            cand_idx = np.array(rows, dtype=np.int64)
            target_arr = np.array(targets, dtype=np.int64)

            def build_loss(tape, leaves, lefts=lefts, rights=rights, cand_idx=cand_idx, target_arr=target_arr):
                view = params_view(leaves)
                left = encode_batch(lefts, view, tape)
                right = encode_batch(rights, view, tape)
                scores = ad.gather_cols(ad.matmul(left, ad.transpose(right)), cand_idx)
                return ad.softmax_xent(scores, target_arr)

        err = ad.finite_diff_check(params.named_arrays(), build_loss, step=step)
        worst = max(worst, err)
        models.append(
            {
                "model": i,
                "kind": "binary" if binary else "ranking",
                "vocab": vocab_size,
                "embed_dim": embed_dim,
                "hidden": hidden,
                "max_rel_error": err,
            }
        )
        if progress is not None:
            progress(f"model {i:2d} ({'binary ' if binary else 'ranking'}) max rel err {err:.3e}")
    return {"worst": worst, "models": models}
