"""Bidirectional LSTM sentence encoder with max pooling over positions.

The representation of a sentence is built by running an LSTM over the
token embeddings left-to-right and another right-to-left, concatenating
the two hidden states at every position, and taking the elementwise max
over positions. Classification heads are two-layer perceptrons applied on
top of (pairs of) these fixed-size vectors.

Everything is expressed through the ops in ``autodiff``; the same code
path serves training (recording tape) and frozen inference
(non-recording tape).
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .corpus import PAD_ID
from .errors import DataError
from .rng import INIT, RngStream, stream

_MAGIC = b"CSNT"
_FORMAT_VERSION = 1
_NEG_BIG = 1e30


@dataclass
class LstmWeights:
    """One direction's parameters; gate order along columns is i, f, o, g."""

    w_x: object  # (embed_dim, 4H)
    w_h: object  # (H, 4H)
    b: object  # (4H,)


@dataclass
class HeadWeights:
    """Two-layer perceptron: in -> tanh(hidden) -> out."""

    w1: object
    b1: object
    w2: object
    b2: object


@dataclass
class EncoderParams:
    embedding: object  # (vocab_size, embed_dim)
    fwd: LstmWeights
    bwd: LstmWeights
    heads: dict = field(default_factory=dict)

    @property
    def hidden_size(self) -> int:
        return _value_of(self.fwd.w_h).shape[0]

    @property
    def embed_dim(self) -> int:
        return _value_of(self.embedding).shape[1]

    @property
    def vocab_size(self) -> int:
        return _value_of(self.embedding).shape[0]

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden_size

    def named_arrays(self) -> dict:
        """Flat name -> array view, in the fixed checkpoint order."""
        out = {
            "embedding": self.embedding,
            "fwd.w_x": self.fwd.w_x,
            "fwd.w_h": self.fwd.w_h,
            "fwd.b": self.fwd.b,
            "bwd.w_x": self.bwd.w_x,
            "bwd.w_h": self.bwd.w_h,
            "bwd.b": self.bwd.b,
        }
        for task in sorted(self.heads):
            head = self.heads[task]
            out[f"head.{task}.w1"] = head.w1
            out[f"head.{task}.b1"] = head.b1
            out[f"head.{task}.w2"] = head.w2
            out[f"head.{task}.b2"] = head.b2
        return out


def _value_of(x):
    return x.value if isinstance(x, ad.Var) else x


def _uniform_array(rng: RngStream, shape: tuple, lo: float, hi: float) -> np.ndarray:
    size = int(np.prod(shape))
    flat = np.fromiter((rng.uniform(lo, hi) for _ in range(size)), dtype=np.float64, count=size)
    return flat.reshape(shape)


def _init_lstm(rng: RngStream, embed_dim: int, hidden: int) -> LstmWeights:
    r = 1.0 / np.sqrt(hidden)
    w_x = _uniform_array(rng, (embed_dim, 4 * hidden), -r, r)
    w_h = _uniform_array(rng, (hidden, 4 * hidden), -r, r)
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0  # forget gate starts open
    return LstmWeights(w_x, w_h, b)


def _init_head(rng: RngStream, in_dim: int, hidden: int, out_dim: int) -> HeadWeights:
    r1 = 1.0 / np.sqrt(in_dim)
    r2 = 1.0 / np.sqrt(hidden)
    return HeadWeights(
        w1=_uniform_array(rng, (in_dim, hidden), -r1, r1),
        b1=np.zeros(hidden),
        w2=_uniform_array(rng, (hidden, out_dim), -r2, r2),
        b2=np.zeros(out_dim),
    )


def init_params(
    vocab_size: int,
    embed_dim: int,
    hidden_size: int,
    head_tasks: tuple = (),
    head_dim: int = 64,
    head_classes: int = 2,
    seed: int = 0,
    stream_item: int = 0,
    init_gain: float = 1.0,
) -> EncoderParams:
    """Fresh parameters from the (seed, INIT, stream_item) stream.

    Embeddings are U(-0.1, 0.1); every other weight matrix starts at
    U(-g/sqrt(fan), g/sqrt(fan)) where g is ``init_gain``. Biases are zero
    except the forget gate at 1. With the small fixed embedding range,
    gain 1 leaves both the gate pre-activations and the gradient flowing
    back to the embeddings so faint that plain SGD barely moves at desk
    scale, so trainers default to a larger gain. Draw order is fixed, so a
    given seed always produces the same model; ``stream_item`` separates
    sibling models built under one seed (e.g. the two encoders of a
    multitask run).
    """
    rng = stream(seed, INIT, item=stream_item)
    embedding = _uniform_array(rng, (vocab_size, embed_dim), -0.1, 0.1)
    fwd = _init_lstm(rng, embed_dim, hidden_size)
    bwd = _init_lstm(rng, embed_dim, hidden_size)
    for w in (fwd, bwd):
        w.w_x *= init_gain
        w.w_h *= init_gain
    heads = {}
    for task in sorted(head_tasks):
        head = _init_head(rng, 2 * hidden_size, head_dim, head_classes)
        head.w1 *= init_gain
        head.w2 *= init_gain
        heads[task] = head
    return EncoderParams(embedding, fwd, bwd, heads)


def params_view(leaves: dict) -> EncoderParams:
    """Reassemble an EncoderParams structure from a flat name -> value dict.

    Head names are recovered from the ``head.<task>.w1`` keys, so the dict
    alone fully determines the shape of the result. Values may be Vars or
    plain arrays.
    """
    fwd = LstmWeights(leaves["fwd.w_x"], leaves["fwd.w_h"], leaves["fwd.b"])
    bwd = LstmWeights(leaves["bwd.w_x"], leaves["bwd.w_h"], leaves["bwd.b"])
    tasks = sorted(n.split(".")[1] for n in leaves if n.startswith("head.") and n.endswith(".w1"))
    heads = {
        task: HeadWeights(
            leaves[f"head.{task}.w1"],
            leaves[f"head.{task}.b1"],
            leaves[f"head.{task}.w2"],
            leaves[f"head.{task}.b2"],
        )
        for task in tasks
    }
    return EncoderParams(leaves["embedding"], fwd, bwd, heads)


def bind_params(params: EncoderParams, tape: ad.Tape) -> tuple[EncoderParams, dict]:
    """Wrap every parameter array as a leaf Var on the tape.

    Returns the Var-valued view plus a flat name -> leaf dict for reading
    gradients out after the backward sweep.
    """
    leaves = {name: tape.leaf(arr) for name, arr in params.named_arrays().items()}
    return params_view(leaves), leaves


def _lstm_direction(ids, mask, emb, w, hidden, tape, reverse):
    """Run one direction over (B, T) ids; returns per-position h Vars."""
    B, T = ids.shape
    h = tape.leaf(np.zeros((B, hidden)))
    c = tape.leaf(np.zeros((B, hidden)))
    padded = mask is not None
    steps = range(T - 1, -1, -1) if reverse else range(T)
    hs = [None] * T
    for t in steps:
        x_t = ad.gather_rows(emb, ids[:, t])
        z = ad.add(ad.add(ad.matmul(x_t, w.w_x), ad.matmul(h, w.w_h)), w.b)
        i_g = ad.sigmoid(ad.slice_cols(z, 0, hidden))
        f_g = ad.sigmoid(ad.slice_cols(z, hidden, 2 * hidden))
        o_g = ad.sigmoid(ad.slice_cols(z, 2 * hidden, 3 * hidden))
        g_g = ad.tanh(ad.slice_cols(z, 3 * hidden, 4 * hidden))
        c_new = ad.add(ad.mul(f_g, c), ad.mul(i_g, g_g))
        h_new = ad.mul(o_g, ad.tanh(c_new))
        if padded:
            m = mask[:, t : t + 1]  # (B, 1) constant
            c = ad.add(ad.mul(c_new, m), ad.mul(c, 1.0 - m))
            h = ad.add(ad.mul(h_new, m), ad.mul(h, 1.0 - m))
        else:
            c, h = c_new, h_new
        hs[t] = h
    return hs


def encode_batch(seqs: list, params: EncoderParams, tape: ad.Tape) -> ad.Var:
    """Encode a batch of id sequences into a (B, 2H) Var.

    Ragged batches are padded with PAD ids and masked: padded steps leave
    the recurrent state untouched and are pinned far below any reachable
    activation before the position max, so they can never win the pool.
    """
    if not seqs:
        raise ValueError("empty batch")
    lengths = [len(s) for s in seqs]
    if min(lengths) == 0:
        raise DataError("cannot encode an empty sentence")
    B, T = len(seqs), max(lengths)
    ids = np.full((B, T), PAD_ID, dtype=np.int64)
    for b, s in enumerate(seqs):
        ids[b, : len(s)] = s
    ragged = min(lengths) != T
    mask = None
    if ragged:
        mask = np.zeros((B, T))
        for b, n in enumerate(lengths):
            mask[b, :n] = 1.0

    bound = params if isinstance(params.embedding, ad.Var) else bind_params(params, tape)[0]
    hidden = bound.hidden_size
    hs_f = _lstm_direction(ids, mask, bound.embedding, bound.fwd, hidden, tape, reverse=False)
    hs_b = _lstm_direction(ids, mask, bound.embedding, bound.bwd, hidden, tape, reverse=True)

    per_pos = []
    for t in range(T):
        u = ad.concat_cols(hs_f[t], hs_b[t])
        if ragged:
            u = ad.add(u, (mask[:, t : t + 1] - 1.0) * _NEG_BIG)
        per_pos.append(u)
    return ad.max_over_rows(ad.stack_rows(per_pos))


def encode_sentences(
    seqs: list, params: EncoderParams, batch_size: int = 128
) -> np.ndarray:
    """Frozen encodings as a plain (N, 2H) float array; no tape kept."""
    out = []
    for start in range(0, len(seqs), batch_size):
        chunk = seqs[start : start + batch_size]
        tape = ad.Tape(recording=False)
        out.append(encode_batch(chunk, params, tape).value)
    return np.concatenate(out, axis=0)


def encode(seq: list, params: EncoderParams) -> np.ndarray:
    """Frozen (2H,) encoding of one sentence."""
    return encode_sentences([seq], params)[0]


def head_logits(v, head: HeadWeights) -> ad.Var:
    """Two-layer perceptron with tanh between the layers."""
    hidden = ad.tanh(ad.add(ad.matmul(v, head.w1), head.b1))
    return ad.add(ad.matmul(hidden, head.w2), head.b2)


# ---------------------------------------------------------------------------
# Checkpoints: magic, version, JSON metadata, then raw little-endian float32
# arrays in named_arrays() order.
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: EncoderParams, meta: dict | None = None) -> None:
    arrays = params.named_arrays()
    head_meta = {}
    for task in sorted(params.heads):
        h = params.heads[task]
        head_meta[task] = {"hidden": h.w1.shape[1], "classes": h.w2.shape[1]}
    full_meta = {
        "format_version": _FORMAT_VERSION,
        "vocab_size": params.vocab_size,
        "embed_dim": params.embed_dim,
        "hidden_size": params.hidden_size,
        "heads": head_meta,
        **(meta or {}),
    }
    blob = json.dumps(full_meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[EncoderParams, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic {data[:4]!r})")
    version, meta_len = struct.unpack_from("<II", data, 4)
    if version != _FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    try:
        meta = json.loads(data[12 : 12 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt metadata: {exc}") from exc
    V, D, H = meta["vocab_size"], meta["embed_dim"], meta["hidden_size"]

    shapes = {
        "embedding": (V, D),
        "fwd.w_x": (D, 4 * H),
        "fwd.w_h": (H, 4 * H),
        "fwd.b": (4 * H,),
        "bwd.w_x": (D, 4 * H),
        "bwd.w_h": (H, 4 * H),
        "bwd.b": (4 * H,),
    }
    for task in sorted(meta.get("heads", {})):
        hm = meta["heads"][task]
        shapes[f"head.{task}.w1"] = (2 * H, hm["hidden"])
        shapes[f"head.{task}.b1"] = (hm["hidden"],)
        shapes[f"head.{task}.w2"] = (hm["hidden"], hm["classes"])
        shapes[f"head.{task}.b2"] = (hm["classes"],)

    offset = 12 + meta_len
    arrays = {}
    for name, shape in shapes.items():
        count = int(np.prod(shape))
        nbytes = 4 * count
        if offset + nbytes > len(data):
            raise DataError(f"{path}: truncated at array {name!r}")
        arrays[name] = (
            np.frombuffer(data, dtype="<f4", count=count, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset += nbytes
    if offset != len(data):
        raise DataError(f"{path}: {len(data) - offset} trailing bytes")

    fwd = LstmWeights(arrays["fwd.w_x"], arrays["fwd.w_h"], arrays["fwd.b"])
    bwd = LstmWeights(arrays["bwd.w_x"], arrays["bwd.w_h"], arrays["bwd.b"])
    heads = {
        task: HeadWeights(
            arrays[f"head.{task}.w1"],
            arrays[f"head.{task}.b1"],
            arrays[f"head.{task}.w2"],
            arrays[f"head.{task}.b2"],
        )
        for task in sorted(meta.get("heads", {}))
    }
    return EncoderParams(arrays["embedding"], fwd, bwd, heads), meta


def copy_params(params: EncoderParams) -> EncoderParams:
    """Deep copy of all arrays (used to snapshot the best validation model)."""
    fwd = LstmWeights(params.fwd.w_x.copy(), params.fwd.w_h.copy(), params.fwd.b.copy())
    bwd = LstmWeights(params.bwd.w_x.copy(), params.bwd.w_h.copy(), params.bwd.b.copy())
    heads = {
        task: HeadWeights(h.w1.copy(), h.b1.copy(), h.w2.copy(), h.b2.copy())
        for task, h in params.heads.items()
    }
    return EncoderParams(params.embedding.copy(), fwd, bwd, heads)
