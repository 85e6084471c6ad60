"""Commonsense-enhanced pairwise mention scorer.

The scorer consumes span representations for two mentions plus, in the
"intra" and "inter" modes, attention-pooled vectors over the embedded
before/after inference sentences. All forward and backward passes are
written directly in numpy at float64 so that training is deterministic and
every gradient can be verified against central finite differences.

Feature layout for a pair (i, j):

    g = [ctx_i, ctx_j, cs_i, cs_j]      (cs blocks absent in baseline mode)

where ctx is the span vector [start, last, pooled, width_feature] and
cs = [attended_before, attended_after] for the routed inference sets (the
mention's own sets in intra mode, the other mention's in inter mode; the
query is always the ctx the cs block is attached to).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MODES = ("baseline", "intra", "inter")

BLOCK_ORDER = ("w_alpha", "width_table", "W_q_before", "W_k_before",
               "W_q_after", "W_k_after", "W1", "b1", "W2", "b2")

CKPT_MAGIC = b"CSCOREF-CKPT-1\n"

LOSS_EPS = 1e-7


class ScorerError(RuntimeError):
    pass


class NonFiniteParameterError(ScorerError):
    def __init__(self, block: str):
        super().__init__(f"non-finite values in parameter block {block!r}")
        self.block = block


@dataclass(frozen=True)
class ModelDims:
    d: int = 16
    d_len: int = 20
    d_a: int = 8
    h: int = 1024
    mode: str = "intra"
    max_width_bucket: int = 8
    version: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @property
    def rep_dim(self) -> int:
        return 3 * self.d + self.d_len

    @property
    def g_dim(self) -> int:
        factor = 2 if self.mode == "baseline" else 6
        return factor * self.rep_dim


@dataclass
class ModelParameters:
    dims: ModelDims
    w_alpha: np.ndarray
    width_table: np.ndarray
    W_q_before: np.ndarray
    W_k_before: np.ndarray
    W_q_after: np.ndarray
    W_k_after: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in BLOCK_ORDER}

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.dims, **{n: a.copy()
                                             for n, a in self.blocks().items()})

    def check_finite(self):
        for name, arr in self.blocks().items():
            if not np.all(np.isfinite(arr)):
                raise NonFiniteParameterError(name)


def _expected_shapes(dims: ModelDims) -> dict[str, tuple]:
    r = dims.rep_dim
    return {
        "w_alpha": (dims.d,),
        "width_table": (dims.max_width_bucket, dims.d_len),
        "W_q_before": (r, dims.d_a),
        "W_k_before": (r, dims.d_a),
        "W_q_after": (r, dims.d_a),
        "W_k_after": (r, dims.d_a),
        "W1": (dims.g_dim, dims.h),
        "b1": (dims.h,),
        "W2": (dims.h,),
        "b2": (),
    }


_FAN_IN = {
    "w_alpha": lambda d: d.d,
    "width_table": lambda d: d.d_len,
    "W_q_before": lambda d: d.rep_dim,
    "W_k_before": lambda d: d.rep_dim,
    "W_q_after": lambda d: d.rep_dim,
    "W_k_after": lambda d: d.rep_dim,
    "W1": lambda d: d.g_dim,
    "b1": lambda d: d.g_dim,
    "W2": lambda d: d.h,
    "b2": lambda d: d.h,
}


def init_parameters(dims: ModelDims, seed: int) -> ModelParameters:
    """Seeded initialization: every block uniform in +-1/sqrt(fan_in)."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in _expected_shapes(dims).items():
        bound = 1.0 / np.sqrt(_FAN_IN[name](dims))
        arrays[name] = np.asarray(rng.uniform(-bound, bound, size=shape),
                                  dtype=np.float64)
    return ModelParameters(dims, **arrays)


def zero_gradients(dims: ModelDims) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape)
            for name, shape in _expected_shapes(dims).items()}


def sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise softmax over valid slots; fully masked rows get all zeros."""
    neg = np.where(mask, scores, -np.inf)
    rowmax = neg.max(axis=-1, keepdims=True)
    rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    e = np.exp(neg - rowmax)  # exp(-inf) = 0 exactly, so masked slots drop out
    denom = e.sum(axis=-1, keepdims=True)
    return np.where(denom > 0, e / np.where(denom > 0, denom, 1.0), 0.0)


# ---------------------------------------------------------------------------
# single-instance operations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttentionOutput:
    vector: np.ndarray
    weights: np.ndarray


def attend(query: np.ndarray, inference_reps, W_q: np.ndarray,
           W_k: np.ndarray) -> AttentionOutput:
    """Scaled dot-product attention with an identity value map.

    Scores are (W_q q) . (W_k r_j) / sqrt(d_a); the output is the
    weight-averaged stack of the raw inference representations. An empty
    stack yields a zero vector and empty weights.
    """
    query = np.asarray(query, dtype=np.float64)
    rep_dim = W_q.shape[0]
    if query.shape != (rep_dim,):
        raise ValueError(f"query has shape {query.shape}, expected "
                         f"({rep_dim},)")
    reps = [np.asarray(r, dtype=np.float64) for r in inference_reps]
    if not reps:
        return AttentionOutput(np.zeros(rep_dim), np.zeros(0))
    stack = np.stack(reps)
    if stack.shape[1] != rep_dim:
        raise ValueError(f"inference representations have dimension "
                         f"{stack.shape[1]}, expected {rep_dim}")
    d_a = W_q.shape[1]
    q_proj = query @ W_q
    k_proj = stack @ W_k
    scores = (k_proj @ q_proj) / np.sqrt(d_a)
    scores = scores - scores.max()
    e = np.exp(scores)
    weights = e / e.sum()
    return AttentionOutput(weights @ stack, weights)


def commonsense_vector(mode: str, ctx_self: np.ndarray, before_reps,
                       after_reps, params: ModelParameters):
    """Concatenated [before, after] attended vectors, with the raw traces.

    Callers route the inference sets: the mention's own sets for intra, the
    other mention's for inter. The query is always ``ctx_self``.
    """
    if mode == "baseline":
        raise ValueError("baseline mode has no commonsense vector")
    before = attend(ctx_self, before_reps, params.W_q_before,
                    params.W_k_before)
    after = attend(ctx_self, after_reps, params.W_q_after,
                   params.W_k_after)
    return np.concatenate([before.vector, after.vector]), {
        "before": before, "after": after}


@dataclass(frozen=True)
class PairFeature:
    g: np.ndarray
    first: str
    second: str
    mode: str


def pair_features(ctx_i: np.ndarray, ctx_j: np.ndarray,
                  cs_i: Optional[np.ndarray], cs_j: Optional[np.ndarray],
                  mode: str, first: str = "", second: str = "") -> PairFeature:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if ctx_i.shape != ctx_j.shape:
        raise ValueError("mention representations differ in dimension")
    if mode == "baseline":
        g = np.concatenate([ctx_i, ctx_j])
    else:
        if cs_i is None or cs_j is None:
            raise ValueError(f"{mode} mode requires commonsense vectors")
        if cs_i.shape != (2 * ctx_i.shape[0],):
            raise ValueError("commonsense vector has wrong dimension")
        g = np.concatenate([ctx_i, ctx_j, cs_i, cs_j])
    return PairFeature(g, first, second, mode)


def score_pair(params: ModelParameters, g: np.ndarray,
               training: bool = False, rng=None,
               dropout: float = 0.3) -> float:
    """Probability that the pair corefers: sigmoid MLP over the features.

    Dropout masks the hidden layer only during training; evaluation is
    deterministic.
    """
    for name in ("W1", "b1", "W2", "b2"):
        if not np.all(np.isfinite(getattr(params, name))):
            raise NonFiniteParameterError(name)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (params.dims.g_dim,):
        raise ValueError(f"feature vector has shape {g.shape}, expected "
                         f"({params.dims.g_dim},)")
    z1 = g @ params.W1 + params.b1
    if not np.all(np.isfinite(z1)):
        raise NonFiniteParameterError("W1")
    hidden = np.maximum(z1, 0.0)
    if training:
        if rng is None:
            raise ValueError("training mode requires an rng for dropout")
        mask = rng.random(hidden.shape) >= dropout
        hidden = hidden * mask / (1.0 - dropout)
    logit = hidden @ params.W2 + params.b2
    if not np.isfinite(logit):
        raise NonFiniteParameterError("W2")
    return float(sigmoid(np.asarray([logit]))[0])


def bce_loss(probabilities: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(probabilities, LOSS_EPS, 1.0 - LOSS_EPS)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def batch_loss(params: ModelParameters, batch, training: bool = False,
               rng=None, dropout: float = 0.3) -> float:
    """Mean binary cross-entropy over (feature, label) items."""
    items = list(batch)
    if not items:
        raise ValueError("empty batch")
    probs = np.array([score_pair(params, g, training=training, rng=rng,
                                 dropout=dropout) for g, _ in items])
    labels = np.array([label for _, label in items], dtype=np.float64)
    return bce_loss(probs, labels)


# ---------------------------------------------------------------------------
# batched forward/backward over a prepared dataset
# ---------------------------------------------------------------------------

@dataclass
class SpanTensors:
    """Left-aligned padded token embeddings for a set of spans/sentences."""
    X: np.ndarray          # (N, T, d)
    mask: np.ndarray       # (N, T) bool
    buckets: np.ndarray    # (N,) 0-based width bucket
    lengths: np.ndarray    # (N,)

    @classmethod
    def from_matrices(cls, matrices, max_width_bucket: int):
        n = len(matrices)
        if n == 0:
            raise ValueError("no spans")
        d = matrices[0].shape[1]
        t_max = max(m.shape[0] for m in matrices)
        X = np.zeros((n, t_max, d))
        mask = np.zeros((n, t_max), dtype=bool)
        lengths = np.zeros(n, dtype=int)
        buckets = np.zeros(n, dtype=int)
        for i, m in enumerate(matrices):
            t = m.shape[0]
            X[i, :t] = m
            mask[i, :t] = True
            lengths[i] = t
            buckets[i] = min(t, max_width_bucket) - 1
        return cls(X, mask, buckets, lengths)

    def __len__(self):
        return self.X.shape[0]


def span_reps_forward(tensors: SpanTensors, w_alpha: np.ndarray,
                      width_table: np.ndarray):
    """Vectorized span representation [start, last, pooled, width]."""
    X, mask = tensors.X, tensors.mask
    scores = np.einsum("ntd,d->nt", X, w_alpha)
    alpha = masked_softmax(scores, mask)
    pooled = np.einsum("nt,ntd->nd", alpha, X)
    start = X[:, 0, :]
    last = X[np.arange(len(tensors)), tensors.lengths - 1, :]
    width = width_table[tensors.buckets]
    reps = np.concatenate([start, last, pooled, width], axis=1)
    return reps, {"alpha": alpha, "tensors": tensors}


def span_reps_backward(d_reps: np.ndarray, cache, d: int,
                       grads: dict[str, np.ndarray]):
    """Accumulate w_alpha and width_table gradients; token grads discarded."""
    tensors = cache["tensors"]
    alpha = cache["alpha"]
    X = tensors.X
    d_pooled = d_reps[:, 2 * d:3 * d]
    d_width = d_reps[:, 3 * d:]
    np.add.at(grads["width_table"], tensors.buckets, d_width)
    d_alpha = np.einsum("nd,ntd->nt", d_pooled, X)
    inner = (alpha * d_alpha).sum(axis=1, keepdims=True)
    d_score = alpha * (d_alpha - inner)
    grads["w_alpha"] += np.einsum("nt,ntd->d", d_score, X)


def attention_forward(Q: np.ndarray, Kr: np.ndarray, kmask: np.ndarray,
                      W_q: np.ndarray, W_k: np.ndarray):
    """Batched attention: Q (B, R), Kr (B, k, R), kmask (B, k)."""
    d_a = W_q.shape[1]
    q_proj = Q @ W_q
    k_proj = np.einsum("bkr,ra->bka", Kr, W_k)
    scores = np.einsum("ba,bka->bk", q_proj, k_proj) / np.sqrt(d_a)
    weights = masked_softmax(scores, kmask)
    out = np.einsum("bk,bkr->br", weights, Kr)
    return out, {"Q": Q, "Kr": Kr, "q_proj": q_proj, "k_proj": k_proj,
                 "weights": weights}


def attention_backward(d_out: np.ndarray, cache, W_q: np.ndarray,
                       W_k: np.ndarray, g_Wq: np.ndarray, g_Wk: np.ndarray):
    """Returns (dQ, dKr) and accumulates projection gradients in place."""
    Q, Kr = cache["Q"], cache["Kr"]
    q_proj, k_proj = cache["q_proj"], cache["k_proj"]
    weights = cache["weights"]
    d_a = W_q.shape[1]
    d_w = np.einsum("br,bkr->bk", d_out, Kr)
    d_Kr = np.einsum("bk,br->bkr", weights, d_out)
    inner = (weights * d_w).sum(axis=1, keepdims=True)
    d_score = weights * (d_w - inner) / np.sqrt(d_a)
    d_qproj = np.einsum("bk,bka->ba", d_score, k_proj)
    d_kproj = np.einsum("bk,ba->bka", d_score, q_proj)
    g_Wq += Q.T @ d_qproj
    g_Wk += np.einsum("bkr,bka->ra", Kr, d_kproj)
    d_Q = d_qproj @ W_q.T
    d_Kr += np.einsum("bka,ra->bkr", d_kproj, W_k)
    return d_Q, d_Kr


@dataclass
class PairDataset:
    """Everything the scorer needs about a split, as padded tensors.

    ``span_tensors`` holds one row per mention; ``sent_tensors`` one row per
    inference sentence. ``before_idx``/``after_idx`` map each mention row to
    its (up to k) sentence rows, padded with -1.
    """
    mention_ids: list
    row_of: dict
    span_tensors: SpanTensors
    sent_tensors: Optional[SpanTensors]
    before_idx: np.ndarray  # (M, k)
    after_idx: np.ndarray   # (M, k)
    pair_i: np.ndarray      # (N,) row indices
    pair_j: np.ndarray
    labels: np.ndarray      # (N,) float
    pair_names: list = field(default_factory=list)

    @property
    def n_pairs(self) -> int:
        return len(self.labels)


def forward_batch(params: ModelParameters, data: PairDataset,
                  sel: np.ndarray, training: bool = False,
                  dropout_mask: Optional[np.ndarray] = None,
                  dropout: float = 0.3):
    """End-to-end probabilities for the selected pairs.

    When ``training`` is set the caller supplies the hidden-layer dropout
    mask so that a loss evaluation and its gradient share the same mask.
    """
    dims = params.dims
    mode = dims.mode
    span_reps, span_cache = span_reps_forward(
        data.span_tensors, params.w_alpha, params.width_table)
    qi = data.pair_i[sel]
    qj = data.pair_j[sel]
    n = len(sel)
    cache = {"span_cache": span_cache, "qi": qi, "qj": qj, "mode": mode,
             "dropout_mask": dropout_mask, "training": training,
             "dropout": dropout}

    if mode == "baseline":
        G = np.concatenate([span_reps[qi], span_reps[qj]], axis=1)
        cache["sent_cache"] = None
    else:
        sent_reps, sent_cache = span_reps_forward(
            data.sent_tensors, params.w_alpha, params.width_table)
        q_rows = np.concatenate([qi, qj])
        src_rows = q_rows if mode == "intra" else np.concatenate([qj, qi])
        Q = span_reps[q_rows]
        att = {}
        cs_parts = []
        for rel, (W_q, W_k) in (("before", (params.W_q_before,
                                            params.W_k_before)),
                                ("after", (params.W_q_after,
                                           params.W_k_after))):
            idx = (data.before_idx if rel == "before"
                   else data.after_idx)[src_rows]
            kmask = idx >= 0
            Kr = sent_reps[idx.clip(min=0)] * kmask[:, :, None]
            out, att_cache = attention_forward(Q, Kr, kmask, W_q, W_k)
            att[rel] = {"cache": att_cache, "idx": idx, "kmask": kmask}
            cs_parts.append(out)
        cs = np.concatenate(cs_parts, axis=1)  # (2n, 2R)
        G = np.concatenate([span_reps[qi], span_reps[qj],
                            cs[:n], cs[n:]], axis=1)
        cache.update({"sent_cache": sent_cache, "att": att,
                      "q_rows": q_rows, "src_rows": src_rows,
                      "n_sent": len(data.sent_tensors)})

    z1 = G @ params.W1 + params.b1
    hidden = np.maximum(z1, 0.0)
    if training:
        if dropout_mask is None:
            raise ValueError("training forward requires a dropout mask")
        hidden_used = hidden * dropout_mask / (1.0 - dropout)
    else:
        hidden_used = hidden
    logits = hidden_used @ params.W2 + params.b2
    probs = sigmoid(logits)
    cache.update({"G": G, "z1": z1, "hidden_used": hidden_used,
                  "probs": probs, "n_mentions": len(data.span_tensors)})
    return probs, cache


def backward_batch(params: ModelParameters, data: PairDataset, cache,
                   labels: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of the mean clamped BCE for the forward in ``cache``."""
    dims = params.dims
    grads = zero_gradients(dims)
    probs = cache["probs"]
    y = np.asarray(labels, dtype=np.float64)
    n = len(y)
    in_range = (probs > LOSS_EPS) & (probs < 1.0 - LOSS_EPS)
    d_logits = np.where(in_range, probs - y, 0.0) / n

    hidden_used = cache["hidden_used"]
    grads["W2"] += hidden_used.T @ d_logits
    grads["b2"] += d_logits.sum()
    d_hidden = np.outer(d_logits, params.W2)
    if cache["training"]:
        d_hidden = d_hidden * cache["dropout_mask"] / (1.0 - cache["dropout"])
    d_z1 = d_hidden * (cache["z1"] > 0)
    G = cache["G"]
    grads["W1"] += G.T @ d_z1
    grads["b1"] += d_z1.sum(axis=0)
    d_G = d_z1 @ params.W1.T

    r = dims.rep_dim
    qi, qj = cache["qi"], cache["qj"]
    d_span = np.zeros((cache["n_mentions"], r))
    np.add.at(d_span, qi, d_G[:, :r])
    np.add.at(d_span, qj, d_G[:, r:2 * r])

    if dims.mode != "baseline":
        d_cs = np.concatenate([d_G[:, 2 * r:4 * r], d_G[:, 4 * r:6 * r]],
                              axis=0)  # (2n, 2R)
        d_sent = np.zeros((cache["n_sent"], r))
        d_Q_total = np.zeros((2 * n, r))
        for part, rel in ((0, "before"), (1, "after")):
            att = cache["att"][rel]
            W_q = getattr(params, f"W_q_{rel}")
            W_k = getattr(params, f"W_k_{rel}")
            d_out = d_cs[:, part * r:(part + 1) * r]
            d_Q, d_Kr = attention_backward(
                d_out, att["cache"], W_q, W_k,
                grads[f"W_q_{rel}"], grads[f"W_k_{rel}"])
            d_Q_total += d_Q
            kmask = att["kmask"]
            np.add.at(d_sent, att["idx"][kmask], d_Kr[kmask])
        np.add.at(d_span, cache["q_rows"], d_Q_total)
        span_reps_backward(d_sent, cache["sent_cache"], dims.d, grads)

    span_reps_backward(d_span, cache["span_cache"], dims.d, grads)
    return grads


def batch_loss_from_dataset(params: ModelParameters, data: PairDataset,
                            sel: np.ndarray, training: bool = False,
                            dropout_mask: Optional[np.ndarray] = None,
                            dropout: float = 0.3) -> float:
    probs, _ = forward_batch(params, data, sel, training=training,
                             dropout_mask=dropout_mask, dropout=dropout)
    return bce_loss(probs, data.labels[sel])


def gradients(params: ModelParameters, data: PairDataset, sel: np.ndarray,
              training: bool = False,
              dropout_mask: Optional[np.ndarray] = None,
              dropout: float = 0.3):
    """(loss, gradient blocks) for the selected pairs.

    The dropout mask, when given, is shared between the loss and gradient
    evaluation, so finite differences of ``batch_loss_from_dataset`` with the
    same mask match these gradients exactly.
    """
    probs, cache = forward_batch(params, data, sel, training=training,
                                 dropout_mask=dropout_mask, dropout=dropout)
    loss = bce_loss(probs, data.labels[sel])
    grads = backward_batch(params, data, cache, data.labels[sel])
    return loss, grads


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

def save_checkpoint(params: ModelParameters, path):
    """Self-describing binary: header JSON, then named float64-LE arrays."""
    header = {"version": params.dims.version, "d": params.dims.d,
              "d_len": params.dims.d_len, "d_a": params.dims.d_a,
              "h": params.dims.h, "mode": params.dims.mode,
              "max_width_bucket": params.dims.max_width_bucket}
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for name in BLOCK_ORDER:
            # asarray keeps 0-d blocks 0-d (ascontiguousarray would promote)
            arr = np.asarray(getattr(params, name), dtype="<f8", order="C")
            meta = {"name": name, "shape": list(arr.shape)}
            fh.write((json.dumps(meta, sort_keys=True) + "\n")
                     .encode("utf-8"))
            fh.write(arr.tobytes())


def load_checkpoint(path, expected: Optional[ModelDims] = None
                    ) -> ModelParameters:
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise ScorerError(f"{path}: not a checkpoint file")
        header = json.loads(fh.readline().decode("utf-8"))
        dims = ModelDims(d=header["d"], d_len=header["d_len"],
                         d_a=header["d_a"], h=header["h"],
                         mode=header["mode"],
                         max_width_bucket=header["max_width_bucket"],
                         version=header["version"])
        if expected is not None and dims != expected:
            raise ScorerError(
                f"checkpoint header {dims} does not match configured "
                f"{expected}")
        arrays = {}
        for name in BLOCK_ORDER:
            line = fh.readline().decode("utf-8")
            try:
                meta = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ScorerError(
                    f"checkpoint truncated or corrupt at block {name}"
                ) from exc
            if meta["name"] != name:
                raise ScorerError(
                    f"checkpoint block order mismatch: expected {name}, "
                    f"found {meta['name']}")
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ScorerError(f"checkpoint truncated in block {name}")
            arr = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
            arrays[name] = arr if shape else arr.reshape(())
        params = ModelParameters(dims, **arrays)
    wanted = _expected_shapes(dims)
    for name, arr in params.blocks().items():
        if tuple(arr.shape) != wanted[name]:
            raise ScorerError(
                f"checkpoint block {name} has shape {arr.shape}, expected "
                f"{wanted[name]}")
    return params
