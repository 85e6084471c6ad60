"""Training, threshold tuning, prediction, and gradient verification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cluster import ClusteringConfig, ScoreMatrix, agglomerative_cluster
from .commonsense import GenerationConfig, get_inferences
from .corpus import Clustering, Corpus, candidate_pairs
from .embed import EmbedderConfig, make_embedder
from .metrics import EvalOptions, evaluate
from .scorer import (ModelDims, ModelParameters, PairDataset,
                     SpanTensors, backward_batch, bce_loss,
                     forward_batch, init_parameters, zero_gradients)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    dropout: float = 0.3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 10
    patience: Optional[int] = 2  # None disables early stopping
    seed: int = 0
    mode: str = "intra"
    d_a: int = 8
    hidden: int = 1024
    pair_scope: str = "subtopic"

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def model_dims(self, embed_config: EmbedderConfig) -> ModelDims:
        return ModelDims(d=embed_config.d, d_len=embed_config.d_len,
                         d_a=self.d_a, h=self.hidden, mode=self.mode,
                         max_width_bucket=embed_config.max_width_bucket)


def build_dataset(corpus: Corpus, embed_config: EmbedderConfig,
                  mode: str, inference_source=None,
                  gen_config: Optional[GenerationConfig] = None,
                  cache=None, scope: str = "subtopic",
                  labeled: bool = True, embedder=None) -> PairDataset:
    """Embed a split into the padded tensors the scorer consumes.

    Baseline mode never touches ``inference_source``. For the other modes,
    each mention's before/after sentences are fetched through the provider
    (and optional cache), whitespace-tokenized, and embedded with the same
    provider as the mention spans.
    """
    embedder = embedder or make_embedder(embed_config)
    gen_config = gen_config or GenerationConfig()
    mentions = corpus.mentions_in_order()
    row_of = {m.mention_id: i for i, m in enumerate(mentions)}

    doc_matrices = {doc_id: embedder.embed_document(doc)
                    for doc_id, doc in corpus.documents.items()}
    span_matrices = []
    for m in mentions:
        sent = doc_matrices[m.doc_id][m.sentence_index]
        span_matrices.append(sent[m.token_start:m.token_end + 1])
    span_tensors = SpanTensors.from_matrices(
        span_matrices, embed_config.max_width_bucket)

    k = gen_config.k
    before_idx = -np.ones((len(mentions), k), dtype=int)
    after_idx = -np.ones((len(mentions), k), dtype=int)
    sent_tensors = None
    if mode != "baseline":
        if inference_source is None:
            raise ValueError(f"{mode} mode requires an inference provider")
        sentence_matrices = []
        for row, m in enumerate(mentions):
            context = " ".join(corpus.sentence_of(m))
            inf = get_inferences(inference_source, m, context, gen_config,
                                 cache=cache)
            for rel, idx_arr in (("before", before_idx),
                                 ("after", after_idx)):
                for slot, sentence in enumerate(
                        getattr(inf, rel)[:k]):
                    tokens = sentence.split()
                    if not tokens:
                        continue
                    idx_arr[row, slot] = len(sentence_matrices)
                    sentence_matrices.append(
                        embedder.embed_sentence(tokens))
        if not sentence_matrices:
            # every mention came back empty (lenient provider): keep one
            # dummy row so the tensors exist; no index ever points at it
            sentence_matrices = [np.zeros((1, embed_config.d))]
        sent_tensors = SpanTensors.from_matrices(
            sentence_matrices, embed_config.max_width_bucket)

    pairs = candidate_pairs(corpus, scope=scope, labeled=labeled)
    pair_i = np.array([row_of[p.first] for p in pairs], dtype=int)
    pair_j = np.array([row_of[p.second] for p in pairs], dtype=int)
    labels = np.array([p.label if p.label is not None else 0.0
                       for p in pairs], dtype=np.float64)
    names = [(p.first, p.second) for p in pairs]
    return PairDataset(mention_ids=[m.mention_id for m in mentions],
                       row_of=row_of, span_tensors=span_tensors,
                       sent_tensors=sent_tensors, before_idx=before_idx,
                       after_idx=after_idx, pair_i=pair_i, pair_j=pair_j,
                       labels=labels, pair_names=names)


class Adam:
    """Adaptive-moment updates over the named parameter blocks."""

    def __init__(self, dims: ModelDims, lr: float, beta1: float,
                 beta2: float, eps: float):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = zero_gradients(dims)
        self.v = zero_gradients(dims)

    def step(self, params: ModelParameters, grads: dict):
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            arr = getattr(params, name)
            arr -= self.lr * update


def score_dataset(params: ModelParameters, data: PairDataset,
                  chunk: int = 1024) -> np.ndarray:
    """Deterministic probabilities for every pair in the dataset."""
    if data.n_pairs == 0:
        return np.zeros(0)
    out = np.zeros(data.n_pairs)
    for lo in range(0, data.n_pairs, chunk):
        sel = np.arange(lo, min(lo + chunk, data.n_pairs))
        probs, _ = forward_batch(params, data, sel, training=False)
        out[sel] = probs
    return out


def pairwise_f1(probs: np.ndarray, labels: np.ndarray,
                threshold: float = 0.5) -> float:
    pred = probs >= threshold
    gold = labels >= 0.5
    tp = int(np.sum(pred & gold))
    fp = int(np.sum(pred & ~gold))
    fn = int(np.sum(~pred & gold))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def train(corpus: Corpus, inference_source, embed_config: EmbedderConfig,
          train_config: TrainConfig, dev_corpus: Optional[Corpus] = None,
          gen_config: Optional[GenerationConfig] = None, cache=None,
          dev_inference_source=None):
    """Train the pairwise scorer; returns (best parameters, history).

    Fully deterministic given the config seed: initialization, epoch
    shuffles, and dropout masks all come from generators derived from it.
    After each epoch the dev pairwise F1 at threshold 0.5 is recorded; when
    it fails to improve for ``patience`` consecutive epochs, training stops
    and the best epoch's parameters are returned. Without a dev corpus the
    training split doubles as the monitoring split.
    """
    gen_config = gen_config or GenerationConfig()
    data = build_dataset(corpus, embed_config, train_config.mode,
                         inference_source=inference_source,
                         gen_config=gen_config, cache=cache,
                         scope=train_config.pair_scope)
    if dev_corpus is None or dev_corpus is corpus:
        dev_data = data
    else:
        dev_data = build_dataset(dev_corpus, embed_config, train_config.mode,
                                 inference_source=(dev_inference_source
                                                   or inference_source),
                                 gen_config=gen_config, cache=cache,
                                 scope=train_config.pair_scope)
    if data.n_pairs == 0:
        raise ValueError("no training pairs in scope")

    dims = train_config.model_dims(embed_config)
    params = init_parameters(dims, train_config.seed)
    optimizer = Adam(dims, train_config.learning_rate, train_config.beta1,
                     train_config.beta2, train_config.eps)
    shuffle_rng = np.random.default_rng([train_config.seed, 1])
    dropout_rng = np.random.default_rng([train_config.seed, 2])

    history = []
    best_f1 = -1.0
    best_params = params.copy()
    best_epoch = -1
    stale = 0
    for epoch in range(train_config.epochs):
        order = shuffle_rng.permutation(data.n_pairs)
        losses = []
        for lo in range(0, data.n_pairs, train_config.batch_size):
            sel = order[lo:lo + train_config.batch_size]
            mask = (dropout_rng.random((len(sel), dims.h))
                    >= train_config.dropout)
            probs, fw_cache = forward_batch(
                params, data, sel, training=True, dropout_mask=mask,
                dropout=train_config.dropout)
            loss = bce_loss(probs, data.labels[sel])
            if not math.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite training loss at epoch {epoch}")
            grads = backward_batch(params, data, fw_cache, data.labels[sel])
            optimizer.step(params, grads)
            losses.append(loss)
        dev_probs = score_dataset(params, dev_data)
        dev_f1 = pairwise_f1(dev_probs, dev_data.labels)
        history.append({"epoch": epoch,
                        "train_loss": float(np.mean(losses)),
                        "dev_f1": dev_f1})
        if dev_f1 > best_f1:
            best_f1 = dev_f1
            best_params = params.copy()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if (train_config.patience is not None
                    and stale >= train_config.patience):
                break
    return best_params, {"epochs": history, "best_epoch": best_epoch,
                         "best_dev_f1": best_f1}


DEFAULT_THRESHOLD_GRID = tuple(round(0.30 + 0.05 * i, 2) for i in range(11))


def scores_as_lookup(data: PairDataset, probs: np.ndarray) -> dict:
    return {tuple(sorted(name)): float(p)
            for name, p in zip(data.pair_names, probs)}


def cluster_from_scores(corpus: Corpus, score_lookup: dict, tau: float,
                        scope: str = "subtopic") -> Clustering:
    """Cluster every scope unit at threshold tau from a pair-score lookup."""
    config = ClusteringConfig(threshold=tau, scope=scope)
    units: dict[str, list[str]] = {}
    for m in corpus.mentions.values():
        if scope == "subtopic":
            unit = corpus.subtopic_of(m)
        elif scope == "topic":
            unit = corpus.topic_of(m)
        else:
            unit = ""
        units.setdefault(unit, []).append(m.mention_id)
    assignment = {}
    for unit in sorted(units):
        ids = sorted(units[unit])
        matrix = ScoreMatrix(ids)
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                matrix.set(a, b, score_lookup[(a, b) if a < b else (b, a)])
        part = agglomerative_cluster(ids, matrix, config)
        assignment.update(part.assignment)
    return Clustering(assignment)


def tune_threshold_from_scores(corpus: Corpus, score_lookup: dict,
                               grid=DEFAULT_THRESHOLD_GRID,
                               scope: str = "subtopic",
                               eval_options: Optional[EvalOptions] = None
                               ) -> float:
    """Grid-search tau maximizing CoNLL F1 through the full cluster+evaluate
    path; ties break toward the larger threshold."""
    grid = list(grid)
    if not grid:
        raise ValueError("empty threshold grid")
    eval_options = eval_options or EvalOptions()
    best = None
    for tau in grid:
        system = cluster_from_scores(corpus, score_lookup, tau, scope=scope)
        report = evaluate(corpus, system, eval_options)
        key = (report.conll_f1, tau)
        if best is None or key >= best:
            best = key
    return best[1]


def tune_threshold(params: ModelParameters, dev_corpus: Corpus,
                   grid=DEFAULT_THRESHOLD_GRID, *, dataset: PairDataset,
                   scope: str = "subtopic",
                   eval_options: Optional[EvalOptions] = None) -> float:
    probs = score_dataset(params, dataset)
    lookup = scores_as_lookup(dataset, probs)
    return tune_threshold_from_scores(dev_corpus, lookup, grid=grid,
                                      scope=scope,
                                      eval_options=eval_options)


def predict_clustering(params: ModelParameters, corpus: Corpus,
                       dataset: PairDataset, tau: float,
                       scope: str = "subtopic") -> Clustering:
    probs = score_dataset(params, dataset)
    lookup = scores_as_lookup(dataset, probs)
    return cluster_from_scores(corpus, lookup, tau, scope=scope)


# ---------------------------------------------------------------------------
# finite-difference gradient verification
# ---------------------------------------------------------------------------

def make_random_dataset(dims: ModelDims, seed: int, n_mentions: int = 6,
                        n_pairs: int = 8, k: int = 3, max_span: int = 3,
                        max_sentence: int = 5) -> PairDataset:
    """Random dataset exercising every parameter block of the model."""
    rng = np.random.default_rng(seed)
    span_matrices = [rng.standard_normal((int(rng.integers(1, max_span + 1)),
                                          dims.d))
                     for _ in range(n_mentions)]
    span_tensors = SpanTensors.from_matrices(span_matrices,
                                             dims.max_width_bucket)
    n_sentences = n_mentions * 2 * k
    sent_matrices = [rng.standard_normal(
        (int(rng.integers(2, max_sentence + 1)), dims.d))
        for _ in range(n_sentences)]
    sent_tensors = SpanTensors.from_matrices(sent_matrices,
                                             dims.max_width_bucket)
    before_idx = -np.ones((n_mentions, k), dtype=int)
    after_idx = -np.ones((n_mentions, k), dtype=int)
    counter = 0
    for row in range(n_mentions):
        n_b = int(rng.integers(0, k + 1))
        n_a = int(rng.integers(1, k + 1))
        for slot in range(n_b):
            before_idx[row, slot] = counter
            counter += 1
        for slot in range(n_a):
            after_idx[row, slot] = counter
            counter += 1
    pair_i = rng.integers(0, n_mentions, size=n_pairs)
    pair_j = (pair_i + 1 + rng.integers(0, n_mentions - 1,
                                        size=n_pairs)) % n_mentions
    labels = rng.integers(0, 2, size=n_pairs).astype(np.float64)
    ids = [f"m{i}" for i in range(n_mentions)]
    return PairDataset(mention_ids=ids,
                       row_of={m: i for i, m in enumerate(ids)},
                       span_tensors=span_tensors, sent_tensors=sent_tensors,
                       before_idx=before_idx, after_idx=after_idx,
                       pair_i=pair_i, pair_j=pair_j, labels=labels,
                       pair_names=[(ids[a], ids[b])
                                   for a, b in zip(pair_i, pair_j)])


def relative_error(analytic: float, numeric: float,
                   floor: float = 1e-6) -> float:
    denom = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / denom


@dataclass
class GradcheckReport:
    per_block: dict = field(default_factory=dict)  # name -> max rel error
    skipped: dict = field(default_factory=dict)    # name -> kink crossings
    tolerance: float = 1e-4
    seeds: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v <= self.tolerance for v in self.per_block.values())

    def render(self) -> str:
        lines = [f"gradient check over seeds {self.seeds} "
                 f"(tolerance {self.tolerance:g})"]
        for name, err in self.per_block.items():
            flag = "ok" if err <= self.tolerance else "FAIL"
            skipped = self.skipped.get(name, 0)
            note = f" ({skipped} kink-crossing entries excluded)" \
                if skipped else ""
            lines.append(f"  {name:12s} max relative error {err:.3e} "
                         f"{flag}{note}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def finite_difference_check(params: ModelParameters, data: PairDataset,
                            sel: np.ndarray, step: float = 1e-5,
                            training: bool = False, dropout: float = 0.3,
                            dropout_rng=None,
                            _corrupt_block: Optional[str] = None):
    """Per-block max relative error between backprop and central differences.

    Returns (errors, skipped). The relative-error denominator is floored at
    1e-6 so entries whose true gradient vanishes are compared absolutely.
    Coordinates whose +-step perturbation changes a relu activation sign or
    crosses the loss clamp are excluded and counted in ``skipped``: there the
    loss is locally non-differentiable and central differences straddle two
    linear regions, so their disagreement says nothing about the gradient.
    With ``training`` set, one dropout mask is drawn up front and shared by
    the analytic gradients and every perturbed loss evaluation.
    """
    from .scorer import LOSS_EPS, bce_loss, forward_batch
    from .scorer import gradients as exact_gradients

    mask = None
    if training:
        if dropout_rng is None:
            dropout_rng = np.random.default_rng(0)
        mask = dropout_rng.random((len(sel), params.dims.h)) >= dropout
    _, grads = exact_gradients(params, data, sel, training=training,
                               dropout_mask=mask, dropout=dropout)
    if _corrupt_block is not None:
        grads[_corrupt_block] = grads[_corrupt_block] + 1e-3

    def loss_and_region():
        probs, cache = forward_batch(params, data, sel, training=training,
                                     dropout_mask=mask, dropout=dropout)
        loss = bce_loss(probs, data.labels[sel])
        region = ((cache["z1"] > 0).tobytes(),
                  ((probs > LOSS_EPS)
                   & (probs < 1.0 - LOSS_EPS)).tobytes())
        return loss, region

    errors = {}
    skipped = {}
    for name, arr in params.blocks().items():
        flat = arr.reshape(-1)
        grad_flat = np.asarray(grads[name]).reshape(-1)
        worst = 0.0
        n_skipped = 0
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up, region_up = loss_and_region()
            flat[idx] = orig - step
            down, region_down = loss_and_region()
            flat[idx] = orig
            if region_up != region_down:
                n_skipped += 1
                continue
            numeric = (up - down) / (2 * step)
            worst = max(worst, relative_error(grad_flat[idx], numeric))
        errors[name] = worst
        skipped[name] = n_skipped
    return errors, skipped


def gradcheck(mode: str = "intra", seeds=(0, 1, 2, 3, 4), d: int = 16,
              d_len: int = 20, d_a: int = 8, hidden: int = 32,
              n_pairs: int = 8, step: float = 1e-5, tolerance: float = 1e-4,
              training_mode_seeds: int = 1,
              _corrupt_block: Optional[str] = None) -> GradcheckReport:
    """Exhaustive finite-difference verification at small dimensions.

    Every entry of every block is perturbed, for several random models and
    mini-batches. The first ``training_mode_seeds`` seeds are additionally
    checked under a fixed dropout mask.
    """
    report = GradcheckReport(tolerance=tolerance, seeds=list(seeds))
    dims = ModelDims(d=d, d_len=d_len, d_a=d_a, h=hidden, mode=mode)
    for pos, seed in enumerate(seeds):
        params = init_parameters(dims, seed)
        data = make_random_dataset(dims, seed + 1000, n_pairs=n_pairs)
        sel = np.arange(data.n_pairs)
        runs = [dict(training=False)]
        if pos < training_mode_seeds:
            runs.append(dict(training=True,
                             dropout_rng=np.random.default_rng(seed + 7)))
        for kwargs in runs:
            errors, skipped = finite_difference_check(
                params, data, sel, step=step,
                _corrupt_block=_corrupt_block, **kwargs)
            for name, err in errors.items():
                report.per_block[name] = max(
                    report.per_block.get(name, 0.0), err)
                report.skipped[name] = (report.skipped.get(name, 0)
                                        + skipped[name])
    return report
