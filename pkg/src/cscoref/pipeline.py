"""Run orchestration: config files, presets, run directories, commands.

A run config is an INI file with sections [corpus], [embedder],
[commonsense], [train], [cluster], [eval], and [run]. Two named presets
cover the common cases: "desk" (hash embeddings, d=16, synthetic-scale) and
"service" (contextual embedding service at d=1024).
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import __version__
from .cluster import write_clustering
from .commonsense import (FixtureProvider, GenerationConfig,
                          GenerationServiceProvider, InferenceCache,
                          PromptExemplar, get_inferences, get_inferences_bulk)
from .corpus import Corpus, load_corpus, write_corpus
from .embed import EmbedderConfig, make_embedder, span_representation
from .metrics import EvalOptions, EvalReport, evaluate
from .scorer import (ModelParameters, commonsense_vector,
                     load_checkpoint, pair_features, save_checkpoint,
                     score_pair)
from .synthgen import SyntheticProvider, SyntheticSpec, generate_synthetic, \
    write_fixtures
from .training import (TrainConfig, build_dataset, gradcheck,
                       predict_clustering, train, tune_threshold,
                       DEFAULT_THRESHOLD_GRID)

EXIT_OK = 0
EXIT_VERIFICATION = 1
EXIT_USAGE = 2


class ConfigError(ValueError):
    pass


@dataclass
class CommonsenseConfig:
    provider: str = "fixture"  # fixture | synthetic | service
    fixtures: dict = field(default_factory=dict)  # split -> path
    synthetic_spec: Optional[SyntheticSpec] = None
    endpoint: Optional[str] = None
    model_id: str = "default"
    exemplars_path: Optional[str] = None
    # None: strict while training, lenient while predicting
    strict: Optional[bool] = None
    cache_path: Optional[str] = None
    generation: GenerationConfig = field(default_factory=GenerationConfig)


@dataclass
class RunConfig:
    corpus_paths: dict = field(default_factory=dict)  # train/dev/test
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    commonsense: CommonsenseConfig = field(default_factory=CommonsenseConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    threshold: Optional[float] = None  # None: tune on dev
    threshold_grid: tuple = DEFAULT_THRESHOLD_GRID
    cluster_scope: str = "subtopic"
    eval_options: EvalOptions = field(default_factory=EvalOptions)
    out_dir: str = "runs/out"
    seeds: tuple = (0, 1, 2)

    def fingerprint(self) -> str:
        blob = json.dumps(_config_digest_dict(self), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _config_digest_dict(config: RunConfig) -> dict:
    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        return obj
    out = {
        "corpus_paths": dict(config.corpus_paths),
        "embedder": asdict(config.embedder),
        "commonsense": {
            "provider": config.commonsense.provider,
            "fixtures": dict(config.commonsense.fixtures),
            "synthetic_spec": (asdict(config.commonsense.synthetic_spec)
                               if config.commonsense.synthetic_spec else None),
            "endpoint": config.commonsense.endpoint,
            "model_id": config.commonsense.model_id,
            "strict": config.commonsense.strict,
            "generation": asdict(config.commonsense.generation),
        },
        "train": asdict(config.train),
        "threshold": config.threshold,
        "cluster_scope": config.cluster_scope,
        "eval": asdict(config.eval_options),
        "seeds": list(config.seeds),
    }
    return clean(out)


def preset(name: str) -> RunConfig:
    """Named profiles: "desk" for deterministic hash-embedding runs at small
    dimensions (with a learning rate and epoch budget calibrated for
    synthetic-corpus convergence), "service" for contextual-encoder runs at
    d=1024 with the standard hyperparameters."""
    if name == "desk":
        return RunConfig(
            embedder=EmbedderConfig(provider="hash", d=16, d_len=20,
                                    max_width_bucket=8),
            train=TrainConfig(learning_rate=1e-3, epochs=60, patience=12,
                              d_a=8, hidden=1024),
        )
    if name == "service":
        return RunConfig(
            embedder=EmbedderConfig(provider="service", d=1024,
                                    endpoint="http://localhost:8000/embed"),
            train=TrainConfig(d_a=512, hidden=1024),
        )
    raise ConfigError(f"unknown preset {name!r}")


DESK_SPLIT_SPECS = {
    "train": SyntheticSpec(n_topics=10, clusters_per_topic=4,
                           mentions_per_cluster=4, hard_fraction=0.5,
                           distractor_rate=0.5, seed=101),
    "dev": SyntheticSpec(n_topics=4, clusters_per_topic=4,
                         mentions_per_cluster=4, hard_fraction=0.5,
                         distractor_rate=0.5, seed=202),
    "test": SyntheticSpec(n_topics=6, clusters_per_topic=4,
                          mentions_per_cluster=4, hard_fraction=0.5,
                          distractor_rate=0.5, seed=303),
}


def _get(section, key, conv, default):
    if section is None or key not in section:
        return default
    raw = section[key]
    if conv is bool:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if raw.strip().lower() == "none":
        return None
    return conv(raw)


def load_run_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    base = _get(parser["run"] if "run" in parser else None, "preset", str,
                "desk")
    config = preset(base)

    corpus = parser["corpus"] if "corpus" in parser else None
    for split in ("train", "dev", "test"):
        value = _get(corpus, split, str, None)
        if value:
            config.corpus_paths[split] = value

    emb = parser["embedder"] if "embedder" in parser else None
    config.embedder = EmbedderConfig(
        provider=_get(emb, "provider", str, config.embedder.provider),
        d=_get(emb, "d", int, config.embedder.d),
        seed=_get(emb, "seed", int, config.embedder.seed),
        endpoint=_get(emb, "endpoint", str, config.embedder.endpoint),
        d_len=_get(emb, "d_len", int, config.embedder.d_len),
        max_width_bucket=_get(emb, "max_width_bucket", int,
                              config.embedder.max_width_bucket),
    )

    cs = parser["commonsense"] if "commonsense" in parser else None
    fixtures = {}
    for split in ("train", "dev", "test"):
        value = _get(cs, f"fixtures_{split}", str, None)
        if value:
            fixtures[split] = value
    shared = _get(cs, "fixtures", str, None)
    if shared:
        for split in ("train", "dev", "test"):
            fixtures.setdefault(split, shared)
    generation = GenerationConfig(
        top_p=_get(cs, "top_p", float, 0.9),
        max_tokens=_get(cs, "max_tokens", int, 150),
        stop=_get(cs, "stop", str, "END"),
        k=_get(cs, "k", int, 5),
        mode=_get(cs, "prompt_mode", str, "finetuned"),
    )
    synth_spec = None
    if _get(cs, "synthetic_seed", str, None) is not None:
        synth_spec = SyntheticSpec(
            n_topics=_get(cs, "synthetic_n_topics", int, 4),
            clusters_per_topic=_get(cs, "synthetic_clusters_per_topic", int,
                                    4),
            mentions_per_cluster=_get(cs, "synthetic_mentions_per_cluster",
                                      int, 4),
            hard_fraction=_get(cs, "synthetic_hard_fraction", float, 0.5),
            distractor_rate=_get(cs, "synthetic_distractor_rate", float,
                                 0.5),
            seed=_get(cs, "synthetic_seed", int, 0),
        )
    config.commonsense = CommonsenseConfig(
        provider=_get(cs, "provider", str, "fixture"),
        fixtures=fixtures,
        synthetic_spec=synth_spec,
        endpoint=_get(cs, "endpoint", str, None),
        model_id=_get(cs, "model_id", str, "default"),
        exemplars_path=_get(cs, "exemplars", str, None),
        strict=_get(cs, "strict", bool, None),
        cache_path=_get(cs, "cache", str, None),
        generation=generation,
    )

    tr = parser["train"] if "train" in parser else None
    config.train = TrainConfig(
        learning_rate=_get(tr, "learning_rate", float,
                           config.train.learning_rate),
        batch_size=_get(tr, "batch_size", int, config.train.batch_size),
        dropout=_get(tr, "dropout", float, config.train.dropout),
        epochs=_get(tr, "epochs", int, config.train.epochs),
        patience=_get(tr, "patience", int, config.train.patience),
        seed=_get(tr, "seed", int, config.train.seed),
        mode=_get(tr, "mode", str, config.train.mode),
        d_a=_get(tr, "d_a", int, config.train.d_a),
        hidden=_get(tr, "hidden", int, config.train.hidden),
        pair_scope=_get(tr, "pair_scope", str, config.train.pair_scope),
    )

    cl = parser["cluster"] if "cluster" in parser else None
    config.threshold = _get(cl, "threshold", float, None)
    config.cluster_scope = _get(cl, "scope", str, "subtopic")

    ev = parser["eval"] if "eval" in parser else None
    config.eval_options = EvalOptions(
        topic_level=_get(ev, "topic_level", bool, True),
        drop_singletons=_get(ev, "drop_singletons", bool, True),
        unit=_get(ev, "unit", str, "topic"),
    )

    run = parser["run"] if "run" in parser else None
    config.out_dir = _get(run, "out", str, config.out_dir)
    seeds = _get(run, "seeds", str, None)
    if seeds:
        config.seeds = tuple(int(s) for s in seeds.split(",") if s.strip())
    return config


def load_exemplars(path) -> list:
    exemplars = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            exemplars.append(PromptExemplar(
                context=rec["context"], event=rec["event"],
                before=rec["before"], after=rec["after"]))
    return exemplars


def build_provider(config: RunConfig, split: str,
                   default_strict: bool = True):
    cs = config.commonsense
    if cs.provider == "fixture":
        path = cs.fixtures.get(split)
        if path is None:
            raise ConfigError(f"no fixture path configured for {split!r}")
        strict = cs.strict if cs.strict is not None else default_strict
        return FixtureProvider(path=path, strict=strict)
    if cs.provider == "synthetic":
        if cs.synthetic_spec is None:
            raise ConfigError("synthetic provider requires synthetic_* keys")
        return SyntheticProvider(cs.synthetic_spec)
    if cs.provider == "service":
        if not cs.endpoint:
            raise ConfigError("service provider requires an endpoint")
        exemplars = (load_exemplars(cs.exemplars_path)
                     if cs.exemplars_path else None)
        return GenerationServiceProvider(cs.endpoint, model_id=cs.model_id,
                                         exemplars=exemplars)
    raise ConfigError(f"unknown commonsense provider {cs.provider!r}")


def open_run_dir(config: RunConfig, command: str) -> str:
    """Create the run directory; refuse to reuse a completed one."""
    out = config.out_dir
    manifest_path = os.path.join(out, "manifest.json")
    if os.path.exists(manifest_path):
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest.get("status") == "completed":
            raise ConfigError(
                f"run directory {out!r} already holds a completed run")
    os.makedirs(out, exist_ok=True)
    manifest = {"command": command, "status": "running",
                "config_fingerprint": config.fingerprint(),
                "version": __version__, "started_at": time.time(),
                "seeds": list(config.seeds)}
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return out


def finalize_run_dir(out: str):
    manifest_path = os.path.join(out, "manifest.json")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    manifest["status"] = "completed"
    manifest["finished_at"] = time.time()
    manifest["elapsed_s"] = manifest["finished_at"] - manifest["started_at"]
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no values")
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def cmd_synth(spec: SyntheticSpec, corpus_path, fixtures_path) -> int:
    corpus, fixtures = generate_synthetic(spec)
    for path in (corpus_path, fixtures_path):
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
    write_corpus(corpus, corpus_path)
    write_fixtures(corpus, fixtures, fixtures_path)
    n_clusters = len({m.gold_cluster_id for m in corpus.mentions.values()})
    print(f"wrote {len(corpus.documents)} documents, "
          f"{len(corpus.mentions)} mentions, {n_clusters} gold clusters "
          f"-> {corpus_path}")
    print(f"wrote {len(fixtures)} inference fixtures -> {fixtures_path}")
    return EXIT_OK


def cmd_gen_inferences(config: RunConfig, split: str) -> int:
    corpus = load_corpus(config.corpus_paths[split])
    provider = build_provider(config, split)
    cache_path = config.commonsense.cache_path
    if cache_path is None:
        raise ConfigError("gen-inferences requires a cache path")
    cache = InferenceCache(cache_path)
    results = get_inferences_bulk(provider, corpus,
                                  config.commonsense.generation, cache=cache)
    print(f"cached {len(results)} inference sets -> {cache_path}")
    return EXIT_OK


def _require_paths(config: RunConfig, splits):
    for split in splits:
        if split not in config.corpus_paths:
            raise ConfigError(f"no corpus path configured for {split!r}")
        if not os.path.exists(config.corpus_paths[split]):
            raise ConfigError(
                f"corpus path for {split!r} does not exist: "
                f"{config.corpus_paths[split]}")
    if not config.seeds:
        raise ConfigError("seed list must be non-empty")


def _dataset_for(config: RunConfig, corpus: Corpus, split: str, mode: str,
                 embedder=None, default_strict: bool = True):
    provider = None
    cache = None
    if mode != "baseline":
        provider = build_provider(config, split,
                                  default_strict=default_strict)
        if config.commonsense.cache_path:
            cache = InferenceCache(config.commonsense.cache_path)
    return build_dataset(corpus, config.embedder, mode,
                         inference_source=provider,
                         gen_config=config.commonsense.generation,
                         cache=cache, scope=config.train.pair_scope,
                         embedder=embedder)


def cmd_train(config: RunConfig) -> int:
    _require_paths(config, ["train"] + (["dev"] if "dev"
                                        in config.corpus_paths else []))
    out = open_run_dir(config, "train")
    train_corpus = load_corpus(config.corpus_paths["train"])
    dev_corpus = (load_corpus(config.corpus_paths["dev"])
                  if "dev" in config.corpus_paths else None)
    mode = config.train.mode
    provider = (build_provider(config, "train")
                if mode != "baseline" else None)
    dev_provider = (build_provider(config, "dev")
                    if mode != "baseline" and dev_corpus is not None
                    else None)
    cache = (InferenceCache(config.commonsense.cache_path)
             if config.commonsense.cache_path else None)

    eval_corpus = dev_corpus if dev_corpus is not None else train_corpus
    eval_split = "dev" if dev_corpus is not None else "train"
    dev_data = _dataset_for(config, eval_corpus, eval_split, mode)

    dev_conlls = []
    for seed in config.seeds:
        train_config = replace(config.train, seed=seed)
        params, history = train(
            train_corpus, provider, config.embedder, train_config,
            dev_corpus=dev_corpus, gen_config=config.commonsense.generation,
            cache=cache, dev_inference_source=dev_provider)
        ckpt_path = os.path.join(out, f"checkpoint_seed{seed}.bin")
        save_checkpoint(params, ckpt_path)
        if config.threshold is not None:
            tau = config.threshold
        else:
            tau = tune_threshold(params, eval_corpus,
                                 grid=config.threshold_grid,
                                 dataset=dev_data,
                                 scope=config.cluster_scope,
                                 eval_options=config.eval_options)
        system = predict_clustering(params, eval_corpus, dev_data, tau,
                                    scope=config.cluster_scope)
        report = evaluate(eval_corpus, system, config.eval_options)
        dev_conlls.append(report.conll_f1)
        with open(os.path.join(out, f"history_seed{seed}.json"), "w",
                  encoding="utf-8") as fh:
            json.dump({"history": history, "tau": tau,
                       "dev_conll_f1": report.conll_f1}, fh, indent=2)
        print(f"seed {seed}: best dev pairwise F1 "
              f"{history['best_dev_f1']:.4f}, tau {tau:.2f}, "
              f"dev CoNLL {report.conll_f1:.4f}")

    mean, std = mean_std(dev_conlls)
    summary = {"mode": mode, "seeds": list(config.seeds),
               "dev_conll_f1": dev_conlls,
               "mean": mean, "std": std}
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    print(f"dev CoNLL F1 over {len(dev_conlls)} seeds: "
          f"{mean:.4f} +- {std:.4f}")
    finalize_run_dir(out)
    return EXIT_OK


def cmd_predict(config: RunConfig, checkpoint_path, split: str = "test",
                tau: Optional[float] = None) -> int:
    _require_paths(config, [split])
    out = open_run_dir(config, "predict")
    corpus = load_corpus(config.corpus_paths[split])
    params = load_checkpoint(checkpoint_path)
    mode = params.dims.mode
    expected = config.train.model_dims(config.embedder)
    expected = replace(expected, mode=mode)
    if params.dims != expected:
        raise ConfigError(
            f"checkpoint dims {params.dims} do not match config "
            f"{expected}")
    data = _dataset_for(config, corpus, split, mode, default_strict=False)
    if tau is None:
        tau = config.threshold
    if tau is None:
        raise ConfigError("no threshold: pass --tau or set [cluster] "
                          "threshold")
    system = predict_clustering(params, corpus, data, tau,
                                scope=config.cluster_scope)
    clustering_path = os.path.join(out, f"clustering_{split}.jsonl")
    write_clustering(system, clustering_path, metadata={
        "tau": tau, "linkage": "average", "scope": config.cluster_scope,
        "checkpoint": os.path.basename(str(checkpoint_path)),
        "mode": mode})
    report = evaluate(corpus, system, config.eval_options)
    _write_report(report, out, split)
    print(report.render_table())
    print(f"CoNLL F1: {report.conll_f1:.4f}")
    finalize_run_dir(out)
    return EXIT_OK


def _write_report(report: EvalReport, out: str, split: str):
    with open(os.path.join(out, f"report_{split}.json"), "w",
              encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    with open(os.path.join(out, f"report_{split}.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(report.render_table() + "\n")


def cmd_score(config: RunConfig, clustering_path, split: str = "test") -> int:
    from .cluster import read_clustering

    corpus = load_corpus(config.corpus_paths[split])
    system, _ = read_clustering(clustering_path)
    report = evaluate(corpus, system, config.eval_options)
    print(report.render_table())
    print(f"CoNLL F1: {report.conll_f1:.4f}")
    out = config.out_dir
    os.makedirs(out, exist_ok=True)
    _write_report(report, out, split)
    return EXIT_OK


@dataclass
class AttentionTrace:
    first: str
    second: str
    first_context: str
    second_context: str
    relations: dict  # (mention_id, relation) -> list of (sentence, weight)
    probability: float
    gold_label: Optional[int]

    def render(self) -> str:
        lines = [f"pair: {self.first} | {self.second}",
                 f"context[{self.first}]: {self.first_context}",
                 f"context[{self.second}]: {self.second_context}",
                 f"probability: {self.probability:.4f}",
                 f"gold_label: {self.gold_label}"]
        for (mention_id, relation), items in self.relations.items():
            lines.append(f"[{mention_id}] {relation}:")
            for sentence, weight in items:
                lines.append(f"  {weight:.4f}  {sentence}")
        return "\n".join(lines)


def explain_pair(params: ModelParameters, corpus: Corpus, config: RunConfig,
                 first_id: str, second_id: str, split: str = "test"
                 ) -> AttentionTrace:
    """Single-pair trace: inference attention weights, score, gold label."""
    for mention_id in (first_id, second_id):
        if mention_id not in corpus.mentions:
            raise KeyError(f"unknown mention id {mention_id!r}")
    a, b = corpus.mentions[first_id], corpus.mentions[second_id]
    if b.span_key() < a.span_key():
        a, b = b, a
    mode = params.dims.mode
    embedder = make_embedder(config.embedder)
    w_alpha, width_table = params.w_alpha, params.width_table

    def ctx_of(m):
        matrices = embedder.embed_document(corpus.documents[m.doc_id])
        rep = span_representation(matrices, m.sentence_index, m.token_start,
                                  m.token_end, w_alpha, width_table)
        return rep.full

    ctx_a, ctx_b = ctx_of(a), ctx_of(b)
    relations = {}
    cs_a = cs_b = None
    if mode != "baseline":
        provider = build_provider(config, split, default_strict=False)
        cache = (InferenceCache(config.commonsense.cache_path)
                 if config.commonsense.cache_path else None)
        gen = config.commonsense.generation

        def inference_reps(m):
            context = " ".join(corpus.sentence_of(m))
            inf = get_inferences(provider, m, context, gen, cache=cache)
            reps = {}
            for rel in ("before", "after"):
                sentences = list(getattr(inf, rel))
                reps[rel] = (sentences, [span_representation(
                    [embedder.embed_sentence(s.split())], 0, 0,
                    len(s.split()) - 1, w_alpha, width_table).full
                    for s in sentences])
            return reps

        reps_a, reps_b = inference_reps(a), inference_reps(b)
        src_a = reps_a if mode == "intra" else reps_b
        src_b = reps_b if mode == "intra" else reps_a
        cs_a, traces_a = commonsense_vector(mode, ctx_a, src_a["before"][1],
                                            src_a["after"][1], params)
        cs_b, traces_b = commonsense_vector(mode, ctx_b, src_b["before"][1],
                                            src_b["after"][1], params)
        for mention_id, src, traces in ((a.mention_id, src_a, traces_a),
                                        (b.mention_id, src_b, traces_b)):
            for rel in ("before", "after"):
                sentences = src[rel][0]
                weights = traces[rel].weights
                ranked = sorted(zip(sentences, weights),
                                key=lambda item: -item[1])
                relations[(mention_id, rel)] = [(s, float(w))
                                                for s, w in ranked]
    feature = pair_features(ctx_a, ctx_b, cs_a, cs_b, mode,
                            first=a.mention_id, second=b.mention_id)
    probability = score_pair(params, feature.g, training=False)
    gold = None
    if a.gold_cluster_id is not None and b.gold_cluster_id is not None:
        gold = int(a.gold_cluster_id == b.gold_cluster_id)
    return AttentionTrace(first=a.mention_id, second=b.mention_id,
                          first_context=" ".join(corpus.sentence_of(a)),
                          second_context=" ".join(corpus.sentence_of(b)),
                          relations=relations, probability=probability,
                          gold_label=gold)


def cmd_explain(config: RunConfig, checkpoint_path, first_id: str,
                second_id: str, split: str = "test",
                out_path=None) -> int:
    corpus = load_corpus(config.corpus_paths[split])
    params = load_checkpoint(checkpoint_path)
    trace = explain_pair(params, corpus, config, first_id, second_id,
                         split=split)
    text = trace.render()
    print(text)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def cmd_gradcheck(mode: str = "intra", seeds=(0, 1, 2, 3, 4),
                  _corrupt_block: Optional[str] = None, **kwargs) -> int:
    report = gradcheck(mode=mode, seeds=seeds,
                       _corrupt_block=_corrupt_block, **kwargs)
    print(report.render())
    return EXIT_OK if report.passed else EXIT_VERIFICATION
