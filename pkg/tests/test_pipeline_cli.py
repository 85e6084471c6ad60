import json
import subprocess
import sys
from pathlib import Path

import pytest

from cscoref import cli, pipeline
from cscoref.cluster import read_clustering, write_clustering
from cscoref.corpus import Clustering, load_corpus
from cscoref.pipeline import (ConfigError, load_run_config, mean_std,
                              preset)
from cscoref.synthgen import SyntheticSpec, generate_synthetic


def synth_args(tmp_path, seed=3, **kwargs):
    args = ["synth", "--topics", "2", "--clusters-per-topic", "2",
            "--mentions-per-cluster", "2", "--seed", str(seed),
            "--corpus-out", str(tmp_path / "corpus.jsonl"),
            "--fixtures-out", str(tmp_path / "fixtures.jsonl")]
    for key, value in kwargs.items():
        args += [f"--{key.replace('_', '-')}", str(value)]
    return args


class TestSynthCommand:
    def test_creates_files_exit_zero(self, tmp_path, capsys):
        assert cli.main(synth_args(tmp_path)) == 0
        assert (tmp_path / "corpus.jsonl").exists()
        assert (tmp_path / "fixtures.jsonl").exists()
        out = capsys.readouterr().out
        assert "8 mentions" in out and "4 gold clusters" in out
        corpus = load_corpus(tmp_path / "corpus.jsonl")
        assert len(corpus.mentions) == 8

    def test_invalid_spec_exit_two_no_files(self, tmp_path):
        args = synth_args(tmp_path)
        args[args.index("--clusters-per-topic") + 1] = "0"
        assert cli.main(args) == 2
        assert not (tmp_path / "corpus.jsonl").exists()

    def test_rerun_identical_files(self, tmp_path):
        assert cli.main(synth_args(tmp_path)) == 0
        first = (tmp_path / "corpus.jsonl").read_bytes()
        first_fx = (tmp_path / "fixtures.jsonl").read_bytes()
        assert cli.main(synth_args(tmp_path)) == 0
        assert (tmp_path / "corpus.jsonl").read_bytes() == first
        assert (tmp_path / "fixtures.jsonl").read_bytes() == first_fx


class TestMeanStd:
    def test_spec_example(self):
        mean, std = mean_std([0.61, 0.62, 0.63])
        assert mean == pytest.approx(0.62)
        assert std == pytest.approx(0.01)

    def test_single_value(self):
        assert mean_std([0.5]) == (0.5, 0.0)


class TestConfig:
    def test_presets(self):
        desk = preset("desk")
        assert desk.embedder.provider == "hash"
        assert desk.embedder.d == 16
        assert desk.train.d_a == 8
        service = preset("service")
        assert service.embedder.d == 1024
        assert service.train.d_a == 512
        assert service.train.learning_rate == 1e-4
        with pytest.raises(ConfigError):
            preset("galactic")

    def test_ini_roundtrip(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("""
[run]
preset = desk
out = runs/demo
seeds = 3,5

[corpus]
train = data/train.jsonl
dev = data/dev.jsonl

[embedder]
d = 8
d_len = 4
max_width_bucket = 4

[commonsense]
provider = synthetic
synthetic_seed = 17
synthetic_n_topics = 2
synthetic_clusters_per_topic = 2
synthetic_mentions_per_cluster = 2
k = 3

[train]
mode = inter
epochs = 4
hidden = 32
d_a = 4

[cluster]
threshold = 0.45
scope = topic

[eval]
drop_singletons = false
""", encoding="utf-8")
        config = load_run_config(ini)
        assert config.out_dir == "runs/demo"
        assert config.seeds == (3, 5)
        assert config.corpus_paths == {"train": "data/train.jsonl",
                                       "dev": "data/dev.jsonl"}
        assert config.embedder.d == 8
        assert config.commonsense.provider == "synthetic"
        assert config.commonsense.synthetic_spec.seed == 17
        assert config.commonsense.generation.k == 3
        assert config.train.mode == "inter"
        assert config.train.epochs == 4
        assert config.threshold == 0.45
        assert config.cluster_scope == "topic"
        assert config.eval_options.drop_singletons is False

    def test_missing_config_file(self):
        with pytest.raises(ConfigError):
            load_run_config("/nonexistent/run.ini")

    def test_fingerprint_stable(self):
        assert preset("desk").fingerprint() == preset("desk").fingerprint()
        assert preset("desk").fingerprint() != preset("service").fingerprint()

    def test_exemplars_file(self, tmp_path):
        path = tmp_path / "exemplars.jsonl"
        records = [{"context": f"The team won game {i} .", "event": "won",
                    "before": f"They practiced {i}.",
                    "after": f"They celebrated {i}."} for i in range(8)]
        path.write_text("\n".join(json.dumps(r) for r in records),
                        encoding="utf-8")
        exemplars = pipeline.load_exemplars(path)
        assert len(exemplars) == 8
        assert exemplars[0].event == "won"
        from cscoref.commonsense import format_prompt
        prompt = format_prompt("The team won again .", "won",
                               mode="fewshot", exemplars=exemplars)
        assert prompt.count("After:") == 8


def small_run_config(tmp_path, mode="intra", seeds=(0,)):
    Path(tmp_path).mkdir(parents=True, exist_ok=True)
    spec = SyntheticSpec(n_topics=2, clusters_per_topic=2,
                         mentions_per_cluster=2, hard_fraction=0.5,
                         distractor_rate=0.0, seed=17)
    corpus, fixtures = generate_synthetic(spec)
    from cscoref.corpus import write_corpus
    from cscoref.synthgen import write_fixtures
    corpus_path = tmp_path / "corpus.jsonl"
    fixtures_path = tmp_path / "fixtures.jsonl"
    write_corpus(corpus, corpus_path)
    write_fixtures(corpus, fixtures, fixtures_path)

    config = preset("desk")
    config.embedder = pipeline.EmbedderConfig(
        provider="hash", d=8, d_len=4, max_width_bucket=4, seed=0)
    config.corpus_paths = {"train": str(corpus_path),
                           "dev": str(corpus_path),
                           "test": str(corpus_path)}
    config.commonsense = pipeline.CommonsenseConfig(
        provider="fixture",
        fixtures={"train": str(fixtures_path), "dev": str(fixtures_path),
                  "test": str(fixtures_path)})
    config.train = pipeline.TrainConfig(
        mode=mode, epochs=3, patience=None, seed=0, learning_rate=1e-3,
        hidden=16, d_a=2)
    config.seeds = tuple(seeds)
    config.out_dir = str(tmp_path / "run")
    return config, corpus


class TestTrainCommand:
    def test_checkpoints_and_summary(self, tmp_path, capsys):
        config, _ = small_run_config(tmp_path, seeds=(0, 1, 2))
        assert pipeline.cmd_train(config) == 0
        out = Path(config.out_dir)
        for seed in (0, 1, 2):
            assert (out / f"checkpoint_seed{seed}.bin").exists()
            assert (out / f"history_seed{seed}.json").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert len(summary["dev_conll_f1"]) == 3
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "completed"
        assert "+-" in capsys.readouterr().out

    def test_completed_run_dir_not_overwritten(self, tmp_path, capsys):
        config, _ = small_run_config(tmp_path)
        assert pipeline.cmd_train(config) == 0
        with pytest.raises(ConfigError, match="completed"):
            pipeline.cmd_train(config)

    def test_tau_recorded_per_seed(self, tmp_path):
        config, _ = small_run_config(tmp_path)
        pipeline.cmd_train(config)
        history = json.loads(
            (Path(config.out_dir) / "history_seed0.json").read_text())
        assert 0.0 <= history["tau"] <= 1.0
        assert "history" in history


class TestPredictAndScore:
    def test_predict_writes_clustering_and_report(self, tmp_path, capsys):
        config, corpus = small_run_config(tmp_path)
        pipeline.cmd_train(config)
        ckpt = Path(config.out_dir) / "checkpoint_seed0.bin"
        config2, _ = small_run_config(tmp_path / "p")
        config2.out_dir = str(tmp_path / "pred")
        assert pipeline.cmd_predict(config2, ckpt, split="test",
                                    tau=0.5) == 0
        out = Path(config2.out_dir)
        clustering, meta = read_clustering(out / "clustering_test.jsonl")
        assert meta["tau"] == 0.5
        assert meta["linkage"] == "average"
        assert clustering.mentions == set(corpus.mentions)
        report = json.loads((out / "report_test.json").read_text())
        assert "conll_f1" in report

    def test_gold_as_system_scores_one(self, tmp_path, capsys):
        config, corpus = small_run_config(tmp_path)
        gold_path = tmp_path / "gold_clustering.jsonl"
        write_clustering(corpus.gold_clustering(), gold_path,
                         metadata={"tau": 1.0})
        config.out_dir = str(tmp_path / "scored")
        assert pipeline.cmd_score(config, gold_path, split="test") == 0
        report = json.loads(
            (Path(config.out_dir) / "report_test.json").read_text())
        assert report["conll_f1"] == pytest.approx(1.0)

    def test_all_singleton_system_muc_zero(self, tmp_path):
        config, corpus = small_run_config(tmp_path)
        singleton = Clustering({m: f"s_{m}" for m in corpus.mentions})
        path = tmp_path / "singletons.jsonl"
        write_clustering(singleton, path, metadata={})
        config.out_dir = str(tmp_path / "scored2")
        pipeline.cmd_score(config, path, split="test")
        report = json.loads(
            (Path(config.out_dir) / "report_test.json").read_text())
        assert report["aggregate"]["muc"]["f1"] == 0.0

    def test_header_mismatch_rejected(self, tmp_path):
        config, _ = small_run_config(tmp_path)
        pipeline.cmd_train(config)
        ckpt = Path(config.out_dir) / "checkpoint_seed0.bin"
        config2, _ = small_run_config(tmp_path / "q")
        config2.train = pipeline.TrainConfig(mode="intra", hidden=99, d_a=2)
        config2.out_dir = str(tmp_path / "pred2")
        with pytest.raises(ConfigError, match="match"):
            pipeline.cmd_predict(config2, ckpt, split="test", tau=0.5)

    def test_missing_fixture_strict_in_train_lenient_in_predict(
            self, tmp_path):
        from cscoref.commonsense import InferenceError

        config, corpus = small_run_config(tmp_path)
        pipeline.cmd_train(config)
        ckpt = Path(config.out_dir) / "checkpoint_seed0.bin"
        # fixtures covering all but one mention
        partial = tmp_path / "partial.jsonl"
        skipped = sorted(corpus.mentions)[0]
        with open(config.commonsense.fixtures["test"]) as src, \
                open(partial, "w") as dst:
            for line in src:
                if f'"{skipped}"' not in line:
                    dst.write(line)
        config.commonsense.fixtures = {s: str(partial)
                                       for s in ("train", "dev", "test")}
        config.out_dir = str(tmp_path / "lenient_pred")
        with pytest.warns(UserWarning, match=skipped):
            assert pipeline.cmd_predict(config, ckpt, split="test",
                                        tau=0.5) == 0
        config.out_dir = str(tmp_path / "strict_train")
        with pytest.raises(InferenceError, match=skipped):
            pipeline.cmd_train(config)

    def test_empty_seed_list_rejected(self, tmp_path):
        config, _ = small_run_config(tmp_path)
        config.seeds = ()
        with pytest.raises(ConfigError, match="seed"):
            pipeline.cmd_train(config)

    def test_missing_corpus_path_rejected(self, tmp_path):
        config, _ = small_run_config(tmp_path)
        config.corpus_paths["train"] = str(tmp_path / "absent.jsonl")
        with pytest.raises(ConfigError, match="does not exist"):
            pipeline.cmd_train(config)


class TestExplainCommand:
    def test_trace_sorted_and_complete(self, tmp_path, capsys):
        config, corpus = small_run_config(tmp_path)
        pipeline.cmd_train(config)
        ckpt = Path(config.out_dir) / "checkpoint_seed0.bin"
        ids = sorted(corpus.mentions)
        trace_path = tmp_path / "trace.txt"
        code = pipeline.cmd_explain(config, ckpt, ids[0], ids[1],
                                    split="test", out_path=trace_path)
        assert code == 0
        text = trace_path.read_text("utf-8")
        assert "probability:" in text
        assert "gold_label:" in text
        from cscoref.scorer import load_checkpoint
        params = load_checkpoint(ckpt)
        trace = pipeline.explain_pair(params, corpus, config, ids[0],
                                      ids[1], split="test")
        for items in trace.relations.values():
            weights = [w for _, w in items]
            assert weights == sorted(weights, reverse=True)
            assert sum(weights) == pytest.approx(1.0, abs=1e-9)

    def test_single_inference_weight_one(self, tmp_path):
        config, corpus = small_run_config(tmp_path)
        # fixture with exactly one inference per relation
        fixtures_path = tmp_path / "single.jsonl"
        with open(fixtures_path, "w", encoding="utf-8") as fh:
            for m in corpus.mentions.values():
                fh.write(json.dumps({
                    "doc_id": m.doc_id, "mention_id": m.mention_id,
                    "before": ["Something happened first."],
                    "after": ["Something happened later."],
                    "provenance": "fixture"}) + "\n")
        config.commonsense.fixtures = {s: str(fixtures_path)
                                       for s in ("train", "dev", "test")}
        from cscoref.scorer import init_parameters
        from cscoref.scorer import save_checkpoint
        dims = config.train.model_dims(config.embedder)
        params = init_parameters(dims, 0)
        ckpt = tmp_path / "init.bin"
        save_checkpoint(params, ckpt)
        ids = sorted(corpus.mentions)
        trace = pipeline.explain_pair(params, corpus, config, ids[0],
                                      ids[1], split="test")
        for items in trace.relations.values():
            assert len(items) == 1
            assert items[0][1] == pytest.approx(1.0)

    def test_unknown_mention_rejected(self, tmp_path):
        config, corpus = small_run_config(tmp_path)
        pipeline.cmd_train(config)
        ckpt = Path(config.out_dir) / "checkpoint_seed0.bin"
        config.out_dir = str(tmp_path / "explained")
        with pytest.raises(KeyError, match="zzz"):
            pipeline.cmd_explain(config, ckpt, "zzz", "t00_c0_m0",
                                 split="test")


class TestGradcheckCommand:
    SMALL = dict(d=4, d_len=3, d_a=2, hidden=6, n_pairs=4,
                 training_mode_seeds=0)

    def test_exit_zero_on_pass(self, capsys):
        assert pipeline.cmd_gradcheck(mode="intra", seeds=(0,),
                                      **self.SMALL) == 0
        out = capsys.readouterr().out
        assert "PASS" in out

    def test_exit_one_on_corrupted_gradient(self, capsys):
        code = pipeline.cmd_gradcheck(mode="intra", seeds=(0,),
                                      _corrupt_block="W1", **self.SMALL)
        assert code == 1
        assert "FAIL" in capsys.readouterr().out

    def test_fixed_seed_identical_report(self, capsys):
        pipeline.cmd_gradcheck(mode="baseline", seeds=(1,), **self.SMALL)
        first = capsys.readouterr().out
        pipeline.cmd_gradcheck(mode="baseline", seeds=(1,), **self.SMALL)
        assert capsys.readouterr().out == first


class TestCliWiring:
    def test_gen_inferences(self, tmp_path, capsys):
        config, corpus = small_run_config(tmp_path)
        ini = tmp_path / "run.ini"
        ini.write_text(f"""
[run]
out = {tmp_path / 'gen'}

[corpus]
train = {config.corpus_paths['train']}

[embedder]
d = 8
d_len = 4
max_width_bucket = 4

[commonsense]
provider = fixture
fixtures = {config.commonsense.fixtures['train']}
cache = {tmp_path / 'cache.jsonl'}
""", encoding="utf-8")
        assert cli.main(["gen-inferences", "--config", str(ini),
                         "--split", "train"]) == 0
        assert (tmp_path / "cache.jsonl").exists()
        assert "cached 8" in capsys.readouterr().out

    def test_unknown_mode_rejected_by_parser(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main(synth_args(tmp_path) + ["--bogus-flag", "1"])
        assert exc.value.code == 2

    def test_console_script_help(self):
        result = subprocess.run(
            [sys.executable, "-m", "cscoref.cli", "--help"],
            capture_output=True, text=True)
        assert result.returncode == 0
        for command in ("synth", "gen-inferences", "train", "predict",
                        "score", "explain", "gradcheck"):
            assert command in result.stdout
