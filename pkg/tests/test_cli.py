import numpy as np
import pytest
from click.testing import CliRunner

from refgame.cli import main
from refgame.corpus import read_trials
from refgame.synthetic import load_world


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def data_dir(runner, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-data")
    result = runner.invoke(main, ["--out", str(out), "--seed", "0",
                                  "synthesize", "--n-families", "8",
                                  "--n-loose", "8", "--n-trials", "60"])
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture(scope="module")
def listener_ckpt(runner, data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-listener")
    result = runner.invoke(main, [
        "--out", str(out), "--seed", "0", "train-listener",
        "--trials", str(data_dir / "trials.tsv"),
        "--world", str(data_dir / "world.json"),
        "--epochs", "3"])
    assert result.exit_code == 0, result.output
    return out / "listener.pt"


class TestSynthesize:
    def test_writes_world_and_trials(self, data_dir):
        world = load_world(data_dir / "world.json")
        assert len(world.attributes) == 8 * 3 + 8
        assert len(read_trials(data_dir / "trials.tsv")) == 60


class TestBuildContexts:
    def test_from_world(self, runner, data_dir, tmp_path):
        result = runner.invoke(main, [
            "--out", str(tmp_path), "build-contexts",
            "--world", str(data_dir / "world.json"), "--n-seeds", "5"])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "contexts.tsv").exists()

    def test_requires_a_source(self, runner, tmp_path):
        result = runner.invoke(main, ["--out", str(tmp_path),
                                      "build-contexts"])
        assert result.exit_code != 0
        assert "provide --world" in result.output


class TestPreprocess:
    def test_writes_vocab_and_split(self, runner, data_dir, tmp_path):
        result = runner.invoke(main, [
            "--out", str(tmp_path), "preprocess",
            "--trials", str(data_dir / "trials.tsv")])
        assert result.exit_code == 0, result.output
        vocab_lines = (tmp_path / "vocab.txt").read_text().splitlines()
        assert vocab_lines  # specials plus slot/value words
        split_lines = (tmp_path / "split.txt").read_text().splitlines()
        assert [line.split("\t")[0] for line in split_lines] == [
            "train", "val", "test"]


class TestFitEncoders:
    def test_caches_codes(self, runner, tmp_path):
        pc_dir = tmp_path / "clouds"
        pc_dir.mkdir()
        rng = np.random.default_rng(0)
        for i in range(3):
            np.savetxt(pc_dir / f"obj{i}.txt", rng.normal(size=(16, 3)))
        result = runner.invoke(main, [
            "--out", str(tmp_path), "fit-encoders", "--pc-dir", str(pc_dir),
            "--bottleneck", "4", "--epochs", "3"])
        assert result.exit_code == 0, result.output
        from refgame.encoders import CodeCache
        cache = CodeCache(tmp_path / "codes.npz")
        for i in range(3):
            assert cache.get(f"obj{i}").code("point_cloud").shape == (4,)


class TestTrainingAndAnalysis:
    def test_train_listener_saves_checkpoint(self, listener_ckpt):
        from refgame.checkpoint import load_listener
        listener = load_listener(listener_ckpt)
        assert "best_val_accuracy" in listener.log

    def test_evaluate_writes_report(self, runner, data_dir, listener_ckpt,
                                    tmp_path):
        result = runner.invoke(main, [
            "--out", str(tmp_path), "evaluate",
            "--listener", str(listener_ckpt),
            "--trials", str(data_dir / "trials.tsv"),
            "--world", str(data_dir / "world.json")])
        assert result.exit_code == 0, result.output
        assert "overall" in (tmp_path / "report.txt").read_text()
        assert (tmp_path / "report.csv").exists()

    def test_train_speaker_then_generate(self, runner, data_dir,
                                         listener_ckpt, tmp_path):
        result = runner.invoke(main, [
            "--out", str(tmp_path), "train-speaker",
            "--trials", str(data_dir / "trials.tsv"),
            "--world", str(data_dir / "world.json"),
            "--selection-listener", str(listener_ckpt),
            "--epochs", "2"])
        assert result.exit_code == 0, result.output
        speaker_ckpt = tmp_path / "speaker.pt"
        assert speaker_ckpt.exists()
        result = runner.invoke(main, [
            "--out", str(tmp_path), "generate",
            "--speaker", str(speaker_ckpt),
            "--internal-listener", str(listener_ckpt),
            "--trials", str(data_dir / "trials.tsv"),
            "--world", str(data_dir / "world.json"),
            "--n-samples", "5", "--limit", "4"])
        assert result.exit_code == 0, result.output
        lines = (tmp_path / "generation.tsv").read_text().splitlines()
        assert len(lines) == 4 and all(len(l.split("\t")) == 5 for l in lines)

    def test_pmi_table(self, runner, data_dir, tmp_path):
        result = runner.invoke(main, [
            "--out", str(tmp_path), "pmi",
            "--trials", str(data_dir / "trials.tsv"), "--min-count", "2"])
        assert result.exit_code == 0, result.output
        lines = (tmp_path / "pmi.csv").read_text().splitlines()
        assert lines[0] == "word,pmi" and len(lines) > 1


class TestConfigFile:
    def test_missing_config_rejected(self, runner, tmp_path):
        result = runner.invoke(main, ["--config", str(tmp_path / "none.ini"),
                                      "synthesize"])
        assert result.exit_code != 0
