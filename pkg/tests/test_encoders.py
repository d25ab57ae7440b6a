import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as npst

from refgame.corpus import Vocabulary
from refgame.encoders import (CodeCache, ObjectRepresentation,
                              PassthroughProvider, SmallImageBackbone,
                              WordEmbeddingTable, chamfer_distance,
                              fit_image_encoder, fit_pc_autoencoder,
                              load_vgg16_backbone, read_point_cloud,
                              subtract_mean_rgb, write_point_cloud)


def chamfer_oracle(a, b):
    """Exhaustive nearest-neighbor reference, one pair at a time."""
    def one_way(xs, ys):
        total = 0.0
        for x in xs:
            best = min(sum((xi - yi) ** 2 for xi, yi in zip(x, y)) for y in ys)
            total += best
        return total / len(xs)
    return one_way(a, b) + one_way(b, a)


class TestChamfer:
    def test_worked_example(self):
        a = np.array([[0.0, 0, 0], [1.0, 0, 0]])
        b = np.array([[0.0, 0, 0]])
        assert chamfer_distance(a, b) == pytest.approx(0.5, abs=1e-12)

    def test_zero_self_distance(self, rng):
        cloud = rng.normal(size=(64, 3))
        assert chamfer_distance(cloud, cloud) == 0.0

    def test_symmetry_and_oracle(self, rng):
        for _ in range(5):
            a = rng.normal(size=(rng.integers(1, 40), 3))
            b = rng.normal(size=(rng.integers(1, 40), 3))
            assert chamfer_distance(a, b) == chamfer_distance(b, a)
            assert chamfer_distance(a, b) == pytest.approx(
                chamfer_oracle(a, b), rel=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            chamfer_distance(np.zeros((0, 3)), np.zeros((1, 3)))

    @given(npst.arrays(np.float64, (5, 3), elements=st.floats(-3, 3)),
           npst.arrays(np.float64, (4, 3), elements=st.floats(-3, 3)))
    @settings(max_examples=50, deadline=None)
    def test_nonnegative_property(self, a, b):
        assert chamfer_distance(a, b) >= 0.0


class TestObjectRepresentation:
    def test_requires_some_code(self):
        with pytest.raises(ValueError):
            ObjectRepresentation(object_id="x")

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            ObjectRepresentation(object_id="x",
                                 image_code=np.array([np.inf]))

    def test_code_lookup(self, rng):
        rep = ObjectRepresentation(object_id="x",
                                   image_code=rng.normal(size=4))
        assert rep.code("image").shape == (4,)
        with pytest.raises(ValueError):
            rep.code("point_cloud")


class TestPCAutoencoder:
    def test_fit_checkpoints_and_encode(self, rng):
        clouds = [rng.normal(size=(32, 3)) for _ in range(6)]
        fitted = fit_pc_autoencoder(clouds, bottleneck=8, epochs=15, seed=0)
        losses = fitted.log["checkpoint_losses"]
        assert all(b <= a for a, b in zip(losses, losses[1:]))
        code = fitted.encode(clouds[0])
        assert code.shape == (8,) and code.dtype == np.float64

    def test_reconstruction_improves(self, rng):
        clouds = [rng.normal(size=(16, 3)) for _ in range(4)]
        fitted = fit_pc_autoencoder(clouds, bottleneck=8, epochs=40, seed=1)
        assert fitted.log["best_loss"] < fitted.log["epoch_losses"][0]

    def test_too_few_clouds(self, rng):
        with pytest.raises(ValueError):
            fit_pc_autoencoder([rng.normal(size=(8, 3))], bottleneck=4)


class TestImageEncoder:
    def test_separable_8_class_set_reaches_95(self, rng):
        # 8 classes of 8x8 images, each class lighting up its own quadrant
        # band; trivially separable.
        images, labels = [], []
        for cls in range(8):
            for _ in range(8):
                img = rng.normal(scale=0.05, size=(3, 8, 8))
                img[cls % 3, (cls // 3) * 2:(cls // 3) * 2 + 2, :] += 3.0
                images.append(img)
                labels.append(cls)
        extractor = fit_image_encoder(
            np.stack(images), np.array(labels),
            backbone=SmallImageBackbone(n_classes=8, feature_dim=16),
            epochs_head=10, epochs_all=60, seed=0)
        assert extractor.log["train_accuracy"] >= 0.95
        feats = extractor.features(np.stack(images[:4]))
        assert feats.shape == (4, 16)

    def test_vgg_weights_required_locally(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_vgg16_backbone(tmp_path / "missing.pt")

    def test_mean_rgb_subtraction(self):
        pixels = np.ones((3, 2, 2))
        out = subtract_mean_rgb(pixels, mean_rgb=(1.0, 0.5, 0.0))
        assert out[0, 0, 0] == 0.0 and out[2, 0, 0] == 1.0


class TestWordEmbeddings:
    def test_missing_rows_in_uniform_range(self):
        vocab = Vocabulary.from_counts({"chair": 3, "rare": 2}, min_count=1)
        table = WordEmbeddingTable.from_pretrained(
            vocab, {"chair": np.full(4, 7.0)}, dim=4, seed=0)
        row = table.matrix[vocab.token_to_id["chair"]]
        np.testing.assert_allclose(row, 7.0)
        other = table.matrix[vocab.token_to_id["rare"]]
        assert np.all(np.abs(other) <= 0.1)

    def test_glove_file_parsing(self, tmp_path):
        vocab = Vocabulary.from_counts({"chair": 3}, min_count=1)
        path = tmp_path / "glove.txt"
        path.write_text("chair 1.0 2.0\nzebra 9.0 9.0\n")
        table = WordEmbeddingTable.load_glove(path, vocab, dim=2)
        np.testing.assert_allclose(
            table.matrix[vocab.token_to_id["chair"]], [1.0, 2.0])


class TestProvidersAndCaches:
    def test_passthrough_identity(self, rng):
        feats = {"a": rng.normal(size=5), "b": rng.normal(size=5)}
        provider = PassthroughProvider(feats)
        reps = provider.encode_all()
        np.testing.assert_array_equal(reps["a"].code("image"), feats["a"])
        with pytest.raises(KeyError):
            provider.encode("missing")

    def test_code_cache_roundtrip(self, rng, tmp_path):
        path = tmp_path / "codes.npz"
        cache = CodeCache(path)
        cache.put("a", image_code=rng.normal(size=3),
                  pc_code=rng.normal(size=2))
        cache.save()
        reloaded = CodeCache(path)
        assert "a" in reloaded
        rep = reloaded.get("a")
        np.testing.assert_array_equal(rep.code("image"),
                                      cache.get("a").code("image"))
        assert reloaded.get("missing") is None

    def test_point_cloud_io(self, rng, tmp_path):
        cloud = rng.normal(size=(16, 3))
        write_point_cloud(cloud, tmp_path / "c.txt")
        np.testing.assert_allclose(read_point_cloud(tmp_path / "c.txt"),
                                   cloud)
        (tmp_path / "bad.txt").write_text("1 2\n3 4\n")
        with pytest.raises(ValueError):
            read_point_cloud(tmp_path / "bad.txt")
