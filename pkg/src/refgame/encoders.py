"""Per-object feature codes: Chamfer distance, point-cloud autoencoder
latents, image-classifier penultimate features, word embedding tables, and a
pass-through provider for synthetic worlds.

Fitted encoders are immutable after training and safe for concurrent
inference.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

logger = logging.getLogger(__name__)

IMAGE_CODE_DIM = 4096
PC_CODE_DIM = 128
CONTEXT_CODE_DIM = 64
POINTS_PER_CLOUD = 2048
WORD_DIM = 100


@dataclass
class ObjectRepresentation:
    """Feature codes (and optionally raw assets) for one object."""

    object_id: str
    image_code: np.ndarray | None = None
    pc_code: np.ndarray | None = None
    image_pixels: np.ndarray | None = None
    point_cloud: np.ndarray | None = None
    part_annotations: dict[str, "PartAnnotation"] | None = None

    def __post_init__(self):
        if self.image_code is None and self.pc_code is None:
            raise ValueError(f"object {self.object_id}: needs image_code or pc_code")
        for code in (self.image_code, self.pc_code):
            if code is not None and not np.all(np.isfinite(code)):
                raise ValueError(f"object {self.object_id}: non-finite code")

    def code(self, modality: str) -> np.ndarray:
        value = {"image": self.image_code, "point_cloud": self.pc_code}[modality]
        if value is None:
            raise ValueError(f"object {self.object_id}: no {modality} code")
        return value


@dataclass
class PartAnnotation:
    """Pixel mask (H, W bool) and point index set for one named part."""

    pixel_mask: np.ndarray | None = None
    point_indices: np.ndarray | None = None


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric averaged nearest-neighbor squared distance between two
    point sets: mean_a min_b ||x-y||^2 + mean_b min_a ||x-y||^2."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("chamfer_distance: empty point cloud")
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def _chamfer_torch(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    # a, b: (batch, n_points, 3)
    d2 = torch.cdist(a, b) ** 2
    return d2.min(dim=2).values.mean(dim=1) + d2.min(dim=1).values.mean(dim=1)


class PointCloudAutoencoder(nn.Module):
    """Per-point MLP encoder with max pooling to a bottleneck, FC decoder."""

    def __init__(self, bottleneck: int, n_points: int = POINTS_PER_CLOUD,
                 width: int = 64):
        super().__init__()
        self.bottleneck = bottleneck
        self.n_points = n_points
        self.point_mlp = nn.Sequential(
            nn.Linear(3, width), nn.ReLU(),
            nn.Linear(width, width), nn.ReLU(),
            nn.Linear(width, bottleneck),
        )
        self.decoder = nn.Sequential(
            nn.Linear(bottleneck, width * 2), nn.ReLU(),
            nn.Linear(width * 2, n_points * 3),
        )

    def encode(self, clouds: torch.Tensor) -> torch.Tensor:
        return self.point_mlp(clouds).max(dim=1).values

    def forward(self, clouds: torch.Tensor) -> torch.Tensor:
        codes = self.encode(clouds)
        return self.decoder(codes).view(-1, self.n_points, 3)


@dataclass
class FittedPCAutoencoder:
    model: PointCloudAutoencoder
    log: dict

    def encode(self, cloud: np.ndarray) -> np.ndarray:
        self.model.eval()
        with torch.no_grad():
            x = torch.as_tensor(np.asarray(cloud), dtype=torch.float32).unsqueeze(0)
            return self.model.encode(x).squeeze(0).numpy().astype(np.float64)


def fit_pc_autoencoder(clouds: list[np.ndarray], bottleneck: int,
                       epochs: int = 200, lr: float = 1e-3,
                       batch_size: int = 16, seed: int = 0) -> FittedPCAutoencoder:
    """Train a point-cloud autoencoder under the Chamfer loss.

    Checkpoints are recorded on train-loss improvement, so the checkpoint
    loss sequence is non-increasing. NaN loss aborts with a report.
    """
    if len(clouds) < 2:
        raise ValueError("need at least 2 point clouds")
    n_points = len(clouds[0])
    data = torch.as_tensor(np.stack(clouds), dtype=torch.float32)
    torch.manual_seed(seed)
    model = PointCloudAutoencoder(bottleneck=bottleneck, n_points=n_points)
    opt = torch.optim.Adam(model.parameters(), lr=lr, betas=(0.9, 0.999))
    best_loss, best_state = float("inf"), None
    checkpoint_losses: list[float] = []
    epoch_losses: list[float] = []
    for epoch in range(epochs):
        model.train()
        perm = torch.randperm(len(data))
        total, count = 0.0, 0
        for start in range(0, len(data), batch_size):
            batch = data[perm[start:start + batch_size]]
            loss = _chamfer_torch(model(batch), batch).mean()
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"point-cloud autoencoder diverged at epoch {epoch} "
                    f"(loss={loss.item()}); last good loss {best_loss:.4g}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
            count += len(batch)
        epoch_loss = total / count
        epoch_losses.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            checkpoint_losses.append(epoch_loss)
    model.load_state_dict(best_state)
    model.eval()
    return FittedPCAutoencoder(model=model, log={
        "epoch_losses": epoch_losses,
        "checkpoint_losses": checkpoint_losses,
        "best_loss": best_loss,
    })


class SmallImageBackbone(nn.Module):
    """Compact stand-in for a large pretrained classifier: conv trunk plus
    two FC layers; the penultimate FC plays the feature-extraction role."""

    def __init__(self, n_classes: int = 8, feature_dim: int = 64,
                 in_channels: int = 3):
        super().__init__()
        self.trunk = nn.Sequential(
            nn.Conv2d(in_channels, 16, 3, padding=1), nn.ReLU(),
            nn.AdaptiveAvgPool2d(4),
        )
        self.penultimate = nn.Sequential(nn.Flatten(),
                                         nn.Linear(16 * 16, feature_dim), nn.ReLU())
        self.classifier = nn.Linear(feature_dim, n_classes)
        self.feature_dim = feature_dim

    def features(self, images: torch.Tensor) -> torch.Tensor:
        return self.penultimate(self.trunk(images))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.features(images))

    def head_parameters(self):
        return self.classifier.parameters()


def load_vgg16_backbone(weights_path: str | Path | None):
    """VGG-16 with an 8-way head; penultimate (fc7) activations are the
    4096-d object code. Weights are supplied locally, never downloaded."""
    if weights_path is None or not Path(weights_path).exists():
        raise FileNotFoundError(
            "VGG-16 backbone weights not found. Download the torchvision "
            "vgg16 ImageNet state dict on a machine with network access "
            "(torchvision.models.vgg16(weights='IMAGENET1K_V1')), save it "
            "with torch.save(model.state_dict(), path), and point the "
            "'encoders.vgg16_weights' config key at that file.")
    from torchvision.models import vgg16  # local import: heavy, optional

    model = vgg16()
    model.load_state_dict(torch.load(weights_path, map_location="cpu"))
    model.classifier[6] = nn.Linear(4096, 8)

    class _VGGWrapper(nn.Module):
        def __init__(self, vgg):
            super().__init__()
            self.vgg = vgg
            self.feature_dim = 4096

        def features(self, images):
            x = self.vgg.features(images)
            x = self.vgg.avgpool(x)
            x = torch.flatten(x, 1)
            return self.vgg.classifier[:6](x)  # fc7 activations

        def forward(self, images):
            return self.vgg(images)

        def head_parameters(self):
            return self.vgg.classifier[6].parameters()

    return _VGGWrapper(model)


@dataclass
class ImageFeatureExtractor:
    backbone: nn.Module
    log: dict

    def features(self, images: np.ndarray) -> np.ndarray:
        self.backbone.eval()
        with torch.no_grad():
            x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
            return self.backbone.features(x).numpy().astype(np.float64)


def fit_image_encoder(images: np.ndarray, labels: np.ndarray,
                      backbone: nn.Module | None = None,
                      weights_path: str | Path | None = None,
                      epochs_head: int = 15, epochs_all: int = 15,
                      lr: float = 1e-3, batch_size: int = 32,
                      seed: int = 0) -> ImageFeatureExtractor:
    """Two-phase fine-tuning of a classifier backbone on the 8-way rendering
    task: first the last layer only, then all layers. The fitted extractor
    returns penultimate activations."""
    torch.manual_seed(seed)
    if backbone is None:
        backbone = load_vgg16_backbone(weights_path)
    x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    y = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    loss_fn = nn.CrossEntropyLoss()
    history: list[float] = []
    for phase, (params, epochs) in enumerate(
            ((backbone.head_parameters(), epochs_head),
             (backbone.parameters(), epochs_all))):
        opt = torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999))
        for _ in range(epochs):
            backbone.train()
            perm = torch.randperm(len(x))
            total = 0.0
            for start in range(0, len(x), batch_size):
                idx = perm[start:start + batch_size]
                loss = loss_fn(backbone(x[idx]), y[idx])
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            history.append(total / len(x))
    backbone.eval()
    with torch.no_grad():
        acc = float((backbone(x).argmax(dim=1) == y).double().mean())
    return ImageFeatureExtractor(backbone=backbone,
                                 log={"losses": history, "train_accuracy": acc})


def subtract_mean_rgb(pixels: np.ndarray, mean_rgb=(0.485, 0.456, 0.406)) -> np.ndarray:
    """Mean-RGB subtraction applied to real photos before encoding."""
    mean = np.asarray(mean_rgb, dtype=np.float64).reshape(-1, 1, 1)
    return np.asarray(pixels, dtype=np.float64) - mean


class WordEmbeddingTable:
    """|vocab| x d matrix; rows for tokens missing from a pretrained table
    are initialized uniformly in [-0.1, 0.1]."""

    def __init__(self, matrix: np.ndarray, trainable: bool = True):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.trainable = trainable

    @classmethod
    def random(cls, vocab_size: int, dim: int = WORD_DIM, seed: int = 0) -> "WordEmbeddingTable":
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-0.1, 0.1, size=(vocab_size, dim)))

    @classmethod
    def from_pretrained(cls, vocab, vectors: dict[str, np.ndarray],
                        dim: int = WORD_DIM, seed: int = 0) -> "WordEmbeddingTable":
        rng = np.random.default_rng(seed)
        matrix = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
        hits = 0
        for token, idx in vocab.token_to_id.items():
            vec = vectors.get(token)
            if vec is not None:
                matrix[idx] = vec
                hits += 1
        logger.info("word embeddings: %d/%d tokens pretrained", hits, len(vocab))
        return cls(matrix)

    @classmethod
    def load_glove(cls, path: str | Path, vocab, dim: int = WORD_DIM,
                   seed: int = 0) -> "WordEmbeddingTable":
        vectors: dict[str, np.ndarray] = {}
        wanted = set(vocab.token_to_id)
        with Path(path).open() as fh:
            for line in fh:
                token, _, rest = line.partition(" ")
                if token in wanted:
                    vectors[token] = np.fromstring(rest, sep=" ")
        return cls.from_pretrained(vocab, vectors, dim=dim, seed=seed)


class PassthroughProvider:
    """Feature provider for synthetic worlds: stored vectors in, identical
    vectors out. Lets every downstream module run without pretrained
    backbones."""

    def __init__(self, features: dict[str, np.ndarray],
                 modality: str = "image"):
        self.features = {k: np.asarray(v, dtype=np.float64) for k, v in features.items()}
        self.modality = modality

    def encode(self, object_id: str) -> ObjectRepresentation:
        if object_id not in self.features:
            raise KeyError(f"no features for object {object_id}")
        vec = self.features[object_id].copy()
        if self.modality == "image":
            return ObjectRepresentation(object_id=object_id, image_code=vec)
        return ObjectRepresentation(object_id=object_id, pc_code=vec)

    def encode_all(self) -> dict[str, ObjectRepresentation]:
        return {oid: self.encode(oid) for oid in self.features}


class CodeCache:
    """Keyed store object_id -> (image_code, pc_code), persisted as one npz."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._data: dict[str, dict[str, np.ndarray]] = {}
        if self.path.exists():
            with np.load(self.path, allow_pickle=False) as archive:
                for key in archive.files:
                    oid, _, kind = key.rpartition("::")
                    self._data.setdefault(oid, {})[kind] = archive[key]

    def put(self, object_id: str, image_code=None, pc_code=None) -> None:
        entry = self._data.setdefault(object_id, {})
        if image_code is not None:
            entry["image"] = np.asarray(image_code, dtype=np.float64)
        if pc_code is not None:
            entry["pc"] = np.asarray(pc_code, dtype=np.float64)

    def get(self, object_id: str) -> ObjectRepresentation | None:
        entry = self._data.get(object_id)
        if not entry:
            return None
        return ObjectRepresentation(object_id=object_id,
                                    image_code=entry.get("image"),
                                    pc_code=entry.get("pc"))

    def save(self) -> None:
        flat = {f"{oid}::{kind}": arr
                for oid, entry in self._data.items() for kind, arr in entry.items()}
        np.savez(self.path, **flat)

    def __contains__(self, object_id: str) -> bool:
        return object_id in self._data


def write_point_cloud(cloud: np.ndarray, path: str | Path) -> None:
    np.savetxt(path, np.asarray(cloud))


def read_point_cloud(path: str | Path) -> np.ndarray:
    cloud = np.loadtxt(path)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise ValueError(f"{path}: expected an (n, 3) point cloud")
    return cloud
