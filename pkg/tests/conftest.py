import numpy as np
import pytest
import torch

from refgame.corpus import Vocabulary
from refgame.encoders import ObjectRepresentation


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture()
def tiny_vocab():
    return Vocabulary.from_counts(
        {"the": 9, "thin": 7, "tall": 6, "chair": 5, "one": 4}, min_count=1)


def random_objects(rng, k=3, image_dim=6, pc_dim=None):
    objs = []
    for i in range(k):
        objs.append(ObjectRepresentation(
            object_id=f"o{i}",
            image_code=rng.normal(size=image_dim),
            pc_code=None if pc_dim is None else rng.normal(size=pc_dim)))
    return objs


@pytest.fixture(autouse=True)
def _torch_determinism():
    torch.manual_seed(0)
