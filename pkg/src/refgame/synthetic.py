"""Procedurally generated desk-scale world: objects are attribute feature
vectors (one-hot slot blocks) and referring utterances are templated from
slot/value words. Lets the whole pipeline train and evaluate in minutes
without rendered assets or pretrained backbones.

Hard trials come from object families that differ in exactly one slot;
easy trials are random triplets with a fully distinguishing slot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import RawTrial
from .encoders import ObjectRepresentation, PassthroughProvider

SLOT_VALUE_WORDS: dict[str, tuple[str, ...]] = {
    "back": ("solid", "slatted", "holey", "tall", "short", "round"),
    "legs": ("thin", "thick", "metal", "wooden", "splayed", "straight"),
    "seat": ("padded", "flat", "wide", "narrow", "deep", "sloped"),
    "arms": ("armless", "boxy", "looped", "flared", "stubby", "open"),
}

FILLER_WORDS = ("the", "is", "one")


@dataclass
class SyntheticWorld:
    slot_names: tuple[str, ...]
    value_words: tuple[tuple[str, ...], ...]  # per slot
    attributes: dict[str, tuple[int, ...]]  # object id -> value index per slot
    seed: int

    @property
    def n_slots(self) -> int:
        return len(self.slot_names)

    @property
    def n_values(self) -> int:
        return len(self.value_words[0])

    @property
    def feature_dim(self) -> int:
        return self.n_slots * self.n_values

    def features(self, object_id: str) -> np.ndarray:
        vec = np.zeros(self.feature_dim)
        for slot, value in enumerate(self.attributes[object_id]):
            vec[slot * self.n_values + value] = 1.0
        return vec

    def object_label(self, object_id: str) -> str:
        return ", ".join(
            f"{self.value_words[s][v]} {self.slot_names[s]}"
            for s, v in enumerate(self.attributes[object_id]))

    def word_slot(self, token: str) -> int | None:
        """Slot index a token refers to (slot name or value word), else None."""
        for s, name in enumerate(self.slot_names):
            if token == name or token in self.value_words[s]:
                return s
        return None

    def mentioned_slots(self, tokens) -> set[int]:
        return {s for t in tokens if (s := self.word_slot(t)) is not None}


def generate_world(n_families: int = 40, n_loose: int = 40, n_slots: int = 4,
                   n_values: int = 6, seed: int = 0) -> SyntheticWorld:
    """Families are triples sharing every slot except one, in which all
    three members take distinct values (so any member is distinguishable by
    that slot alone)."""
    if n_slots > len(SLOT_VALUE_WORDS):
        raise ValueError(f"at most {len(SLOT_VALUE_WORDS)} slots supported")
    names = tuple(SLOT_VALUE_WORDS)[:n_slots]
    values = tuple(SLOT_VALUE_WORDS[n][:n_values] for n in names)
    rng = np.random.default_rng(seed)
    attributes: dict[str, tuple[int, ...]] = {}
    counter = 0
    for _ in range(n_families):
        base = rng.integers(0, n_values, size=n_slots)
        slot = int(rng.integers(0, n_slots))
        triple_values = rng.choice(n_values, size=3, replace=False)
        for v in triple_values:
            attrs = base.copy()
            attrs[slot] = v
            attributes[f"obj{counter:05d}"] = tuple(int(x) for x in attrs)
            counter += 1
    for _ in range(n_loose):
        attrs = rng.integers(0, n_values, size=n_slots)
        attributes[f"obj{counter:05d}"] = tuple(int(x) for x in attrs)
        counter += 1
    return SyntheticWorld(slot_names=names, value_words=values,
                          attributes=attributes, seed=seed)


def family_members(world: SyntheticWorld) -> list[tuple[str, str, str]]:
    ids = sorted(world.attributes)
    families = []
    for i in range(0, len(ids), 3):
        trio = ids[i:i + 3]
        if len(trio) == 3 and _is_family(world, trio):
            families.append(tuple(trio))
    return families


def _is_family(world, trio) -> bool:
    a, b, c = (world.attributes[o] for o in trio)
    differing = [s for s in range(world.n_slots)
                 if len({a[s], b[s], c[s]}) == 3]
    shared = [s for s in range(world.n_slots) if a[s] == b[s] == c[s]]
    return len(differing) == 1 and len(shared) == world.n_slots - 1


def distinguishing_slots(world: SyntheticWorld, object_ids,
                         target_index: int) -> list[int]:
    """Slots where the target's value differs from both distractors."""
    attrs = [world.attributes[o] for o in object_ids]
    target = attrs[target_index]
    others = [a for i, a in enumerate(attrs) if i != target_index]
    return [s for s in range(world.n_slots)
            if all(target[s] != o[s] for o in others)]


def _utterance_tokens(world, object_ids, target_index, rng,
                      ambiguous_prob: float, filler_prob: float) -> list[str]:
    attrs = [world.attributes[o] for o in object_ids]
    target = attrs[target_index]
    others = [a for i, a in enumerate(attrs) if i != target_index]
    full = distinguishing_slots(world, object_ids, target_index)
    partial = [s for s in range(world.n_slots)
               if any(target[s] != o[s] for o in others)]
    pool = partial if (partial and rng.random() < ambiguous_prob) else full
    slot = int(pool[rng.integers(0, len(pool))])
    # the discriminating value word comes last ("the back is solid"):
    # recurrent attention concentrates on late positions, and the synthetic
    # language keeps informative words where attention can find them
    tokens = ["the", world.slot_names[slot],
              world.value_words[slot][target[slot]]]
    if rng.random() < filler_prob:
        tokens.insert(2, "is")
    return tokens


def generate_trials(world: SyntheticWorld, n_trials: int, seed: int = 0,
                    hard_fraction: float = 0.5, ambiguous_prob: float = 0.3,
                    filler_prob: float = 0.5) -> list[RawTrial]:
    """Templated referential trials; hard trials draw their triplet from a
    one-slot family, easy trials from random objects with a distinguishing
    slot."""
    rng = np.random.default_rng(seed)
    families = family_members(world)
    all_ids = sorted(world.attributes)
    trials: list[RawTrial] = []
    while len(trials) < n_trials:
        i = len(trials)
        hard = bool(families) and rng.random() < hard_fraction
        if hard:
            trio = list(families[rng.integers(0, len(families))])
        else:
            for _ in range(100):
                trio = [all_ids[j] for j in rng.choice(len(all_ids), size=3,
                                                       replace=False)]
                if distinguishing_slots(world, trio, 0):
                    break
            else:
                raise RuntimeError("could not sample an easy triplet")
        target_index = int(rng.integers(0, 3))
        if not distinguishing_slots(world, trio, target_index):
            continue
        tokens = _utterance_tokens(world, trio, target_index, rng,
                                   ambiguous_prob, filler_prob)
        trials.append(RawTrial(
            game_id=f"g{i:05d}", context_id=f"c{i:05d}",
            object_ids=tuple(trio), target_index=target_index,
            speaker_text=" ".join(tokens), listener_text=None,
            human_listener_correct=True,
            difficulty="hard" if hard else "easy"))
    return trials


def build_representations(world: SyntheticWorld) -> dict[str, ObjectRepresentation]:
    provider = PassthroughProvider(
        {oid: world.features(oid) for oid in world.attributes})
    return provider.encode_all()


def lesion_slot(rep: ObjectRepresentation, world: SyntheticWorld,
                slot: int) -> ObjectRepresentation:
    """Zero one slot's feature block: the synthetic analogue of removing an
    object part from the visual input."""
    code = rep.code("image").copy()
    code[slot * world.n_values:(slot + 1) * world.n_values] = 0.0
    return ObjectRepresentation(object_id=rep.object_id, image_code=code)


def oracle_speaker_text(world: SyntheticWorld, object_ids,
                        target_index: int) -> str:
    """Rule-based distinguishing utterance (scripted agent for the game
    service and smoke tests)."""
    slots = distinguishing_slots(world, object_ids, target_index)
    if not slots:
        raise ValueError("no distinguishing slot for this triplet")
    slot = slots[0]
    value = world.attributes[object_ids[target_index]][slot]
    return f"the {world.value_words[slot][value]} {world.slot_names[slot]}"


def save_world(world: SyntheticWorld, path: str | Path) -> None:
    Path(path).write_text(json.dumps({
        "slot_names": list(world.slot_names),
        "value_words": [list(v) for v in world.value_words],
        "attributes": {k: list(v) for k, v in world.attributes.items()},
        "seed": world.seed,
    }, indent=2, sort_keys=True))


def load_world(path: str | Path) -> SyntheticWorld:
    data = json.loads(Path(path).read_text())
    return SyntheticWorld(
        slot_names=tuple(data["slot_names"]),
        value_words=tuple(tuple(v) for v in data["value_words"]),
        attributes={k: tuple(v) for k, v in data["attributes"].items()},
        seed=data["seed"])


def oracle_listener_choice(world: SyntheticWorld, object_ids,
                           utterance_text: str) -> int:
    """Rule-based pick: the object matching the most mentioned
    slot/value words; ties go to the lowest index."""
    tokens = utterance_text.lower().split()
    scores = [0] * len(object_ids)
    for token in tokens:
        for s in range(world.n_slots):
            if token in world.value_words[s]:
                v = world.value_words[s].index(token)
                for i, oid in enumerate(object_ids):
                    if world.attributes[oid][s] == v:
                        scores[i] += 1
    return int(np.argmax(scores))
