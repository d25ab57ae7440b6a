"""Agents the game service can seat on the model side of a round: trained
neural speakers/listeners or rule-based scripted agents for synthetic
worlds and tests."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from ..encoders import ObjectRepresentation
from ..listener import TrainedListener
from ..speaker import TrainedSpeaker, pragmatic_top1


class SpeakerAgent(Protocol):
    def utter(self, object_ids: tuple[str, str, str], target_index: int,
              seed: int = 0) -> str: ...


class ListenerAgent(Protocol):
    def choose(self, object_ids: tuple[str, str, str], utterance: str) -> int: ...


@dataclass
class NeuralSpeakerAgent:
    """Pragmatic generation: sample candidates, re-rank with the internal
    listener, emit the top-1 utterance."""

    speaker: TrainedSpeaker
    internal_listener: TrainedListener
    representations: dict[str, ObjectRepresentation]
    alpha: float = 0.6
    beta: float = 1.0
    n_samples: int = 50

    def utter(self, object_ids, target_index: int, seed: int = 0) -> str:
        objects = [self.representations[oid] for oid in object_ids]
        top, _ = pragmatic_top1(self.speaker, objects, target_index,
                                self.internal_listener, alpha=self.alpha,
                                beta=self.beta, n=self.n_samples, seed=seed)
        return " ".join(top.tokens)


@dataclass
class NeuralListenerAgent:
    listener: TrainedListener
    representations: dict[str, ObjectRepresentation]

    def choose(self, object_ids, utterance: str) -> int:
        objects = [self.representations[oid] for oid in object_ids]
        tokens = [t for t in utterance.lower().split() if t]
        ids = self.listener.vocab.encode(tokens)
        scores = self.listener.score_context(objects, ids).scores
        return int(np.argmax(scores))


@dataclass
class ScriptedSpeakerAgent:
    """Deterministic rule-based speaker over a synthetic attribute world."""

    world: object  # SyntheticWorld

    def utter(self, object_ids, target_index: int, seed: int = 0) -> str:
        from ..synthetic import oracle_speaker_text

        return oracle_speaker_text(self.world, object_ids, target_index)


@dataclass
class ScriptedListenerAgent:
    world: object  # SyntheticWorld

    def choose(self, object_ids, utterance: str) -> int:
        from ..synthetic import oracle_listener_choice

        return oracle_listener_choice(self.world, object_ids, utterance)
