"""Versioned checkpoints for listeners and speakers: config, vocabulary (and
its hash), parameter tensors, and the training log. Loadable without the
original corpus."""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import torch

from .corpus import Vocabulary
from .listener import ListenerConfig, ListenerNet, TrainedListener
from .speaker import SpeakerConfig, SpeakerNet, TrainedSpeaker

FORMAT_VERSION = 1


def _vocab_payload(vocab: Vocabulary) -> dict:
    return {
        "id_to_token": list(vocab.id_to_token),
        "frequency": dict(vocab.frequency),
        "hash": vocab.content_hash(),
    }


def _vocab_from_payload(payload: dict) -> Vocabulary:
    vocab = Vocabulary(
        id_to_token=payload["id_to_token"],
        token_to_id={t: i for i, t in enumerate(payload["id_to_token"])},
        frequency=payload.get("frequency", {}),
    )
    if payload.get("hash") and vocab.content_hash() != payload["hash"]:
        raise ValueError("checkpoint vocabulary hash mismatch")
    return vocab


def save_listener(listener: TrainedListener, path: str | Path) -> None:
    torch.save({
        "version": FORMAT_VERSION,
        "kind": "listener",
        "config": asdict(listener.config),
        "vocab": _vocab_payload(listener.vocab),
        "state": listener.net.state_dict(),
        "log": listener.log,
    }, path)


def save_speaker(speaker: TrainedSpeaker, path: str | Path) -> None:
    torch.save({
        "version": FORMAT_VERSION,
        "kind": "speaker",
        "config": asdict(speaker.config),
        "vocab": _vocab_payload(speaker.vocab),
        "state": speaker.net.state_dict(),
        "log": speaker.log,
    }, path)


def _load(path: str | Path, expected_kind: str) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    if payload.get("kind") != expected_kind:
        raise ValueError(f"expected a {expected_kind} checkpoint, "
                         f"got {payload.get('kind')}")
    return payload


def load_listener(path: str | Path) -> TrainedListener:
    payload = _load(path, "listener")
    config = ListenerConfig(**{k: tuple(v) if k == "mlp_hidden" else v
                               for k, v in payload["config"].items()})
    vocab = _vocab_from_payload(payload["vocab"])
    net = ListenerNet(config, len(vocab)).double()
    net.load_state_dict(payload["state"])
    return TrainedListener(net, config, vocab, payload.get("log"))


def load_speaker(path: str | Path) -> TrainedSpeaker:
    payload = _load(path, "speaker")
    config = SpeakerConfig(**payload["config"])
    vocab = _vocab_from_payload(payload["vocab"])
    net = SpeakerNet(config, len(vocab)).double()
    net.load_state_dict(payload["state"])
    return TrainedSpeaker(net, config, vocab, payload.get("log"))
