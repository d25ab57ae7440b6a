"""Transcript ingestion: tokenization, vocabularies, trial preprocessing and
train/val/test splits.

Everything here is a pure function over immutable inputs; no shared state.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD = "<PAD>"
SOS = "<SOS>"
EOS = "<EOS>"
UNK = "<UNK>"
DIA = "<DIA>"
SPECIALS = (PAD, SOS, EOS, UNK, DIA)

DEFAULT_MAX_LENGTH = 33
DEFAULT_MIN_COUNT = 2

#: Canonical seeds used when results are reported as a mean over seeds.
SPLIT_SEEDS = (0, 1, 2, 3, 4)

_WORD_OR_PUNCT = re.compile(r"\w+|[^\w\s]")
_SUFFIXES = ("est", "er")


@dataclass(frozen=True)
class RawTrial:
    """One reference-game trial as collected: a triplet, a target and the
    produced language."""

    game_id: str
    context_id: str
    object_ids: tuple[str, str, str]
    target_index: int
    speaker_text: str
    listener_text: str | None
    human_listener_correct: bool
    difficulty: str  # "hard" | "easy"

    def __post_init__(self):
        if len(set(self.object_ids)) != 3:
            raise ValueError(f"trial {self.game_id}/{self.context_id}: "
                             "object_ids must be 3 distinct ids")
        if not 0 <= self.target_index <= 2:
            raise ValueError(f"target_index {self.target_index} out of range")
        if self.difficulty not in ("hard", "easy"):
            raise ValueError(f"unknown difficulty {self.difficulty!r}")

    @property
    def target_id(self) -> str:
        return self.object_ids[self.target_index]


@dataclass(frozen=True)
class Utterance:
    tokens: tuple[str, ...]
    token_ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.token_ids):
            raise ValueError("tokens and token_ids length mismatch")

    @property
    def length(self) -> int:
        return len(self.tokens)


def _split_suffix(token: str, stems: set[str] | None) -> list[str]:
    for suffix in _SUFFIXES:
        if not token.endswith(suffix) or len(token) <= len(suffix) + 1:
            continue
        stem = token[: -len(suffix)]
        undoubled = stem[:-1] if len(stem) >= 2 and stem[-1] == stem[-2] else None
        if stems is not None:
            for cand in (stem, undoubled, stem + "e"):
                if cand is not None and cand in stems:
                    return [cand, suffix]
            return [token]
        # Corpus-free fallback: conservative, covers regular doublings only.
        if undoubled is not None and len(undoubled) >= 4:
            return [undoubled, suffix]
        if len(stem) >= 4:
            return [stem, suffix]
        return [token]
    return [token]


def tokenize(text: str, stems: set[str] | None = None) -> list[str]:
    """Lowercase, split off punctuation, and split -er/-est comparatives and
    superlatives into stem + suffix token.

    When ``stems`` (the set of plain corpus words, see :func:`collect_stems`)
    is given, a suffix is only split off if the recovered stem occurs in the
    corpus; otherwise the token is left whole.
    """
    out: list[str] = []
    for token in _WORD_OR_PUNCT.findall(text.lower()):
        out.extend(_split_suffix(token, stems))
    return out


def collect_stems(texts: list[str]) -> set[str]:
    """Plain word forms seen anywhere in a corpus, used to validate stems."""
    stems: set[str] = set()
    for text in texts:
        stems.update(t for t in _WORD_OR_PUNCT.findall(text.lower()) if t.isalpha())
    return stems


@dataclass
class Vocabulary:
    """Dense token <-> id mapping with specials pinned to the lowest ids."""

    id_to_token: list[str]
    token_to_id: dict[str, int]
    frequency: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_counts(cls, counts: dict[str, int], min_count: int = DEFAULT_MIN_COUNT) -> "Vocabulary":
        kept = sorted(t for t, c in counts.items()
                      if c >= min_count and t not in SPECIALS)
        id_to_token = list(SPECIALS) + kept
        return cls(
            id_to_token=id_to_token,
            token_to_id={t: i for i, t in enumerate(id_to_token)},
            frequency={t: counts.get(t, 0) for t in id_to_token},
        )

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def sos_id(self) -> int:
        return self.token_to_id[SOS]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    @property
    def dia_id(self) -> int:
        return self.token_to_id[DIA]

    def encode(self, tokens) -> list[int]:
        unk = self.unk_id
        return [self.token_to_id.get(t, unk) for t in tokens]

    def decode(self, token_ids) -> list[str]:
        return [self.id_to_token[i] for i in token_ids]

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def content_hash(self) -> str:
        import hashlib
        return hashlib.sha256("\n".join(self.id_to_token).encode()).hexdigest()

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.write_text("\n".join(self.id_to_token) + "\n")
        counts = path.with_suffix(path.suffix + ".counts")
        counts.write_text(
            "\n".join(f"{t}\t{self.frequency.get(t, 0)}" for t in self.id_to_token) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        path = Path(path)
        id_to_token = path.read_text().splitlines()
        frequency: dict[str, int] = {}
        counts = path.with_suffix(path.suffix + ".counts")
        if counts.exists():
            for line in counts.read_text().splitlines():
                token, _, count = line.rpartition("\t")
                frequency[token] = int(count)
        return cls(id_to_token=id_to_token,
                   token_to_id={t: i for i, t in enumerate(id_to_token)},
                   frequency=frequency)


def build_vocabulary(train_utterances: list[list[str]],
                     min_count: int = DEFAULT_MIN_COUNT) -> Vocabulary:
    """Vocabulary over tokenized training utterances; tokens below
    ``min_count`` are excluded (they map to <UNK> downstream)."""
    counts: dict[str, int] = {}
    for tokens in train_utterances:
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
    return Vocabulary.from_counts(counts, min_count=min_count)


def trial_tokens(raw: RawTrial, stems: set[str] | None = None) -> list[str]:
    """Speaker tokens, then <DIA> and listener tokens when dialogue exists."""
    tokens = tokenize(raw.speaker_text, stems)
    if raw.listener_text:
        tokens = tokens + [DIA] + tokenize(raw.listener_text, stems)
    return tokens


def preprocess_trial(raw: RawTrial, vocab: Vocabulary,
                     max_length: int = DEFAULT_MAX_LENGTH,
                     stems: set[str] | None = None) -> Utterance | None:
    """None when the human listener failed or the concatenated utterance is
    too long; otherwise the <UNK>-mapped utterance."""
    if not raw.human_listener_correct:
        return None
    tokens = trial_tokens(raw, stems)
    if len(tokens) > max_length:
        return None
    kept = tuple(t if t in vocab else UNK for t in tokens)
    return Utterance(tokens=kept, token_ids=tuple(vocab.encode(kept)))


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint, exhaustive partition of trial positions."""

    mode: str  # "language_generalization" | "object_generalization"
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    fractions: tuple[float, float, float]
    seed: int


def _partition_sizes(n: int, fractions) -> tuple[int, int, int]:
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_test = n - n_train - n_val
    return n_train, n_val, n_test


def make_split(trials: list[RawTrial], mode: str,
               fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
               seed: int = 0) -> DatasetSplit:
    """Seeded train/val/test split.

    In object_generalization mode the target object ids are partitioned
    first and trials follow their target's partition, so test targets are
    disjoint from train targets.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    rng = np.random.default_rng(seed)
    if mode == "language_generalization":
        order = rng.permutation(len(trials))
        n_train, n_val, n_test = _partition_sizes(len(trials), fractions)
        if min(n_train, n_val, n_test) < 1:
            raise ValueError("a split partition would be empty")
        parts = (order[:n_train], order[n_train:n_train + n_val],
                 order[n_train + n_val:])
    elif mode == "object_generalization":
        targets = sorted({t.target_id for t in trials})
        order = rng.permutation(len(targets))
        n_train, n_val, n_test = _partition_sizes(len(targets), fractions)
        if min(n_train, n_val, n_test) < 1:
            raise ValueError("a split partition would be empty")
        bucket: dict[str, int] = {}
        for rank, idx in enumerate(order):
            bucket[targets[idx]] = 0 if rank < n_train else (
                1 if rank < n_train + n_val else 2)
        parts = ([], [], [])
        for i, trial in enumerate(trials):
            parts[bucket[trial.target_id]].append(i)
        if any(len(p) == 0 for p in parts):
            raise ValueError("a split partition would be empty")
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    return DatasetSplit(mode=mode,
                        train=tuple(int(i) for i in parts[0]),
                        val=tuple(int(i) for i in parts[1]),
                        test=tuple(int(i) for i in parts[2]),
                        fractions=tuple(fractions), seed=seed)


# --- trial file format: one record per line, tab-separated key=value pairs ---

_TRIAL_FIELDS = ("game_id", "context_id", "object_ids", "target_index",
                 "speaker_text", "listener_text", "correct", "difficulty")


def _escape(value: str) -> str:
    return value.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(value: str) -> str:
    out, i = [], 0
    while i < len(value):
        c = value[i]
        if c == "\\" and i + 1 < len(value):
            nxt = value[i + 1]
            out.append({"t": "\t", "n": "\n", "\\": "\\"}.get(nxt, nxt))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def trial_to_line(trial: RawTrial) -> str:
    values = {
        "game_id": trial.game_id,
        "context_id": trial.context_id,
        "object_ids": ",".join(trial.object_ids),
        "target_index": str(trial.target_index),
        "speaker_text": trial.speaker_text,
        "listener_text": trial.listener_text or "",
        "correct": "1" if trial.human_listener_correct else "0",
        "difficulty": trial.difficulty,
    }
    return "\t".join(f"{k}={_escape(values[k])}" for k in _TRIAL_FIELDS)


def trial_from_line(line: str) -> RawTrial:
    fields: dict[str, str] = {}
    for part in line.rstrip("\n").split("\t"):
        key, _, value = part.partition("=")
        fields[key] = _unescape(value)
    object_ids = tuple(fields["object_ids"].split(","))
    return RawTrial(
        game_id=fields["game_id"],
        context_id=fields["context_id"],
        object_ids=object_ids,  # type: ignore[arg-type]
        target_index=int(fields["target_index"]),
        speaker_text=fields["speaker_text"],
        listener_text=fields["listener_text"] or None,
        human_listener_correct=fields["correct"] == "1",
        difficulty=fields["difficulty"],
    )


def write_trials(trials: list[RawTrial], path: str | Path) -> None:
    Path(path).write_text("".join(trial_to_line(t) + "\n" for t in trials))


def read_trials(path: str | Path) -> list[RawTrial]:
    return [trial_from_line(line)
            for line in Path(path).read_text().splitlines() if line.strip()]
