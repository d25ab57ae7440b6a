"""Analysis battery for trained agents: subpopulation-tagged accuracies,
word- and part-lesion studies, distinctive-word (PMI) tables, length-penalty
and rationality sweeps, out-of-domain transfer scoring, and the fair
pragmatic-vs-literal study protocol with disjoint training halves.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Vocabulary
from .encoders import ObjectRepresentation
from .listener import ListenerExample, TrainedListener
from .speaker import (SpeakerSample, TrainedSpeaker, pragmatic_score,
                      pragmatic_top1, rerank, score_candidates)

PART_LEXICON = frozenset({"back", "legs", "leg", "seat", "arms", "arm",
                          "armrests", "armrest", "base", "wheels"})
NEGATIVE_LEXICON = frozenset({"not", "no", "but", "without", "lacks", "none"})
SUPERLATIVE_LEXICON = frozenset({"more", "most", "less", "least"})
_SUFFIX_TOKENS = frozenset({"er", "est"})
SPLIT_PATTERNS = ("of the two", "from the two", "between the")

TAGS = ("hard", "easy", "sup_comp", "negative", "split_language",
        "known_vocab", "with_part", "without_part")

WORD_LESION_ORDERS = ("high_to_low", "low_to_high", "random")


def tag_subpopulations(tokens, vocab: Vocabulary, difficulty: str | None = None,
                       part_lexicon=PART_LEXICON,
                       negative_lexicon=NEGATIVE_LEXICON,
                       split_patterns=SPLIT_PATTERNS) -> set[str]:
    """Analysis tags for one utterance: difficulty, comparative/superlative
    language, negative language, explicit two-way contrast phrasing, and the
    known-vocabulary / part-word partition."""
    tokens = list(tokens)
    tags: set[str] = set()
    if difficulty in ("hard", "easy"):
        tags.add(difficulty)
    if any(t in _SUFFIX_TOKENS or t in SUPERLATIVE_LEXICON for t in tokens):
        tags.add("sup_comp")
    if any(t in negative_lexicon for t in tokens):
        tags.add("negative")
    text = " ".join(tokens)
    if any(p in text for p in split_patterns):
        tags.add("split_language")
    if all(t in vocab for t in tokens):
        tags.add("known_vocab")
        tags.add("with_part" if any(t in part_lexicon for t in tokens)
                 else "without_part")
    return tags


def drop_unknown_tokens(tokens, vocab: Vocabulary) -> list[str]:
    """Out-of-domain transfer preprocessing: unknown words are treated as
    whitespace rather than mapped to the unknown token."""
    return [t for t in tokens if t in vocab]


# -- reports ------------------------------------------------------------------


@dataclass
class EvalReport:
    """Overall and per-tag accuracies. Empty buckets keep count 0 and an
    undefined (None) accuracy rather than a fake zero."""

    overall_accuracy: float | None
    overall_count: int
    per_tag: dict[str, tuple[float | None, int]]
    metadata: dict = field(default_factory=dict)

    def accuracy(self, tag: str) -> float | None:
        return self.per_tag.get(tag, (None, 0))[0]

    def count(self, tag: str) -> int:
        return self.per_tag.get(tag, (None, 0))[1]


def _report_from_outcomes(outcomes: list[tuple[bool, set[str]]],
                          metadata: dict | None = None) -> EvalReport:
    per_tag: dict[str, tuple[float | None, int]] = {}
    for tag in TAGS:
        bucket = [ok for ok, tags in outcomes if tag in tags]
        per_tag[tag] = ((sum(bucket) / len(bucket)) if bucket else None,
                        len(bucket))
    overall = (sum(ok for ok, _ in outcomes) / len(outcomes)
               if outcomes else None)
    return EvalReport(overall_accuracy=overall, overall_count=len(outcomes),
                      per_tag=per_tag, metadata=metadata or {})


def _example_objects(example: ListenerExample) -> list[ObjectRepresentation]:
    k = (len(example.image_codes) if example.image_codes is not None
         else len(example.pc_codes))
    return [ObjectRepresentation(
        object_id=f"ctx{i}",
        image_code=None if example.image_codes is None else example.image_codes[i],
        pc_code=None if example.pc_codes is None else example.pc_codes[i],
    ) for i in range(k)]


def evaluate_listener(listener: TrainedListener,
                      examples: list[ListenerExample],
                      metadata: dict | None = None) -> EvalReport:
    """Per-tag listener accuracy over tagged examples."""
    outcomes = []
    for start in range(0, len(examples), 256):
        chunk = examples[start:start + 256]
        logits = listener.batch_logits(chunk)
        for ex, row in zip(chunk, logits):
            ok = int(np.argmax(row)) == ex.target_index
            tags = tag_subpopulations(ex.tokens, listener.vocab, ex.difficulty)
            outcomes.append((bool(ok), tags))
    return _report_from_outcomes(outcomes, metadata)


def evaluate_speaker(speaker: TrainedSpeaker,
                     internal_listener: TrainedListener | None,
                     evaluating_listener: TrainedListener,
                     examples: list[ListenerExample],
                     alpha: float, beta: float = 1.0, n: int = 50,
                     seed: int = 0,
                     metadata: dict | None = None) -> EvalReport:
    """Top-1 re-ranked utterance per context, judged by the held-out
    evaluating listener. With no internal listener (or beta 0) the ranking
    degenerates to length-penalized speaker likelihood (literal behavior)."""
    outcomes = []
    for i, ex in enumerate(examples):
        objects = _example_objects(ex)
        if internal_listener is not None and beta > 0.0:
            top, _ = pragmatic_top1(speaker, objects, ex.target_index,
                                    internal_listener, alpha=alpha, beta=beta,
                                    n=n, seed=seed + i)
        else:
            samples = speaker.candidate_set(objects, ex.target_index,
                                            n=n, seed=seed + i)
            for s in samples:
                s.listener_log_prob = 0.0
                s.pragmatic_score = (
                    float("-inf") if s.penalty_length == 0 else
                    pragmatic_score(0.0, s.speaker_log_prob,
                                    s.penalty_length, alpha, beta=0.0))
            top = rerank(samples)[0]
        if top.penalty_length == 0:
            ok = False
            tags = tag_subpopulations((), evaluating_listener.vocab,
                                      ex.difficulty)
        else:
            scores = evaluating_listener.score_context(
                objects, list(top.tokens)).scores
            ok = int(np.argmax(scores)) == ex.target_index
            tags = tag_subpopulations(top.tokens, evaluating_listener.vocab,
                                      ex.difficulty)
        outcomes.append((bool(ok), tags))
    return _report_from_outcomes(outcomes, metadata)


def aggregate_reports(reports: list[EvalReport]) -> dict[str, tuple[float, float]]:
    """Mean and standard error of accuracy across seeds, overall and per
    tag. Tags undefined in every report are omitted."""
    out: dict[str, tuple[float, float]] = {}
    keys = ["overall"] + list(TAGS)
    for key in keys:
        values = []
        for r in reports:
            acc = r.overall_accuracy if key == "overall" else r.accuracy(key)
            if acc is not None:
                values.append(acc)
        if not values:
            continue
        mean = float(np.mean(values))
        sem = (float(np.std(values, ddof=1) / math.sqrt(len(values)))
               if len(values) > 1 else 0.0)
        out[key] = (mean, sem)
    return out


# -- lesions ------------------------------------------------------------------


def lesion_words(tokens, attention, order: str, fraction: float,
                 seed: int = 0, unk_token: str = "<UNK>") -> list[str]:
    """Replace ceil(fraction * |U|) tokens with the unknown token, picked by
    attention weight (descending or ascending; ties break toward earlier
    positions) or in seeded random order."""
    tokens = list(tokens)
    attention = list(attention)
    if len(attention) != len(tokens):
        raise ValueError("attention weights must match token count")
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    if order not in WORD_LESION_ORDERS:
        raise ValueError(f"unknown lesion order {order!r}")
    n = math.ceil(fraction * len(tokens))
    if order == "high_to_low":
        ranked = sorted(range(len(tokens)), key=lambda i: (-attention[i], i))
    elif order == "low_to_high":
        ranked = sorted(range(len(tokens)), key=lambda i: (attention[i], i))
    else:
        ranked = list(np.random.default_rng(seed).permutation(len(tokens)))
    out = list(tokens)
    for i in ranked[:n]:
        out[i] = unk_token
    return out


def word_lesion_accuracy(attention_listener: TrainedListener,
                         evaluating_listener: TrainedListener,
                         examples: list[ListenerExample], order: str,
                         fraction: float, seed: int = 0) -> float:
    """Accuracy of an attention-free listener on utterances lesioned by
    another listener's attention weights. The evaluating listener must be
    trained without attention so the probe cannot re-weight around the
    lesion."""
    if evaluating_listener.config.use_attention:
        raise ValueError("word lesioning must be scored by a listener "
                         "trained without attention")
    if not attention_listener.config.use_attention:
        raise ValueError("the attention source must use attention")
    correct = 0
    for i, ex in enumerate(examples):
        objects = _example_objects(ex)
        out = attention_listener.score_context(objects, list(ex.token_ids))
        att = np.asarray(out.attention, dtype=np.float64)
        if att.ndim == 2:  # per-object passes: average over the context
            att = att.mean(axis=0)
        lesioned = lesion_words(ex.tokens, att[:len(ex.tokens)], order,
                                fraction, seed=seed + i)
        ids = evaluating_listener.vocab.encode(lesioned)
        scores = evaluating_listener.score_context(objects, ids).scores
        correct += int(np.argmax(scores)) == ex.target_index
    return correct / len(examples)


def word_lesion_curve(attention_listener: TrainedListener,
                      evaluating_listener: TrainedListener,
                      examples: list[ListenerExample], order: str,
                      fractions=(0.0, 0.25, 0.5, 0.75, 1.0),
                      seed: int = 0) -> list[tuple[float, float]]:
    return [(f, word_lesion_accuracy(attention_listener, evaluating_listener,
                                     examples, order, f, seed=seed))
            for f in fractions]


def lesion_parts(obj: ObjectRepresentation, part_name: str,
                 mode: str, rng_seed: int = 0) -> ObjectRepresentation:
    """Ablate (or isolate) one annotated part of an object's raw assets:
    masked pixels go to background zero; dropped points are replaced by
    resampling the survivors so the cloud keeps its size. Feature codes must
    be recomputed by an encoder afterwards."""
    if mode not in ("remove_part", "keep_part"):
        raise ValueError(f"unknown part-lesion mode {mode!r}")
    if not obj.part_annotations:
        raise ValueError(f"object {obj.object_id} has no part annotations")
    if part_name not in obj.part_annotations:
        available = ", ".join(sorted(obj.part_annotations))
        raise ValueError(f"unknown part {part_name!r}; available: {available}")
    ann = obj.part_annotations[part_name]
    pixels = obj.image_pixels
    cloud = obj.point_cloud
    rng = np.random.default_rng(rng_seed)
    if pixels is not None and ann.pixel_mask is not None:
        mask = ann.pixel_mask if mode == "remove_part" else ~ann.pixel_mask
        pixels = pixels.copy()
        pixels[..., mask] = 0.0
    if cloud is not None and ann.point_indices is not None:
        member = np.zeros(len(cloud), dtype=bool)
        member[np.asarray(ann.point_indices, dtype=int)] = True
        keep = ~member if mode == "remove_part" else member
        survivors = cloud[keep]
        if len(survivors) == 0:
            raise ValueError(f"lesioning {part_name!r} ({mode}) leaves no points")
        refill = survivors[rng.integers(0, len(survivors),
                                        size=len(cloud) - len(survivors))]
        cloud = np.concatenate([survivors, refill])
    return ObjectRepresentation(
        object_id=obj.object_id, image_code=obj.image_code,
        pc_code=obj.pc_code, image_pixels=pixels, point_cloud=cloud,
        part_annotations=obj.part_annotations)


# -- distinctive words --------------------------------------------------------


def pmi_table(labeled_utterances, min_count: int = 30) -> list[tuple[str, float]]:
    """ln(P(word | hard) / P(word)) per word, descending (positive values
    are distinctive of hard contexts, negative of easy). Words with fewer
    than min_count total occurrences are excluded; words never seen in hard
    contexts score -inf."""
    total: dict[str, int] = {}
    hard: dict[str, int] = {}
    n_total = n_hard = 0
    for tokens, difficulty in labeled_utterances:
        for t in tokens:
            total[t] = total.get(t, 0) + 1
            n_total += 1
            if difficulty == "hard":
                hard[t] = hard.get(t, 0) + 1
                n_hard += 1
    rows = []
    for word, count in total.items():
        if count < min_count:
            continue
        p_word = count / n_total
        p_cond = hard.get(word, 0) / n_hard if n_hard else 0.0
        pmi = math.log(p_cond / p_word) if p_cond > 0 else float("-inf")
        rows.append((word, pmi))
    rows.sort(key=lambda r: (-r[1], r[0]))
    return rows


# -- pragmatic sweeps and fair studies ---------------------------------------


def sweep_alpha_beta(speaker: TrainedSpeaker,
                     internal_listener: TrainedListener,
                     evaluating_listener: TrainedListener,
                     examples: list[ListenerExample],
                     alphas, betas, n: int = 50, seed: int = 0):
    """Accuracy grid over the length-penalty / rationality plane. Candidates
    and their listener scores are shared across cells, so only the re-ranking
    differs per (alpha, beta)."""
    alphas = list(alphas)
    betas = list(betas)
    prepared = []
    for i, ex in enumerate(examples):
        objects = _example_objects(ex)
        samples = speaker.candidate_set(objects, ex.target_index, n=n,
                                        seed=seed + i)
        score_candidates(samples, objects, ex.target_index,
                         internal_listener, alpha=0.0, beta=1.0)
        verdicts = {}
        for s in samples:
            if s.tokens not in verdicts and s.penalty_length > 0:
                scores = evaluating_listener.score_context(
                    objects, list(s.tokens)).scores
                verdicts[s.tokens] = int(np.argmax(scores)) == ex.target_index
        prepared.append((ex.target_index, samples, verdicts))
    grid = np.zeros((len(alphas), len(betas)))
    for ai, alpha in enumerate(alphas):
        for bi, beta in enumerate(betas):
            correct = 0
            for _, samples, verdicts in prepared:
                for s in samples:
                    s.pragmatic_score = (
                        float("-inf") if s.penalty_length == 0 else
                        pragmatic_score(s.listener_log_prob,
                                        s.speaker_log_prob,
                                        s.penalty_length, alpha, beta))
                top = rerank(samples)[0]
                correct += bool(verdicts.get(top.tokens, False))
            grid[ai, bi] = correct / len(prepared) if prepared else float("nan")
    best = np.unravel_index(int(np.argmax(grid)), grid.shape)
    return grid, (alphas[best[0]], betas[best[1]])


def data_hash(indices) -> str:
    """Stable fingerprint of a training subset, recorded so fair studies can
    prove the internal and evaluating listeners saw disjoint data."""
    text = ",".join(str(i) for i in sorted(indices))
    return hashlib.sha256(text.encode()).hexdigest()


def disjoint_halves(indices, seed: int = 0) -> tuple[list[int], list[int], dict]:
    """Split training indices into two disjoint halves (for the internal vs
    evaluating listener) and return both plus their fingerprints."""
    indices = list(indices)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(indices))
    mid = len(indices) // 2
    half_a = sorted(indices[i] for i in order[:mid])
    half_b = sorted(indices[i] for i in order[mid:])
    assert not set(half_a) & set(half_b)
    return half_a, half_b, {"half_a_hash": data_hash(half_a),
                            "half_b_hash": data_hash(half_b)}


# -- report output ------------------------------------------------------------


def format_report(report: EvalReport) -> str:
    lines = ["bucket            accuracy  count",
             "-" * 36]
    acc = ("   n/a  " if report.overall_accuracy is None
           else f"{report.overall_accuracy:7.4f} ")
    lines.append(f"{'overall':<17}{acc} {report.overall_count:6d}")
    for tag in TAGS:
        a, c = report.per_tag.get(tag, (None, 0))
        acc = "   n/a  " if a is None else f"{a:7.4f} "
        lines.append(f"{tag:<17}{acc} {c:6d}")
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(format_report(report))


def write_report_records(reports: list[EvalReport], path: str | Path) -> None:
    """Machine-readable line-delimited form: one tag bucket per row."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["report", "bucket", "accuracy", "count"])
        for i, report in enumerate(reports):
            writer.writerow([i, "overall",
                             "" if report.overall_accuracy is None
                             else f"{report.overall_accuracy:.6f}",
                             report.overall_count])
            for tag in TAGS:
                a, c = report.per_tag.get(tag, (None, 0))
                writer.writerow([i, tag, "" if a is None else f"{a:.6f}", c])


def write_curve_csv(rows, path: str | Path, header=("fraction", "accuracy")) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_grid_csv(grid: np.ndarray, alphas, betas, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha"] + [f"beta={b}" for b in betas])
        for alpha, row in zip(alphas, grid):
            writer.writerow([alpha] + [f"{v:.6f}" for v in row])
