"""Neural speakers: literal and context-unaware generation, candidate
sampling, exact sequence likelihoods, and pragmatic re-ranking that trades a
listener's success probability against length-penalized speaker likelihood.

As with listeners, training runs in float32 and all inference in float64.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .corpus import Utterance, Vocabulary
from .listener import TrainedListener

logger = logging.getLogger(__name__)

MIXINGS = ("concat_100", "concat_200", "sum", "serial")


@dataclass
class SpeakerConfig:
    modality: str = "image"  # image | point_cloud | both
    mixing: str = "concat_200"  # used when modality == "both"
    context_aware: bool = True
    lstm_hidden: int = 200
    word_dim: int = 100
    image_dim: int = 4096
    pc_dim: int = 128
    learning_rate: float = 0.003
    l2_weight: float = 0.005
    word_dropout_keep: float = 0.8
    image_code_dropout_keep: float = 0.5
    pc_code_dropout_keep: float = 1.0
    output_dropout_keep: float = 0.9
    grad_clip_norm: float = 5.0
    max_epochs: int = 300  # 400 for point-cloud speakers
    max_decode_length: int = 33
    val_every: int = 10
    batch_size: int = 64

    def __post_init__(self):
        for keep in (self.word_dropout_keep, self.image_code_dropout_keep,
                     self.pc_code_dropout_keep, self.output_dropout_keep):
            if not 0.0 < keep <= 1.0:
                raise ValueError("dropout keep probabilities must be in (0, 1]")
        if self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be positive")
        if self.modality == "both" and self.mixing not in MIXINGS:
            raise ValueError(f"unknown mixing {self.mixing!r}")

    @property
    def input_dim(self) -> int:
        if self.modality == "both" and self.mixing == "concat_200":
            return 2 * self.word_dim
        return self.word_dim


@dataclass
class SpeakerSample:
    """One generated candidate with its exact generation log-likelihood."""

    tokens: tuple[str, ...]
    token_ids: tuple[int, ...]
    speaker_log_prob: float
    terminated: bool  # ended with <EOS> (vs hit max_decode_length)
    listener_log_prob: float | None = None
    pragmatic_score: float | None = None

    @property
    def penalty_length(self) -> int:
        """|U| for the length penalty: start/end/pad specials excluded
        (<UNK> and <DIA> count as content)."""
        return sum(1 for t in self.tokens if t not in ("<PAD>", "<SOS>", "<EOS>"))


def pragmatic_score(listener_log_prob: float, speaker_log_prob: float,
                    length: int, alpha: float, beta: float) -> float:
    """beta * log P_L + ((1 - beta) / |U|^alpha) * log P_S."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if alpha < 0 or not 0.0 <= beta <= 1.0:
        raise ValueError("need alpha >= 0 and beta in [0, 1]")
    if math.isinf(listener_log_prob) and listener_log_prob < 0:
        return float("-inf")
    return beta * listener_log_prob + ((1.0 - beta) / length ** alpha) * speaker_log_prob


def rerank(samples: list[SpeakerSample]) -> list[SpeakerSample]:
    """Descending by pragmatic score; stable, ties keep sampling order."""
    for s in samples:
        if s.pragmatic_score is None:
            raise ValueError("samples must be scored before reranking")
    return sorted(samples, key=lambda s: s.pragmatic_score, reverse=True)


class SpeakerNet(nn.Module):
    def __init__(self, config: SpeakerConfig, vocab_size: int,
                 token_log_freq: np.ndarray | None = None):
        super().__init__()
        self.config = config
        D = config.input_dim
        proj_out = D // 2 if (config.modality == "both"
                              and config.mixing == "concat_100") else config.word_dim
        self.embedding = nn.Embedding(vocab_size, D, padding_idx=0)
        nn.init.uniform_(self.embedding.weight, -0.1, 0.1)
        self.image_proj = nn.Linear(config.image_dim, proj_out)
        self.pc_proj = nn.Linear(config.pc_dim, proj_out)
        self.lstm = nn.LSTM(D, config.lstm_hidden, batch_first=True)
        self.out = nn.Linear(config.lstm_hidden, vocab_size)
        if token_log_freq is not None:
            with torch.no_grad():
                self.out.bias.copy_(torch.as_tensor(token_log_freq))

    def projection_weights(self):
        return [self.image_proj.weight, self.pc_proj.weight]

    def _code_step(self, rep, dtype) -> list[torch.Tensor]:
        """Input vector(s) for one object, per the modality mixing rule."""
        cfg = self.config
        drop = lambda x, keep: (F.dropout(x, 1 - keep) if self.training else x)
        img = pc = None
        if cfg.modality in ("image", "both"):
            raw = torch.as_tensor(rep.code("image"), dtype=dtype)
            img = F.relu(self.image_proj(drop(raw, cfg.image_code_dropout_keep)))
        if cfg.modality in ("point_cloud", "both"):
            raw = torch.as_tensor(rep.code("point_cloud"), dtype=dtype)
            pc = F.relu(self.pc_proj(drop(raw, cfg.pc_code_dropout_keep)))
        if cfg.modality == "image":
            return [img]
        if cfg.modality == "point_cloud":
            return [pc]
        if cfg.mixing in ("concat_100", "concat_200"):
            return [torch.cat([img, pc], dim=-1)]
        if cfg.mixing == "sum":
            return [img + pc]
        return [pc, img]  # serial: point-cloud code, then image code


def context_order(objects, target_index: int, context_aware: bool):
    """Feed order: distractors in ascending-id order, target always last;
    context-unaware speakers see the target only."""
    target = objects[target_index]
    if not context_aware:
        return [target]
    distractors = sorted(
        (o for i, o in enumerate(objects) if i != target_index),
        key=lambda o: o.object_id)
    return distractors + [target]


class TrainedSpeaker:
    """Immutable trained speaker; sampling and scoring are read-only."""

    def __init__(self, net: SpeakerNet, config: SpeakerConfig,
                 vocab: Vocabulary, log: dict | None = None):
        self.net = net.double().eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.config = config
        self.vocab = vocab
        self.log = log or {}
        # PAD and SOS are never valid generations.
        mask = torch.zeros(len(vocab), dtype=torch.float64)
        mask[vocab.pad_id] = float("-inf")
        mask[vocab.sos_id] = float("-inf")
        self._logit_mask = mask

    # -- encoding ----------------------------------------------------------

    def context_steps(self, objects, target_index: int) -> list[torch.Tensor]:
        ordered = context_order(objects, target_index, self.config.context_aware)
        steps: list[torch.Tensor] = []
        with torch.no_grad():
            for rep in ordered:
                steps.extend(self.net._code_step(rep, torch.float64))
        return steps

    def encode_context(self, objects, target_index: int):
        """Initial recurrent state after consuming the object codes."""
        steps = torch.stack(self.context_steps(objects, target_index)).unsqueeze(0)
        with torch.no_grad():
            _, state = self.net.lstm(steps)
        return state

    # -- scoring -----------------------------------------------------------

    def _step_logprobs(self, state, token_id: int | None):
        """Advance one step (None = start: no token input consumed) and
        return next-token log-probs."""
        if token_id is None:
            h = state[0][-1]
        else:
            emb = self.net.embedding(torch.as_tensor([[token_id]]))
            out, state = self.net.lstm(emb, state)
            h = out[:, -1]
        logits = self.net.out(h).squeeze(0) + self._logit_mask
        return F.log_softmax(logits, dim=-1), state

    def next_token_log_probs(self, objects, target_index: int,
                             prefix_ids=()) -> np.ndarray:
        """Next-token conditional log-probabilities given a prefix."""
        with torch.no_grad():
            state = self.encode_context(objects, target_index)
            logp, state = self._step_logprobs(state, self.vocab.sos_id)
            for tid in prefix_ids:
                logp, state = self._step_logprobs(state, int(tid))
        return logp.numpy()

    def sequence_log_prob(self, objects, target_index: int, utterance,
                          include_eos: bool = True) -> float:
        """Teacher-forced log P_S(U | O, t); includes the end-of-sequence
        factor for complete sequences."""
        ids = self._utterance_ids(utterance)
        if not ids and not include_eos:
            raise ValueError("cannot score an empty, unterminated utterance")
        total = 0.0
        with torch.no_grad():
            state = self.encode_context(objects, target_index)
            logp, state = self._step_logprobs(state, self.vocab.sos_id)
            for tid in ids:
                total += float(logp[tid])
                logp, state = self._step_logprobs(state, int(tid))
            if include_eos:
                total += float(logp[self.vocab.eos_id])
        return total

    def _utterance_ids(self, utterance) -> list[int]:
        if isinstance(utterance, Utterance):
            return list(utterance.token_ids)
        if utterance and isinstance(utterance[0], str):
            return self.vocab.encode(utterance)
        return list(utterance)

    # -- generation --------------------------------------------------------

    def _rollout(self, objects, target_index: int, greedy: bool,
                 generator: torch.Generator | None) -> SpeakerSample:
        ids: list[int] = []
        log_prob = 0.0
        terminated = False
        with torch.no_grad():
            state = self.encode_context(objects, target_index)
            logp, state = self._step_logprobs(state, self.vocab.sos_id)
            for _ in range(self.config.max_decode_length):
                if greedy:
                    tid = int(torch.argmax(logp))
                else:
                    tid = int(torch.multinomial(torch.exp(logp), 1,
                                                generator=generator))
                log_prob += float(logp[tid])
                if tid == self.vocab.eos_id:
                    terminated = True
                    break
                ids.append(tid)
                logp, state = self._step_logprobs(state, tid)
        return SpeakerSample(tokens=tuple(self.vocab.decode(ids)),
                             token_ids=tuple(ids),
                             speaker_log_prob=log_prob,
                             terminated=terminated)

    def sample_utterances(self, objects, target_index: int, n: int = 50,
                          strategy: str = "multinomial",
                          seed: int = 0) -> list[SpeakerSample]:
        """Greedy returns the single argmax rollout; multinomial returns n
        independent temperature-1 rollouts, each carrying its exact
        generation log-probability."""
        if strategy == "greedy":
            return [self._rollout(objects, target_index, greedy=True,
                                  generator=None)]
        if strategy != "multinomial":
            raise ValueError(f"unknown strategy {strategy!r}")
        generator = torch.Generator().manual_seed(seed)
        return [self._rollout(objects, target_index, greedy=False,
                              generator=generator) for _ in range(n)]

    def candidate_set(self, objects, target_index: int, n: int = 50,
                      seed: int = 0) -> list[SpeakerSample]:
        """n multinomial samples plus the greedy rollout, so re-ranking can
        never lose the literal argmax."""
        samples = self.sample_utterances(objects, target_index, n=n,
                                         strategy="multinomial", seed=seed)
        samples.append(self.sample_utterances(objects, target_index,
                                              strategy="greedy")[0])
        return samples


def score_candidates(samples: list[SpeakerSample], objects, target_index: int,
                     listener: TrainedListener, alpha: float,
                     beta: float) -> list[SpeakerSample]:
    """Fill listener log-probs and pragmatic scores in place. Candidates the
    listener cannot score (no content tokens) rank below all finite scores."""
    for sample in samples:
        if sample.penalty_length == 0:
            sample.listener_log_prob = float("-inf")
            sample.pragmatic_score = float("-inf")
            continue
        sample.listener_log_prob = listener.target_log_prob(
            objects, list(sample.tokens), target_index)
        sample.pragmatic_score = pragmatic_score(
            sample.listener_log_prob, sample.speaker_log_prob,
            sample.penalty_length, alpha, beta)
    return samples


def pragmatic_top1(speaker: TrainedSpeaker, objects, target_index: int,
                   listener: TrainedListener, alpha: float, beta: float = 1.0,
                   n: int = 50, seed: int = 0) -> tuple[SpeakerSample, list[SpeakerSample]]:
    """Sample, score with the internal listener, re-rank; the top-1 is the
    emitted utterance."""
    samples = speaker.candidate_set(objects, target_index, n=n, seed=seed)
    score_candidates(samples, objects, target_index, listener, alpha, beta)
    ranked = rerank(samples)
    return ranked[0], ranked


def unique_candidate_count(samples: list[SpeakerSample]) -> int:
    return len({s.tokens for s in samples})


# -- training ----------------------------------------------------------------


@dataclass
class SpeakerExample:
    token_ids: tuple[int, ...]
    objects: tuple  # ObjectRepresentation triple, trial order
    target_index: int


def token_log_frequencies(vocab: Vocabulary) -> np.ndarray:
    """Bias initialization for the word decoder: log relative frequency of
    each token in the training data (add-one smoothed)."""
    counts = np.array([vocab.frequency.get(t, 0) + 1.0 for t in vocab.id_to_token])
    return np.log(counts / counts.sum())


def _speaker_batch(net: SpeakerNet, batch: list[SpeakerExample],
                   vocab: Vocabulary, dtype=torch.float32):
    """Teacher-forced batch: code steps, then <SOS> + tokens; targets are
    tokens + <EOS>."""
    cfg = net.config
    code_steps = []
    for ex in batch:
        ordered = context_order(ex.objects, ex.target_index, cfg.context_aware)
        steps = []
        for rep in ordered:
            steps.extend(net._code_step(rep, dtype))
        code_steps.append(torch.stack(steps))
    n_code = code_steps[0].shape[0]
    T = max(len(ex.token_ids) for ex in batch) + 1  # +1 for <SOS> position
    B = len(batch)
    tokens_in = torch.zeros((B, T), dtype=torch.long)
    targets = torch.zeros((B, T), dtype=torch.long)
    mask = torch.zeros((B, T), dtype=torch.bool)
    for i, ex in enumerate(batch):
        L = len(ex.token_ids)
        tokens_in[i, 0] = vocab.sos_id
        tokens_in[i, 1:L + 1] = torch.as_tensor(ex.token_ids)
        targets[i, :L] = torch.as_tensor(ex.token_ids)
        targets[i, L] = vocab.eos_id
        mask[i, :L + 1] = True
    emb = net.embedding(tokens_in)
    if net.training and cfg.word_dropout_keep < 1.0:
        emb = F.dropout(emb, 1 - cfg.word_dropout_keep)
    seq = torch.cat([torch.stack(code_steps), emb], dim=1)
    outputs, _ = net.lstm(seq)
    token_out = outputs[:, n_code:, :]
    if net.training and cfg.output_dropout_keep < 1.0:
        token_out = F.dropout(token_out, 1 - cfg.output_dropout_keep)
    logits = net.out(token_out)
    logp = F.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return -(picked * mask).sum() / mask.sum()


def speaker_validation_accuracy(speaker: TrainedSpeaker, val_examples,
                                listener: TrainedListener) -> float:
    """Greedy generation per validation triplet, judged by the selection
    listener."""
    if not val_examples:
        return float("nan")
    correct = 0
    for ex in val_examples:
        sample = speaker.sample_utterances(ex.objects, ex.target_index,
                                           strategy="greedy")[0]
        if sample.penalty_length == 0:
            continue
        scores = listener.score_context(ex.objects, list(sample.tokens)).scores
        if int(np.argmax(scores)) == ex.target_index:
            correct += 1
    return correct / len(val_examples)


def train_speaker(config: SpeakerConfig, train_examples: list[SpeakerExample],
                  val_examples: list[SpeakerExample], vocab: Vocabulary,
                  selection_listener: TrainedListener,
                  seed: int = 0) -> TrainedSpeaker:
    """Teacher-forced training with Adam (first-moment decay 0.9), L2 on the
    projection layers, norm-wise gradient clipping, and listener-based model
    selection: every ``val_every`` epochs one greedy utterance per validation
    triplet is scored by the selection listener and the best checkpoint
    kept."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    net = SpeakerNet(config, len(vocab),
                     token_log_freq=token_log_frequencies(vocab))
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate,
                           betas=(0.9, 0.999))
    best_acc, best_state, best_epoch = -1.0, copy.deepcopy(net.state_dict()), 0
    log = {"train_loss": [], "val_accuracy": [], "clipped_grad_norms": [],
           "aborted": False, "config": asdict(config), "seed": seed}
    aborted = False
    for epoch in range(1, config.max_epochs + 1):
        net.train()
        order = rng.permutation(len(train_examples))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train_examples[i] for i in order[start:start + config.batch_size]]
            loss = _speaker_batch(net, batch, vocab)
            loss = loss + config.l2_weight * sum(
                (w ** 2).sum() for w in net.projection_weights())
            if not torch.isfinite(loss):
                logger.error("speaker training hit NaN at epoch %d; "
                             "keeping best checkpoint", epoch)
                aborted = True
                break
            opt.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(net.parameters(), config.grad_clip_norm)
            norm = math.sqrt(sum(float((p.grad ** 2).sum())
                                 for p in net.parameters() if p.grad is not None))
            log["clipped_grad_norms"].append(norm)
            opt.step()
            total += loss.item() * len(batch)
        if aborted:
            break
        log["train_loss"].append(total / len(train_examples))
        if epoch % config.val_every == 0 or epoch == config.max_epochs:
            probe = TrainedSpeaker(copy.deepcopy(net), config, vocab)
            acc = speaker_validation_accuracy(probe, val_examples,
                                              selection_listener)
            log["val_accuracy"].append((epoch, acc))
            if acc > best_acc:
                best_acc, best_epoch = acc, epoch
                best_state = copy.deepcopy(net.state_dict())
    log["aborted"] = aborted
    log["best_epoch"] = best_epoch
    log["best_val_accuracy"] = best_acc
    net.load_state_dict(best_state)
    return TrainedSpeaker(net, config, vocab, log)


def build_speaker_examples(trials, indices, vocab: Vocabulary,
                           representations, max_length: int = 33,
                           stems=None) -> list[SpeakerExample]:
    from .corpus import preprocess_trial

    examples = []
    for i in indices:
        trial = trials[i]
        utt = preprocess_trial(trial, vocab, max_length=max_length, stems=stems)
        if utt is None or utt.length == 0:
            continue
        reps = tuple(representations[oid] for oid in trial.object_ids)
        examples.append(SpeakerExample(token_ids=utt.token_ids,
                                       objects=reps,
                                       target_index=trial.target_index))
    return examples
