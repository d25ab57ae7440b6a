"""Neural listeners: an utterance-grounded recurrent scorer applied per
object (baseline), a context-aware grounding variant (early_context), and a
single-pass variant emitting all scores at once (combined_interpretation),
each with optional bilinear word attention.

Training happens in float32; trained listeners score in float64 so that
inference is deterministic and permutation-equivariant to the bit.
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

from .corpus import DEFAULT_MAX_LENGTH, Utterance, Vocabulary, preprocess_trial

logger = logging.getLogger(__name__)

ARCHITECTURES = ("baseline", "early_context", "combined_interpretation")
MODALITIES = ("image", "point_cloud", "both")

# Per-architecture (learning_rate, l2_weight, input_dropout_keep, max_epochs)
_ARCH_DEFAULTS = {
    "baseline": (0.0005, 0.3, 0.5, 500),
    "early_context": (0.001, 0.05, 0.7, 350),
    "combined_interpretation": (0.001, 0.09, 0.45, 500),
}


@dataclass
class ListenerConfig:
    architecture: str = "baseline"
    modalities: str = "both"
    use_attention: bool = True
    lstm_hidden: int = 100
    mlp_hidden: tuple[int, ...] = (100, 50)
    projection_dim: int = 100
    word_dim: int = 100
    image_dim: int = 4096
    pc_dim: int = 128
    label_smoothing: float = 0.9
    learning_rate: float = 0.0005
    l2_weight: float = 0.3
    input_dropout_keep: float = 0.5
    pre_projection_dropout_keep: float = 0.5
    max_epochs: int = 500
    val_every: int = 5
    lr_halving_window: int = 50
    batch_size: int = 64
    max_length: int = DEFAULT_MAX_LENGTH

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.modalities not in MODALITIES:
            raise ValueError(f"unknown modalities {self.modalities!r}")
        if not 0.0 < self.label_smoothing <= 1.0:
            raise ValueError("label_smoothing must be in (0, 1]")
        if self.word_dim != self.projection_dim:
            raise ValueError("word_dim must equal projection_dim "
                             "(both feed the same recurrent core)")

    @classmethod
    def for_architecture(cls, architecture: str, **overrides) -> "ListenerConfig":
        lr, l2, keep, epochs = _ARCH_DEFAULTS[architecture]
        base = dict(architecture=architecture, learning_rate=lr, l2_weight=l2,
                    input_dropout_keep=keep, max_epochs=epochs)
        base.update(overrides)
        return cls(**base)


@dataclass
class ListenerOutput:
    """Normalized per-object scores plus per-token attention weights."""

    scores: np.ndarray
    per_object_logits: np.ndarray
    attention: np.ndarray | None = None


def attention_pool(hidden_states: np.ndarray, final_state: np.ndarray,
                   att_diag: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear word attention with a diagonal weight matrix.

    a_i = r_i^T diag(w) h, softmax-normalized; pooled = sum_i r_i * a_hat_i.
    """
    r = np.asarray(hidden_states, dtype=np.float64)
    h = np.asarray(final_state, dtype=np.float64)
    w = np.asarray(att_diag, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] < 1:
        raise ValueError("need at least one hidden state")
    logits = r @ (w * h)
    logits = logits - logits.max()
    e = np.exp(logits)
    weights = e / e.sum()
    pooled = (r * weights[:, None]).sum(axis=0)
    return pooled, weights


def listener_loss(scores, target_index: int, smoothing: float = 0.9) -> float:
    """Cross-entropy of a 3-way score distribution against the smoothed
    target (0.9333/0.0333/0.0333 at smoothing 0.9)."""
    p = np.clip(np.asarray(scores, dtype=np.float64), 1e-12, None)
    k = len(p)
    q = np.full(k, (1.0 - smoothing) / k)
    q[target_index] += smoothing
    return float(-(q * np.log(p)).sum())


def smoothed_cross_entropy(logits: torch.Tensor, targets: torch.Tensor,
                           smoothing: float) -> torch.Tensor:
    """Training loss: label-smoothed cross-entropy over context logits."""
    k = logits.shape[-1]
    logp = F.log_softmax(logits, dim=-1)
    q = torch.full_like(logp, (1.0 - smoothing) / k)
    q.scatter_add_(-1, targets.unsqueeze(-1),
                   torch.full_like(targets, 1, dtype=logp.dtype).unsqueeze(-1) * smoothing)
    return -(q * logp).sum(dim=-1).mean()


def _shared_mask(shape, keep: float, like: torch.Tensor) -> torch.Tensor:
    if keep >= 1.0:
        return torch.ones(shape, dtype=like.dtype, device=like.device)
    return torch.bernoulli(
        torch.full(shape, keep, dtype=like.dtype, device=like.device)) / keep


class ListenerNet(nn.Module):
    def __init__(self, config: ListenerConfig, vocab_size: int,
                 embedding_init: np.ndarray | None = None):
        super().__init__()
        self.config = config
        P, H = config.projection_dim, config.lstm_hidden
        self.embedding = nn.Embedding(vocab_size, config.word_dim, padding_idx=0)
        if embedding_init is not None:
            with torch.no_grad():
                self.embedding.weight.copy_(torch.as_tensor(embedding_init))
        else:
            nn.init.uniform_(self.embedding.weight, -0.1, 0.1)
        self.image_proj = nn.Linear(config.image_dim, P)
        self.pc_proj = nn.Linear(config.pc_dim, P)
        self.lstm = nn.LSTM(P, H, batch_first=True)
        self.att_diag = nn.Parameter(torch.ones(H))
        if config.architecture == "early_context":
            self.ground_conv = nn.Conv1d(3, 1, kernel_size=8, padding="same")
        head_in = H
        if config.modalities == "both":
            head_in += P * (3 if config.architecture == "combined_interpretation" else 1)
        head_out = 3 if config.architecture == "combined_interpretation" else 1
        layers: list[nn.Module] = []
        prev = head_in
        for width in config.mlp_hidden:
            layers += [nn.Linear(prev, width), nn.ReLU()]
            prev = width
        layers.append(nn.Linear(prev, head_out))
        self.head = nn.Sequential(*layers)

    # -- helpers ----------------------------------------------------------

    def projection_weights(self):
        return [self.image_proj.weight, self.pc_proj.weight]

    def _grounding_codes(self, image_codes, pc_codes):
        if self.config.modalities in ("image", "both"):
            if image_codes is None:
                raise ValueError("image codes required for this modality setting")
            return image_codes, self.image_proj
        if pc_codes is None:
            raise ValueError("point-cloud codes required for this modality setting")
        return pc_codes, self.pc_proj

    def _project(self, codes, proj, keep):
        # Pre-projection dropout mask shared across a context's objects.
        if self.training and keep < 1.0:
            mask = _shared_mask((codes.shape[0], 1, codes.shape[2]), keep, codes)
            codes = codes * mask
        return F.relu(proj(codes))

    def _grounding(self, image_codes, pc_codes):
        codes, proj = self._grounding_codes(image_codes, pc_codes)
        g = self._project(codes, proj, self.config.pre_projection_dropout_keep)
        if self.config.architecture != "early_context":
            return g
        if g.shape[1] != 3:
            raise ValueError("early_context requires exactly 3 objects")
        gn = F.normalize(g, dim=-1)
        grounds = []
        for i in range(3):
            j, k = [x for x in range(3) if x != i]
            mx = F.normalize(torch.maximum(gn[:, j], gn[:, k]), dim=-1)
            mn = F.normalize((gn[:, j] + gn[:, k]) / 2.0, dim=-1)
            chans = torch.stack([mx, mn, gn[:, i]], dim=1)  # (B, 3, P)
            grounds.append(F.relu(self.ground_conv(chans)).squeeze(1))
        return torch.stack(grounds, dim=1)

    def _pool(self, outputs, lengths, n_prefix):
        """Attention (or final-state) readout over the token positions.

        outputs: (N, n_prefix + T, H); token t sits at position n_prefix + t.
        """
        N, total, H = outputs.shape
        T = total - n_prefix
        final_idx = n_prefix + lengths - 1
        h = outputs[torch.arange(N), final_idx]
        if not self.config.use_attention:
            return h, None
        r = outputs[:, n_prefix:, :]
        logits = (r * (self.att_diag * h).unsqueeze(1)).sum(-1)
        pos = torch.arange(T, device=outputs.device).unsqueeze(0)
        mask = pos < lengths.unsqueeze(1)
        logits = logits.masked_fill(~mask, float("-inf"))
        weights = F.softmax(logits, dim=-1)
        pooled = (r * weights.unsqueeze(-1)).sum(dim=1)
        return pooled, weights

    # -- forward ----------------------------------------------------------

    def forward(self, tokens: torch.Tensor, lengths: torch.Tensor,
                image_codes: torch.Tensor | None = None,
                pc_codes: torch.Tensor | None = None):
        """tokens: (B, T) padded ids; lengths: (B,); codes: (B, k, D).

        Returns (logits (B, k), attention or None).
        """
        cfg = self.config
        B, T = tokens.shape
        emb = self.embedding(tokens)  # (B, T, P)
        keep = cfg.input_dropout_keep
        if self.training and keep < 1.0:
            # One mask per trial, shared across the k object passes.
            emb = emb * _shared_mask(emb.shape, keep, emb)

        if cfg.architecture == "combined_interpretation":
            g = self._grounding(image_codes, pc_codes)  # (B, 3, P)
            if self.training and keep < 1.0:
                g = g * _shared_mask(g.shape, keep, g)
            seq = torch.cat([g, emb], dim=1)
            outputs, _ = self.lstm(seq)
            pooled, weights = self._pool(outputs, lengths, n_prefix=g.shape[1])
            if cfg.modalities == "both":
                pc = self._project(pc_codes, self.pc_proj,
                                   cfg.pre_projection_dropout_keep)
                pooled = torch.cat([pooled, pc.reshape(B, -1)], dim=-1)
            logits = self.head(pooled)  # (B, 3)
            return logits, weights

        g = self._grounding(image_codes, pc_codes)  # (B, k, P)
        k = g.shape[1]
        if self.training and keep < 1.0:
            mask = _shared_mask((B, 1, g.shape[2]), keep, g)
            g = g * mask
        seq = torch.cat([g.reshape(B * k, 1, -1),
                         emb.unsqueeze(1).expand(B, k, T, emb.shape[-1])
                            .reshape(B * k, T, -1)], dim=1)
        outputs, _ = self.lstm(seq)
        lengths_k = lengths.unsqueeze(1).expand(B, k).reshape(B * k)
        pooled, weights = self._pool(outputs, lengths_k, n_prefix=1)
        if cfg.modalities == "both":
            pc = self._project(pc_codes, self.pc_proj,
                               cfg.pre_projection_dropout_keep)
            pooled = torch.cat([pooled, pc.reshape(B * k, -1)], dim=-1)
        logits = self.head(pooled).reshape(B, k)
        if weights is not None:
            weights = weights.reshape(B, k, T)
        return logits, weights


def _orderfree_softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax whose normalizer sums exponentials in ascending value order,
    so permuting the logits permutes the output bitwise."""
    m = logits.max()
    e = np.exp(logits - m)
    return e / np.sort(e).sum()


def _orderfree_log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max()
    e = np.exp(logits - m)
    return (logits - m) - np.log(np.sort(e).sum())


class TrainedListener:
    """Immutable trained listener; scoring is read-only and safe to call
    concurrently."""

    def __init__(self, net: ListenerNet, config: ListenerConfig,
                 vocab: Vocabulary, log: dict | None = None):
        self.net = net.double().eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.config = config
        self.vocab = vocab
        self.log = log or {}

    def _utterance_ids(self, utterance) -> list[int]:
        if isinstance(utterance, Utterance):
            return list(utterance.token_ids)
        if utterance and isinstance(utterance[0], str):
            return self.vocab.encode(utterance)
        return list(utterance)

    def _codes(self, objects):
        img = pc = None
        if self.config.modalities in ("image", "both"):
            img = torch.as_tensor(
                np.stack([o.code("image") for o in objects]),
                dtype=torch.float64).unsqueeze(0)
        if self.config.modalities in ("point_cloud", "both"):
            pc = torch.as_tensor(
                np.stack([o.code("point_cloud") for o in objects]),
                dtype=torch.float64).unsqueeze(0)
        return img, pc

    def score_context(self, objects, utterance) -> ListenerOutput:
        """Compatibility distribution over the context's objects. The
        baseline architecture accepts any context size k >= 2."""
        ids = self._utterance_ids(utterance)
        if not ids:
            raise ValueError("cannot score an empty utterance")
        k = len(objects)
        if k < 2:
            raise ValueError("need at least 2 objects")
        if k != 3 and self.config.architecture != "baseline":
            raise ValueError(f"{self.config.architecture} requires exactly 3 objects")
        img, pc = self._codes(objects)
        tokens = torch.as_tensor([ids], dtype=torch.long)
        lengths = torch.as_tensor([len(ids)], dtype=torch.long)
        with torch.no_grad():
            logits, weights = self.net(tokens, lengths, img, pc)
        logits_np = logits.squeeze(0).numpy()
        attention = None if weights is None else weights.squeeze(0).numpy()
        return ListenerOutput(scores=_orderfree_softmax(logits_np),
                              per_object_logits=logits_np,
                              attention=attention)

    def target_log_prob(self, objects, utterance, target_index: int) -> float:
        out = self.score_context(objects, utterance)
        return float(_orderfree_log_softmax(out.per_object_logits)[target_index])

    def batch_logits(self, batch) -> np.ndarray:
        """Logits for a list of (objects, token_ids) pairs in one forward."""
        tokens, lengths, imgs, pcs, _ = _collate(
            batch, self.config, dtype=torch.float64)
        with torch.no_grad():
            logits, _ = self.net(tokens, lengths, imgs, pcs)
        return logits.numpy()


def predict(listener: TrainedListener, objects, utterance) -> tuple[int, ListenerOutput]:
    """Argmax prediction; ties break toward the lowest index."""
    output = listener.score_context(objects, utterance)
    return int(np.argmax(output.scores)), output


# -- training ---------------------------------------------------------------


@dataclass
class ListenerExample:
    token_ids: tuple[int, ...]
    target_index: int
    image_codes: np.ndarray | None
    pc_codes: np.ndarray | None
    difficulty: str = "easy"
    tokens: tuple[str, ...] = ()


def build_examples(trials, indices, vocab: Vocabulary, representations,
                   config: ListenerConfig, stems=None) -> list[ListenerExample]:
    """Trial positions -> training examples; trials filtered out by
    preprocessing (wrong human guess, over-long) are skipped."""
    examples = []
    for i in indices:
        trial = trials[i]
        utt = preprocess_trial(trial, vocab, max_length=config.max_length,
                               stems=stems)
        if utt is None or utt.length == 0:
            continue
        reps = [representations[oid] for oid in trial.object_ids]
        img = pc = None
        if config.modalities in ("image", "both"):
            img = np.stack([r.code("image") for r in reps])
        if config.modalities in ("point_cloud", "both"):
            pc = np.stack([r.code("point_cloud") for r in reps])
        examples.append(ListenerExample(
            token_ids=utt.token_ids, target_index=trial.target_index,
            image_codes=img, pc_codes=pc, difficulty=trial.difficulty,
            tokens=utt.tokens))
    return examples


def _collate(batch, config: ListenerConfig, dtype=torch.float32,
             permute_objects: bool = False, rng: np.random.Generator | None = None):
    """batch: list of ListenerExample or (objects, token_ids) pairs."""
    if isinstance(batch[0], ListenerExample):
        ids = [list(ex.token_ids) for ex in batch]
        imgs = [ex.image_codes for ex in batch]
        pcs = [ex.pc_codes for ex in batch]
        targets = [ex.target_index for ex in batch]
    else:
        ids = [list(token_ids) for _, token_ids in batch]
        imgs, pcs, targets = [], [], []
        for objects, _ in batch:
            if config.modalities in ("image", "both"):
                imgs.append(np.stack([o.code("image") for o in objects]))
            else:
                imgs.append(None)
            if config.modalities in ("point_cloud", "both"):
                pcs.append(np.stack([o.code("point_cloud") for o in objects]))
            else:
                pcs.append(None)
            targets.append(0)
    if permute_objects:
        assert rng is not None
        for i in range(len(ids)):
            perm = rng.permutation(3)
            if imgs[i] is not None:
                imgs[i] = imgs[i][perm]
            if pcs[i] is not None:
                pcs[i] = pcs[i][perm]
            targets[i] = int(np.where(perm == targets[i])[0][0])
    T = max(len(x) for x in ids)
    tokens = torch.zeros((len(ids), T), dtype=torch.long)
    for i, x in enumerate(ids):
        tokens[i, :len(x)] = torch.as_tensor(x)
    lengths = torch.as_tensor([len(x) for x in ids], dtype=torch.long)
    img_t = (torch.as_tensor(np.stack(imgs), dtype=dtype)
             if imgs[0] is not None else None)
    pc_t = (torch.as_tensor(np.stack(pcs), dtype=dtype)
            if pcs[0] is not None else None)
    return tokens, lengths, img_t, pc_t, torch.as_tensor(targets)


def _accuracy(net: ListenerNet, examples, config: ListenerConfig,
              batch_size: int = 256) -> float:
    if not examples:
        return float("nan")
    net.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, len(examples), batch_size):
            chunk = examples[start:start + batch_size]
            tokens, lengths, imgs, pcs, targets = _collate(chunk, config)
            logits, _ = net(tokens, lengths, imgs, pcs)
            correct += int((logits.argmax(dim=1) == targets).sum())
    return correct / len(examples)


def train_listener(config: ListenerConfig, train_examples, val_examples,
                   vocab: Vocabulary, embedding_init=None,
                   seed: int = 0) -> TrainedListener:
    """Adam (first-moment decay 0.9) with L2 on the projection layers,
    validation every ``val_every`` epochs, learning-rate halving when a
    whole halving window passes without a validation improvement, and
    best-validation checkpointing. NaN loss aborts with the last good
    checkpoint."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    net = ListenerNet(config, len(vocab), embedding_init)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate,
                           betas=(0.9, 0.999))
    permute = config.architecture == "combined_interpretation"
    best_acc, best_state, best_epoch = -1.0, copy.deepcopy(net.state_dict()), 0
    log = {"val_accuracy": [], "train_loss": [], "lr": [], "aborted": False,
           "config": asdict(config), "seed": seed}
    lr = config.learning_rate
    aborted = False
    for epoch in range(1, config.max_epochs + 1):
        net.train()
        order = rng.permutation(len(train_examples))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train_examples[i] for i in order[start:start + config.batch_size]]
            tokens, lengths, imgs, pcs, targets = _collate(
                batch, config, permute_objects=permute, rng=rng)
            logits, _ = net(tokens, lengths, imgs, pcs)
            loss = smoothed_cross_entropy(logits, targets, config.label_smoothing)
            loss = loss + config.l2_weight * sum(
                (w ** 2).sum() for w in net.projection_weights())
            if not torch.isfinite(loss):
                logger.error("listener training hit NaN at epoch %d; "
                             "keeping last good checkpoint", epoch)
                aborted = True
                break
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
        if aborted:
            break
        log["train_loss"].append(total / len(train_examples))
        if epoch % config.val_every == 0 or epoch == config.max_epochs:
            acc = _accuracy(net, val_examples, config)
            log["val_accuracy"].append((epoch, acc))
            if acc > best_acc:
                best_acc, best_epoch = acc, epoch
                best_state = copy.deepcopy(net.state_dict())
        if epoch % config.lr_halving_window == 0 and best_epoch <= epoch - config.lr_halving_window:
            lr *= 0.5
            for group in opt.param_groups:
                group["lr"] = lr
        log["lr"].append(lr)
    log["aborted"] = aborted
    log["best_epoch"] = best_epoch
    log["best_val_accuracy"] = best_acc
    net.load_state_dict(best_state)
    return TrainedListener(net, config, vocab, log)
