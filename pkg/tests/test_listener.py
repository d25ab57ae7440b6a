import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from refgame.corpus import Vocabulary
from refgame.listener import (ListenerConfig, ListenerExample, ListenerNet,
                              TrainedListener, attention_pool, build_examples,
                              listener_loss, predict, smoothed_cross_entropy,
                              train_listener)

from conftest import random_objects


def attention_oracle(r, h, w):
    """Naive per-coordinate restatement of the bilinear attention readout."""
    n, d = len(r), len(r[0])
    logits = []
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += r[i][j] * w[j] * h[j]
        logits.append(s)
    m = max(logits)
    exps = [math.exp(x - m) for x in logits]
    z = sum(exps)
    weights = [e / z for e in exps]
    pooled = [sum(weights[i] * r[i][j] for i in range(n)) for j in range(d)]
    return pooled, weights


def make_listener(config, vocab, seed=0):
    torch.manual_seed(seed)
    return TrainedListener(ListenerNet(config, len(vocab)), config, vocab)


def base_config(**overrides):
    base = dict(architecture="baseline", modalities="image", image_dim=6,
                lstm_hidden=8, mlp_hidden=(8,), projection_dim=8, word_dim=8)
    base.update(overrides)
    return ListenerConfig(**base)


class TestAttentionPool:
    def test_matches_naive_oracle(self, rng):
        for _ in range(100):
            n, d = rng.integers(1, 8), rng.integers(1, 8)
            r = rng.normal(size=(n, d))
            h = rng.normal(size=d)
            w = rng.normal(size=d)
            pooled, weights = attention_pool(r, h, w)
            op, ow = attention_oracle(r.tolist(), h.tolist(), w.tolist())
            np.testing.assert_allclose(pooled, op, rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(weights, ow, rtol=1e-10, atol=1e-12)

    def test_weights_normalize(self, rng):
        _, weights = attention_pool(rng.normal(size=(5, 4)),
                                    rng.normal(size=4), rng.normal(size=4))
        assert weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_single_state_identity(self, rng):
        r = rng.normal(size=(1, 3))
        pooled, weights = attention_pool(r, rng.normal(size=3),
                                         rng.normal(size=3))
        np.testing.assert_allclose(pooled, r[0])
        assert weights[0] == 1.0


class TestListenerLoss:
    def test_smoothed_target_values(self):
        # smoothing 0.9 over 3 classes: 0.9333 on target, 0.0333 elsewhere
        loss = listener_loss([1.0, 0.0, 0.0], 0, smoothing=0.9)
        q = [0.9 + 0.1 / 3, 0.1 / 3, 0.1 / 3]
        expected = -(q[1] * math.log(1e-12) + q[2] * math.log(1e-12))
        assert loss == pytest.approx(expected)

    @given(st.floats(min_value=1e-6, max_value=1.0))
    @settings(max_examples=100, deadline=None)
    def test_uniform_prediction_is_ln3(self, smoothing):
        uniform = [1 / 3, 1 / 3, 1 / 3]
        assert abs(listener_loss(uniform, 1, smoothing) - math.log(3)) < 1e-12

    def test_torch_training_loss_agrees(self, rng):
        logits = rng.normal(size=(1, 3))
        scores = np.exp(logits[0] - logits[0].max())
        scores /= scores.sum()
        want = listener_loss(scores, 2, 0.9)
        got = smoothed_cross_entropy(torch.as_tensor(logits),
                                     torch.as_tensor([2]), 0.9)
        assert float(got) == pytest.approx(want, rel=1e-9)


class TestConfig:
    def test_architecture_defaults(self):
        cfg = ListenerConfig.for_architecture("early_context")
        assert (cfg.learning_rate, cfg.l2_weight,
                cfg.input_dropout_keep, cfg.max_epochs) == (0.001, 0.05,
                                                            0.7, 350)

    def test_unknown_architecture(self):
        with pytest.raises(ValueError):
            ListenerConfig(architecture="late_context")

    def test_word_projection_dims_coupled(self):
        with pytest.raises(ValueError):
            base_config(word_dim=16)


class TestForwardStructure:
    def test_scores_normalize(self, rng, tiny_vocab):
        listener = make_listener(base_config(), tiny_vocab)
        out = listener.score_context(random_objects(rng), [5, 6, 7])
        assert out.scores.sum() == pytest.approx(1.0, abs=1e-6)
        assert out.attention.sum(axis=-1) == pytest.approx(
            np.ones(3), abs=1e-6)

    def test_baseline_permutation_equivariance_bitwise(self, rng, tiny_vocab):
        listener = make_listener(base_config(), tiny_vocab)
        for _ in range(100):
            objs = random_objects(rng)
            ids = list(rng.integers(5, len(tiny_vocab), size=4))
            scores = listener.score_context(objs, ids).scores
            perm = rng.permutation(3)
            permuted = listener.score_context([objs[i] for i in perm],
                                              ids).scores
            assert (scores[perm] == permuted).all()

    def test_early_context_distractor_swap_invariance(self, rng, tiny_vocab):
        cfg = base_config(architecture="early_context")
        listener = make_listener(cfg, tiny_vocab)
        objs = random_objects(rng)
        ids = [5, 6, 7]
        scores = listener.score_context(objs, ids).scores
        swapped = listener.score_context([objs[0], objs[2], objs[1]],
                                         ids).scores
        assert scores[0] == swapped[0]
        assert scores[1] == swapped[2] and scores[2] == swapped[1]

    def test_baseline_supports_arbitrary_context_size(self, rng, tiny_vocab):
        listener = make_listener(base_config(), tiny_vocab)
        for k in (2, 4, 6):
            out = listener.score_context(random_objects(rng, k=k), [5, 6])
            assert out.scores.shape == (k,)
            assert out.scores.sum() == pytest.approx(1.0, abs=1e-6)

    def test_non_baseline_requires_three_objects(self, rng, tiny_vocab):
        cfg = base_config(architecture="early_context")
        listener = make_listener(cfg, tiny_vocab)
        with pytest.raises(ValueError):
            listener.score_context(random_objects(rng, k=4), [5, 6])

    def test_combined_interpretation_forward(self, rng, tiny_vocab):
        cfg = base_config(architecture="combined_interpretation")
        listener = make_listener(cfg, tiny_vocab)
        out = listener.score_context(random_objects(rng), [5, 6, 7])
        assert out.scores.shape == (3,)
        assert out.scores.sum() == pytest.approx(1.0, abs=1e-6)

    def test_attention_off_returns_none(self, rng, tiny_vocab):
        listener = make_listener(base_config(use_attention=False), tiny_vocab)
        out = listener.score_context(random_objects(rng), [5, 6, 7])
        assert out.attention is None

    def test_empty_utterance_rejected(self, rng, tiny_vocab):
        listener = make_listener(base_config(), tiny_vocab)
        with pytest.raises(ValueError):
            listener.score_context(random_objects(rng), [])

    def test_target_log_prob_consistent(self, rng, tiny_vocab):
        listener = make_listener(base_config(), tiny_vocab)
        objs = random_objects(rng)
        out = listener.score_context(objs, [5, 6])
        lp = listener.target_log_prob(objs, [5, 6], 1)
        assert lp == pytest.approx(math.log(out.scores[1]), rel=1e-9)

    def test_predict_tie_breaks_low_index(self, rng, tiny_vocab):
        listener = make_listener(base_config(), tiny_vocab)
        objs = random_objects(rng)
        choice, out = predict(listener, objs, [5, 6, 7])
        assert choice == int(np.argmax(out.scores))

    def test_both_modalities_forward(self, rng, tiny_vocab):
        cfg = base_config(modalities="both", pc_dim=4)
        listener = make_listener(cfg, tiny_vocab)
        out = listener.score_context(random_objects(rng, pc_dim=4), [5, 6])
        assert out.scores.sum() == pytest.approx(1.0, abs=1e-6)


class TestTraining:
    def _toy_data(self, rng, vocab, n=120):
        # word id 5 ("the") marks the target object via a feature bump
        examples = []
        for _ in range(n):
            target = int(rng.integers(3))
            codes = rng.normal(size=(3, 6))
            codes[target, 0] += 3.0
            examples.append(ListenerExample(
                token_ids=(5, 6), target_index=target, image_codes=codes,
                pc_codes=None, difficulty="easy", tokens=("the", "thin")))
        return examples

    def test_training_improves_and_logs(self, rng, tiny_vocab):
        cfg = base_config(max_epochs=30, val_every=5, batch_size=16,
                          learning_rate=0.01, l2_weight=0.0,
                          input_dropout_keep=1.0,
                          pre_projection_dropout_keep=1.0)
        train = self._toy_data(rng, tiny_vocab)
        val = self._toy_data(rng, tiny_vocab, n=40)
        listener = train_listener(cfg, train, val, tiny_vocab, seed=0)
        assert listener.log["best_val_accuracy"] > 0.6
        assert not listener.log["aborted"]
        assert len(listener.log["train_loss"]) == 30

    def test_build_examples_filters(self, rng, tiny_vocab):
        from refgame.corpus import RawTrial
        from refgame.encoders import ObjectRepresentation
        reps = {x: ObjectRepresentation(object_id=x,
                                        image_code=rng.normal(size=6))
                for x in "abc"}
        trials = [
            RawTrial("g0", "c0", ("a", "b", "c"), 0, "the thin chair",
                     None, True, "easy"),
            RawTrial("g1", "c1", ("a", "b", "c"), 1, "the thin chair",
                     None, False, "easy"),
        ]
        examples = build_examples(trials, [0, 1], tiny_vocab, reps,
                                  base_config())
        assert len(examples) == 1 and examples[0].target_index == 0
