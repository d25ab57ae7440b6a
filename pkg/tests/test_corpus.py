from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refgame.corpus import (DEFAULT_MAX_LENGTH, DIA, PAD, RawTrial, SPECIALS,
                            SPLIT_SEEDS, UNK, Utterance, Vocabulary,
                            build_vocabulary, collect_stems, make_split,
                            preprocess_trial, read_trials, tokenize,
                            trial_from_line, trial_to_line, trial_tokens,
                            write_trials)

GOLDEN = Path(__file__).parent / "data" / "tokenizer_golden.txt"


def make_trial(**overrides):
    base = dict(game_id="g0", context_id="c0", object_ids=("a", "b", "c"),
                target_index=0, speaker_text="the thin chair",
                listener_text=None, human_listener_correct=True,
                difficulty="easy")
    base.update(overrides)
    return RawTrial(**base)


class TestTokenize:
    def test_golden_file_byte_exact(self):
        for line in GOLDEN.read_text().splitlines():
            text, expected = line.split("\t")
            assert " ".join(tokenize(text)) == expected

    def test_empty_input(self):
        assert tokenize("") == []

    def test_suffix_split_with_corpus_stems(self):
        assert tokenize("wider", {"wide"}) == ["wide", "er"]
        assert tokenize("thinnest", {"thin"}) == ["thin", "est"]
        # stem absent from the corpus: token stays whole
        assert tokenize("corner", {"chair"}) == ["corner"]

    def test_lowercase_invariance(self):
        text = "The THINNER chair, please!"
        assert tokenize(text.lower()) == tokenize(text)

    @given(st.text(alphabet=st.characters(codec="ascii"), max_size=40))
    @settings(max_examples=200, deadline=None)
    def test_lowercase_invariance_property(self, text):
        assert tokenize(text.lower()) == tokenize(text)

    def test_collect_stems(self):
        stems = collect_stems(["the thin chair", "a wide seat"])
        assert {"thin", "wide", "chair"} <= stems


class TestVocabulary:
    def test_min_count_threshold(self):
        vocab = build_vocabulary([["chair"] * 5 + ["ottoman"]])
        assert "chair" in vocab and "ottoman" not in vocab

    def test_boundary_count_included(self):
        vocab = build_vocabulary([["back", "back"]])
        assert "back" in vocab

    def test_empty_corpus_specials_only(self):
        vocab = build_vocabulary([])
        assert vocab.id_to_token == list(SPECIALS)

    def test_specials_first_in_id_order(self, tiny_vocab):
        assert tiny_vocab.id_to_token[:len(SPECIALS)] == list(SPECIALS)

    def test_encode_decode_identity(self, tiny_vocab):
        tokens = ["the", "thin", "chair"]
        assert tiny_vocab.decode(tiny_vocab.encode(tokens)) == tokens

    def test_unknown_maps_to_unk(self, tiny_vocab):
        assert tiny_vocab.encode(["zebra"]) == [tiny_vocab.unk_id]

    def test_save_load_roundtrip(self, tiny_vocab, tmp_path):
        path = tmp_path / "vocab.txt"
        tiny_vocab.save(path)
        loaded = Vocabulary.load(path)
        assert loaded.id_to_token == tiny_vocab.id_to_token
        assert loaded.frequency == tiny_vocab.frequency
        assert loaded.content_hash() == tiny_vocab.content_hash()


class TestPreprocess:
    def test_dialogue_concatenation(self):
        vocab = build_vocabulary([["the", "thin", "chair", "yes"]] * 2)
        trial = make_trial(listener_text="yes")
        utt = preprocess_trial(trial, vocab)
        assert list(utt.tokens) == ["the", "thin", "chair", DIA, "yes"]

    def test_incorrect_human_guess_filtered(self, tiny_vocab):
        assert preprocess_trial(make_trial(human_listener_correct=False),
                                tiny_vocab) is None

    def test_overlong_filtered(self, tiny_vocab):
        trial = make_trial(speaker_text=" ".join(["the"] * 40))
        assert preprocess_trial(trial, tiny_vocab) is None

    def test_cap_applies_after_concatenation(self, tiny_vocab):
        trial = make_trial(speaker_text=" ".join(["the"] * 20),
                           listener_text=" ".join(["the"] * 20))
        assert preprocess_trial(trial, tiny_vocab) is None

    def test_length_at_most_cap(self, tiny_vocab):
        trial = make_trial(speaker_text=" ".join(["the"] * 33))
        utt = preprocess_trial(trial, tiny_vocab)
        assert utt.length == DEFAULT_MAX_LENGTH == 33

    def test_oov_replaced(self, tiny_vocab):
        utt = preprocess_trial(make_trial(speaker_text="the weird chair"),
                               tiny_vocab)
        assert list(utt.tokens) == ["the", UNK, "chair"]

    def test_utterance_lengths_agree(self):
        with pytest.raises(ValueError):
            Utterance(tokens=("a",), token_ids=(1, 2))


class TestRawTrial:
    def test_duplicate_object_ids_rejected(self):
        with pytest.raises(ValueError):
            make_trial(object_ids=("a", "a", "b"))

    def test_target_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            make_trial(target_index=3)

    def test_trial_tokens_without_dialogue(self):
        assert trial_tokens(make_trial()) == ["the", "thin", "chair"]


class TestSplits:
    def _trials(self, n=10):
        return [make_trial(game_id=f"g{i}", context_id=f"c{i}",
                           object_ids=(f"t{i}", f"d{i}a", f"d{i}b"))
                for i in range(n)]

    def test_language_sizes(self):
        split = make_split(self._trials(10), "language_generalization")
        assert (len(split.train), len(split.val), len(split.test)) == (8, 1, 1)

    def test_deterministic(self):
        trials = self._trials(20)
        a = make_split(trials, "language_generalization", seed=3)
        b = make_split(trials, "language_generalization", seed=3)
        assert a == b

    def test_partitions_disjoint_exhaustive(self):
        trials = self._trials(20)
        for mode in ("language_generalization", "object_generalization"):
            split = make_split(trials, mode, seed=1)
            union = set(split.train) | set(split.val) | set(split.test)
            assert union == set(range(20))
            assert len(split.train) + len(split.val) + len(split.test) == 20

    def test_object_mode_target_disjoint(self, rng):
        for corpus_seed in range(10):
            local = __import__("numpy").random.default_rng(corpus_seed)
            trials = [make_trial(
                game_id=f"g{i}", context_id=f"c{i}",
                object_ids=(f"t{local.integers(8)}", f"x{i}", f"y{i}"))
                for i in range(40)]
            for seed in SPLIT_SEEDS:
                split = make_split(trials, "object_generalization", seed=seed)
                train_targets = {trials[i].target_id for i in split.train}
                test_targets = {trials[i].target_id for i in split.test}
                assert not train_targets & test_targets

    def test_empty_partition_rejected(self):
        with pytest.raises(ValueError):
            make_split(self._trials(3), "language_generalization")


class TestTrialFiles:
    def test_roundtrip(self, tmp_path):
        trials = [make_trial(), make_trial(game_id="g1", listener_text="yes",
                                           difficulty="hard")]
        path = tmp_path / "trials.tsv"
        write_trials(trials, path)
        assert read_trials(path) == trials

    def test_escaping_tabs_and_newlines(self):
        trial = make_trial(speaker_text="line one\nwith\ttab")
        assert trial_from_line(trial_to_line(trial)) == trial

    @given(st.text(alphabet=st.characters(codec="utf-8",
                                          exclude_characters="\r"),
                   min_size=1, max_size=30))
    @settings(max_examples=100, deadline=None)
    def test_any_text_roundtrips(self, text):
        trial = make_trial(speaker_text=text)
        assert trial_from_line(trial_to_line(trial)) == trial
