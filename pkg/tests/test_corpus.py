import dataclasses
import json

import numpy as np
import pytest

from awekit import blobio
from awekit.corpus import (
    CorpusSpec,
    load_manifest,
    sample_vi_pair,
    save_manifest,
    synth_corpus,
    validate_bundle,
)
from awekit.errors import (
    FormatError,
    IntegrityError,
    NoPairAvailableError,
    ValidationError,
)
from awekit.features import FeatureSequence


def small_spec(**kw):
    base = dict(
        num_words_lang_a=2,
        num_words_lang_b=2,
        num_speakers=4,
        instances_per_word_per_speaker=3,
        num_search_utterances=4,
        words_per_utterance=(2, 3),
        seed=42,
    )
    base.update(kw)
    return CorpusSpec(**base)


class TestSpecValidation:
    def test_counts_must_be_positive(self):
        with pytest.raises(ValidationError, match="num_speakers"):
            small_spec(num_speakers=0)

    def test_word_len_range_order(self):
        with pytest.raises(ValidationError, match="word_len_frames"):
            small_spec(word_len_frames=(10, 5))

    def test_negative_noise(self):
        with pytest.raises(ValidationError, match="noise_sigma"):
            small_spec(noise_sigma=-0.1)

    def test_warp_range(self):
        with pytest.raises(ValidationError, match="time_warp_spread"):
            small_spec(time_warp_spread=0.5)


class TestSynthCorpus:
    def test_degenerate_spec_gives_identical_instances(self):
        spec = small_spec(
            noise_sigma=0.0,
            time_warp_spread=0.0,
            speaker_gain_spread=0.0,
            speaker_bias_spread=0.0,
        )
        bundle = synth_corpus(spec)
        pool = list(bundle.train_instances) + list(bundle.template_instances)
        by_word = {}
        for inst in pool:
            by_word.setdefault(inst.word_id, []).append(inst)
        for word, instances in by_word.items():
            ref = instances[0].features.frames
            for inst in instances[1:]:
                np.testing.assert_array_equal(inst.features.frames, ref)

    def test_determinism(self):
        spec = small_spec()
        a, b = synth_corpus(spec), synth_corpus(spec)
        assert a == b

    def test_training_pool_count_before_split(self):
        bundle = synth_corpus(small_spec())
        # 2 words/lang * 2 langs * 4 speakers * 3 instances = 48
        assert len(bundle.train_instances) + len(bundle.template_instances) == 48

    def test_speaker_disjointness(self):
        bundle = synth_corpus(small_spec())
        validate_bundle(bundle)
        train = {i.speaker_id for i in bundle.train_instances}
        held = {i.speaker_id for i in bundle.template_instances}
        assert not train & held
        assert held == set(bundle.spec.held_out_speakers)

    def test_occurrences_within_bounds_and_disjoint(self):
        bundle = synth_corpus(small_spec())
        lengths = dict((uid, seq.num_frames) for uid, seq in bundle.utterances)
        per_utt = {}
        for occ in bundle.ground_truth:
            assert 0 <= occ.start_frame < occ.end_frame <= lengths[occ.utterance_id]
            per_utt.setdefault(occ.utterance_id, []).append(occ)
        for occs in per_utt.values():
            occs.sort(key=lambda o: o.start_frame)
            for prev, nxt in zip(occs, occs[1:]):
                assert prev.end_frame <= nxt.start_frame

    def test_occurrence_frames_match_planted_words(self):
        spec = small_spec(noise_sigma=0.0)
        bundle = synth_corpus(spec)
        utts = dict(bundle.utterances)
        for occ in bundle.ground_truth[:4]:
            segment = utts[occ.utterance_id].frames[occ.start_frame : occ.end_frame]
            assert segment.shape[0] == occ.end_frame - occ.start_frame
            assert np.abs(segment).max() > 0  # words are non-silent

    def test_utterances_mix_languages(self):
        bundle = synth_corpus(small_spec(num_search_utterances=10))
        langs_seen = set()
        per_utt = {}
        for occ in bundle.ground_truth:
            per_utt.setdefault(occ.utterance_id, set()).add(
                bundle.spec.word_language(occ.word_id)
            )
        for langs in per_utt.values():
            langs_seen |= langs
            if len(langs) == 2:
                break
        assert langs_seen == {0, 1}

    def test_language_mapping(self):
        spec = small_spec()
        assert spec.word_language(0) == 0
        assert spec.word_language(1) == 0
        assert spec.word_language(2) == 1
        assert spec.word_language(3) == 1


class TestSampleViPair:
    def test_single_speaker_raises(self):
        bundle = synth_corpus(small_spec())
        solo = [i for i in bundle.train_instances if i.speaker_id == 0][:4]
        with pytest.raises(NoPairAvailableError):
            sample_vi_pair(solo, np.random.default_rng(0))

    def test_forced_pair(self):
        bundle = synth_corpus(small_spec(instances_per_word_per_speaker=1))
        pool = [
            i
            for i in bundle.train_instances
            if i.word_id == 0 and i.speaker_id in (0, 1)
        ]
        assert len(pool) == 2
        a, b = sample_vi_pair(pool, np.random.default_rng(0))
        assert {a.speaker_id, b.speaker_id} == {0, 1}
        assert a.word_id == b.word_id == 0

    def test_partner_never_shares_speaker(self):
        bundle = synth_corpus(small_spec())
        pool = [i for i in bundle.train_instances if i.word_id == 1]
        rng = np.random.default_rng(1)
        for _ in range(10_000):
            a, b = sample_vi_pair(pool, rng)
            assert a.word_id == b.word_id
            assert a.speaker_id != b.speaker_id


class TestManifestRoundTrip:
    def test_round_trip_identity(self, tmp_path):
        bundle = synth_corpus(small_spec())
        save_manifest(bundle, tmp_path)
        assert load_manifest(tmp_path) == bundle

    def test_empty_directory(self, tmp_path):
        with pytest.raises(FormatError):
            load_manifest(tmp_path)

    def test_truncated_blob(self, tmp_path):
        bundle = synth_corpus(small_spec())
        save_manifest(bundle, tmp_path)
        blob = sorted(tmp_path.glob("train_*.awef"))[0]
        blob.write_bytes(blob.read_bytes()[:-8])
        with pytest.raises(IntegrityError, match=blob.name):
            load_manifest(tmp_path)

    def test_tampered_blob_fails_checksum(self, tmp_path):
        bundle = synth_corpus(small_spec())
        save_manifest(bundle, tmp_path)
        blob = sorted(tmp_path.glob("tmpl_*.awef"))[0]
        raw = bytearray(blob.read_bytes())
        raw[-1] ^= 0xFF
        blob.write_bytes(bytes(raw))
        with pytest.raises(IntegrityError, match="checksum"):
            load_manifest(tmp_path)

    def test_save_is_deterministic(self, tmp_path):
        bundle = synth_corpus(small_spec())
        d1, d2 = tmp_path / "a", tmp_path / "b"
        save_manifest(bundle, d1)
        save_manifest(bundle, d2)
        for p1 in sorted(d1.iterdir()):
            assert p1.read_bytes() == (d2 / p1.name).read_bytes()


class TestBlobFormat:
    def test_header_layout(self, tmp_path):
        path = tmp_path / "m.awef"
        blobio.write_blob(path, np.arange(6, dtype=np.float32).reshape(2, 3))
        raw = path.read_bytes()
        assert raw[:4] == b"AWEF"
        assert int.from_bytes(raw[8:12], "little") == 2  # rows
        assert int.from_bytes(raw[12:16], "little") == 3  # cols
        assert len(raw) == 16 + 24

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.awef"
        blobio.write_blob(path, np.zeros((1, 1), dtype=np.float32))
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            blobio.read_blob(path)
