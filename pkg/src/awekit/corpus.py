"""Synthetic two-language code-switching corpus generation and manifest I/O.

Each word gets a prototype trajectory (smoothed Gaussian random walk); each
speaker applies a per-dimension affine transform plus a global linear time
warp. Search utterances concatenate silence and word blocks with exact
ground-truth occurrence records.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blobio import blob_checksum, read_blob, write_blob
from .errors import (
    FormatError,
    IntegrityError,
    NoPairAvailableError,
    ValidationError,
)
from .features import FeatureSequence

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

# Scale of the per-frame Gaussian steps building each word prototype.
PROTO_STEP_STD = 0.2
# Fraction of speakers held out for templates and search utterances.
HELD_OUT_FRACTION = 0.25


@dataclass(frozen=True)
class CorpusSpec:
    num_words_lang_a: int = 10
    num_words_lang_b: int = 10
    num_speakers: int = 8
    instances_per_word_per_speaker: int = 5
    feature_dim: int = 64
    word_len_frames: tuple[int, int] = (24, 40)
    speaker_gain_spread: float = 0.15
    speaker_bias_spread: float = 0.10
    noise_sigma: float = 0.05
    time_warp_spread: float = 0.10
    num_search_utterances: int = 30
    words_per_utterance: tuple[int, int] = (3, 5)
    silence_len_frames: tuple[int, int] = (10, 20)
    seed: int = 0

    def __post_init__(self):
        for name in (
            "num_words_lang_a",
            "num_words_lang_b",
            "num_speakers",
            "instances_per_word_per_speaker",
            "feature_dim",
            "num_search_utterances",
        ):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("word_len_frames", "words_per_utterance", "silence_len_frames"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValidationError(f"{name} must satisfy 1 <= min <= max, got ({lo}, {hi})")
        for name in ("speaker_gain_spread", "speaker_bias_spread", "noise_sigma"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.time_warp_spread < 0.5:
            raise ValidationError(
                f"time_warp_spread must be in [0, 0.5), got {self.time_warp_spread}"
            )

    @property
    def num_words(self) -> int:
        return self.num_words_lang_a + self.num_words_lang_b

    def word_language(self, word_id: int) -> int:
        return 0 if word_id < self.num_words_lang_a else 1

    @property
    def num_held_out_speakers(self) -> int:
        return math.ceil(self.num_speakers * HELD_OUT_FRACTION)

    @property
    def held_out_speakers(self) -> tuple[int, ...]:
        first = self.num_speakers - self.num_held_out_speakers
        return tuple(range(first, self.num_speakers))

    def to_dict(self) -> dict:
        return {
            "num_words_lang_a": self.num_words_lang_a,
            "num_words_lang_b": self.num_words_lang_b,
            "num_speakers": self.num_speakers,
            "instances_per_word_per_speaker": self.instances_per_word_per_speaker,
            "feature_dim": self.feature_dim,
            "word_len_frames": list(self.word_len_frames),
            "speaker_gain_spread": self.speaker_gain_spread,
            "speaker_bias_spread": self.speaker_bias_spread,
            "noise_sigma": self.noise_sigma,
            "time_warp_spread": self.time_warp_spread,
            "num_search_utterances": self.num_search_utterances,
            "words_per_utterance": list(self.words_per_utterance),
            "silence_len_frames": list(self.silence_len_frames),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        d = dict(d)
        for name in ("word_len_frames", "words_per_utterance", "silence_len_frames"):
            if name in d:
                d[name] = tuple(d[name])
        return cls(**d)


@dataclass(frozen=True)
class WordInstance:
    word_id: int
    speaker_id: int
    language_id: int
    features: FeatureSequence


@dataclass(frozen=True)
class Occurrence:
    utterance_id: int
    word_id: int
    start_frame: int
    end_frame: int  # exclusive

    def __post_init__(self):
        if not 0 <= self.start_frame < self.end_frame:
            raise ValidationError(
                f"occurrence frames invalid: [{self.start_frame}, {self.end_frame})"
            )


@dataclass(frozen=True)
class CorpusBundle:
    spec: CorpusSpec
    train_instances: tuple[WordInstance, ...]
    template_instances: tuple[WordInstance, ...]
    utterances: tuple[tuple[int, FeatureSequence], ...]
    ground_truth: tuple[Occurrence, ...]

    @property
    def manifest(self) -> dict:
        """Structured index over the bundle contents."""
        return {
            "spec": self.spec.to_dict(),
            "num_train_instances": len(self.train_instances),
            "num_template_instances": len(self.template_instances),
            "num_utterances": len(self.utterances),
            "num_occurrences": len(self.ground_truth),
            "word_language": {
                str(w): self.spec.word_language(w) for w in range(self.spec.num_words)
            },
            "held_out_speakers": list(self.spec.held_out_speakers),
        }


def _smooth3(x: np.ndarray) -> np.ndarray:
    """3-frame moving average, edges averaged over available neighbors."""
    t = x.shape[0]
    out = x.copy()
    if t >= 2:
        out[1:-1] = (x[:-2] + x[1:-1] + x[2:]) / 3.0
        out[0] = (x[0] + x[1]) / 2.0
        out[-1] = (x[-2] + x[-1]) / 2.0
    return out


def _linear_time_warp(proto: np.ndarray, factor: float) -> np.ndarray:
    t = proto.shape[0]
    target = max(1, int(round(t * factor)))
    if target == t:
        return proto.copy()
    src = np.linspace(0.0, t - 1.0, target)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, t - 1)
    frac = (src - lo)[:, None]
    return proto[lo] * (1.0 - frac) + proto[hi] * frac


def synth_corpus(spec: CorpusSpec) -> CorpusBundle:
    """Generate a deterministic synthetic corpus from a spec and its seed."""
    rng = np.random.default_rng(spec.seed)
    d = spec.feature_dim
    lo, hi = spec.word_len_frames

    protos = []
    for _ in range(spec.num_words):
        length = int(rng.integers(lo, hi + 1))
        steps = rng.normal(0.0, PROTO_STEP_STD, size=(length, d))
        protos.append(_smooth3(np.cumsum(steps, axis=0)))

    gains = np.empty((spec.num_speakers, d))
    biases = np.empty((spec.num_speakers, d))
    warps = np.empty(spec.num_speakers)
    for s in range(spec.num_speakers):
        gains[s] = 1.0 + rng.normal(0.0, spec.speaker_gain_spread, size=d)
        biases[s] = rng.normal(0.0, spec.speaker_bias_spread, size=d)
        warps[s] = 1.0 + rng.uniform(-spec.time_warp_spread, spec.time_warp_spread)

    def render_instance(word_id: int, speaker_id: int) -> WordInstance:
        feat = _linear_time_warp(protos[word_id], warps[speaker_id])
        feat = feat * gains[speaker_id] + biases[speaker_id]
        feat = feat + rng.normal(0.0, spec.noise_sigma, size=feat.shape)
        return WordInstance(
            word_id=word_id,
            speaker_id=speaker_id,
            language_id=spec.word_language(word_id),
            features=FeatureSequence(frames=feat.astype(np.float32)),
        )

    held = set(spec.held_out_speakers)
    train, templates = [], []
    for word_id in range(spec.num_words):
        for speaker_id in range(spec.num_speakers):
            for _ in range(spec.instances_per_word_per_speaker):
                inst = render_instance(word_id, speaker_id)
                (templates if speaker_id in held else train).append(inst)

    held_list = sorted(held)
    sil_lo, sil_hi = spec.silence_len_frames
    wpu_lo, wpu_hi = spec.words_per_utterance

    def silence_block() -> np.ndarray:
        length = int(rng.integers(sil_lo, sil_hi + 1))
        return rng.normal(0.0, spec.noise_sigma, size=(length, d))

    utterances = []
    ground_truth = []
    for utt_id in range(spec.num_search_utterances):
        k = int(rng.integers(wpu_lo, wpu_hi + 1))
        words = list(rng.integers(0, spec.num_words, size=k))
        langs = {spec.word_language(int(w)) for w in words}
        if k >= 2 and len(langs) == 1 and spec.num_words_lang_a and spec.num_words_lang_b:
            # force code-switching: swap the last word into the missing language
            other = 1 - langs.pop()
            base = 0 if other == 0 else spec.num_words_lang_a
            count = spec.num_words_lang_a if other == 0 else spec.num_words_lang_b
            words[-1] = base + int(rng.integers(0, count))
        blocks = [silence_block()]
        cursor = blocks[0].shape[0]
        for w in words:
            speaker = held_list[int(rng.integers(0, len(held_list)))]
            inst = render_instance(int(w), speaker)
            t = inst.features.num_frames
            ground_truth.append(
                Occurrence(
                    utterance_id=utt_id,
                    word_id=int(w),
                    start_frame=cursor,
                    end_frame=cursor + t,
                )
            )
            blocks.append(inst.features.frames.astype(np.float64))
            cursor += t
            sil = silence_block()
            blocks.append(sil)
            cursor += sil.shape[0]
        feat = np.concatenate(blocks, axis=0).astype(np.float32)
        utterances.append((utt_id, FeatureSequence(frames=feat)))

    return CorpusBundle(
        spec=spec,
        train_instances=tuple(train),
        template_instances=tuple(templates),
        utterances=tuple(utterances),
        ground_truth=tuple(ground_truth),
    )


def sample_vi_pair(instances, rng) -> tuple[WordInstance, WordInstance]:
    """Draw (anchor, partner) sharing a word id but from different speakers.

    The anchor is uniform over instances that have at least one valid
    partner; the partner is uniform over the anchor's partners.
    """
    by_word: dict[int, list[WordInstance]] = {}
    for inst in instances:
        by_word.setdefault(inst.word_id, []).append(inst)
    anchors = [
        inst
        for inst in instances
        if any(o.speaker_id != inst.speaker_id for o in by_word[inst.word_id])
    ]
    if not anchors:
        raise NoPairAvailableError(
            "no word has instances from two distinct speakers"
        )
    anchor = anchors[int(rng.integers(0, len(anchors)))]
    partners = [o for o in by_word[anchor.word_id] if o.speaker_id != anchor.speaker_id]
    partner = partners[int(rng.integers(0, len(partners)))]
    return anchor, partner


def validate_bundle(bundle: CorpusBundle) -> None:
    """Assert the bundle invariants; raises ValidationError on violation."""
    train_speakers = {i.speaker_id for i in bundle.train_instances}
    eval_speakers = {i.speaker_id for i in bundle.template_instances}
    overlap = train_speakers & eval_speakers
    if overlap:
        raise ValidationError(f"speakers {sorted(overlap)} appear in both splits")
    utt_len = {uid: seq.num_frames for uid, seq in bundle.utterances}
    last_end: dict[int, int] = {}
    for occ in bundle.ground_truth:
        if occ.word_id not in range(bundle.spec.num_words):
            raise ValidationError(f"occurrence references unknown word {occ.word_id}")
        if occ.utterance_id not in utt_len:
            raise ValidationError(f"occurrence references unknown utterance {occ.utterance_id}")
        if occ.end_frame > utt_len[occ.utterance_id]:
            raise ValidationError(
                f"occurrence [{occ.start_frame}, {occ.end_frame}) exceeds utterance "
                f"{occ.utterance_id} length {utt_len[occ.utterance_id]}"
            )
        if occ.start_frame < last_end.get(occ.utterance_id, 0):
            raise ValidationError(f"overlapping occurrences in utterance {occ.utterance_id}")
        last_end[occ.utterance_id] = occ.end_frame


def _write_instance(directory: Path, stem: str, inst: WordInstance) -> dict:
    blob = f"{stem}.awef"
    write_blob(directory / blob, inst.features.frames)
    return {
        "word_id": inst.word_id,
        "speaker_id": inst.speaker_id,
        "language_id": inst.language_id,
        "blob": blob,
        "rows": inst.features.num_frames,
        "cols": inst.features.dim,
        "crc32": blob_checksum(directory / blob),
    }


def save_manifest(bundle: CorpusBundle, directory) -> None:
    """Write the bundle as a JSON index plus one AWEF blob per matrix."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = {"train": [], "templates": [], "utterances": []}
    for i, inst in enumerate(bundle.train_instances):
        records["train"].append(_write_instance(directory, f"train_{i:05d}", inst))
    for i, inst in enumerate(bundle.template_instances):
        records["templates"].append(_write_instance(directory, f"tmpl_{i:05d}", inst))
    for uid, seq in bundle.utterances:
        blob = f"utt_{uid:05d}.awef"
        write_blob(directory / blob, seq.frames)
        records["utterances"].append(
            {
                "utterance_id": uid,
                "blob": blob,
                "rows": seq.num_frames,
                "cols": seq.dim,
                "crc32": blob_checksum(directory / blob),
            }
        )
    index = {
        "version": MANIFEST_VERSION,
        "spec": bundle.spec.to_dict(),
        **records,
        "ground_truth": [
            {
                "utterance_id": o.utterance_id,
                "word_id": o.word_id,
                "start_frame": o.start_frame,
                "end_frame": o.end_frame,
            }
            for o in bundle.ground_truth
        ],
    }
    with open(directory / MANIFEST_NAME, "w") as f:
        json.dump(index, f, indent=1, sort_keys=True)
        f.write("\n")


def _read_record_blob(directory: Path, rec: dict) -> np.ndarray:
    path = directory / rec["blob"]
    if not path.exists():
        raise FormatError(f"missing feature blob {path}")
    if blob_checksum(path) != rec["crc32"]:
        raise IntegrityError(f"checksum mismatch for blob {path}")
    frames = read_blob(path)
    if frames.shape != (rec["rows"], rec["cols"]):
        raise IntegrityError(
            f"blob {path} has shape {frames.shape}, manifest says ({rec['rows']}, {rec['cols']})"
        )
    return frames


def load_manifest(directory) -> CorpusBundle:
    directory = Path(directory)
    index_path = directory / MANIFEST_NAME
    if not index_path.exists():
        raise FormatError(f"no {MANIFEST_NAME} in {directory}")
    try:
        index = json.loads(index_path.read_text())
    except json.JSONDecodeError as e:
        raise IntegrityError(f"corrupt manifest {index_path}: {e}") from e
    if index.get("version") != MANIFEST_VERSION:
        raise FormatError(f"unsupported manifest version {index.get('version')}")
    spec = CorpusSpec.from_dict(index["spec"])

    def load_instances(records):
        return tuple(
            WordInstance(
                word_id=rec["word_id"],
                speaker_id=rec["speaker_id"],
                language_id=rec["language_id"],
                features=FeatureSequence(frames=_read_record_blob(directory, rec)),
            )
            for rec in records
        )

    utterances = tuple(
        (rec["utterance_id"], FeatureSequence(frames=_read_record_blob(directory, rec)))
        for rec in index["utterances"]
    )
    ground_truth = tuple(
        Occurrence(
            utterance_id=rec["utterance_id"],
            word_id=rec["word_id"],
            start_frame=rec["start_frame"],
            end_frame=rec["end_frame"],
        )
        for rec in index["ground_truth"]
    )
    return CorpusBundle(
        spec=spec,
        train_instances=load_instances(index["train"]),
        template_instances=load_instances(index["templates"]),
        utterances=utterances,
        ground_truth=ground_truth,
    )
