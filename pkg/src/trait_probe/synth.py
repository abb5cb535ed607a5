"""Deterministic synthetic children's-speech-like corpus generator.

Audio is source-filter synthesis: an impulse train at an age/gender-lawful
pitch drives three formant resonators whose frequencies scale with an
age-dependent vocal-tract factor, plus low-level noise. The optional
pseudo-SSL generator emits `.fmx` feature files whose class signal decays
geometrically with layer index, standing in for real extractor output.

All constants are declared artifact choices, not measurements.
"""

from __future__ import annotations

import wave as wave_module
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import ValidationError
from .feature_store import (
    MODEL_NONE,
    MODEL_SPECS,
    SOURCE_SSL,
    FeatureMatrix,
    write_features,
)
from .manifest import DatasetManifest, UtteranceEntry, save_manifest

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class SslSimSpec:
    n_layers: int
    dim: int
    signal_decay_per_layer: float
    signal_scale: float = 4.0
    noise_scale: float = 1.0
    frame_rate_hz: float = 50.0
    model_id: str | None = None  # None -> inferred from (n_layers, dim)

    def resolve_model_id(self) -> str:
        if self.model_id is not None:
            return self.model_id
        for spec in MODEL_SPECS.values():
            if (spec.n_layers, spec.dim) == (self.n_layers, self.dim):
                return spec.model_id
        return MODEL_NONE


@dataclass(frozen=True)
class SynthSpec:
    n_speakers: int
    utterances_per_speaker: int
    age_classes: tuple = (6, 7, 8, 9, 10, 11)
    gender_balance: float = 0.5  # fraction of male speakers
    f0_base_hz: float = 300.0
    f0_slope_hz_per_year: float = 10.0
    f0_gender_offset_hz: float = 15.0  # applied from gender_cue_age upward
    gender_cue_age: int = 10
    f0_jitter_hz: float = 2.0
    formants_hz: tuple = (500.0, 1500.0, 2500.0)
    formant_bandwidths_hz: tuple = (90.0, 110.0, 140.0)
    formant_scale_base: float = 1.3
    formant_scale_slope: float = 0.02
    duration_range_s: tuple = (1.0, 2.0)
    train_fraction: float = 0.8
    dataset_name: str = "synthetic"
    seed: int = 0
    ssl_sim: SslSimSpec | None = None

    def f0_law(self, age: int, gender: str) -> float:
        f0 = self.f0_base_hz - self.f0_slope_hz_per_year * (age - min(self.age_classes))
        if age >= self.gender_cue_age:
            f0 += -self.f0_gender_offset_hz if gender == "male" else self.f0_gender_offset_hz
        return f0

    def formant_scale(self, age: int) -> float:
        return self.formant_scale_base - self.formant_scale_slope * (
            age - min(self.age_classes)
        )

    def validate(self) -> None:
        if self.n_speakers < 1 or self.utterances_per_speaker < 1:
            raise ValidationError("corpus must contain at least one utterance")
        if not self.age_classes:
            raise ValidationError("need at least one age class")
        if not 0.0 <= self.gender_balance <= 1.0:
            raise ValidationError("gender balance must lie in [0, 1]")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError("train fraction must lie in (0, 1)")
        lo, hi = self.duration_range_s
        if not 0.0 < lo <= hi:
            raise ValidationError("bad duration range")
        for age in self.age_classes:
            for gender in ("male", "female"):
                if self.f0_law(age, gender) <= 0:
                    raise ValidationError(f"f0 law non-positive at age {age}")
            if self.formant_scale(age) <= 0:
                raise ValidationError(f"formant scale non-positive at age {age}")
        if self.ssl_sim is not None:
            sim = self.ssl_sim
            if not 0.0 <= sim.signal_decay_per_layer <= 1.0:
                raise ValidationError("signal decay must lie in [0, 1]")
            if sim.n_layers < 1 or sim.dim < 1:
                raise ValidationError("pseudo-SSL needs n_layers >= 1 and dim >= 1")


@dataclass(frozen=True)
class _Speaker:
    speaker_id: str
    age: int
    gender: str
    split: str


def _build_roster(spec: SynthSpec) -> list[_Speaker]:
    n = spec.n_speakers
    ages = [spec.age_classes[i % len(spec.age_classes)] for i in range(n)]
    n_male = int(round(spec.gender_balance * n))
    # Bresenham spread keeps genders interleaved across the age cycle
    genders = [
        "male" if (i + 1) * n_male // n > i * n_male // n else "female"
        for i in range(n)
    ]
    by_class: dict[int, list[int]] = {}
    for i, age in enumerate(ages):
        by_class.setdefault(age, []).append(i)
    splits = [""] * n
    for age, members in sorted(by_class.items()):
        n_tr = max(1, int(round(spec.train_fraction * len(members))))
        if len(members) >= 2:
            n_tr = min(n_tr, len(members) - 1)
        for rank, i in enumerate(members):
            splits[i] = "train" if rank < n_tr else "test"
    return [
        _Speaker(f"spk{i:03d}", ages[i], genders[i], splits[i]) for i in range(n)
    ]


def _utterance_rng(seed: int, utt_index: int, stream: int):
    """Independent per-utterance stream (seed, index) so parallel order is moot."""
    return np.random.default_rng([seed, utt_index, stream])


def _synthesize(spec: SynthSpec, speaker: _Speaker, rng) -> np.ndarray:
    lo, hi = spec.duration_range_s
    duration = float(rng.uniform(lo, hi))
    n = int(round(duration * SAMPLE_RATE))
    f0 = spec.f0_law(speaker.age, speaker.gender) + spec.f0_jitter_hz * float(
        rng.standard_normal()
    )
    period = SAMPLE_RATE / f0
    pulse_positions = np.round(np.arange(0.0, n, period)).astype(np.int64)
    source = np.zeros(n)
    source[pulse_positions[pulse_positions < n]] = 1.0

    scale = spec.formant_scale(speaker.age)
    y = source
    for freq, bw in zip(spec.formants_hz, spec.formant_bandwidths_hz):
        omega = 2.0 * np.pi * freq * scale / SAMPLE_RATE
        r = np.exp(-np.pi * bw / SAMPLE_RATE)
        y = lfilter([1.0 - r], [1.0, -2.0 * r * np.cos(omega), r * r], y)
    peak = np.abs(y).max()
    if peak > 0:
        y = y / peak  # unit peak before mixing in the noise floor
    y = y + 0.01 * rng.standard_normal(n)
    return 0.6 * y / np.abs(y).max()


def _write_wav(path: Path, samples: np.ndarray) -> None:
    pcm = np.clip(np.round(samples * 32767.0), -32768, 32767).astype("<i2")
    with wave_module.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(pcm.tobytes())


def generate_corpus(spec: SynthSpec, out_dir) -> DatasetManifest:
    """Write WAV files plus a manifest; bitwise deterministic per seed."""
    spec.validate()
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)

    roster = _build_roster(spec)
    entries = []
    utt_index = 0
    for speaker in roster:
        for j in range(spec.utterances_per_speaker):
            rng = _utterance_rng(spec.seed, utt_index, 0)
            samples = _synthesize(spec, speaker, rng)
            utt_id = f"{speaker.speaker_id}_u{j:03d}"
            rel_path = f"audio/{utt_id}.wav"
            _write_wav(out_dir / rel_path, samples)
            entries.append(
                UtteranceEntry(
                    utterance_id=utt_id,
                    speaker_id=speaker.speaker_id,
                    audio_path=rel_path,
                    age_class=speaker.age,
                    gender=speaker.gender,
                    split=speaker.split,
                    duration_s=len(samples) / SAMPLE_RATE,
                )
            )
            utt_index += 1

    manifest = DatasetManifest(
        dataset_name=spec.dataset_name,
        age_range=(min(spec.age_classes), max(spec.age_classes)),
        speaker_disjoint=True,
        entries=entries,
    )
    manifest.validate()
    save_manifest(manifest, out_dir / "manifest.txt")
    return manifest


def _class_directions(spec: SynthSpec) -> tuple[dict, dict]:
    sim = spec.ssl_sim
    rng = np.random.default_rng([spec.seed, 0xD1AEC])
    age_dirs = {}
    for age in sorted(set(spec.age_classes)):
        v = rng.standard_normal(sim.dim)
        age_dirs[age] = v / np.linalg.norm(v)
    gender_dirs = {}
    for gender in ("male", "female"):
        v = rng.standard_normal(sim.dim)
        gender_dirs[gender] = v / np.linalg.norm(v)
    return age_dirs, gender_dirs


def generate_pseudo_ssl(spec: SynthSpec, manifest: DatasetManifest, out_dir) -> int:
    """Emit per-layer `.fmx` files with geometrically decaying class signal.

    Layer l of an utterance is `signal_scale * decay**l * (age_dir + gender_dir)`
    plus `noise_scale` white noise, one independent noise draw per layer.
    Returns the number of files written.
    """
    spec.validate()
    if spec.ssl_sim is None:
        raise ValidationError("spec has no ssl_sim section")
    sim = spec.ssl_sim
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_id = sim.resolve_model_id()
    age_dirs, gender_dirs = _class_directions(spec)

    count = 0
    order = {e.utterance_id: i for i, e in enumerate(manifest.entries)}
    for entry in manifest.entries:
        rng = _utterance_rng(spec.seed, order[entry.utterance_id], 1)
        frames = max(5, int(round(entry.duration_s * sim.frame_rate_hz)))
        signal_dir = age_dirs[entry.age_class] + gender_dirs[entry.gender]
        for layer in range(sim.n_layers):
            amplitude = sim.signal_scale * sim.signal_decay_per_layer**layer
            data = sim.noise_scale * rng.standard_normal((frames, sim.dim))
            data += amplitude * signal_dir
            matrix = FeatureMatrix(
                utterance_id=entry.utterance_id,
                source=SOURCE_SSL,
                model_id=model_id,
                layer=layer,
                data=data.astype(np.float32),
            )
            write_features(matrix, out_dir)
            count += 1
    return count
