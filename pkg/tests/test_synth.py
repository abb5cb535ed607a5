import numpy as np
import pytest

from trait_probe.audio import read_wav
from trait_probe.errors import ValidationError
from trait_probe.feature_store import read_features, scan_store
from trait_probe.manifest import load_manifest, summarize
from trait_probe.synth import (
    SslSimSpec,
    SynthSpec,
    generate_corpus,
    generate_pseudo_ssl,
)


def estimate_f0(samples, rate=16000, fmin=150.0, fmax=420.0):
    """Autocorrelation pitch estimate with parabolic peak refinement."""
    x = np.asarray(samples, dtype=np.float64)
    x = x - x.mean()
    start = len(x) // 4
    seg = x[start : start + 4000]
    ac = np.correlate(seg, seg, mode="full")[len(seg) - 1 :]
    lag_lo = int(rate / fmax)
    lag_hi = int(rate / fmin)
    lag = lag_lo + int(np.argmax(ac[lag_lo : lag_hi + 1]))
    y0, y1, y2 = ac[lag - 1], ac[lag], ac[lag + 1]
    denom = y0 - 2 * y1 + y2
    if denom != 0:
        lag = lag + 0.5 * (y0 - y2) / denom
    return rate / lag


def test_zero_utterances_rejected():
    with pytest.raises(ValidationError):
        SynthSpec(n_speakers=0, utterances_per_speaker=4).validate()
    with pytest.raises(ValidationError):
        SynthSpec(n_speakers=3, utterances_per_speaker=0).validate()


def test_small_corpus_round_trips(tmp_path):
    spec = SynthSpec(
        n_speakers=2, utterances_per_speaker=2, age_classes=(6, 7),
        duration_range_s=(0.3, 0.4), seed=5,
    )
    manifest = generate_corpus(spec, tmp_path)
    wavs = sorted((tmp_path / "audio").glob("*.wav"))
    assert len(wavs) == 4
    loaded = load_manifest(tmp_path / "manifest.txt")
    assert loaded.entries == manifest.entries
    loaded.validate()


def test_corpus_determinism(tmp_path):
    spec = SynthSpec(
        n_speakers=3, utterances_per_speaker=2, age_classes=(6, 7, 8),
        duration_range_s=(0.3, 0.4), seed=9,
        ssl_sim=SslSimSpec(n_layers=2, dim=8, signal_decay_per_layer=0.5),
    )
    for d in ("a", "b"):
        manifest = generate_corpus(spec, tmp_path / d)
        generate_pseudo_ssl(spec, manifest, tmp_path / d / "features")
    files_a = sorted((tmp_path / "a").rglob("*.*"))
    files_b = sorted((tmp_path / "b").rglob("*.*"))
    assert [f.name for f in files_a] == [f.name for f in files_b]
    for fa, fb in zip(files_a, files_b):
        assert fa.read_bytes() == fb.read_bytes(), fa.name


def test_f0_follows_law(tmp_path):
    spec = SynthSpec(
        n_speakers=6, utterances_per_speaker=1, age_classes=(6, 9, 11),
        duration_range_s=(0.8, 1.0), seed=21,
    )
    manifest = generate_corpus(spec, tmp_path)
    by_speaker = {e.speaker_id: e for e in manifest.entries}
    for entry in by_speaker.values():
        wave = read_wav(tmp_path / entry.audio_path)
        estimated = estimate_f0(wave.samples)
        expected = spec.f0_law(entry.age_class, entry.gender)
        assert abs(estimated - expected) <= 10.0, (
            entry.utterance_id, estimated, expected,
        )


def test_generator_bookkeeping_20_20(tmp_path):
    # 8 speakers x 5 utts, half of each age group held out -> 20 train / 20 test
    spec = SynthSpec(
        n_speakers=8, utterances_per_speaker=5, age_classes=(5, 6, 7, 8),
        duration_range_s=(0.3, 0.35), train_fraction=0.5, seed=2,
    )
    manifest = generate_corpus(spec, tmp_path)
    assert len(manifest.entries) == 40
    table = summarize(manifest)
    assert table.train.n_utterances == 20
    assert table.test.n_utterances == 20


def pseudo_corpus(tmp_path, decay, noise, dim=12, layers=4, seed=13, speakers=6):
    spec = SynthSpec(
        n_speakers=speakers, utterances_per_speaker=3, age_classes=(6, 7, 8),
        duration_range_s=(0.3, 0.5), seed=seed,
        ssl_sim=SslSimSpec(
            n_layers=layers, dim=dim, signal_decay_per_layer=decay,
            signal_scale=3.0, noise_scale=noise,
        ),
    )
    manifest = generate_corpus(spec, tmp_path)
    count = generate_pseudo_ssl(spec, manifest, tmp_path / "features")
    assert count == len(manifest.entries) * layers
    return spec, manifest


def layer_features(tmp_path, manifest, layer, split):
    handles = scan_store(
        tmp_path / "features", manifest, source="ssl", model_id="none",
        layer=layer, split=split,
    )
    return handles


def test_decay_one_layers_identical(tmp_path):
    _, manifest = pseudo_corpus(tmp_path, decay=1.0, noise=0.0)
    entry = manifest.entries[0]
    mats = [
        read_features(
            tmp_path / "features" / f"{entry.utterance_id}.none.L{layer}.fmx"
        ).data
        for layer in range(4)
    ]
    for m in mats[1:]:
        assert np.abs(m - mats[0]).max() < 1e-6


def test_decay_ratio_point_seven(tmp_path):
    spec, manifest = pseudo_corpus(
        tmp_path, decay=0.7, noise=0.0, dim=16, layers=5, speakers=9
    )
    ages = sorted({e.age_class for e in manifest.entries})
    separations = []
    for layer in range(5):
        means = {}
        for age in ages:
            rows = []
            for e in manifest.entries:
                if e.age_class != age:
                    continue
                m = read_features(
                    tmp_path / "features" / f"{e.utterance_id}.none.L{layer}.fmx"
                )
                rows.append(m.data.mean(axis=0))
            means[age] = np.mean(rows, axis=0)
        separations.append(np.linalg.norm(means[ages[0]] - means[ages[1]]))
    for a, b in zip(separations[1:], separations[:-1]):
        assert abs(a / b - 0.7) < 1e-3


def test_decay_zero_pure_noise_at_chance(tmp_path):
    from trait_probe.nn import ClassifierConfig, TrainConfig, predict, train

    spec = SynthSpec(
        n_speakers=20, utterances_per_speaker=4, age_classes=(6, 7, 8),
        duration_range_s=(0.4, 0.6), train_fraction=0.5, seed=31,
        ssl_sim=SslSimSpec(n_layers=6, dim=12, signal_decay_per_layer=0.0,
                           signal_scale=4.0, noise_scale=1.0),
    )
    manifest = generate_corpus(spec, tmp_path)
    generate_pseudo_ssl(spec, manifest, tmp_path / "features")

    handles_tr = layer_features(tmp_path, manifest, 5, "train")
    handles_te = layer_features(tmp_path, manifest, 5, "test")
    ages = {6: 0, 7: 1, 8: 2}
    feats = [h.load().data.astype(float) for h in handles_tr]
    labels = np.array([ages[h.entry.age_class] for h in handles_tr])
    model, _ = train(
        feats, labels,
        ClassifierConfig(in_dim=12, n_classes=3, conv_channels=(8, 8, 8)),
        TrainConfig(max_epochs=6, patience=2, seed=3),
    )
    correct = [
        predict(model, h.load().data.astype(float))[0] == ages[h.entry.age_class]
        for h in handles_te
    ]
    accuracy = np.mean(correct)
    assert abs(accuracy - 1 / 3) <= 0.1 + 1e-9


def test_pseudo_files_pass_validation(tmp_path):
    _, manifest = pseudo_corpus(tmp_path, decay=0.5, noise=1.0)
    for split in ("train", "test"):
        for layer in range(4):
            for handle in layer_features(tmp_path, manifest, layer, split):
                handle.load().validate()


def test_model_id_inference():
    assert SslSimSpec(13, 768, 0.7).resolve_model_id() == "base-100h"
    assert SslSimSpec(25, 1024, 0.7).resolve_model_id() == "large-960h-lv60"
    assert SslSimSpec(4, 16, 0.7).resolve_model_id() == "none"
