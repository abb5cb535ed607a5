import numpy as np
import pytest

from trait_probe.manifest import load_manifest
from trait_probe.synth import SslSimSpec, SynthSpec, generate_corpus, generate_pseudo_ssl


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Small decay corpus shared by sweep/CLI tests: 48 utts, dim 16, 4 layers."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    spec = SynthSpec(
        n_speakers=12,
        utterances_per_speaker=4,
        age_classes=(6, 7, 8),
        duration_range_s=(0.4, 0.6),
        train_fraction=0.75,
        seed=11,
        ssl_sim=SslSimSpec(
            n_layers=4, dim=16, signal_decay_per_layer=0.6, signal_scale=3.0
        ),
    )
    manifest = generate_corpus(spec, root)
    generate_pseudo_ssl(spec, manifest, root / "features")

    from trait_probe.audio import mfcc, read_wav
    from trait_probe.feature_store import write_features

    for entry in manifest.entries:
        matrix = mfcc(read_wav(root / entry.audio_path))
        matrix.utterance_id = entry.utterance_id
        write_features(matrix, root / "features")
    return {"root": root, "spec": spec, "manifest": manifest}


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
