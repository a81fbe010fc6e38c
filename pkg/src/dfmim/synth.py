"""Synthetic labeled speech-like corpus for pipeline smoke tests.

Each class has its own acoustic signature; speakers shift pitch and gain
and add a little background noise, so folds stay speaker independent
without making the task trivial for a given speaker.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dsp import TARGET_RATE, write_wav
from .folds import ManifestRow, write_manifest

CLASS_LABELS = ("angry", "happy", "neutral", "sad")


def _signature(label: str, t: np.ndarray, pitch: float, rng: np.random.Generator) -> np.ndarray:
    if label == "angry":
        # buzzy harmonic stack on a low fundamental
        f0 = 180.0 * pitch
        return sum(np.sin(2 * np.pi * k * f0 * t) / k for k in range(1, 8))
    if label == "happy":
        return np.sin(2 * np.pi * 1000.0 * pitch * t)
    if label == "neutral":
        return rng.standard_normal(t.size) * 0.5
    if label == "sad":
        carrier = np.sin(2 * np.pi * 3000.0 * pitch * t)
        return carrier * (0.6 + 0.4 * np.sin(2 * np.pi * 4.0 * t))
    raise ValueError(f"no signature for label {label!r}")


def synth_utterance(label: str, pitch: float, gain: float, duration: float,
                    rng: np.random.Generator, sample_rate: int = TARGET_RATE) -> np.ndarray:
    t = np.arange(int(duration * sample_rate)) / sample_rate
    x = _signature(label, t, pitch, rng)
    x = x / (np.max(np.abs(x)) + 1e-12)
    ramp = np.minimum(1.0, np.minimum(t, t[-1] - t) / 0.02)
    noise = 0.02 * rng.standard_normal(t.size)
    return np.clip(gain * x * ramp + noise, -1.0, 0.999)


def make_synthetic_corpus(out_dir, n_speakers: int = 20, n_utterances: int = 400,
                          seed: int = 0, labels=CLASS_LABELS,
                          sample_rate: int = TARGET_RATE) -> Path:
    """Write WAV files plus ``manifest.csv`` under ``out_dir``; returns the manifest path.

    Utterances are spread evenly over speakers and cycle through the labels.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 11]))
    speakers = [f"spk{s:02d}" for s in range(n_speakers)]
    voice = {s: (rng.uniform(0.9, 1.1), rng.uniform(0.3, 0.7)) for s in speakers}
    rows = []
    for i in range(n_utterances):
        spk = speakers[i % n_speakers]
        label = labels[(i // n_speakers) % len(labels)]
        pitch, gain = voice[spk]
        duration = rng.uniform(1.0, 1.8)
        audio = synth_utterance(label, pitch, gain, duration, rng, sample_rate)
        rel = Path(spk) / f"utt{i:04d}.wav"
        (out_dir / spk).mkdir(exist_ok=True)
        write_wav(out_dir / rel, audio, sample_rate)
        session = f"ses{int(spk[3:]) // 2 + 1:02d}"
        rows.append(ManifestRow(rel.as_posix(), spk, session, label))
    manifest = out_dir / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest
