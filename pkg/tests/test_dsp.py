import math
import wave

import numpy as np
import pytest

from dfmim.dsp import (
    AudioSignal,
    FeatureConfig,
    FeatureExtractor,
    MFCCMatrix,
    StftConfig,
    chunk_count,
    chunk_mfcc,
    hz_to_mel,
    inverse_dct2,
    load_wav,
    mel_filter_bank,
    mel_spectrogram,
    mfcc,
    read_chunk_record,
    resample_linear,
    spectrogram,
    write_chunk_record,
    write_wav,
)
from dfmim.errors import AudioReadError, InvalidArgument, UnsupportedFormat


def _write_pcm(path, frames: np.ndarray, width: int = 2, rate: int = 16000):
    frames = np.atleast_2d(np.asarray(frames).T).T if np.ndim(frames) == 1 else np.asarray(frames)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(frames.shape[1] if frames.ndim == 2 else 1)
        wf.setsampwidth(width)
        wf.setframerate(rate)
        dtype = "<i2" if width == 2 else np.uint8
        wf.writeframes(np.ascontiguousarray(frames, dtype=dtype).tobytes())


def test_silence_file(tmp_path):
    path = tmp_path / "s.wav"
    _write_pcm(path, np.zeros(16000, dtype=np.int16))
    sig = load_wav(path)
    assert sig.sample_rate == 16000
    assert sig.samples.shape == (16000,) and not sig.samples.any()


def test_int16_extreme(tmp_path):
    path = tmp_path / "x.wav"
    _write_pcm(path, np.array([-32768, 0, 16384], dtype=np.int16))
    assert list(load_wav(path).samples) == [-1.0, 0.0, 0.5]


def test_stereo_average(tmp_path):
    path = tmp_path / "st.wav"
    frames = np.tile(np.array([[16384, -16384]], dtype=np.int16), (10, 1))
    _write_pcm(path, frames)
    assert np.array_equal(load_wav(path).samples, np.zeros(10))


def test_eight_bit(tmp_path):
    path = tmp_path / "u8.wav"
    _write_pcm(path, np.array([0, 128, 192], dtype=np.uint8), width=1)
    assert list(load_wav(path).samples) == [-1.0, 0.0, 0.5]


def test_wav_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_wav(tmp_path / "missing.wav")
    junk = tmp_path / "junk.wav"
    junk.write_bytes(b"not a wave file at all")
    with pytest.raises(AudioReadError):
        load_wav(junk)
    wide = tmp_path / "w24.wav"
    with wave.open(str(wide), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(3)
        wf.setframerate(16000)
        wf.writeframes(b"\x00" * 30)
    with pytest.raises(UnsupportedFormat):
        load_wav(wide)


def test_write_read_roundtrip(tmp_path):
    x = np.array([0.0, 0.25, -0.5, 0.999])
    write_wav(tmp_path / "r.wav", x)
    back = load_wav(tmp_path / "r.wav").samples
    assert np.max(np.abs(back - x)) <= 1 / 32768


def test_resampler_flags_source_rate():
    sig = AudioSignal(np.sin(np.arange(800) / 10), 8000)
    out = resample_linear(sig, 16000)
    assert out.sample_rate == 16000 and out.resampled_from == 8000
    assert out.samples.size == 1600
    assert resample_linear(out, 16000) is out


def test_spectrogram_zero_and_shape():
    sig = AudioSignal(np.zeros(1600), 16000)
    S = spectrogram(sig)
    assert S.shape == (10, 257) and not S.any()


def test_spectrogram_frame_count_is_ceil():
    for n in (400, 401, 1599, 1600, 1601):
        assert spectrogram(AudioSignal(np.ones(n) * 0.1, 16000)).shape[0] == math.ceil(n / 160)


@pytest.mark.parametrize("k0", [10, 37, 100])
def test_spectrogram_bin_center_sine(k0):
    sr, N = 16000, 512
    t = np.arange(8000) / sr
    sig = AudioSignal(0.5 * np.sin(2 * np.pi * k0 * sr / N * t), sr)
    S = spectrogram(sig, StftConfig())
    peaks = np.argmax(S, axis=1)
    # frames touching the reflect padding see a mirrored sine; the rest see the tone only
    interior = peaks[2:-3]
    assert np.all(interior == k0)


def test_spectrogram_homogeneous():
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.4, 0.4, 2000)
    S1 = spectrogram(AudioSignal(x, 16000))
    S2 = spectrogram(AudioSignal(2 * x, 16000))
    assert np.allclose(S2, 2 * S1, rtol=1e-12, atol=1e-12)


def test_spectrogram_against_direct_dft():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, 900)
    cfg = StftConfig()
    S = spectrogram(AudioSignal(x, 16000), cfg)
    padded = np.pad(x, (200, 200), mode="reflect")
    n = np.arange(400)
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * n / 400)
    frame = padded[160 * 2 : 160 * 2 + 400] * hann
    k = 23
    direct = abs(sum(frame[u] * np.exp(-2j * np.pi * k * u / 512) for u in range(400)))
    assert S[2, k] == pytest.approx(direct, rel=1e-10)


def test_spectrogram_too_short():
    with pytest.raises(InvalidArgument):
        spectrogram(AudioSignal(np.zeros(100), 16000))


def test_stft_config_validation():
    with pytest.raises(InvalidArgument):
        StftConfig(window_width=600, fft_size=512)
    with pytest.raises(InvalidArgument):
        StftConfig(fft_size=500)
    with pytest.raises(InvalidArgument):
        StftConfig(hop=0)


def test_hz_to_mel_values():
    assert hz_to_mel(0.0) == 0.0
    assert hz_to_mel(700.0) == pytest.approx(2595 * math.log10(2), abs=1e-9)
    assert hz_to_mel(700.0) == pytest.approx(781.17, abs=5e-3)
    assert hz_to_mel(1400.0) == pytest.approx(1238.1, abs=5e-2)
    with pytest.raises(InvalidArgument):
        hz_to_mel(-1.0)


def test_filter_bank_invariants():
    bank = mel_filter_bank(64, 512, 16000, 0.0, 8000.0)
    W = bank.filters
    assert W.shape == (64, 257) and bank.F == 63
    assert np.all(W >= 0) and np.all(W.max(axis=1) > 0)
    for row in W:
        nz = np.flatnonzero(row)
        seg = row[nz[0] : nz[-1] + 1]
        peak = int(np.argmax(seg))
        assert np.all(np.diff(seg[: peak + 1]) >= 0) and np.all(np.diff(seg[peak:]) <= 0)
    steps = np.diff(hz_to_mel(bank.centers))
    assert np.allclose(steps, steps[0], rtol=1e-9)


def test_mel_spectrogram_linear_and_selection():
    rng = np.random.default_rng(2)
    S = rng.uniform(0, 1, (5, 257))
    bank = mel_filter_bank()
    assert not mel_spectrogram(np.zeros((5, 257)), bank).any()
    eye = np.zeros((3, 257))
    eye[[0, 1, 2], [4, 90, 200]] = 1.0
    assert np.array_equal(mel_spectrogram(S, eye), S[:, [4, 90, 200]])
    assert np.allclose(mel_spectrogram(S, 2 * bank.filters), 2 * mel_spectrogram(S, bank))
    with pytest.raises(InvalidArgument):
        mel_spectrogram(S[:, :100], bank)


def test_mfcc_of_constant_has_only_dc():
    out = mfcc(np.full((3, 64), 2.5), 40).values
    assert np.all(np.abs(out[:, 1:]) < 1e-12)
    assert out[0, 0] == pytest.approx(np.log(2.5 + 1e-10) * math.sqrt(64))


def test_mfcc_dct2_against_cosine_sum():
    rng = np.random.default_rng(3)
    mel = rng.uniform(0.1, 5.0, (8, 8))
    got = mfcc(mel, 8).values
    L = np.log(mel + 1e-10)
    F = 8
    want = np.zeros((8, 8))
    for t in range(8):
        for m in range(F):
            scale = math.sqrt(1 / F) if m == 0 else math.sqrt(2 / F)
            want[t, m] = scale * sum(L[t, f] * math.cos(math.pi * m * (2 * f + 1) / (2 * F)) for f in range(F))
    assert np.max(np.abs(got - want)) < 1e-10


def test_mfcc_paper_complex_first_coefficient():
    rng = np.random.default_rng(4)
    mel = rng.uniform(0.1, 5.0, (4, 16))
    got = mfcc(mel, 3, "paper_complex").values
    L = np.log(mel + 1e-10)
    F = 15
    # m = 1: the exponential is 1 and the sum is scaled by 1/F
    assert np.allclose(got[:, 0], L.sum(axis=1) / F, atol=1e-12)
    m = 2
    want = np.array([sum(L[t, f] * math.cos(2 * math.pi * (m - 1) * f / (F + 1)) for f in range(F + 1)) / F for t in range(4)])
    assert np.allclose(got[:, 1], want, atol=1e-12)


def test_mfcc_errors():
    with pytest.raises(InvalidArgument):
        mfcc(np.ones((2, 10)), 11)
    with pytest.raises(InvalidArgument):
        mfcc(-np.ones((2, 10)), 4)
    with pytest.raises(InvalidArgument):
        mfcc(np.ones((2, 10)), 4, "dct4")


def test_dct_roundtrip():
    rng = np.random.default_rng(5)
    mel = np.exp(rng.standard_normal((20, 64)))
    rec = inverse_dct2(mfcc(mel, 64).values)
    assert np.max(np.abs(rec - np.log(mel + 1e-10))) < 1e-8


@pytest.mark.parametrize("T,count", [(64, 1), (160, 3), (50, 1), (112, 2), (111, 1)])
def test_chunk_counts(T, count):
    m = MFCCMatrix(np.arange(T * 2, dtype=float).reshape(T, 2) + 1)
    cs = chunk_mfcc(m)
    assert len(cs) == count == chunk_count(T)
    assert cs.hop_frames == 48 and cs.chunks.shape[1:] == (64, 2)


def test_chunk_positions_and_padding():
    m = MFCCMatrix(np.arange(160 * 3, dtype=float).reshape(160, 3) + 1)
    cs = chunk_mfcc(m)
    for i in range(3):
        assert np.array_equal(cs.chunks[i], m.values[48 * i : 48 * i + 64])
    short = chunk_mfcc(MFCCMatrix(np.ones((50, 3))))
    assert np.all(short.chunks[0, :50] == 1) and not short.chunks[0, 50:].any()


def test_chunk_count_sweep():
    for T in range(1, 501):
        assert chunk_count(T) == max(1, (T - 64) // 48 + 1)


def test_chunk_argument_checks():
    m = MFCCMatrix(np.ones((10, 2)))
    with pytest.raises(InvalidArgument):
        chunk_mfcc(m, chunk_len=0)
    with pytest.raises(InvalidArgument):
        chunk_mfcc(m, overlap=1.0)


def test_chunk_record_roundtrip(tmp_path):
    arr = np.random.default_rng(6).standard_normal((3, 64, 40))
    write_chunk_record(tmp_path / "a.chunks", arr)
    raw = (tmp_path / "a.chunks").read_bytes()
    assert raw[:12] == np.array([3, 64, 40], dtype="<u4").tobytes()
    back = read_chunk_record(tmp_path / "a.chunks")
    assert np.array_equal(back, arr.astype(np.float32).astype(np.float64))
    (tmp_path / "b.chunks").write_bytes(raw[:-4])
    with pytest.raises(AudioReadError):
        read_chunk_record(tmp_path / "b.chunks")


def test_pipeline_is_deterministic(tmp_path):
    t = np.arange(16000) / 16000
    write_wav(tmp_path / "a.wav", 0.5 * np.sin(2 * np.pi * 440 * np.concatenate([t, t[:8000]])))
    ex = FeatureExtractor(FeatureConfig())
    a = ex.chunks_from_file(tmp_path / "a.wav")
    b = FeatureExtractor(FeatureConfig()).chunks_from_file(tmp_path / "a.wav")
    assert a.chunks.shape == (2, 64, 40)  # 150 frames
    assert a.chunks.tobytes() == b.chunks.tobytes()


def test_extractor_pads_very_short_audio():
    ex = FeatureExtractor()
    cs = ex.chunks(AudioSignal(np.full(100, 0.1), 16000))
    assert cs.chunks.shape == (1, 64, 40)
