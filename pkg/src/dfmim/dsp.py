"""Audio ingestion, MFCC extraction and chunking for chunk-level SER."""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.signal

from .errors import AudioReadError, InvalidArgument, UnsupportedFormat

LOG_FLOOR = 1e-10
TARGET_RATE = 16000


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int
    # original rate when the signal went through the linear resampler
    resampled_from: int | None = None

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise InvalidArgument("sample rate must be positive")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise InvalidArgument("an audio signal needs at least one sample")
        if not np.all(np.isfinite(samples)):
            raise InvalidArgument("audio samples must be finite")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    window_width: int = 400
    fft_size: int = 512
    hop: int = 160
    window_kind: str = "hann"

    def __post_init__(self):
        M, N = self.window_width, self.fft_size
        if not 0 < M <= N:
            raise InvalidArgument(f"need 0 < window_width <= fft_size, got {M}, {N}")
        if N & (N - 1):
            raise InvalidArgument(f"fft_size must be a power of two, got {N}")
        if self.hop <= 0:
            raise InvalidArgument("hop must be positive")
        if self.window_kind != "hann":
            raise InvalidArgument(f"unsupported window {self.window_kind!r}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


def load_wav(path) -> AudioSignal:
    """Read a PCM WAV file (8- or 16-bit) as a mono signal in [-1, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such audio file: {path}")
    try:
        with wave.open(str(path), "rb") as wf:
            width = wf.getsampwidth()
            channels = wf.getnchannels()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedFormat(f"{path}: {msg}") from exc
        raise AudioReadError(f"{path}: {msg}") from exc
    except (EOFError, struct.error) as exc:
        raise AudioReadError(f"{path}: truncated or corrupt WAV ({exc})") from exc

    if width == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 1:
        data = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    else:
        raise UnsupportedFormat(f"{path}: {8 * width}-bit PCM is not supported")
    if channels > 1:
        usable = data.size - data.size % channels
        data = data[:usable].reshape(-1, channels).mean(axis=1)
    if data.size == 0:
        raise AudioReadError(f"{path}: no audio frames")
    return AudioSignal(data, rate)


def write_wav(path, samples, sample_rate: int = TARGET_RATE) -> None:
    """Write a mono 16-bit PCM WAV; samples are clipped to [-1, 1)."""
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(sample_rate))
        wf.writeframes(pcm.tobytes())


def resample_linear(signal: AudioSignal, rate: int = TARGET_RATE) -> AudioSignal:
    """Naive linear-interpolation resampler (no anti-aliasing filter)."""
    if signal.sample_rate == rate:
        return signal
    n_out = max(1, int(round(signal.samples.size * rate / signal.sample_rate)))
    t_out = np.arange(n_out) / rate
    t_in = np.arange(signal.samples.size) / signal.sample_rate
    out = np.interp(t_out, t_in, signal.samples)
    return AudioSignal(out, rate, resampled_from=signal.sample_rate)


def frame_count(n_samples: int, hop: int) -> int:
    return -(-n_samples // hop)


def spectrogram(signal: AudioSignal, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Magnitude STFT, ``frames x (fft_size // 2 + 1)``.

    Frames are centred: the signal is reflect-padded by ``M // 2`` on both
    sides and one frame starts every ``hop`` samples, giving
    ``ceil(len / hop)`` frames. Each Hann-windowed frame is zero-padded to
    ``fft_size`` before the real FFT.
    """
    x = signal.samples
    M = cfg.window_width
    if x.size < M:
        raise InvalidArgument(f"signal of {x.size} samples is shorter than one window ({M})")
    half = M // 2
    padded = np.pad(x, (half, half), mode="reflect")
    n_frames = frame_count(x.size, cfg.hop)
    starts = np.arange(n_frames) * cfg.hop
    frames = padded[starts[:, None] + np.arange(M)[None, :]]
    window = scipy.signal.get_window("hann", M, fftbins=True)
    return np.abs(np.fft.rfft(frames * window, n=cfg.fft_size, axis=1))


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise InvalidArgument("frequency must be non-negative")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class MelFilterBank:
    """Triangular filters, ``n_filters x (fft_size // 2 + 1)``.

    ``n_filters + 2`` edge frequencies are equally spaced on the Mel scale
    from ``f_min`` to ``f_max``; filter ``f`` peaks (weight 1) at edge
    ``f + 1``.
    """

    filters: np.ndarray
    f_min: float
    f_max: float
    centers: np.ndarray = field(repr=False)

    @property
    def F(self) -> int:
        return self.filters.shape[0] - 1

    @property
    def n_filters(self) -> int:
        return self.filters.shape[0]


def mel_filter_bank(
    n_filters: int = 64,
    fft_size: int = 512,
    sample_rate: int = TARGET_RATE,
    f_min: float = 0.0,
    f_max: float | None = None,
) -> MelFilterBank:
    if f_max is None:
        f_max = sample_rate / 2.0
    if not 0 <= f_min < f_max <= sample_rate / 2.0:
        raise InvalidArgument(f"invalid band [{f_min}, {f_max}] for rate {sample_rate}")
    if n_filters < 1:
        raise InvalidArgument("need at least one filter")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_filters + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    if np.any(weights.max(axis=1) <= 0):
        raise InvalidArgument(
            "some Mel filters fall between FFT bins; use fewer filters or a larger FFT"
        )
    return MelFilterBank(weights, float(f_min), float(f_max), edges[1:-1].copy())


def mel_spectrogram(spec: np.ndarray, bank) -> np.ndarray:
    weights = bank.filters if isinstance(bank, MelFilterBank) else np.asarray(bank)
    spec = np.asarray(spec, dtype=np.float64)
    if spec.ndim != 2 or spec.shape[1] != weights.shape[1]:
        raise InvalidArgument(
            f"spectrogram has {spec.shape[-1]} bins, filter bank expects {weights.shape[1]}"
        )
    return spec @ weights.T


@dataclass(frozen=True)
class MFCCMatrix:
    values: np.ndarray  # frames x coeffs

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InvalidArgument("MFCC matrix must be 2-D")
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("MFCC entries must be finite")
        object.__setattr__(self, "values", values)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def coeffs(self) -> int:
        return self.values.shape[1]


def mfcc(melspec: np.ndarray, n_mfcc: int = 40, variant: str = "dct2") -> MFCCMatrix:
    """Cepstral coefficients of a Mel spectrogram.

    ``dct2``: orthonormal DCT-II of ``log(melspec + 1e-10)`` along the filter
    axis, first ``n_mfcc`` coefficients.
    ``paper_complex``: real part of
    ``(1/F) sum_f log(melspec[:, f]) exp(2i pi (m-1) f / (F+1))``,
    m = 1..n_mfcc, with the same log floor.
    """
    melspec = np.asarray(melspec, dtype=np.float64)
    n_bands = melspec.shape[1]
    if n_mfcc < 1 or n_mfcc > n_bands:
        raise InvalidArgument(f"n_mfcc={n_mfcc} exceeds the {n_bands} Mel bands")
    if np.any(melspec < 0):
        raise InvalidArgument("Mel spectrogram entries must be non-negative")
    logmel = np.log(melspec + LOG_FLOOR)
    if variant == "dct2":
        return MFCCMatrix(scipy.fft.dct(logmel, type=2, norm="ortho", axis=1)[:, :n_mfcc])
    if variant == "paper_complex":
        F = n_bands - 1
        f = np.arange(n_bands)
        m = np.arange(n_mfcc)
        phase = np.exp(2j * np.pi * np.outer(f, m) / (F + 1))
        return MFCCMatrix(np.real(logmel @ phase) / F)
    raise InvalidArgument(f"unknown MFCC variant {variant!r}")


def inverse_dct2(coeffs: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-III, the inverse of the ``dct2`` variant on full-length rows."""
    return scipy.fft.idct(np.asarray(coeffs), type=2, norm="ortho", axis=-1)


@dataclass(frozen=True)
class ChunkSet:
    chunks: np.ndarray  # (n_chunks, chunk_len, n_mfcc)
    hop_frames: int
    source_frames: int

    def __len__(self):
        return self.chunks.shape[0]


def chunk_hop(chunk_len: int, overlap: float) -> int:
    return max(1, int(round(chunk_len * (1.0 - overlap))))


def chunk_count(n_frames: int, chunk_len: int = 64, overlap: float = 0.25) -> int:
    hop = chunk_hop(chunk_len, overlap)
    return max(1, (n_frames - chunk_len) // hop + 1)


def chunk_mfcc(m: MFCCMatrix, chunk_len: int = 64, overlap: float = 0.25) -> ChunkSet:
    """Fixed-length overlapping chunks of an MFCC matrix.

    Inputs shorter than one chunk give a single zero-padded chunk; trailing
    frames that do not fill a whole chunk are dropped.
    """
    if chunk_len < 1:
        raise InvalidArgument("chunk_len must be >= 1")
    if not 0.0 <= overlap < 1.0:
        raise InvalidArgument("overlap must lie in [0, 1)")
    values = m.values
    hop = chunk_hop(chunk_len, overlap)
    if values.shape[0] < chunk_len:
        chunk = np.zeros((1, chunk_len, values.shape[1]))
        chunk[0, : values.shape[0]] = values
        return ChunkSet(chunk, hop, values.shape[0])
    n = chunk_count(values.shape[0], chunk_len, overlap)
    starts = np.arange(n) * hop
    chunks = values[starts[:, None] + np.arange(chunk_len)[None, :]]
    return ChunkSet(chunks, hop, values.shape[0])


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = TARGET_RATE
    window_width: int = 400
    fft_size: int = 512
    hop: int = 160
    n_mels: int = 64
    f_min: float = 0.0
    f_max: float = 8000.0
    n_mfcc: int = 40
    mfcc_variant: str = "dct2"
    chunk_len: int = 64
    overlap: float = 0.25

    @property
    def stft(self) -> StftConfig:
        return StftConfig(self.window_width, self.fft_size, self.hop)


class FeatureExtractor:
    """load -> resample -> spectrogram -> Mel -> MFCC -> chunks, with a shared filter bank."""

    def __init__(self, cfg: FeatureConfig = FeatureConfig()):
        self.cfg = cfg
        self.bank = mel_filter_bank(
            cfg.n_mels, cfg.fft_size, cfg.sample_rate, cfg.f_min, cfg.f_max
        )

    def mfcc(self, signal: AudioSignal) -> MFCCMatrix:
        cfg = self.cfg
        signal = resample_linear(signal, cfg.sample_rate)
        if signal.samples.size < cfg.window_width:
            padded = np.zeros(cfg.window_width)
            padded[: signal.samples.size] = signal.samples
            signal = AudioSignal(padded, signal.sample_rate, signal.resampled_from)
        spec = spectrogram(signal, cfg.stft)
        return mfcc(mel_spectrogram(spec, self.bank), cfg.n_mfcc, cfg.mfcc_variant)

    def chunks(self, signal: AudioSignal) -> ChunkSet:
        return chunk_mfcc(self.mfcc(signal), self.cfg.chunk_len, self.cfg.overlap)

    def chunks_from_file(self, path) -> ChunkSet:
        return self.chunks(load_wav(path))


_CHUNK_HEADER = struct.Struct("<III")


def write_chunk_record(path, chunks: ChunkSet | np.ndarray) -> None:
    """Header ``(n_chunks, chunk_len, n_mfcc)`` as u32 LE, then float32 LE values."""
    arr = chunks.chunks if isinstance(chunks, ChunkSet) else np.asarray(chunks)
    with open(path, "wb") as fh:
        fh.write(_CHUNK_HEADER.pack(*arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_chunk_record(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _CHUNK_HEADER.size:
        raise AudioReadError(f"{path}: truncated chunk record")
    shape = _CHUNK_HEADER.unpack_from(raw)
    data = np.frombuffer(raw, dtype="<f4", offset=_CHUNK_HEADER.size)
    if data.size != int(np.prod(shape)):
        raise AudioReadError(f"{path}: chunk record size does not match its header")
    return data.reshape(shape).astype(np.float64)
