"""Signal-processing front-end: audio I/O, mel/MFCC features, Griffin-Lim, speed perturbation."""

import math
import struct
import wave
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import fftpack, signal

from .errors import (
    AmplitudeOutOfRange,
    AudioTooShort,
    EmptyAudio,
    FactorOutOfRange,
    InvalidSpectrogram,
    MissingFile,
    UnsupportedFormat,
)

TARGET_SAMPLE_RATE = 16000

# Binary matrix dump: 8-byte magic, u32 rows, u32 cols, f32 row-major, all little-endian.
MATRIX_MAGIC = b"EMTXF32\x01"


@dataclass
class Waveform:
    """Mono audio samples with their sample rate; amplitudes stay in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = TARGET_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogramConfig:
    """Framing and filterbank parameters for mel / filterbank features."""

    sample_rate: int = TARGET_SAMPLE_RATE
    n_mels: int = 80
    window_ms: float = 50.0
    hop_ms: float = 12.5
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-5

    def __post_init__(self):
        if not 0 < self.hop_ms <= self.window_ms:
            raise ValueError(f"need 0 < hop_ms <= window_ms, got {self.hop_ms}/{self.window_ms}")
        if not self.fmin < self.fmax <= self.sample_rate / 2:
            raise ValueError(f"need fmin < fmax <= sr/2, got {self.fmin}/{self.fmax}")

    @property
    def win_samples(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    @property
    def n_fft(self) -> int:
        return 1 << (self.win_samples - 1).bit_length()


# Feature presets used across the toolkit.
SYNTHESIZER_MEL = MelSpectrogramConfig(n_mels=80, window_ms=50.0, hop_ms=12.5)
# Encoder features use non-overlapping windows and a fixed 80-frame input.
ENCODER_MFCC = MelSpectrogramConfig(n_mels=40, window_ms=25.0, hop_ms=25.0)
ENCODER_FRAMES = 80
SER_MFCC = MelSpectrogramConfig(n_mels=40, window_ms=64.0, hop_ms=64.0)


@dataclass
class MelSpectrogram:
    """T x n_mels grid of log filterbank energies."""

    frames: np.ndarray
    config: MelSpectrogramConfig = field(default_factory=MelSpectrogramConfig)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]


@dataclass
class MfccMatrix:
    """T x n_coeffs feature grid (log filterbank, optional DCT stage).

    valid_frames counts the rows that came from audio; rows past it are
    fixed-shape padding at the log floor.
    """

    frames: np.ndarray
    config: MelSpectrogramConfig = field(default_factory=lambda: SER_MFCC)
    valid_frames: int | None = None

    def __post_init__(self):
        if self.valid_frames is None:
            self.valid_frames = self.frames.shape[0]


def frame_count(n_samples: int, win: int, hop: int) -> int:
    """Number of full analysis frames: 1 + floor((N - win) / hop)."""
    if n_samples < win:
        return 0
    return 1 + (n_samples - win) // hop


def load_audio(path) -> Waveform:
    """Load a 16-bit PCM WAV as mono 16 kHz with amplitudes in [-1, 1]."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"no such audio file: {path}")
    try:
        with wave.open(str(path), "rb") as wav:
            n_channels = wav.getnchannels()
            sampwidth = wav.getsampwidth()
            rate = wav.getframerate()
            n_frames = wav.getnframes()
            raw = wav.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise UnsupportedFormat(f"not a readable WAV file: {path} ({exc})") from exc
    if sampwidth != 2:
        raise UnsupportedFormat(f"expected 16-bit PCM, got {8 * sampwidth}-bit: {path}")
    if n_frames == 0:
        raise EmptyAudio(f"audio file has no samples: {path}")

    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_channels > 1:
        data = data.reshape(-1, n_channels).mean(axis=1)
    if rate != TARGET_SAMPLE_RATE:
        g = math.gcd(TARGET_SAMPLE_RATE, rate)
        data = signal.resample_poly(data, TARGET_SAMPLE_RATE // g, rate // g)
    data = np.clip(data, -1.0, 1.0)
    return Waveform(samples=data, sample_rate=TARGET_SAMPLE_RATE)


def save_audio(wav: Waveform, path) -> None:
    """Write a waveform as RIFF 16-bit PCM little-endian."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    samples = np.clip(wav.samples, -1.0, 1.0)
    pcm = np.round(samples * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as out:
        out.setnchannels(1)
        out.setsampwidth(2)
        out.setframerate(wav.sample_rate)
        out.writeframes(pcm.tobytes())


def mel_filterbank(cfg: MelSpectrogramConfig, n_fft: int | None = None) -> np.ndarray:
    """Triangular mel filterbank (HTK mel scale, unit-peak filters), shape (n_mels, n_fft//2+1)."""

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    n_bins = (n_fft or cfg.n_fft) // 2 + 1
    fft_freqs = np.linspace(0.0, cfg.sample_rate / 2.0, n_bins)
    mel_points = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    hz_points = mel_to_hz(mel_points)

    fb = np.zeros((cfg.n_mels, n_bins))
    for i in range(cfg.n_mels):
        left, center, right = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        up = (fft_freqs - left) / (center - left)
        down = (right - fft_freqs) / (right - center)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mel_filter_centers(cfg: MelSpectrogramConfig) -> np.ndarray:
    """Center frequency (Hz) of each mel filter."""
    fb = mel_filterbank(cfg)
    n_bins = cfg.n_fft // 2 + 1
    fft_freqs = np.linspace(0.0, cfg.sample_rate / 2.0, n_bins)
    return fft_freqs[np.argmax(fb, axis=1)]


def _frame(samples: np.ndarray, win: int, hop: int) -> np.ndarray:
    n = frame_count(len(samples), win, hop)
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    return samples[idx]


def _power_spectrogram(wav: Waveform, cfg: MelSpectrogramConfig) -> np.ndarray:
    frames = _frame(wav.samples, cfg.win_samples, cfg.hop_samples)
    window = np.hanning(cfg.win_samples)
    spec = np.fft.rfft(frames * window, n=cfg.n_fft, axis=1)
    return np.abs(spec) ** 2


def mel_spectrogram(wav: Waveform, cfg: MelSpectrogramConfig = SYNTHESIZER_MEL) -> MelSpectrogram:
    """Log mel-filterbank energies; each entry is log(max(filterbank(|STFT|^2), log_floor))."""
    if len(wav) < cfg.win_samples:
        raise AudioTooShort(
            f"need at least {cfg.win_samples} samples for one window, got {len(wav)}"
        )
    power = _power_spectrogram(wav, cfg)
    mel_power = power @ mel_filterbank(cfg).T
    frames = np.log(np.maximum(mel_power, cfg.log_floor))
    return MelSpectrogram(frames=frames, config=cfg)


def mfcc(
    wav: Waveform,
    cfg: MelSpectrogramConfig = SER_MFCC,
    fixed_frames: int | None = None,
    use_dct: bool = False,
) -> MfccMatrix:
    """Log filterbank features framed per config.

    With `fixed_frames` the matrix is right-padded with log-floor frames or
    truncated to exactly that many rows (the fixed-shape encoder input).
    `use_dct` applies an orthonormal type-II DCT per frame, for the cepstral
    variant of these features.
    """
    if len(wav) < cfg.win_samples:
        raise AudioTooShort(
            f"need at least {cfg.win_samples} samples for one frame, got {len(wav)}"
        )
    frames = mel_spectrogram(wav, cfg).frames
    valid = frames.shape[0]
    if fixed_frames is not None:
        if valid >= fixed_frames:
            frames = frames[:fixed_frames]
            valid = fixed_frames
        else:
            pad = np.full((fixed_frames - valid, frames.shape[1]), np.log(cfg.log_floor))
            frames = np.vstack([frames, pad])
    if use_dct:
        frames = fftpack.dct(frames, type=2, norm="ortho", axis=1)
    return MfccMatrix(frames=frames, config=cfg, valid_frames=valid)


def encoder_features(wav: Waveform) -> MfccMatrix:
    """The fixed 80x40 filterbank input consumed by the condition encoder."""
    return mfcc(wav, ENCODER_MFCC, fixed_frames=ENCODER_FRAMES)


def mfcc_mean(m: MfccMatrix) -> np.ndarray:
    """Per-coefficient mean over time (transpose, then average each row)."""
    if m.frames.shape[0] < 1:
        raise AudioTooShort("cannot average an empty feature matrix")
    return m.frames.T.mean(axis=1)


def griffin_lim(mel: MelSpectrogram, iterations: int = 60, seed: int = 0) -> Waveform:
    """Reconstruct a waveform from a mel spectrogram by iterative phase estimation.

    The mel power is mapped back to a linear spectrum through the filterbank
    pseudo-inverse; the log floor is treated as the silence level and
    subtracted first. Phase starts from a seeded random draw, so the output
    is deterministic for a fixed seed. Output length is exactly
    (T - 1) * hop + win samples.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not np.all(np.isfinite(mel.frames)):
        raise InvalidSpectrogram("mel spectrogram contains non-finite entries")
    cfg = mel.config
    fb = mel_filterbank(cfg)
    mel_power = np.maximum(np.exp(mel.frames) - cfg.log_floor, 0.0)
    linear_power = np.maximum(mel_power @ np.linalg.pinv(fb).T, 0.0)
    magnitude = np.sqrt(linear_power)

    rng = np.random.default_rng(seed)
    angles = np.exp(2j * np.pi * rng.random(magnitude.shape))
    window = np.hanning(cfg.win_samples)
    win, hop, n_fft = cfg.win_samples, cfg.hop_samples, cfg.n_fft

    def istft(spec):
        frames = np.fft.irfft(spec, n=n_fft, axis=1)[:, :win]
        out_len = (spec.shape[0] - 1) * hop + win
        out = np.zeros(out_len)
        norm = np.zeros(out_len)
        for i in range(spec.shape[0]):
            out[i * hop : i * hop + win] += frames[i] * window
            norm[i * hop : i * hop + win] += window**2
        # Zero out samples with negligible window coverage; dividing there
        # amplifies noise at the edges and can derail the phase iteration.
        covered = norm > 1e-3
        out[covered] /= norm[covered]
        out[~covered] = 0.0
        return out

    def stft(x):
        return np.fft.rfft(_frame(x, win, hop) * window, n=n_fft, axis=1)

    wav = istft(magnitude * angles)
    for _ in range(iterations):
        rebuilt = stft(wav)
        phases = rebuilt / np.maximum(np.abs(rebuilt), 1e-12)
        wav = istft(magnitude * phases)
    peak = np.max(np.abs(wav))
    if peak > 1.0:
        wav = wav / peak
    return Waveform(samples=wav, sample_rate=cfg.sample_rate)


def speed_perturb(wav: Waveform, factor: float) -> Waveform:
    """Resample so duration scales by 1/factor and pitch by factor; length = round(N/factor)."""
    if not 0.5 <= factor <= 2.0:
        raise FactorOutOfRange(f"speed factor must be in [0.5, 2.0], got {factor}")
    if factor == 1.0:
        return Waveform(samples=wav.samples.copy(), sample_rate=wav.sample_rate)
    target_len = int(round(len(wav) / factor))
    frac = Fraction(factor).limit_denominator(1000)
    out = signal.resample_poly(wav.samples, frac.denominator, frac.numerator)
    if len(out) > target_len:
        out = out[:target_len]
    elif len(out) < target_len:
        out = np.pad(out, (0, target_len - len(out)), mode="edge")
    return Waveform(samples=np.clip(out, -1.0, 1.0), sample_rate=wav.sample_rate)


def dominant_frequency(wav: Waveform) -> float:
    """Frequency of the tallest rFFT magnitude peak, in Hz."""
    spectrum = np.abs(np.fft.rfft(wav.samples))
    freqs = np.fft.rfftfreq(len(wav), d=1.0 / wav.sample_rate)
    return float(freqs[np.argmax(spectrum)])


def write_matrix(path, matrix: np.ndarray) -> None:
    """Dump a 2-D float matrix in the shared binary format."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {matrix.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<II", matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.astype("<f4").tobytes(order="C"))


def read_matrix(path) -> np.ndarray:
    """Read a matrix dumped by write_matrix."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"no such matrix file: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MATRIX_MAGIC:
            raise UnsupportedFormat(f"bad matrix magic in {path}")
        rows, cols = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(rows * cols * 4), dtype="<f4")
    return data.reshape(rows, cols).astype(np.float64)
