"""Exact-S framing, per-frame spotting features and the MFCC front end."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Tuple, Union

import numpy as np
import pandas as pd
from scipy import fft as sp_fft
from scipy.fft import dct
from scipy.signal import get_window

from .audio_core import AudioClip
from .utils.binary_io import BinaryFormatError, read_fixed, write_fixed

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

LOG_MAG_FLOOR = 1e-8
KURTOSIS_VAR_FLOOR = 1e-12
FMAP_MAGIC = b"FMAP"


class FeatureError(Exception):
    """Raised for invalid framing or feature inputs."""
    pass


def _is_power_of_two(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class FrameSpec:
    """Frame length F (samples) and exact frame count S."""

    frame_len: int
    num_frames: int

    def __post_init__(self) -> None:
        if self.frame_len < 2 or self.num_frames < 2:
            raise FeatureError(
                f"FrameSpec needs F >= 2 and S >= 2, got F={self.frame_len}, S={self.num_frames}"
            )

    @property
    def feature_dim(self) -> int:
        """D = F/2 + 1 magnitude bins plus ZCR and kurtosis."""
        return self.frame_len // 2 + 3


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """S x D matrix of per-frame features for one event."""

    values: np.ndarray
    spec: FrameSpec
    degenerate_frames: int = 0

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.values.shape[0]), int(self.values.shape[1]))


class Kurtosis(NamedTuple):
    value: float
    degenerate: bool


@dataclass(frozen=True)
class MfccConfig:
    """MFCC front-end parameters."""

    window_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 24
    n_coeffs: int = 20
    pre_emphasis: float = 0.97
    mean_normalize: bool = True
    log_floor: float = 1e-10

    def __post_init__(self) -> None:
        if self.n_coeffs > self.n_mels:
            raise FeatureError(f"n_coeffs ({self.n_coeffs}) must not exceed n_mels ({self.n_mels})")
        if self.window_ms <= 0 or self.hop_ms <= 0:
            raise FeatureError("window_ms and hop_ms must be > 0")

    def window_samples(self, sample_rate: int) -> int:
        return int(round(sample_rate * self.window_ms / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(sample_rate * self.hop_ms / 1000.0))

    def fft_size(self, sample_rate: int) -> int:
        """Next power of two at or above the window."""
        return 1 << (self.window_samples(sample_rate) - 1).bit_length()


def plan_frames(num_samples: int, frame_len: int, num_frames: int) -> List[int]:
    """Start offsets of exactly S frames covering ``max(L, F)`` samples.

    The hop ``(L - F) / (S - 1)`` is real-valued; offsets round half up and the
    last one is pinned to ``L - F``.
    """
    if frame_len < 2 or num_frames < 2:
        raise FeatureError(f"plan_frames needs F >= 2 and S >= 2, got F={frame_len}, S={num_frames}")
    span = max(int(num_samples), frame_len) - frame_len
    hop = span / (num_frames - 1)
    offsets = [int(np.floor(i * hop + 0.5)) for i in range(num_frames)]
    offsets[-1] = span
    return offsets


def zcr(frame: np.ndarray) -> float:
    """Fraction of adjacent sample pairs that change sign; zero counts as positive."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size < 2:
        raise FeatureError("zcr needs at least 2 samples")
    positive = frame >= 0
    return float(np.count_nonzero(positive[1:] != positive[:-1])) / (frame.size - 1)


def kurtosis(frame: np.ndarray) -> Kurtosis:
    """Pearson kurtosis m4 / m2**2; zero-variance frames give (0.0, degenerate)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size < 4:
        raise FeatureError("kurtosis needs at least 4 samples")
    centered = frame - frame.mean()
    m2 = float(np.mean(centered ** 2))
    if m2 <= KURTOSIS_VAR_FLOOR:
        return Kurtosis(0.0, True)
    m4 = float(np.mean(centered ** 4))
    return Kurtosis(m4 / (m2 * m2), False)


def _analysis_window(frame_len: int) -> np.ndarray:
    return get_window("hamming", frame_len, fftbins=True)


def _one_sided_magnitudes(frames: np.ndarray, frame_len: int) -> np.ndarray:
    spectrum = np.abs(sp_fft.rfft(frames * _analysis_window(frame_len), axis=-1))
    # sum |X|^2 over bins equals (F/2) * sum(windowed^2)
    spectrum[..., 0] /= np.sqrt(2.0)
    spectrum[..., -1] /= np.sqrt(2.0)
    return spectrum


def stft_magnitude(frame: np.ndarray, frame_len: int) -> np.ndarray:
    """Hamming-windowed one-sided FFT magnitudes, bins 0 .. F/2."""
    frame = np.asarray(frame, dtype=np.float64)
    if not _is_power_of_two(frame_len):
        raise FeatureError(f"Frame length must be a power of two, got {frame_len}")
    if frame.shape != (frame_len,):
        raise FeatureError(f"Expected a frame of {frame_len} samples, got {frame.shape}")
    return _one_sided_magnitudes(frame, frame_len)


def extract_feature_map(clip: AudioClip, spec: FrameSpec) -> FeatureMap:
    """Per-frame ``[log(|X| + 1e-8) ..., zcr, kurtosis]`` for exactly S frames."""
    if len(clip) == 0:
        raise FeatureError("Cannot extract features from an empty clip")
    F, S = spec.frame_len, spec.num_frames
    if not _is_power_of_two(F):
        raise FeatureError(f"Frame length must be a power of two, got {F}")

    samples = clip.samples
    if len(samples) < F:
        samples = np.concatenate([samples, np.zeros(F - len(samples))])
    offsets = np.asarray(plan_frames(len(samples), F, S), dtype=np.int64)
    frames = samples[offsets[:, None] + np.arange(F)[None, :]]

    log_mag = np.log(_one_sided_magnitudes(frames, F) + LOG_MAG_FLOOR)

    positive = frames >= 0
    zcr_col = np.count_nonzero(positive[:, 1:] != positive[:, :-1], axis=1) / (F - 1)

    centered = frames - frames.mean(axis=1, keepdims=True)
    m2 = np.mean(centered ** 2, axis=1)
    m4 = np.mean(centered ** 4, axis=1)
    degenerate = m2 <= KURTOSIS_VAR_FLOOR
    kurt_col = np.where(degenerate, 0.0, m4 / np.where(degenerate, 1.0, m2 * m2))

    values = np.hstack([log_mag, zcr_col[:, None], kurt_col[:, None]])
    return FeatureMap(values, spec, int(np.count_nonzero(degenerate)))


def write_feature_map(path: PathLike, fmap: FeatureMap) -> Path:
    """Binary layout: "FMAP", u32 S, u32 D, S*D float32 little-endian row-major."""
    S, D = fmap.shape
    return write_fixed(path, FMAP_MAGIC, (S, D), [fmap.values], "<f4")


def read_feature_map(path: PathLike) -> FeatureMap:
    """Read an "FMAP" file; F is recovered from D."""
    (S, D), payload = read_fixed(path, FMAP_MAGIC, 2, "<f4")
    if payload.size != S * D:
        raise BinaryFormatError(f"{path}: expected {S * D} values, found {payload.size}")
    spec = FrameSpec(frame_len=(D - 3) * 2, num_frames=S)
    return FeatureMap(payload.reshape(S, D).astype(np.float64), spec)


def export_feature_map_csv(path: PathLike, fmap: FeatureMap) -> Path:
    """CSV with one row per frame for inspection."""
    n_bins = fmap.values.shape[1] - 2
    columns = [f"logmag_{k}" for k in range(n_bins)] + ["zcr", "kurtosis"]
    frame = pd.DataFrame(fmap.values, columns=columns)
    frame.index.name = "frame"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, float_format="%.9g")
    return path


def _hz_to_mel(hz: np.ndarray) -> np.ndarray:
    return 2595.0 * np.log10(1.0 + np.asarray(hz) / 700.0)


def _mel_to_hz(mel: np.ndarray) -> np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Unit-height triangular filters spaced on the mel scale, 0 Hz to Nyquist."""
    edges_hz = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2.0), n_mels + 2))
    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (bin_hz[None, :] - lower) / (center - lower)
    falling = (upper - bin_hz[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mfcc(clip: AudioClip, config: MfccConfig = MfccConfig()) -> np.ndarray:
    """T x n_coeffs cepstra, c0 included; T = 1 + (L - window) // hop."""
    sr = clip.sample_rate
    win = config.window_samples(sr)
    hop = config.hop_samples(sr)
    n_fft = config.fft_size(sr)
    if len(clip) < win:
        raise FeatureError(
            f"Clip of {len(clip)} samples is shorter than one {config.window_ms} ms window"
        )

    x = clip.samples
    if config.pre_emphasis:
        x = np.concatenate([x[:1], x[1:] - config.pre_emphasis * x[:-1]])

    n_frames = 1 + (len(x) - win) // hop
    idx = np.arange(n_frames)[:, None] * hop + np.arange(win)[None, :]
    frames = x[idx] * get_window("hamming", win, fftbins=False)
    power_spec = np.abs(sp_fft.rfft(frames, n=n_fft, axis=1)) ** 2 / n_fft

    energies = power_spec @ mel_filterbank(config.n_mels, n_fft, sr).T
    log_energies = np.log(np.maximum(energies, config.log_floor))
    cepstra = dct(log_energies, type=2, norm="ortho", axis=1)[:, :config.n_coeffs]

    if config.mean_normalize:
        cepstra = cepstra - cepstra.mean(axis=0, keepdims=True)
    return cepstra
