"""Audio ingestion, resampling, duration normalization and SNR-targeted mixing."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import soundfile as sf

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SUPPORTED_SUBTYPES = ("PCM_U8", "PCM_16", "PCM_24", "FLOAT")
RESAMPLE_TAPS = 64
KAISER_BETA = 8.0
POWER_FLOOR = 1e-12
SNR_FRAME_SEC = 0.032
MIN_SNR_FRAMES = 10


class AudioError(Exception):
    """Base exception for audio operations."""
    pass


class WavFormatError(AudioError):
    """Raised for malformed or unsupported RIFF/WAVE files."""
    pass


class SampleRateMismatchError(AudioError):
    """Raised when clips that must share a rate do not."""
    pass


class ClipTooShortError(AudioError):
    """Raised when a clip is shorter than an operation needs."""
    pass


class SilentNoiseError(AudioError):
    """Raised when a noise source has no usable power."""
    pass


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono samples in [-1, 1] at an integer sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(f"Expected 1-D samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise AudioError("Samples must be finite")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise AudioError(f"Sample rate must be a positive integer, got {self.sample_rate}")
        samples = np.clip(samples, -1.0, 1.0)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_sec(self) -> float:
        return len(self) / self.sample_rate


def read_wav(path: PathLike) -> AudioClip:
    """Read a RIFF/WAVE file, downmixing to mono by channel average.

    Raises:
        FileNotFoundError: if the path does not exist.
        WavFormatError: on a malformed header, unsupported codec or empty data.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"WAV file not found: {path}")
    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise WavFormatError(f"{path}: malformed header ({e})") from e
    if info.format not in ("WAV", "WAVEX"):
        raise WavFormatError(f"{path}: not a RIFF/WAVE container ({info.format})")
    if info.subtype not in SUPPORTED_SUBTYPES:
        raise WavFormatError(f"{path}: unsupported codec {info.subtype}")
    if info.frames == 0:
        raise WavFormatError(f"{path}: zero-length data chunk")

    try:
        data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except RuntimeError as e:
        raise WavFormatError(f"{path}: unreadable data ({e})") from e
    return AudioClip(data.mean(axis=1), sample_rate)


def write_wav(path: PathLike, clip: AudioClip) -> Path:
    """Write 16-bit PCM mono, clipping to [-1, 1]."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), np.clip(clip.samples, -1.0, 1.0), clip.sample_rate,
             subtype="PCM_16", format="WAV")
    return path


def probe_duration(path: PathLike) -> float:
    """Duration from the header without decoding samples."""
    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise WavFormatError(f"{path}: malformed header ({e})") from e
    if info.frames == 0:
        raise WavFormatError(f"{path}: zero-length data chunk")
    return info.frames / info.samplerate


def power(clip: Union[AudioClip, np.ndarray]) -> float:
    """Mean power of a clip or sample vector."""
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    if samples.size == 0:
        return 0.0
    return float(np.mean(samples * samples))


def peak_normalize(clip: AudioClip, peak: float = 1.0) -> AudioClip:
    """Scale so the largest magnitude equals ``peak``; silent clips pass through."""
    largest = float(np.max(np.abs(clip.samples))) if len(clip) else 0.0
    if largest == 0.0:
        return clip
    return AudioClip(clip.samples * (peak / largest), clip.sample_rate)


def _kaiser(offsets: np.ndarray, half_width: float, beta: float) -> np.ndarray:
    ratio = np.clip(1.0 - (offsets / half_width) ** 2, 0.0, None)
    return np.i0(beta * np.sqrt(ratio)) / np.i0(beta)


def resample(clip: AudioClip, target_hz: int, chunk_size: int = 65536) -> AudioClip:
    """Band-limited resampling with a 64-tap Kaiser-windowed sinc kernel.

    Output length is ``round(len * target / source)``; the cutoff sits at the
    lower of the two Nyquist rates.
    """
    if target_hz <= 0:
        raise AudioError(f"target_hz must be > 0, got {target_hz}")
    target_hz = int(target_hz)
    if target_hz == clip.sample_rate:
        return clip

    x = clip.samples
    n_in = len(x)
    n_out = int(round(n_in * target_hz / clip.sample_rate))
    step = clip.sample_rate / target_hz
    cutoff = min(1.0, target_hz / clip.sample_rate)
    half_width = RESAMPLE_TAPS / 2
    taps = np.arange(-(RESAMPLE_TAPS // 2) + 1, RESAMPLE_TAPS // 2 + 1)

    out = np.empty(n_out, dtype=np.float64)
    for start in range(0, n_out, chunk_size):
        positions = np.arange(start, min(start + chunk_size, n_out)) * step
        base = np.floor(positions).astype(np.int64)
        idx = base[:, None] + taps[None, :]
        offsets = positions[:, None] - idx
        kernel = cutoff * np.sinc(cutoff * offsets) * _kaiser(offsets, half_width, KAISER_BETA)
        valid = (idx >= 0) & (idx < n_in)
        values = np.where(valid, x[np.clip(idx, 0, n_in - 1)], 0.0)
        out[start:start + len(positions)] = np.sum(kernel * values, axis=1)

    return AudioClip(np.clip(out, -1.0, 1.0), target_hz)


def normalize_duration(clip: AudioClip, target_sec: float) -> AudioClip:
    """Keep the head and zero-pad the tail to exactly ``target_sec``."""
    if target_sec <= 0:
        raise AudioError(f"target_sec must be > 0, got {target_sec}")
    n_target = int(round(target_sec * clip.sample_rate))
    if len(clip) == n_target:
        return clip
    if len(clip) > n_target:
        return AudioClip(clip.samples[:n_target], clip.sample_rate)
    padded = np.zeros(n_target, dtype=np.float64)
    padded[:len(clip)] = clip.samples
    return AudioClip(padded, clip.sample_rate)


def estimate_snr(clip: AudioClip) -> float:
    """Decile-energy SNR estimate in dB over non-overlapping 32-ms frames.

    Signal power is the mean frame energy of the loudest decile, noise power
    that of the quietest; both are floored at 1e-12 so silence gives 0 dB.
    """
    frame_len = int(round(SNR_FRAME_SEC * clip.sample_rate))
    n_frames = len(clip) // frame_len if frame_len else 0
    if n_frames < MIN_SNR_FRAMES:
        raise ClipTooShortError(
            f"SNR estimate needs {MIN_SNR_FRAMES} frames of {SNR_FRAME_SEC * 1000:.0f} ms, "
            f"clip has {n_frames}"
        )
    frames = clip.samples[:n_frames * frame_len].reshape(n_frames, frame_len)
    energies = np.sort(np.mean(frames * frames, axis=1))
    k = max(1, n_frames // 10)
    p_signal = max(float(np.mean(energies[-k:])), POWER_FLOOR)
    p_noise = max(float(np.mean(energies[:k])), POWER_FLOOR)
    return 10.0 * np.log10(p_signal / p_noise)


def _noise_excerpt(noise: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    if len(noise) >= length:
        offset = int(rng.integers(0, len(noise) - length + 1))
        return noise[offset:offset + length]
    offset = int(rng.integers(0, len(noise)))
    return np.resize(np.roll(noise, -offset), length)


def scaled_noise_for_snr(signal: AudioClip, noise: AudioClip, target_snr_db: float,
                         seed: int) -> np.ndarray:
    """Noise excerpt, cropped or looped to the signal length, scaled to the target SNR.

    Raises:
        SampleRateMismatchError: if the rates differ.
        SilentNoiseError: if the noise or its excerpt has power <= 1e-12.
    """
    if signal.sample_rate != noise.sample_rate:
        raise SampleRateMismatchError(
            f"signal at {signal.sample_rate} Hz, noise at {noise.sample_rate} Hz"
        )
    if power(noise) <= POWER_FLOOR:
        raise SilentNoiseError("noise clip is silent")
    rng = np.random.default_rng(seed)
    excerpt = _noise_excerpt(noise.samples, len(signal), rng)
    p_noise = power(excerpt)
    if p_noise <= POWER_FLOOR:
        raise SilentNoiseError("selected noise excerpt is silent")
    gain = np.sqrt(power(signal) / (p_noise * 10.0 ** (target_snr_db / 10.0)))
    return gain * excerpt


def mix_at_snr(signal: AudioClip, noise: AudioClip, target_snr_db: float,
               seed: int) -> AudioClip:
    """Add seeded noise at the target component SNR, peak-normalizing only on overflow."""
    mixed = signal.samples + scaled_noise_for_snr(signal, noise, target_snr_db, seed)
    peak = float(np.max(np.abs(mixed))) if mixed.size else 0.0
    if peak > 1.0:
        mixed = mixed / peak
    return AudioClip(mixed, signal.sample_rate)


def concatenate(clips: Sequence[AudioClip]) -> AudioClip:
    """Append clips in order."""
    if not clips:
        raise AudioError("Cannot concatenate an empty list")
    rate = clips[0].sample_rate
    for clip in clips[1:]:
        if clip.sample_rate != rate:
            raise SampleRateMismatchError(f"mixed sample rates: {rate} and {clip.sample_rate} Hz")
    if len(clips) == 1:
        return clips[0]
    return AudioClip(np.concatenate([c.samples for c in clips]), rate)


def load_clip(path: PathLike, sample_rate: Optional[int] = None) -> AudioClip:
    """Read a WAV file and resample it when ``sample_rate`` is given."""
    clip = read_wav(path)
    if sample_rate is not None and clip.sample_rate != sample_rate:
        logger.debug("Resampling %s from %d to %d Hz", path, clip.sample_rate, sample_rate)
        clip = resample(clip, sample_rate)
    return clip
