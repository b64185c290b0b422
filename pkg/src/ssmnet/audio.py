"""Minimal audio I/O: 16-bit PCM mono WAV and raw little-endian float32."""
from __future__ import annotations

import wave

import numpy as np

__all__ = ["AudioFormatError", "read_wav", "write_wav", "read_raw", "write_raw", "read_audio"]


class AudioFormatError(ValueError):
    pass


def read_wav(path) -> tuple[int, np.ndarray]:
    """Return ``(sample_rate, samples)`` with samples scaled to [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            frames = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: not a PCM WAV file ({exc})") from None
    if channels != 1:
        raise AudioFormatError(f"{path}: {channels} channels; only mono WAV is supported")
    if width != 2:
        raise AudioFormatError(f"{path}: {8 * width}-bit samples; only 16-bit PCM is supported")
    return rate, np.frombuffer(frames, dtype="<i2").astype(np.float32) / 32768.0


def write_wav(path, samples, sample_rate: int) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def read_raw(path) -> np.ndarray:
    data = open(path, "rb").read()
    if len(data) % 4:
        raise AudioFormatError(f"{path}: size {len(data)} is not a multiple of 4 bytes")
    return np.frombuffer(data, dtype="<f4").copy()


def write_raw(path, array) -> None:
    """Write ``array`` as little-endian float32 in C order."""
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def read_audio(path, fmt: str | None = None) -> tuple[int | None, np.ndarray]:
    """Read by format (``wav``/``raw``, inferred from the suffix if omitted).
    Raw files carry no sample rate, so ``None`` is returned for it."""
    if fmt is None:
        fmt = "wav" if str(path).lower().endswith(".wav") else "raw"
    if fmt == "wav":
        return read_wav(path)
    if fmt == "raw":
        return None, read_raw(path)
    raise AudioFormatError(f"unknown input format {fmt!r}")
