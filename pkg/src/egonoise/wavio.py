"""WAV input/output.

Reads 16-bit PCM and 32/64-bit float files (1 to 8 channels) into float64
arrays shaped ``(channels, samples)``. No resampling is ever performed.
"""

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import DataError

MAX_CHANNELS = 8
FORMATS = ("pcm16", "float32", "float64")


def read_wav(path):
    """Return ``(samples, sample_rate)`` with samples as ``(channels, n)`` float64.

    16-bit PCM is scaled to [-1, 1); float files are returned unscaled.
    """
    path = Path(path)
    try:
        fs, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except ValueError as exc:
        raise DataError(f"{path}: unreadable WAV ({exc})") from None
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")
    x = x[:, None] if x.ndim == 1 else x
    if x.shape[1] > MAX_CHANNELS:
        raise DataError(f"{path}: {x.shape[1]} channels (at most {MAX_CHANNELS} supported)")
    return np.ascontiguousarray(x.T), float(fs)


def write_wav(path, samples, sample_rate, fmt="float32"):
    """Write ``(channels, n)`` or ``(n,)`` samples.

    ``pcm16`` clips to [-1, 1]; callers wanting headroom must scale first.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if x.shape[0] > MAX_CHANNELS:
        raise DataError(f"cannot write {x.shape[0]} channels (max {MAX_CHANNELS})")
    if int(sample_rate) != sample_rate:
        raise DataError("WAV sample rate must be an integer")
    if fmt == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    elif fmt == "float32":
        data = x.astype(np.float32)
    elif fmt == "float64":
        data = x
    else:
        raise ValueError(f"unknown WAV format {fmt!r}; expected one of {FORMATS}")
    data = data[0] if data.shape[0] == 1 else data.T
    wavfile.write(Path(path), int(sample_rate), np.ascontiguousarray(data))
