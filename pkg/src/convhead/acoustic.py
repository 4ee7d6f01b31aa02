"""Per-video-frame acoustic features (45 dims) from mono audio.

Each video frame gets one analysis window of ``2 * hop`` samples centred on
its hop, where ``hop = round(sample_rate / fps)``.  The flattened feature
vector is::

    mfcc[14] | delta[14] | delta-delta[14] | energy | loudness | zcr
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.io import wavfile

from . import fileformat
from .errors import FormatError, InvalidInputError

FEATURE_DIM = 45
NUM_MFCC = 14
NUM_MEL_FILTERS = 26
LOG_FLOOR = 1e-10
ENERGY_EPS = 1e-10
VCAF_MAGIC = "VCAF"


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if int(self.sample_rate) <= 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidInputError("AudioClip expects mono samples (1-D array)")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class AcousticFrameFeatures:
    mfcc: np.ndarray
    mfcc_delta: np.ndarray
    mfcc_delta_delta: np.ndarray
    energy: float
    loudness: float
    zcr: float

    def to_vector(self):
        return np.concatenate([
            self.mfcc, self.mfcc_delta, self.mfcc_delta_delta,
            [self.energy, self.loudness, self.zcr],
        ])

    @classmethod
    def from_vector(cls, vector):
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (FEATURE_DIM,):
            raise InvalidInputError(f"expected {FEATURE_DIM} values, got shape {v.shape}")
        return cls(v[0:14], v[14:28], v[28:42], float(v[42]), float(v[43]), float(v[44]))


def hop_length(sample_rate, fps):
    if fps <= 0:
        raise InvalidInputError(f"fps must be positive, got {fps}")
    return int(round(sample_rate / fps))


def frame_audio(clip, fps):
    """Cut ``clip`` into one ``(2 * hop)``-sample window per video frame.

    Returns an array of shape ``(floor(N / hop), 2 * hop)``.  Window ``k``
    covers samples ``[k*hop - hop//2, k*hop - hop//2 + 2*hop)`` of the
    zero-padded signal, i.e. it is centred on the k-th hop.
    """
    hop = hop_length(clip.sample_rate, fps)
    n = len(clip.samples)
    if n == 0:
        raise InvalidInputError("cannot frame an empty clip")
    if hop < 1 or n < hop:
        raise InvalidInputError(f"clip has {n} samples, shorter than one hop ({hop})")
    n_frames = n // hop
    win = 2 * hop
    left = hop // 2
    padded = np.zeros(n_frames * hop + win, dtype=np.float64)
    padded[left:left + n] = clip.samples[: len(padded) - left]
    starts = np.arange(n_frames) * hop
    return padded[starts[:, None] + np.arange(win)[None, :]]


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=32)
def mel_filterbank(sample_rate, n_fft, n_filters=NUM_MEL_FILTERS):
    """Triangular filters on the HTK mel scale spanning 0 .. sample_rate/2."""
    edges = _mel_to_hz(np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0), n_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (centre - lower)
    falling = (upper - freqs[None, :]) / (upper - centre)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    bank.setflags(write=False)
    return bank


@lru_cache(maxsize=8)
def _dct_matrix(n):
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    mat = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * i + 1) / (2 * n))
    mat[0] /= np.sqrt(2.0)
    mat.setflags(write=False)
    return mat


def _next_pow2(n):
    return 1 << (int(n) - 1).bit_length()


def mfcc_frames(windows, sample_rate):
    """MFCCs 1..14 for each row of ``windows``."""
    windows = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    n = windows.shape[1]
    if n == 0:
        raise InvalidInputError("empty analysis window")
    n_fft = _next_pow2(n)
    spectrum = np.abs(np.fft.rfft(windows * np.hamming(n), n=n_fft, axis=1)) ** 2
    mel = spectrum @ mel_filterbank(int(sample_rate), n_fft).T
    log_mel = np.log(np.maximum(mel, LOG_FLOOR))
    cepstra = log_mel @ _dct_matrix(NUM_MEL_FILTERS).T
    return cepstra[:, 1:NUM_MFCC + 1]


def mfcc(window, sample_rate):
    return mfcc_frames(np.asarray(window, dtype=np.float64)[None, :], sample_rate)[0]


def _delta(seq, width=2):
    seq = np.asarray(seq, dtype=np.float64)
    T = len(seq)
    padded = np.concatenate([np.repeat(seq[:1], width, axis=0), seq,
                             np.repeat(seq[-1:], width, axis=0)])
    denom = 2.0 * sum(n * n for n in range(1, width + 1))
    out = np.zeros_like(seq)
    for n in range(1, width + 1):
        out += n * (padded[width + n:width + n + T] - padded[width - n:width - n + T])
    return out / denom


def delta_features(mfcc_seq):
    """Delta and delta-delta (regression width 2, edge replication), concatenated."""
    seq = np.asarray(mfcc_seq, dtype=np.float64)
    if seq.ndim != 2 or len(seq) < 1:
        raise InvalidInputError("delta_features expects a non-empty (T, D) sequence")
    d1 = _delta(seq)
    return np.concatenate([d1, _delta(d1)], axis=1)


def scalar_features(window):
    """Return ``(energy, loudness, zcr)`` of one window."""
    w = np.asarray(window, dtype=np.float64)
    if w.size == 0:
        raise InvalidInputError("empty analysis window")
    energy = float(np.mean(w * w))
    loudness = float(np.log(energy + ENERGY_EPS))
    if w.size == 1:
        return energy, loudness, 0.0
    positive = w >= 0
    zcr = float(np.count_nonzero(positive[1:] != positive[:-1]) / (w.size - 1))
    return energy, loudness, zcr


def extract_features(clip, fps=30):
    """Feature matrix of shape ``(T, 45)``, one row per video frame.

    Rows unpack with :meth:`AcousticFrameFeatures.from_vector`.
    """
    windows = frame_audio(clip, fps)
    cep = mfcc_frames(windows, clip.sample_rate)
    deltas = delta_features(cep)
    scalars = np.array([scalar_features(w) for w in windows])
    return np.concatenate([cep, deltas, scalars], axis=1)


def read_wav(path):
    """Load a 16-bit / 32-bit int or float PCM WAV; stereo is averaged to mono."""
    rate, data = wavfile.read(path)
    if np.issubdtype(data.dtype, np.integer):
        info = np.iinfo(data.dtype)
        if data.dtype == np.uint8:
            data = (data.astype(np.float64) - 128.0) / 128.0
        else:
            data = data.astype(np.float64) / float(-info.min)
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    return AudioClip(data, rate)


def save_features(path, features):
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[1] != FEATURE_DIM:
        raise FormatError(f"VCAF expects (T, {FEATURE_DIM}) features, got {features.shape}")
    fileformat.write_matrix(path, VCAF_MAGIC, features)


def load_features(path):
    return fileformat.read_matrix(path, VCAF_MAGIC, expected_cols=FEATURE_DIM)
