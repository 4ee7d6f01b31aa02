"""Deterministic synthetic conversation corpus with a known listener response.

The talker's motion is a smoothed, bounded random walk whose mouth-region
expression dims follow the audio energy, plus an optional component that
tracks the listener's previous frame.  The listener is an exact function of
the talker's inputs (:func:`oracle_listener`), so a model trained on the
corpus has a measurable target to recover.
"""

import json
import os
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .acoustic import ENERGY_EPS, FEATURE_DIM, NUM_MFCC, delta_features, save_features
from .coeffs import (ANGLE_DIM, ATTITUDES, DIALOG_ACTS, EXP_DIM, LISTENER, MOTION_DIM,
                     SPEAKER, CoeffSequence, ConditioningVocabulary, ConversationManifest,
                     DEFAULT_LAYOUT, IdentityCoeffs, Turn, motion_array, save_manifest,
                     save_sequence)
from .errors import ConfigError, InvalidInputError

MOUTH_DIMS = 8
NOD_AXIS = 0
ENERGY_COL = 42
ATTITUDE_GAINS = (1.0, 0.7, 0.4)
EXP_AMPLITUDE, ANGLE_AMPLITUDE, TRANS_AMPLITUDE = 0.5, 0.3, 0.1


@dataclass
class SynthConfig:
    num_conversations: int = 40
    turns_per_conversation: int = 4
    frames_min: int = 80
    frames_max: int = 100
    attitudes: tuple = ATTITUDES.labels
    dialog_acts: tuple = DIALOG_ACTS.labels
    g_pose: float = 0.3
    g_exp: float = 0.5
    g_energy: float = 0.4
    g_listen: float = 0.3
    smoothing: float = 0.8
    seed: int = 0
    first_role: object = None
    fps: float = 30.0
    val_count: int = 0
    test_count: int = 0
    attitude_vocab_name: str = ATTITUDES.name
    dialog_act_vocab_name: str = DIALOG_ACTS.name

    def __post_init__(self):
        self.attitudes = tuple(self.attitudes)
        self.dialog_acts = tuple(self.dialog_acts)
        if self.num_conversations < 1 or self.turns_per_conversation < 1:
            raise ConfigError("conversation and turn counts must be positive")
        if not 1 <= self.frames_min <= self.frames_max:
            raise ConfigError("need 1 <= frames_min <= frames_max")
        if not 0.0 < self.smoothing < 1.0:
            raise ConfigError("smoothing must lie strictly between 0 and 1")
        if len(self.attitudes) != 3:
            raise ConfigError("the oracle defines exactly three attitudes")
        if self.first_role not in (None, 0, 1):
            raise ConfigError("first_role must be 0, 1 or null")
        if self.val_count + self.test_count > self.num_conversations:
            raise ConfigError("val_count + test_count exceeds num_conversations")

    def to_dict(self):
        d = asdict(self)
        d["attitudes"], d["dialog_acts"] = list(self.attitudes), list(self.dialog_acts)
        return d

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Coupling:
    """Corpus-wide constants of the listener response, derived from the seed."""

    exp_map: np.ndarray = field(repr=False)        # signed permutation, 64 x 64
    attitude_bias: np.ndarray = field(repr=False)  # (3, 64); neutral row is zero
    act_bias: np.ndarray = field(repr=False)       # (num acts, 64)


@lru_cache(maxsize=16)
def _coupling(seed, num_acts):
    rng = np.random.default_rng([seed, 0])
    perm = rng.permutation(EXP_DIM)
    signs = rng.choice([-1.0, 1.0], size=EXP_DIM)
    exp_map = np.zeros((EXP_DIM, EXP_DIM))
    exp_map[np.arange(EXP_DIM), perm] = signs
    b = 0.15 * rng.standard_normal(EXP_DIM)
    attitude_bias = np.stack([b, np.zeros(EXP_DIM), -b])
    act_bias = 0.3 * rng.standard_normal((num_acts, EXP_DIM))
    for a in (exp_map, attitude_bias, act_bias):
        a.setflags(write=False)
    return Coupling(exp_map, attitude_bias, act_bias)


def coupling(config):
    return _coupling(config.seed, len(config.dialog_acts))


def _ar1(rng, n, dim, rho, std):
    """Stationary AR(1) paths, shape (n, dim)."""
    innov = rng.standard_normal((n, dim)) * std * np.sqrt(1.0 - rho * rho)
    out = np.empty((n, dim))
    out[0] = rng.standard_normal(dim) * std
    for t in range(1, n):
        out[t] = rho * out[t - 1] + innov[t]
    return out


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class _SpeakerDrivers:
    """Random drivers of one talking turn; consumes ``rng`` in a fixed order."""

    def __init__(self, rng, n_frames):
        mfcc = _ar1(rng, n_frames, NUM_MFCC, 0.9, 1.0) / (1.0 + 0.2 * np.arange(NUM_MFCC))
        energy = 0.02 + 0.4 * _sigmoid(_ar1(rng, n_frames, 1, 0.85, 1.5)[:, 0])
        zcr = 0.05 + 0.4 * _sigmoid(_ar1(rng, n_frames, 1, 0.8, 1.0)[:, 0])
        self.motion = _ar1(rng, n_frames, MOTION_DIM, 0.97, 1.0)
        self.features = np.concatenate([
            mfcc, delta_features(mfcc),
            energy[:, None], np.log(energy + ENERGY_EPS)[:, None], zcr[:, None],
        ], axis=1)
        self.energy = energy


def _speaker_target(drivers, t, act_bias, listener_prev, g_listen):
    z = drivers.motion[t]
    w = np.empty(MOTION_DIM)
    w[:EXP_DIM] = EXP_AMPLITUDE * np.tanh(z[:EXP_DIM] + act_bias)
    w[:MOUTH_DIMS] = EXP_AMPLITUDE * np.tanh(0.5 * z[:MOUTH_DIMS] + 4.0 * (drivers.energy[t] - 0.2))
    w[EXP_DIM:EXP_DIM + ANGLE_DIM] = ANGLE_AMPLITUDE * np.tanh(z[EXP_DIM:EXP_DIM + ANGLE_DIM])
    w[EXP_DIM + ANGLE_DIM:] = TRANS_AMPLITUDE * np.tanh(z[EXP_DIM + ANGLE_DIM:])
    if listener_prev is not None and g_listen:
        w[MOUTH_DIMS:EXP_DIM] += g_listen * listener_prev[MOUTH_DIMS:EXP_DIM]
    return w


class ListenerOracle:
    """Frame-by-frame listener response to a talker."""

    def __init__(self, attitude, config, initial=None):
        if not 0 <= attitude < 3:
            raise InvalidInputError(f"attitude {attitude} outside the three-way vocabulary")
        cp = coupling(config)
        self.lam = config.smoothing
        self.gain = config.g_exp * ATTITUDE_GAINS[attitude]
        self.exp_map = cp.exp_map
        self.bias = np.zeros(MOTION_DIM)
        self.bias[:EXP_DIM] = cp.attitude_bias[attitude]
        self.config = config
        self.state = None if initial is None else np.asarray(initial, dtype=np.float64) - self.bias

    def drive(self, speaker_frame, energy):
        c = self.config
        x = np.empty(MOTION_DIM)
        x[:EXP_DIM] = self.gain * (self.exp_map @ speaker_frame[:EXP_DIM])
        x[EXP_DIM:EXP_DIM + ANGLE_DIM] = -c.g_pose * speaker_frame[EXP_DIM:EXP_DIM + ANGLE_DIM]
        x[EXP_DIM + NOD_AXIS] += c.g_energy * energy
        x[EXP_DIM + ANGLE_DIM:] = c.g_pose * speaker_frame[EXP_DIM + ANGLE_DIM:]
        return x

    def step(self, speaker_frame, energy):
        x = self.drive(speaker_frame, energy)
        self.state = x if self.state is None else self.lam * self.state + (1.0 - self.lam) * x
        return self.state + self.bias


def oracle_listener(speaker_features, speaker_coeffs, attitude, config, initial=None):
    """The corpus' listener for a given talker turn.

    ``initial`` is the listener's previous frame, used to continue smoothly
    from an earlier turn.
    """
    feats = np.asarray(speaker_features, dtype=np.float64)
    coeffs = motion_array(speaker_coeffs)
    if len(feats) != len(coeffs):
        raise InvalidInputError(f"{len(feats)} feature frames vs {len(coeffs)} coefficient frames")
    oracle = ListenerOracle(attitude, config, initial)
    out = np.stack([oracle.step(coeffs[t], feats[t, ENERGY_COL]) for t in range(len(coeffs))])
    return CoeffSequence(out, config.fps)


def _simulate_turn(config, rng, n_frames, act, attitude, speaker_start=None,
                   listener_start=None, couple=True):
    drivers = _SpeakerDrivers(rng, n_frames)
    act_bias = coupling(config).act_bias[act]
    lam = config.smoothing
    oracle = ListenerOracle(attitude, config, listener_start)
    speaker = np.empty((n_frames, MOTION_DIM))
    listener = np.empty((n_frames, MOTION_DIM))
    prev_s, prev_l = speaker_start, listener_start
    for t in range(n_frames):
        w = _speaker_target(drivers, t, act_bias, prev_l if couple else None, config.g_listen)
        prev_s = w if prev_s is None else lam * prev_s + (1.0 - lam) * w
        speaker[t] = prev_s
        prev_l = listener[t] = oracle.step(prev_s, drivers.energy[t])
    return drivers.features, speaker, listener


def synth_speaker(config, rng, n_frames=None, dialog_act=0, start=None):
    """A standalone talker turn: ``(features (T, 45), CoeffSequence)``."""
    if n_frames is None:
        n_frames = int(rng.integers(config.frames_min, config.frames_max + 1))
    feats, speaker, _ = _simulate_turn(config, rng, n_frames, dialog_act, 1, start, None,
                                       couple=False)
    return feats, CoeffSequence(speaker, config.fps)


def _identity(rng):
    return IdentityCoeffs(rng.standard_normal(DEFAULT_LAYOUT.identity),
                          rng.standard_normal(DEFAULT_LAYOUT.texture),
                          0.1 * rng.standard_normal(DEFAULT_LAYOUT.lighting))


def synth_conversation(config, index):
    """In-memory conversation ``index``: list of per-turn dicts plus identities."""
    rng = np.random.default_rng([config.seed, 1, index])
    first = config.first_role if config.first_role is not None else int(rng.integers(2))
    ident = {"P": _identity(rng), "Q": _identity(rng)}
    last = {"P": None, "Q": None}
    turns = []
    for i in range(config.turns_per_conversation):
        role = (first + i) % 2
        talker, listener = ("P", "Q") if role == SPEAKER else ("Q", "P")
        n = int(rng.integers(config.frames_min, config.frames_max + 1))
        act = int(rng.integers(len(config.dialog_acts)))
        attitude = int(rng.integers(3))
        feats, s, l = _simulate_turn(config, rng, n, act, attitude, last[talker], last[listener])
        coeffs = {talker: s, listener: l}
        last = {"P": coeffs["P"][-1], "Q": coeffs["Q"][-1]}
        turns.append({"role_of_P": role, "label": act if role == SPEAKER else attitude,
                      "act": act, "attitude": attitude, "features": feats,
                      "P": coeffs["P"], "Q": coeffs["Q"]})
    return turns, ident


def synth_corpus(config, out_dir):
    """Write the corpus; returns the list of manifest paths (in index order).

    Layout: ``conv_XXXX/manifest.json`` plus per-turn VCAF/VCOF files and an
    ``index.json`` holding the train/val/test split.
    """
    os.makedirs(out_dir, exist_ok=True)
    vocabs = {
        config.attitude_vocab_name: ConditioningVocabulary(config.attitude_vocab_name, config.attitudes),
        config.dialog_act_vocab_name: ConditioningVocabulary(config.dialog_act_vocab_name, config.dialog_acts),
    }
    paths = []
    for c in range(config.num_conversations):
        turns, ident = synth_conversation(config, c)
        conv_dir = os.path.join(out_dir, f"conv_{c:04d}")
        os.makedirs(conv_dir, exist_ok=True)
        participants = {}
        for who in ("P", "Q"):
            name = f"{who}_identity.json"
            with open(os.path.join(conv_dir, name), "w") as fh:
                json.dump(ident[who].to_dict(), fh)
            participants[who] = {"identity": name}
        manifest_turns = []
        for i, turn in enumerate(turns, start=1):
            stem = f"turn{i:02d}"
            save_features(os.path.join(conv_dir, f"{stem}_audio.vcaf"), turn["features"])
            save_sequence(os.path.join(conv_dir, f"{stem}_P.vcof"), CoeffSequence(turn["P"], config.fps))
            save_sequence(os.path.join(conv_dir, f"{stem}_Q.vcof"), CoeffSequence(turn["Q"], config.fps))
            vocab = config.dialog_act_vocab_name if turn["role_of_P"] == SPEAKER else config.attitude_vocab_name
            manifest_turns.append(Turn(i, turn["role_of_P"], vocab, turn["label"],
                                       f"{stem}_audio.vcaf", f"{stem}_P.vcof", f"{stem}_Q.vcof"))
        manifest = ConversationManifest(manifest_turns, participants, vocabs, config.fps,
                                        base_dir=conv_dir)
        path = os.path.join(conv_dir, "manifest.json")
        save_manifest(path, manifest)
        paths.append(path)
    rel = [os.path.relpath(p, out_dir) for p in paths]
    n_test, n_val = config.test_count, config.val_count
    n_train = len(rel) - n_test - n_val
    index = {"config": config.to_dict(),
             "splits": {"train": rel[:n_train], "val": rel[n_train:n_train + n_val],
                        "test": rel[n_train + n_val:]}}
    with open(os.path.join(out_dir, "index.json"), "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def load_split(corpus_dir, split):
    """Manifest paths of one split; without an index every manifest is 'train'."""
    index_path = os.path.join(corpus_dir, "index.json")
    if os.path.isfile(index_path):
        with open(index_path) as fh:
            index = json.load(fh)
        return [os.path.join(corpus_dir, p) for p in index["splits"].get(split, [])]
    if split != "train":
        return []
    found = []
    for root, _, files in sorted(os.walk(corpus_dir)):
        if "manifest.json" in files:
            found.append(os.path.join(root, "manifest.json"))
    return sorted(found)
