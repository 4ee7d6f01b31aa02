"""3DMM coefficient data model, the VCOF file format and conversation manifests."""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import fileformat
from .errors import FormatError, LayoutError, ManifestError

VCOF_MAGIC = "VCOF"
EXP_DIM = 64
ANGLE_DIM = 3
TRANS_DIM = 3
POSE_DIM = ANGLE_DIM + TRANS_DIM
MOTION_DIM = EXP_DIM + POSE_DIM

SPEAKER = 1
LISTENER = 0


@dataclass(frozen=True)
class CoeffLayout:
    """Sizes of the reconstruction coefficient blocks, in storage order."""

    identity: int = 80
    expression: int = 64
    texture: int = 80
    pose: int = 6
    lighting: int = 27

    @property
    def total(self):
        return self.identity + self.expression + self.texture + self.pose + self.lighting

    def to_dict(self):
        return {"identity": self.identity, "expression": self.expression,
                "texture": self.texture, "pose": self.pose, "lighting": self.lighting}


DEFAULT_LAYOUT = CoeffLayout()


@dataclass(frozen=True)
class IdentityCoeffs:
    alpha: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray

    def to_dict(self):
        return {"alpha": self.alpha.tolist(), "delta": self.delta.tolist(),
                "gamma": self.gamma.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(*(np.asarray(data[k], dtype=np.float64) for k in ("alpha", "delta", "gamma")))


@dataclass(frozen=True)
class DynamicCoeffs:
    beta: np.ndarray
    pose_angle: np.ndarray
    pose_trans: np.ndarray

    def to_vector(self):
        return np.concatenate([self.beta, self.pose_angle, self.pose_trans])

    @classmethod
    def from_vector(cls, vector):
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (MOTION_DIM,):
            raise LayoutError(f"dynamic coefficients need {MOTION_DIM} values, got {v.shape}")
        return cls(v[:EXP_DIM], v[EXP_DIM:EXP_DIM + ANGLE_DIM], v[EXP_DIM + ANGLE_DIM:])

    def canonicalize(self):
        """Wrap pose angles into [-pi, pi]."""
        wrapped = (self.pose_angle + math.pi) % (2 * math.pi) - math.pi
        return DynamicCoeffs(self.beta, wrapped, self.pose_trans)


class CoeffSequence:
    """A ``(T, 70)`` motion track: beta[64] | pose_angle[3] | pose_trans[3] per frame."""

    def __init__(self, data, fps=30.0):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != MOTION_DIM:
            raise LayoutError(f"CoeffSequence needs shape (T, {MOTION_DIM}), got {data.shape}")
        if len(data) == 0:
            raise LayoutError("CoeffSequence must have at least one frame")
        self.data = data
        self.fps = float(fps)

    @classmethod
    def from_frames(cls, frames, fps=30.0):
        return cls(np.stack([f.to_vector() for f in frames]), fps)

    def __len__(self):
        return len(self.data)

    def __getitem__(self, t):
        return DynamicCoeffs.from_vector(self.data[t])

    def __iter__(self):
        return (self[t] for t in range(len(self)))

    def __eq__(self, other):
        return (isinstance(other, CoeffSequence) and self.fps == other.fps
                and np.array_equal(self.data, other.data))

    def __repr__(self):
        return f"CoeffSequence(T={len(self)}, fps={self.fps:g})"

    @property
    def frames(self):
        return list(self)

    @property
    def beta(self):
        return self.data[:, :EXP_DIM]

    @property
    def pose_angle(self):
        return self.data[:, EXP_DIM:EXP_DIM + ANGLE_DIM]

    @property
    def pose_trans(self):
        return self.data[:, EXP_DIM + ANGLE_DIM:]

    @property
    def pose(self):
        return self.data[:, EXP_DIM:]


def motion_array(x):
    """``(T, 70)`` float64 view of a :class:`CoeffSequence` or array-like."""
    return np.asarray(x.data if isinstance(x, CoeffSequence) else x, dtype=np.float64)


def split_coeffs(full_vector, layout=DEFAULT_LAYOUT):
    """Split a full reconstruction vector (alpha, beta, delta, p, gamma)."""
    v = np.asarray(full_vector, dtype=np.float64)
    if v.shape != (layout.total,):
        raise LayoutError(f"expected {layout.total} coefficients, got shape {v.shape}")
    if layout.expression != EXP_DIM or layout.pose != POSE_DIM:
        raise LayoutError("expression and pose block sizes are fixed at 64 and 6")
    cuts = np.cumsum([layout.identity, layout.expression, layout.texture, layout.pose])
    alpha, beta, delta, pose, gamma = np.split(v, cuts)
    return (IdentityCoeffs(alpha, delta, gamma),
            DynamicCoeffs(beta, pose[:ANGLE_DIM], pose[ANGLE_DIM:]))


def concat_coeffs(identity, dynamic):
    return np.concatenate([identity.alpha, dynamic.beta, identity.delta,
                           dynamic.pose_angle, dynamic.pose_trans, identity.gamma])


def save_sequence(path, seq):
    fileformat.write_matrix(path, VCOF_MAGIC, seq.data)


def load_sequence(path, fps=30.0):
    return CoeffSequence(fileformat.read_matrix(path, VCOF_MAGIC, expected_cols=MOTION_DIM), fps)


@dataclass(frozen=True)
class ConditioningVocabulary:
    name: str
    labels: tuple

    def __post_init__(self):
        labels = tuple(self.labels)
        if not labels:
            raise ManifestError(f"vocabulary {self.name!r} is empty")
        if len(set(labels)) != len(labels):
            raise ManifestError(f"vocabulary {self.name!r} has duplicate labels")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    def index(self, label):
        return self.labels.index(label)


ATTITUDES = ConditioningVocabulary("attitude3", ("positive", "neutral", "negative"))
DIALOG_ACTS = ConditioningVocabulary("dialog_act26", (
    "inform", "question", "answer", "confirm", "disconfirm", "agreement",
    "disagreement", "correction", "request", "instruct", "suggest", "offer",
    "accept_request", "decline_request", "accept_offer", "decline_offer",
    "greeting", "goodbye", "thanking", "apology", "auto_positive",
    "auto_negative", "allo_positive", "turn_take", "turn_release", "stalling",
))


@dataclass(frozen=True)
class Turn:
    turn_index: int
    role_of_P: int
    vocabulary: str
    label: int
    audio_feature_path: str
    coeffs_P_path: str
    coeffs_Q_path: str

    def to_dict(self):
        return {
            "turn_index": self.turn_index,
            "role_of_P": self.role_of_P,
            "conditioning": {"vocabulary": self.vocabulary, "label": self.label},
            "audio_feature_path": self.audio_feature_path,
            "coeffs_P_path": self.coeffs_P_path,
            "coeffs_Q_path": self.coeffs_Q_path,
        }


@dataclass
class ConversationManifest:
    turns: list
    participants: dict
    vocabularies: dict
    fps: float = 30.0
    layout: CoeffLayout = DEFAULT_LAYOUT
    base_dir: str = "."
    meta: dict = field(default_factory=dict)

    def resolve(self, relpath):
        return os.path.join(self.base_dir, relpath)

    def vocabulary(self, name):
        return self.vocabularies[name]

    def to_dict(self):
        return {
            "format": "convhead-manifest",
            "version": 1,
            "fps": self.fps,
            "layout": self.layout.to_dict(),
            "vocabularies": {name: list(v.labels) for name, v in self.vocabularies.items()},
            "participants": self.participants,
            "turns": [t.to_dict() for t in self.turns],
            **({"meta": self.meta} if self.meta else {}),
        }

    @classmethod
    def from_dict(cls, data, base_dir="."):
        try:
            turns = [
                Turn(int(t["turn_index"]), int(t["role_of_P"]),
                     str(t["conditioning"]["vocabulary"]), int(t["conditioning"]["label"]),
                     t["audio_feature_path"], t["coeffs_P_path"], t["coeffs_Q_path"])
                for t in data["turns"]
            ]
            vocabularies = {name: ConditioningVocabulary(name, labels)
                            for name, labels in data["vocabularies"].items()}
            layout = CoeffLayout(**data.get("layout", {}))
            return cls(turns, dict(data["participants"]), vocabularies,
                       float(data.get("fps", 30.0)), layout, str(base_dir),
                       dict(data.get("meta", {})))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ManifestError(f"malformed manifest: {exc!r}") from exc

    def load_turn(self, turn):
        """Return ``(audio_features, coeffs_P, coeffs_Q)`` for one turn."""
        from .acoustic import load_features
        return (load_features(self.resolve(turn.audio_feature_path)).astype(np.float64),
                load_sequence(self.resolve(turn.coeffs_P_path), self.fps),
                load_sequence(self.resolve(turn.coeffs_Q_path), self.fps))

    def load_identity(self, who):
        with open(self.resolve(self.participants[who]["identity"])) as fh:
            return IdentityCoeffs.from_dict(json.load(fh))


def save_manifest(path, manifest):
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: cannot read manifest: {exc}") from exc
    return ConversationManifest.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))


@dataclass(frozen=True)
class Violation:
    turn: object
    rule: str
    message: str

    def __str__(self):
        where = "manifest" if self.turn is None else f"turn {self.turn}"
        return f"{where}: [{self.rule}] {self.message}"


def validate_manifest(manifest, base_dir=None):
    """List every invariant violation of a manifest; never raises.

    ``manifest`` may be a :class:`ConversationManifest` or the raw decoded
    JSON (dict).  Referenced files are opened to check frame counts.
    """
    if isinstance(manifest, ConversationManifest):
        base = manifest.base_dir if base_dir is None else base_dir
        data = manifest.to_dict()
    else:
        base = "." if base_dir is None else base_dir
        data = manifest
    out = []
    if not isinstance(data, dict):
        return [Violation(None, "structure", "manifest is not a JSON object")]

    vocabs = data.get("vocabularies")
    if not isinstance(vocabs, dict) or not vocabs:
        out.append(Violation(None, "structure", "missing or empty 'vocabularies'"))
        vocabs = {}
    for name, labels in vocabs.items():
        if not isinstance(labels, list) or not labels or len(set(map(str, labels))) != len(labels):
            out.append(Violation(None, "vocabulary", f"vocabulary {name!r} must be a non-empty list of unique labels"))

    participants = data.get("participants")
    if not isinstance(participants, dict) or not {"P", "Q"} <= set(participants):
        out.append(Violation(None, "structure", "participants must declare P and Q"))
    else:
        for who in ("P", "Q"):
            ref = participants[who].get("identity") if isinstance(participants[who], dict) else None
            if not isinstance(ref, str):
                out.append(Violation(None, "identity", f"participant {who} has no identity reference"))
            elif not os.path.isfile(os.path.join(base, ref)):
                out.append(Violation(None, "unreadable-file", f"identity file for {who} not found: {ref}"))

    turns = data.get("turns")
    if not isinstance(turns, list) or not turns:
        out.append(Violation(None, "structure", "manifest has no turns"))
        return out

    indices = []
    for pos, turn in enumerate(turns):
        if not isinstance(turn, dict):
            out.append(Violation(pos + 1, "structure", "turn entry is not an object"))
            continue
        idx = turn.get("turn_index")
        label = idx if isinstance(idx, int) else pos + 1
        if not isinstance(idx, int):
            out.append(Violation(label, "structure", "turn_index missing or not an integer"))
        else:
            indices.append(idx)
        if turn.get("role_of_P") not in (0, 1):
            out.append(Violation(label, "role", f"role_of_P must be 0 or 1, got {turn.get('role_of_P')!r}"))
        cond = turn.get("conditioning")
        if not isinstance(cond, dict):
            out.append(Violation(label, "conditioning", "missing conditioning"))
        else:
            vocab = vocabs.get(cond.get("vocabulary"))
            lab = cond.get("label")
            if vocab is None:
                out.append(Violation(label, "conditioning", f"unknown vocabulary {cond.get('vocabulary')!r}"))
            elif not isinstance(lab, int) or not 0 <= lab < len(vocab):
                out.append(Violation(label, "conditioning", f"label {lab!r} outside vocabulary {cond.get('vocabulary')!r}"))
        counts = {}
        for key, magic in (("audio_feature_path", "VCAF"), ("coeffs_P_path", VCOF_MAGIC),
                           ("coeffs_Q_path", VCOF_MAGIC)):
            rel = turn.get(key)
            if not isinstance(rel, str):
                out.append(Violation(label, "structure", f"missing {key}"))
                continue
            try:
                rows, cols = fileformat.read_header(os.path.join(base, rel), magic)
            except (OSError, FormatError) as exc:
                out.append(Violation(label, "unreadable-file", f"{key}: {exc}"))
                continue
            expected_cols = 45 if magic == "VCAF" else MOTION_DIM
            if cols != expected_cols:
                out.append(Violation(label, "dimension", f"{key} has D={cols}, expected {expected_cols}"))
            counts[key] = rows
        if len(set(counts.values())) > 1:
            detail = ", ".join(f"{k}={v}" for k, v in counts.items())
            out.append(Violation(label, "length-mismatch", f"frame counts differ: {detail}"))

    duplicates = sorted({i for i in indices if indices.count(i) > 1})
    for dup in duplicates:
        out.append(Violation(dup, "contiguity", f"turn index {dup} appears {indices.count(dup)} times"))
    if not duplicates:
        for pos, idx in enumerate(indices, start=1):
            if idx != pos:
                out.append(Violation(idx, "contiguity",
                                     f"turn indices {indices} are not contiguous from 1"))
                break
    return out
