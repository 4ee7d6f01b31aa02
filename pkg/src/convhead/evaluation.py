"""Generator-side metrics (ExpFD, AngleFD, TransFD), the Random and Mirror
baselines, and corpus evaluation reports.

FD values are the mean over frames of per-frame L1 distances, so they are
comparable across clip lengths but not with published absolute numbers.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tasks
from .checkpoint import Checkpoint
from .coeffs import (ANGLE_DIM, EXP_DIM, LISTENER, MOTION_DIM, SPEAKER, CoeffSequence,
                     load_manifest, motion_array, validate_manifest)
from .errors import ConfigError, InvalidInputError, ManifestError

DEFAULT_SIGMA = 0.05


def fd_metrics(pred, gt):
    """Return ``(ExpFD, AngleFD, TransFD)``."""
    a, b = motion_array(pred), motion_array(gt)
    if a.shape != b.shape:
        raise InvalidInputError(f"prediction {a.shape} and ground truth {b.shape} differ")
    diff = np.abs(a - b)
    exp = diff[:, :EXP_DIM].sum(axis=1).mean()
    angle = diff[:, EXP_DIM:EXP_DIM + ANGLE_DIM].sum(axis=1).mean()
    trans = diff[:, EXP_DIM + ANGLE_DIM:].sum(axis=1).mean()
    return float(exp), float(angle), float(trans)


def baseline_random(reference, length, sigma=DEFAULT_SIGMA, seed=0, fps=30.0):
    """Reference frame plus i.i.d. Gaussian jitter; frame 1 is left unperturbed."""
    if length < 1:
        raise InvalidInputError("length must be at least 1")
    if sigma < 0:
        raise InvalidInputError("sigma must be non-negative")
    ref = np.asarray(getattr(reference, "to_vector", lambda: reference)(), dtype=np.float64)
    rng = np.random.default_rng(seed)
    frames = np.tile(ref, (length, 1))
    frames[1:] += rng.normal(0.0, sigma, size=(length - 1, MOTION_DIM))
    return CoeffSequence(frames, fps)


def baseline_mirror(speaker):
    """Copy the speaker's motion verbatim."""
    return CoeffSequence(np.array(speaker.data, copy=True), speaker.fps)


@dataclass
class EvalReport:
    method: str
    dataset: str
    clips: list = field(default_factory=list)

    @property
    def clip_count(self):
        return len(self.clips)

    def mean(self, key):
        return float(np.mean([c[key] for c in self.clips])) if self.clips else float("nan")

    @property
    def ExpFD(self):
        return self.mean("ExpFD")

    @property
    def AngleFD(self):
        return self.mean("AngleFD")

    @property
    def TransFD(self):
        return self.mean("TransFD")

    def to_dict(self):
        return {"method": self.method, "dataset": self.dataset, "clip_count": self.clip_count,
                "ExpFD": self.ExpFD, "AngleFD": self.AngleFD, "TransFD": self.TransFD,
                "clips": self.clips}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _predictor(method, options):
    """Turn ``method`` into ``f(clip_index, turn_input, manifest_turn) -> CoeffSequence``."""
    if callable(method):
        return getattr(method, "__name__", "custom"), method
    sigma = options.get("sigma", DEFAULT_SIGMA)
    seed = options.get("seed", 0)
    task = options.get("task", "listener")
    if method == "random":
        return "random", lambda i, turn, _: baseline_random(
            turn.reference_m, len(turn), sigma, seed=[seed, i], fps=turn.fps)
    if method == "mirror":
        return "mirror", lambda i, turn, _: baseline_mirror(turn.counterpart_coeffs)
    if isinstance(method, Checkpoint) or (isinstance(method, str) and method.startswith("ckpt:")):
        ckpt = method if isinstance(method, Checkpoint) else Checkpoint.load(method[5:])
        return "checkpoint", _checkpoint_predictor(ckpt, task, options)
    raise ConfigError(f"unknown evaluation method {method!r}")


def _checkpoint_predictor(ckpt, task, options):
    if task not in ckpt.params:
        raise ConfigError(f"checkpoint of task {ckpt.task!r} has no {task} generator")
    vocab = ckpt.vocabularies.get(task)
    params = ckpt.params[task]
    run = tasks.generate_listener if task == "listener" else tasks.generate_talker

    def predict(i, turn, mturn):
        if vocab is not None and mturn is not None and mturn.vocabulary != vocab.name:
            raise ConfigError(f"checkpoint vocabulary {vocab.name!r} does not match "
                              f"manifest vocabulary {mturn.vocabulary!r}")
        return run(turn, params)
    return predict


def evaluate_run(manifests, method, options=None, dataset="corpus"):
    """Score ``method`` on every turn of the requested role across ``manifests``.

    ``options``: ``task`` (``listener`` or ``talker``; default listener),
    ``sigma`` and ``seed`` for the Random baseline.  ``method`` is
    ``"random"``, ``"mirror"``, ``"ckpt:<path>"``, a :class:`Checkpoint`, or
    a callable ``f(clip_index, TurnInput, manifest_turn)``.
    """
    options = dict(options or {})
    role = LISTENER if options.get("task", "listener") == "listener" else SPEAKER
    name, predict = _predictor(method, options)
    report = EvalReport(name, dataset)
    clip = 0
    for m in manifests:
        if isinstance(m, str):
            m = load_manifest(m)
        violations = validate_manifest(m)
        if violations:
            raise ManifestError(f"invalid manifest in {m.base_dir}", violations)
        for mturn, turn in zip(m.turns, tasks.conversation_turns(m)):
            if turn.role_of_agent != role:
                continue
            gt = m.load_turn(mturn)[1]
            pred = predict(clip, turn, mturn)
            exp, angle, trans = fd_metrics(pred, gt)
            report.clips.append({"manifest": m.base_dir, "turn": mturn.turn_index,
                                 "frames": len(gt), "ExpFD": exp, "AngleFD": angle,
                                 "TransFD": trans})
            clip += 1
    return report
