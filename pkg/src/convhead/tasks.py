"""Listener, talker and multi-turn agent generation built on :mod:`convhead.model`.

Every generated sequence has the same length as its turn's audio features.
Frame 1 is the reference frame; frame ``t + 1`` is predicted from inputs at
frame ``t``.
"""

from dataclasses import dataclass

import numpy as np

from . import model as M
from .coeffs import EXP_DIM, LISTENER, MOTION_DIM, SPEAKER, CoeffSequence, DynamicCoeffs
from .errors import InvalidInputError, ManifestError
from .coeffs import validate_manifest


@dataclass
class TurnInput:
    audio_features: np.ndarray
    counterpart_coeffs: CoeffSequence
    conditioning: int
    role_of_agent: int
    reference_m: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        self.audio_features = np.asarray(self.audio_features, dtype=np.float64)
        if isinstance(self.reference_m, DynamicCoeffs):
            self.reference_m = self.reference_m.to_vector()
        self.reference_m = np.asarray(self.reference_m, dtype=np.float64)
        if self.audio_features.ndim != 2 or len(self.audio_features) == 0:
            raise InvalidInputError("audio features must be a non-empty (T, 45) array")
        if len(self.audio_features) != len(self.counterpart_coeffs):
            raise InvalidInputError(
                f"audio has {len(self.audio_features)} frames but counterpart has "
                f"{len(self.counterpart_coeffs)}")
        if self.reference_m.shape != (MOTION_DIM,):
            raise InvalidInputError(f"reference frame must have {MOTION_DIM} values")

    def __len__(self):
        return len(self.audio_features)

    def batch(self):
        """Single-row batch arrays ``(s, m, ref, e)``."""
        return (self.audio_features[None], self.counterpart_coeffs.data[None],
                self.reference_m[None], np.array([self.conditioning], dtype=np.intp))


# -- graph forward/backward (batched, used by both generation and training) ----------

def _assemble(ref, T, body):
    out = np.empty((ref.shape[0], T, MOTION_DIM))
    out[:, 0] = ref
    out[:, 1:] = body
    return out


def listener_fwd(p, s, m, ref, e, mask=None, state=None):
    """Returns ``(out, (hs, cs), cache)``; ``state`` replaces the conditioned init."""
    if state is None:
        hs, cs, ic = M.init_fwd(p, ref, e)
    else:
        (hs, cs), ic = state, None
    preds, final, sc = M.stream_fwd(p, s, m, hs, cs, mask)
    return _assemble(ref, s.shape[1], preds[:, :-1]), final, (ic, sc)


def listener_bwd(p, cache, dout, dfinal, g):
    """Returns grads w.r.t. an externally supplied initial state (or ``None``)."""
    ic, sc = cache
    dpreds = np.zeros((dout.shape[0], dout.shape[1], MOTION_DIM))
    dpreds[:, :-1] = dout[:, 1:]
    dhs, dcs = M.stream_bwd(p, sc, dpreds, *dfinal, g)
    if ic is None:
        return dhs, dcs
    M.init_bwd(p, ic, dhs, dcs, g)
    return None


def talker_fwd(p, s, m, ref, e, mask=None, state=None):
    ps = p["stream"]
    if state is None:
        hs, cs, ic = M.init_fwd(ps, ref, e)
    else:
        (hs, cs), ic = state, None
    preds, final, sc = M.stream_fwd(ps, s, m, hs, cs, mask)
    star, ac = M.audio_fwd(p["audio"], s, ref, e, mask)
    ab, ap = p["alpha_beta"][0], p["alpha_p"][0]
    lis, aud = preds[:, :-1], star[:, 1:]
    body = np.concatenate([
        ab * lis[..., :EXP_DIM] + (1.0 - ab) * aud[..., :EXP_DIM],
        ap * lis[..., EXP_DIM:] + (1.0 - ap) * aud[..., EXP_DIM:],
    ], axis=2)
    return _assemble(ref, s.shape[1], body), final, (ic, sc, ac, lis, aud)


def talker_bwd(p, cache, dout, dfinal, g):
    ic, sc, ac, lis, aud = cache
    d = dout[:, 1:]
    ab, ap = p["alpha_beta"][0], p["alpha_p"][0]
    g["alpha_beta"] += np.sum(d[..., :EXP_DIM] * (lis[..., :EXP_DIM] - aud[..., :EXP_DIM]))
    g["alpha_p"] += np.sum(d[..., EXP_DIM:] * (lis[..., EXP_DIM:] - aud[..., EXP_DIM:]))
    weights_lis = np.concatenate([np.full(EXP_DIM, ab), np.full(MOTION_DIM - EXP_DIM, ap)])
    B, T = dout.shape[:2]
    dstar = np.zeros((B, T, MOTION_DIM))
    dstar[:, 1:] = d * (1.0 - weights_lis)
    M.audio_bwd(p["audio"], ac, dstar, g["audio"])
    dpreds = np.zeros((B, T, MOTION_DIM))
    dpreds[:, :-1] = d * weights_lis
    dhs, dcs = M.stream_bwd(p["stream"], sc, dpreds, *dfinal, g["stream"])
    if ic is None:
        return dhs, dcs
    M.init_bwd(p["stream"], ic, dhs, dcs, g["stream"])
    return None


# -- single-turn generation ---------------------------------------------------------

def _state_lists(state):
    return None if state is None else state.lists()


def run_listener(turn, params, state=None):
    """Listener generation that also returns the final decoder state."""
    if turn.role_of_agent != LISTENER:
        raise InvalidInputError("run_listener needs a turn where the agent listens (role 0)")
    M._check_label(turn.conditioning, params)
    out, (hs, cs), _ = listener_fwd(params, *turn.batch(), state=_state_lists(state))
    return CoeffSequence(out[0], turn.fps), M.DecoderState.from_lists(hs, cs)


def generate_listener(turn, params):
    """Responsive listener motion for one turn, streaming and strictly causal."""
    return run_listener(turn, params)[0]


def encode_talker_audio(audio_features, conditioning, reference_m, params):
    """Bidirectional audio branch: per-frame ``(beta_star, pose_star)``.

    ``params`` is the audio-encoder group of a talker.
    """
    s = np.asarray(audio_features, dtype=np.float64)
    if s.ndim != 2 or len(s) == 0:
        raise InvalidInputError("audio features must be a non-empty (T, 45) array")
    if isinstance(reference_m, DynamicCoeffs):
        reference_m = reference_m.to_vector()
    e = M._check_label(conditioning, params["fwd"])
    out, _ = M.audio_fwd(params, s[None], np.asarray(reference_m, dtype=np.float64)[None], e)
    return out[0, :, :EXP_DIM], out[0, :, EXP_DIM:]


def run_talker(turn, params, state=None):
    if turn.role_of_agent != SPEAKER:
        raise InvalidInputError("run_talker needs a turn where the agent speaks (role 1)")
    M._check_label(turn.conditioning, params["stream"])
    out, (hs, cs), _ = talker_fwd(params, *turn.batch(), state=_state_lists(state))
    return CoeffSequence(out[0], turn.fps), M.DecoderState.from_lists(hs, cs)


def generate_talker(turn, params):
    """Expressive talker: audio branch blended with the listener-aware branch."""
    return run_talker(turn, params)[0]


def listener_aware_branch(turn, params):
    """Streaming half of the talker alone (frame 1 = reference), for causality checks."""
    ps = params["stream"]
    s, m, ref, e = turn.batch()
    hs, cs, _ = M.init_fwd(ps, ref, e)
    preds, _, _ = M.stream_fwd(ps, s, m, hs, cs)
    return CoeffSequence(_assemble(ref, s.shape[1], preds[:, :-1])[0], turn.fps)


# -- conversations -----------------------------------------------------------------

def conversation_turns(manifest, agent="P"):
    """Build one :class:`TurnInput` per manifest turn for ``agent``."""
    if agent != "P":
        raise InvalidInputError("manifests carry roles and conditioning for participant P only")
    turns = []
    for turn in manifest.turns:
        audio, coeffs_p, coeffs_q = manifest.load_turn(turn)
        turns.append(TurnInput(audio, coeffs_q, turn.label, turn.role_of_P,
                               coeffs_p.data[0], manifest.fps))
    return turns


def run_turns(turns, params, reset_on_switch=False):
    """Chain single-turn generation, carrying state through the role switcher.

    With ``reset_on_switch`` the state is re-initialised from the turn's
    reference and label at every role change instead (hard-reset baseline).
    """
    outputs, state, prev_role = [], None, None
    for turn in turns:
        if state is not None:
            if reset_on_switch and turn.role_of_agent != prev_role:
                state = None
            else:
                state = M.switch_role(state, prev_role, turn.role_of_agent, params["switch"])
        if turn.role_of_agent == LISTENER:
            seq, state = run_listener(turn, params["listener"], state)
        else:
            seq, state = run_talker(turn, params["talker"], state)
        outputs.append(seq)
        prev_role = turn.role_of_agent
    return outputs


def generate_conversation(manifest, params, agent="P", reset_on_switch=False):
    """Per-turn motion of ``agent`` across a whole conversation manifest."""
    violations = validate_manifest(manifest)
    if violations:
        raise ManifestError("manifest failed validation", violations)
    return run_turns(conversation_turns(manifest, agent), params, reset_on_switch)
