"""Recurrent machinery shared by the listener, talker and agent generators.

Parameters live in nested dicts of float64 arrays.  A *decoder group* holds
the audio/motion fusion, the conditioned state initialiser, a stack of LSTM
layers and the two output heads:

    Wa, Wm, Wj, bj          fusion  tanh(Wj [tanh(Wa s) | tanh(Wm m)] + bj)
    emb, Wr, br             conditioning embedding, reference encoder
    Wh{l}, bh{l}, Wc{l}, bc{l}   initial hidden / cell maps per layer
    W{l}, b{l}              LSTM layer l, gate order i, f, g, o
    Wb, bb, Wp, bp          expression (64) and pose (6) heads

Every forward helper returns a cache consumed by the matching ``*_bwd``
function, which accumulates parameter gradients into a tree shaped like the
parameters.  All functions operate on a leading batch axis.
"""

import re
from dataclasses import asdict, dataclass

import numpy as np

from .acoustic import FEATURE_DIM
from .coeffs import EXP_DIM, MOTION_DIM, POSE_DIM, DynamicCoeffs
from .errors import ConditioningError, NumericError, ShapeError


@dataclass
class ModelConfig:
    hidden_size: int = 256
    num_layers: int = 2
    fused_size: int = 128
    proj_size: int = 64
    embed_size: int = 16
    ref_size: int = 32

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class DecoderState:
    """Hidden and cell state, each shaped ``(layers, batch, hidden)``."""

    hidden: np.ndarray
    cell: np.ndarray

    @classmethod
    def from_lists(cls, hs, cs):
        return cls(np.stack(hs), np.stack(cs))

    def lists(self):
        return list(self.hidden), list(self.cell)

    @property
    def num_layers(self):
        return self.hidden.shape[0]


# -- parameter trees ---------------------------------------------------------

def flatten(tree, prefix=""):
    out = {}
    for key in sorted(tree):
        value = tree[key]
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, path + "/"))
        else:
            out[path] = value
    return out


def unflatten(flat):
    tree = {}
    for path, value in flat.items():
        node = tree
        *parents, leaf = path.split("/")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return tree


def zeros_like(tree):
    return {k: zeros_like(v) if isinstance(v, dict) else np.zeros_like(v)
            for k, v in tree.items()}


def copy_tree(tree):
    return {k: copy_tree(v) if isinstance(v, dict) else np.array(v, copy=True)
            for k, v in tree.items()}


def num_layers(group):
    return sum(1 for k in group if re.fullmatch(r"W\d+", k))


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _init_state_params(cfg, vocab_size, rng):
    H, E, R = cfg.hidden_size, cfg.embed_size, cfg.ref_size
    p = {
        "emb": rng.uniform(-1.0, 1.0, size=(vocab_size, E)),
        "Wr": _uniform(rng, (R, MOTION_DIM), MOTION_DIM),
        "br": _uniform(rng, (R,), MOTION_DIM),
    }
    for l in range(cfg.num_layers):
        p[f"Wh{l}"] = _uniform(rng, (H, E + R), E + R)
        p[f"bh{l}"] = _uniform(rng, (H,), E + R)
        p[f"Wc{l}"] = _uniform(rng, (H, E + R), E + R)
        p[f"bc{l}"] = _uniform(rng, (H,), E + R)
    return p


def _lstm_params(cfg, input_size, rng):
    H = cfg.hidden_size
    p = {}
    for l in range(cfg.num_layers):
        fan_in = (input_size if l == 0 else H) + H
        p[f"W{l}"] = _uniform(rng, (4 * H, fan_in), fan_in)
        p[f"b{l}"] = _uniform(rng, (4 * H,), fan_in)
    return p


def _head_params(input_size, rng):
    return {
        "Wb": _uniform(rng, (EXP_DIM, input_size), input_size),
        "bb": _uniform(rng, (EXP_DIM,), input_size),
        "Wp": _uniform(rng, (POSE_DIM, input_size), input_size),
        "bp": _uniform(rng, (POSE_DIM,), input_size),
    }


def init_decoder_params(cfg, vocab_size, rng):
    """Streaming decoder group (fusion + conditioned init + LSTM + heads)."""
    P, F = cfg.proj_size, cfg.fused_size
    p = {
        "Wa": _uniform(rng, (P, FEATURE_DIM), FEATURE_DIM),
        "Wm": _uniform(rng, (P, MOTION_DIM), MOTION_DIM),
        "Wj": _uniform(rng, (F, 2 * P), 2 * P),
        "bj": _uniform(rng, (F,), 2 * P),
    }
    p.update(_init_state_params(cfg, vocab_size, rng))
    p.update(_lstm_params(cfg, F, rng))
    p.update(_head_params(cfg.hidden_size, rng))
    return p


def init_audio_encoder_params(cfg, vocab_size, rng):
    """Bidirectional audio encoder: shared input projection, two directions, joint heads."""
    F = cfg.fused_size
    p = {"Win": _uniform(rng, (F, FEATURE_DIM), FEATURE_DIM),
         "bin": _uniform(rng, (F,), FEATURE_DIM)}
    for direction in ("fwd", "bwd"):
        d = _init_state_params(cfg, vocab_size, rng)
        d.update(_lstm_params(cfg, F, rng))
        p[direction] = d
    p.update(_head_params(2 * cfg.hidden_size, rng))
    return p


def init_switch_params(cfg):
    """Role switcher maps start as the identity so carrying state is the default."""
    H = cfg.hidden_size
    return {"W_ls": np.eye(H), "b_ls": np.zeros(H), "W_sl": np.eye(H), "b_sl": np.zeros(H)}


# -- elementwise -------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


# -- fusion ------------------------------------------------------------------

def fuse_fwd(p, s, m):
    a = np.tanh(s @ p["Wa"].T)
    b = np.tanh(m @ p["Wm"].T)
    z = np.concatenate([a, b], axis=1)
    f = np.tanh(z @ p["Wj"].T + p["bj"])
    return f, (s, m, a, b, z, f)


def fuse_bwd(p, cache, df, g):
    s, m, a, b, z, f = cache
    dpre = df * (1.0 - f * f)
    g["Wj"] += dpre.T @ z
    g["bj"] += dpre.sum(axis=0)
    dz = dpre @ p["Wj"]
    P = a.shape[1]
    da = dz[:, :P] * (1.0 - a * a)
    db = dz[:, P:] * (1.0 - b * b)
    g["Wa"] += da.T @ s
    g["Wm"] += db.T @ m


# -- conditioned initial state -------------------------------------------------

def init_fwd(p, ref, e):
    L = num_layers(p)
    r = ref @ p["Wr"].T + p["br"]
    x = np.concatenate([p["emb"][e], r], axis=1)
    hs = [x @ p[f"Wh{l}"].T + p[f"bh{l}"] for l in range(L)]
    cs = [x @ p[f"Wc{l}"].T + p[f"bc{l}"] for l in range(L)]
    return hs, cs, (ref, e, x)


def init_bwd(p, cache, dhs, dcs, g):
    ref, e, x = cache
    dx = np.zeros_like(x)
    for l, (dh, dc) in enumerate(zip(dhs, dcs)):
        g[f"Wh{l}"] += dh.T @ x
        g[f"bh{l}"] += dh.sum(axis=0)
        g[f"Wc{l}"] += dc.T @ x
        g[f"bc{l}"] += dc.sum(axis=0)
        dx += dh @ p[f"Wh{l}"] + dc @ p[f"Wc{l}"]
    E = p["emb"].shape[1]
    np.add.at(g["emb"], e, dx[:, :E])
    dr = dx[:, E:]
    g["Wr"] += dr.T @ ref
    g["br"] += dr.sum(axis=0)


# -- LSTM stack ----------------------------------------------------------------

def lstm_fwd(p, hs, cs, x, mask=None):
    """One step through every layer.  ``mask`` (B, 1) freezes padded rows."""
    new_hs, new_cs, caches = [], [], []
    inp = x
    for l in range(len(hs)):
        H = hs[l].shape[1]
        xh = np.concatenate([inp, hs[l]], axis=1)
        z = xh @ p[f"W{l}"].T + p[f"b{l}"]
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        gg = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c = f * cs[l] + i * gg
        tc = np.tanh(c)
        h = o * tc
        if mask is not None:
            h = mask * h + (1.0 - mask) * hs[l]
            c = mask * c + (1.0 - mask) * cs[l]
        caches.append((xh, i, f, gg, o, cs[l], tc))
        new_hs.append(h)
        new_cs.append(c)
        inp = h
    return new_hs, new_cs, caches


def lstm_bwd(p, caches, dhs, dcs, g, mask=None):
    """Backward through one stacked step; returns grads w.r.t. previous state and input."""
    L = len(caches)
    dhs_prev, dcs_prev = [None] * L, [None] * L
    d_above = 0.0
    for l in reversed(range(L)):
        xh, i, f, gg, o, c_prev, tc = caches[l]
        dh = dhs[l] + d_above
        dc = dcs[l]
        if mask is not None:
            keep_h, keep_c = (1.0 - mask) * dh, (1.0 - mask) * dc
            dh, dc = mask * dh, mask * dc
        do = dh * tc
        dct = dc + dh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dct * gg * i * (1.0 - i),
            dct * c_prev * f * (1.0 - f),
            dct * i * (1.0 - gg * gg),
            do * o * (1.0 - o),
        ], axis=1)
        g[f"W{l}"] += dz.T @ xh
        g[f"b{l}"] += dz.sum(axis=0)
        dxh = dz @ p[f"W{l}"]
        n_in = xh.shape[1] - c_prev.shape[1]
        dh_prev = dxh[:, n_in:]
        dc_prev = dct * f
        if mask is not None:
            dh_prev = dh_prev + keep_h
            dc_prev = dc_prev + keep_c
        dhs_prev[l], dcs_prev[l] = dh_prev, dc_prev
        d_above = dxh[:, :n_in]
    return dhs_prev, dcs_prev, d_above


# -- output heads ----------------------------------------------------------------

def heads_fwd(p, h):
    return np.concatenate([h @ p["Wb"].T + p["bb"], h @ p["Wp"].T + p["bp"]], axis=1)


def heads_bwd(p, h, dout, g):
    db, dp = dout[:, :EXP_DIM], dout[:, EXP_DIM:]
    g["Wb"] += db.T @ h
    g["bb"] += db.sum(axis=0)
    g["Wp"] += dp.T @ h
    g["bp"] += dp.sum(axis=0)
    return db @ p["Wb"] + dp @ p["Wp"]


# -- streaming decoder over a sequence ------------------------------------------

def stream_fwd(p, s, m, hs, cs, mask=None):
    """Run the causal decoder over (B, T) inputs.

    ``preds[:, t]`` is the motion predicted for frame ``t + 1`` from the state
    after consuming step ``t``.  Returns ``(preds, (hs, cs), caches)``.
    """
    B, T = s.shape[:2]
    preds = np.empty((B, T, MOTION_DIM))
    caches = []
    for t in range(T):
        f, fc = fuse_fwd(p, s[:, t], m[:, t])
        mk = None if mask is None else mask[:, t:t + 1]
        hs, cs, lc = lstm_fwd(p, hs, cs, f, mk)
        preds[:, t] = heads_fwd(p, hs[-1])
        caches.append((fc, lc, hs[-1], mk))
    return preds, (hs, cs), caches


def stream_bwd(p, caches, dpreds, dhs, dcs, g):
    """Backward of :func:`stream_fwd`; ``dhs``/``dcs`` are grads on the final state."""
    dhs, dcs = list(dhs), list(dcs)
    for t in reversed(range(len(caches))):
        fc, lc, htop, mk = caches[t]
        if np.any(dpreds[:, t]):
            dhs[-1] = dhs[-1] + heads_bwd(p, htop, dpreds[:, t], g)
        dhs, dcs, dx = lstm_bwd(p, lc, dhs, dcs, g, mk)
        fuse_bwd(p, fc, dx, g)
    return dhs, dcs


# -- bidirectional audio encoder ---------------------------------------------------

def audio_fwd(pa, s, ref, e, mask=None):
    """Per-frame (beta*, p*) from the whole audio sequence, both directions.

    Padded steps (mask 0) sit at the end of each row; running the reverse
    direction over the flipped axis meets them first and leaves its initial
    state untouched, so each row's backward pass starts at its own last frame.
    """
    B, T = s.shape[:2]
    x = np.tanh(s @ pa["Win"].T + pa["bin"])
    H = pa["fwd"]["Wh0"].shape[0]
    tops = {"fwd": np.empty((B, T, H)), "bwd": np.empty((B, T, H))}
    cache = {"x": x, "s": s}
    for direction, order in (("fwd", range(T)), ("bwd", range(T - 1, -1, -1))):
        pd = pa[direction]
        hs, cs, ic = init_fwd(pd, ref, e)
        steps = []
        for t in order:
            mk = None if mask is None else mask[:, t:t + 1]
            hs, cs, lc = lstm_fwd(pd, hs, cs, x[:, t], mk)
            tops[direction][:, t] = hs[-1]
            steps.append((t, lc, mk))
        cache[direction] = (ic, steps)
    joint = np.concatenate([tops["fwd"], tops["bwd"]], axis=2)
    out = joint @ np.concatenate([pa["Wb"], pa["Wp"]]).T + np.concatenate([pa["bb"], pa["bp"]])
    cache["joint"] = joint
    return out, cache


def audio_bwd(pa, cache, dout, g):
    joint = cache["joint"]
    B, T, H2 = joint.shape
    H = H2 // 2
    flat_j = joint.reshape(B * T, H2)
    flat_d = dout.reshape(B * T, MOTION_DIM)
    db, dp = flat_d[:, :EXP_DIM], flat_d[:, EXP_DIM:]
    g["Wb"] += db.T @ flat_j
    g["bb"] += db.sum(axis=0)
    g["Wp"] += dp.T @ flat_j
    g["bp"] += dp.sum(axis=0)
    djoint = (db @ pa["Wb"] + dp @ pa["Wp"]).reshape(B, T, H2)
    dx = np.zeros_like(cache["x"])
    for direction, sl in (("fwd", slice(0, H)), ("bwd", slice(H, H2))):
        pd, gd = pa[direction], g[direction]
        ic, steps = cache[direction]
        L = len(steps[0][1])
        dhs = [np.zeros((B, H)) for _ in range(L)]
        dcs = [np.zeros((B, H)) for _ in range(L)]
        for t, lc, mk in reversed(steps):
            dhs[-1] = dhs[-1] + djoint[:, t, sl]
            dhs, dcs, dxt = lstm_bwd(pd, lc, dhs, dcs, gd, mk)
            dx[:, t] += dxt
        init_bwd(pd, ic, dhs, dcs, gd)
    x, s = cache["x"], cache["s"]
    dpre = (dx * (1.0 - x * x)).reshape(B * T, -1)
    g["Win"] += dpre.T @ s.reshape(B * T, -1)
    g["bin"] += dpre.sum(axis=0)


# -- role switcher --------------------------------------------------------------------

def _switch_keys(r_prev, r_next):
    return ("W_ls", "b_ls") if (r_prev, r_next) == (0, 1) else ("W_sl", "b_sl")


def switch_fwd(sw, hs, cs, r_prev, r_next):
    if r_prev == r_next:
        return hs, cs
    kw, kb = _switch_keys(r_prev, r_next)
    W, b = sw[kw], sw[kb]
    return [h @ W.T + b for h in hs], [c @ W.T + b for c in cs]


def switch_bwd(sw, hs, cs, dhs, dcs, r_prev, r_next, g):
    """``hs``/``cs`` are the pre-switch states; returns grads w.r.t. them."""
    if r_prev == r_next:
        return dhs, dcs
    kw, kb = _switch_keys(r_prev, r_next)
    W = sw[kw]
    for x, dy in list(zip(hs, dhs)) + list(zip(cs, dcs)):
        g[kw] += dy.T @ x
        g[kb] += dy.sum(axis=0)
    return [d @ W for d in dhs], [d @ W for d in dcs]


# -- public single-session operations ---------------------------------------------------

def _as_batch(x, dim, what):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != dim:
        raise ShapeError(f"{what}: expected last dimension {dim}, got {x.shape}")
    return x, single


def fuse_audio_motion(s_t, m_t, params):
    """Fused speaker feature for one frame (or a batch of frames)."""
    s, single = _as_batch(s_t, params["Wa"].shape[1], "audio features")
    m, _ = _as_batch(m_t, params["Wm"].shape[1], "motion coefficients")
    if len(s) != len(m):
        raise ShapeError("audio and motion batches differ in size")
    f, _ = fuse_fwd(params, s, m)
    return f[0] if single else f


def _check_label(e, params):
    vocab = params["emb"].shape[0]
    labels = np.atleast_1d(np.asarray(e))
    if labels.dtype.kind not in "iu" or np.any(labels < 0) or np.any(labels >= vocab):
        raise ConditioningError(f"conditioning label {e!r} outside vocabulary of size {vocab}")
    return labels.astype(np.intp)


def init_state(reference_m, e, params):
    """Initial decoder state from a reference frame and a conditioning label."""
    if isinstance(reference_m, DynamicCoeffs):
        reference_m = reference_m.to_vector()
    ref, _ = _as_batch(reference_m, MOTION_DIM, "reference motion")
    labels = _check_label(e, params)
    if len(labels) != len(ref):
        raise ShapeError("one conditioning label per reference frame is required")
    hs, cs, _ = init_fwd(params, ref, labels)
    return DecoderState.from_lists(hs, cs)


def decoder_step(state, fused, params):
    """One causal step: returns ``(new_state, beta, pose)``."""
    f, single = _as_batch(fused, params["W0"].shape[1] - state.hidden.shape[2], "fused input")
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(state.hidden))
            and np.all(np.isfinite(state.cell))):
        raise NumericError("decoder_step received non-finite input or state")
    hs, cs = state.lists()
    hs, cs, _ = lstm_fwd(params, hs, cs, f)
    out = heads_fwd(params, hs[-1])
    beta, pose = out[:, :EXP_DIM], out[:, EXP_DIM:]
    if single:
        beta, pose = beta[0], pose[0]
    return DecoderState.from_lists(hs, cs), beta, pose


def switch_role(state, r_prev, r_next, params):
    """Map the state across a role change; identical roles return ``state`` itself."""
    if r_prev not in (0, 1) or r_next not in (0, 1):
        raise ConditioningError(f"roles must be 0 or 1, got {r_prev}, {r_next}")
    if r_prev == r_next:
        return state
    hs, cs = switch_fwd(params, *state.lists(), r_prev, r_next)
    return DecoderState.from_lists(hs, cs)
