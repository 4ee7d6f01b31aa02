"""Losses, analytic gradients of the three task graphs, AdamW and training loops."""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import model as M
from . import tasks
from .checkpoint import Checkpoint
from .coeffs import ATTITUDES, DIALOG_ACTS, EXP_DIM, LISTENER, SPEAKER, motion_array
from .errors import ConfigError, InvalidInputError, NumericError

log = logging.getLogger(__name__)

TASKS = ("listener", "talker", "agent")


@dataclass
class TrainingConfig:
    task: str = "listener"
    w1: float = 1e-3
    w2: float = 1.0
    learning_rate: float = 2e-3
    decay_factor: float = 0.5
    decay_every: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 300
    seed: int = 0
    weight_decay: float = 1e-2
    accumulate: int = 8
    clip_norm: float = 5.0
    alpha_init: float = 0.5
    frozen: list = field(default_factory=list)
    model: M.ModelConfig = field(default_factory=M.ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            unknown = set(self.model) - {f.name for f in fields(M.ModelConfig)}
            if unknown:
                raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
            self.model = M.ModelConfig(**self.model)
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigError("decay_factor must lie in (0, 1]")
        for name in ("learning_rate", "epochs", "decay_every", "accumulate", "clip_norm"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def for_task(cls, task, **overrides):
        """Defaults per task; the agent fine-tune runs 50 epochs at 2e-4."""
        base = {"task": task}
        if task == "agent":
            base.update(epochs=50, learning_rate=2e-4)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return asdict(self)

    def lr_at(self, epoch):
        return self.learning_rate * self.decay_factor ** (epoch // self.decay_every)


# -- losses ------------------------------------------------------------------------

def _pair(pred, gt):
    a, b = motion_array(pred), motion_array(gt)
    if a.shape != b.shape:
        raise InvalidInputError(f"prediction {a.shape} and ground truth {b.shape} differ")
    if len(a) < 2:
        raise InvalidInputError("losses need at least two frames")
    return a, b


def loss_gen(pred, gt):
    """Sum over frames 2..T of the L2 norms of expression and pose residuals."""
    a, b = _pair(pred, gt)
    r = a[1:] - b[1:]
    return float(np.sum(np.linalg.norm(r[:, :EXP_DIM], axis=1))
                 + np.sum(np.linalg.norm(r[:, EXP_DIM:], axis=1)))


def loss_mot(pred, gt, w1=1e-3, w2=1.0):
    """Weighted L2 mismatch of inter-frame changes, frames 2..T."""
    a, b = _pair(pred, gt)
    r = np.diff(a, axis=0) - np.diff(b, axis=0)
    return float(w1 * np.sum(np.linalg.norm(r[:, :EXP_DIM], axis=1))
                 + w2 * np.sum(np.linalg.norm(r[:, EXP_DIM:], axis=1)))


def loss_total(pred, gt, config=None):
    config = config or TrainingConfig()
    return loss_gen(pred, gt) + loss_mot(pred, gt, config.w1, config.w2)


def _safe_unit(x):
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0), n[..., 0]


def loss_terms(pred, gt, lengths, w1, w2):
    """Batched losses over padded (B, T, 70) arrays.

    Returns per-row ``(gen, mot)`` and the gradient of ``sum(gen + mot)``
    with respect to ``pred``.
    """
    B, T = pred.shape[:2]
    valid = (np.arange(T)[None, :] >= 1) & (np.arange(T)[None, :] < np.asarray(lengths)[:, None])
    r = pred - gt
    ub, nb = _safe_unit(r[..., :EXP_DIM])
    up, npose = _safe_unit(r[..., EXP_DIM:])
    gen = np.sum(valid * (nb + npose), axis=1)
    dr = r[:, 1:] - r[:, :-1]
    vb, mb = _safe_unit(dr[..., :EXP_DIM])
    vp, mp = _safe_unit(dr[..., EXP_DIM:])
    vmask = valid[:, 1:]
    mot = np.sum(vmask * (w1 * mb + w2 * mp), axis=1)
    grad = valid[..., None] * np.concatenate([ub, up], axis=2)
    u = vmask[..., None] * np.concatenate([w1 * vb, w2 * vp], axis=2)
    grad[:, 1:] += u
    grad[:, :-1] -= u
    return gen, mot, grad


# -- data -----------------------------------------------------------------------

@dataclass
class TurnExample:
    audio: np.ndarray
    counterpart: np.ndarray
    target: np.ndarray
    label: int
    role: int

    def __len__(self):
        return len(self.audio)

    def as_turn_input(self, fps=30.0):
        from .coeffs import CoeffSequence
        return tasks.TurnInput(self.audio, CoeffSequence(self.counterpart, fps), self.label,
                               self.role, self.target[0], fps)


def examples_from_manifest(manifest):
    """One :class:`TurnExample` per turn, agent = participant P."""
    out = []
    for turn in manifest.turns:
        audio, cp, cq = manifest.load_turn(turn)
        out.append(TurnExample(audio, cq.data, cp.data, turn.label, turn.role_of_P))
    return out


def collate(examples):
    B = len(examples)
    T = max(len(x) for x in examples)
    s = np.zeros((B, T, examples[0].audio.shape[1]))
    m = np.zeros((B, T, examples[0].counterpart.shape[1]))
    tgt = np.zeros((B, T, examples[0].target.shape[1]))
    mask = np.zeros((B, T))
    lengths = np.array([len(x) for x in examples])
    for b, x in enumerate(examples):
        n = len(x)
        s[b, :n], m[b, :n], tgt[b, :n], mask[b, :n] = x.audio, x.counterpart, x.target, 1.0
    e = np.array([x.label for x in examples], dtype=np.intp)
    full = bool(np.all(lengths == T))
    return {"s": s, "m": m, "target": tgt, "ref": tgt[:, 0].copy(), "e": e,
            "lengths": lengths, "mask": None if full else mask}


# -- graph objectives ----------------------------------------------------------------

_FWD = {LISTENER: tasks.listener_fwd, SPEAKER: tasks.talker_fwd}
_BWD = {LISTENER: tasks.listener_bwd, SPEAKER: tasks.talker_bwd}
_GROUP = {LISTENER: "listener", SPEAKER: "talker"}


def _turn_objective(params, role, batch, cfg, state=None):
    group = params[_GROUP[role]]
    out, final, cache = _FWD[role](group, batch["s"], batch["m"], batch["ref"], batch["e"],
                                   batch["mask"], state)
    gen, mot, dout = loss_terms(out, batch["target"], batch["lengths"], cfg.w1, cfg.w2)
    return out, final, cache, gen, mot, dout


def conversation_objective(params, conversations, cfg, need_grad=True, loss_scale=1.0,
                           reset_on_switch=False):
    """Mean over conversations of the summed per-turn total loss.

    ``conversations`` is a list of equally structured conversations (same
    number of turns and role pattern); each is a list of :class:`TurnExample`.
    A single-turn conversation is exactly the listener or talker graph.
    Returns ``(loss, grads, stats)`` where ``stats`` holds per-turn sums.
    """
    B = len(conversations)
    roles = [x.role for x in conversations[0]]
    state, prev, records = None, None, []
    for i, role in enumerate(roles):
        batch = collate([conv[i] for conv in conversations])
        pre_switch = None
        if state is not None:
            if reset_on_switch and role != prev:
                state = None
            else:
                pre_switch = state
                state = M.switch_fwd(params["switch"], *state, prev, role)
        out, final, cache, gen, mot, dout = _turn_objective(params, role, batch, cfg, state)
        records.append((role, prev, cache, dout, pre_switch, state is not None))
        state, prev = final, role
        if i == 0:
            gen_sum, mot_sum = gen.copy(), mot.copy()
        else:
            gen_sum += gen
            mot_sum += mot
    loss = float(np.mean(gen_sum + mot_sum)) * loss_scale
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")
    stats = {"gen": float(gen_sum.sum()), "mot": float(mot_sum.sum()), "turns": B * len(roles)}
    if not need_grad:
        return loss, None, stats
    grads = M.zeros_like(params)
    scale = loss_scale / B
    H = None
    dfinal = None
    for role, prev, cache, dout, pre_switch, carried in reversed(records):
        group = _GROUP[role]
        if dfinal is None:
            L = M.num_layers(params[group] if role == LISTENER else params[group]["stream"])
            H = (params[group] if role == LISTENER else params[group]["stream"])["Wh0"].shape[0]
            zeros = [np.zeros((B, H)) for _ in range(L)]
            dfinal = (zeros, [z.copy() for z in zeros])
        dstate = _BWD[role](params[group], cache, dout * scale, dfinal, grads[group])
        if not carried:
            dfinal = None
            continue
        if pre_switch is not None:
            dstate = M.switch_bwd(params["switch"], *pre_switch, *dstate, prev, role,
                                  grads["switch"])
        dfinal = dstate
    return loss, grads, stats


def loss_and_grad(params, examples, cfg, loss_scale=1.0):
    """Objective and analytic gradients for a list of examples.

    Listener and talker tasks take :class:`TurnExample` lists; the agent task
    takes a list of conversations (lists of examples).  Examples are grouped
    by structure and the gradient is that of the mean objective.
    """
    if cfg.task == "agent":
        convs = examples
    else:
        convs = [[x] for x in examples]
    groups = {}
    for conv in convs:
        groups.setdefault(tuple(x.role for x in conv), []).append(conv)
    total, grads, stats = 0.0, None, {"gen": 0.0, "mot": 0.0, "turns": 0}
    for convs_g in groups.values():
        w = len(convs_g) / len(convs)
        loss, g, st = conversation_objective(params, convs_g, cfg, loss_scale=loss_scale * w)
        total += loss
        grads = g if grads is None else _tree_add(grads, g)
        for k in stats:
            stats[k] += st[k]
    return total, grads, stats


def evaluate_loss(params, examples, cfg, batch_size=32):
    convs = examples if cfg.task == "agent" else [[x] for x in examples]
    groups = {}
    for conv in convs:
        groups.setdefault(tuple(x.role for x in conv), []).append(conv)
    stats = {"gen": 0.0, "mot": 0.0, "turns": 0}
    for convs_g in groups.values():
        for i in range(0, len(convs_g), batch_size):
            _, _, st = conversation_objective(params, convs_g[i:i + batch_size], cfg,
                                              need_grad=False)
            for k in stats:
                stats[k] += st[k]
    return stats


def _tree_add(a, b):
    return {k: _tree_add(a[k], b[k]) if isinstance(a[k], dict) else a[k] + b[k] for k in a}


# -- optimiser -----------------------------------------------------------------

def decays(path):
    """Weight decay applies to weight matrices only, never biases, embeddings or alphas."""
    return path.rsplit("/", 1)[-1].startswith("W")


class AdamW:
    def __init__(self, flat_params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=1e-2,
                 frozen=()):
        self.params = flat_params
        self.beta1, self.beta2, self.eps, self.wd = beta1, beta2, eps, weight_decay
        self.frozen = set(frozen)
        self.m = {k: np.zeros_like(v) for k, v in flat_params.items()}
        self.v = {k: np.zeros_like(v) for k, v in flat_params.items()}
        self.t = 0

    def step(self, flat_grads, lr):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            if k in self.frozen:
                continue
            g = flat_grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            if self.wd and decays(k):
                p *= 1.0 - lr * self.wd
            p -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_global_norm(flat_grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in flat_grads.values()))
    if norm > max_norm:
        for g in flat_grads.values():
            g *= max_norm / norm
    return norm


# -- training loops ------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list
    best_epoch: int


def _find_vocab(manifests, role, default):
    names = {t.vocabulary for m in manifests for t in m.turns if t.role_of_P == role}
    if len(names) > 1:
        raise ConfigError(f"turns with role {role} mix vocabularies {sorted(names)}")
    if not names:
        return default
    name = names.pop()
    for m in manifests:
        if name in m.vocabularies:
            return m.vocabularies[name]
    return default


def init_params(cfg, vocabularies):
    rng = np.random.default_rng(cfg.seed)
    mc = cfg.model
    if cfg.task == "listener":
        return {"listener": M.init_decoder_params(mc, len(vocabularies["listener"]), rng)}
    if cfg.task == "talker":
        n = len(vocabularies["talker"])
        return {"talker": {
            "stream": M.init_decoder_params(mc, n, rng),
            "audio": M.init_audio_encoder_params(mc, n, rng),
            "alpha_beta": np.array([cfg.alpha_init]),
            "alpha_p": np.array([cfg.alpha_init]),
        }}
    raise ConfigError("agent parameters are initialised from listener and talker checkpoints")


def agent_params_from(listener_ckpt, talker_ckpt):
    lc, tc = listener_ckpt.model_config, talker_ckpt.model_config
    if (lc.hidden_size, lc.num_layers) != (tc.hidden_size, tc.num_layers):
        raise ConfigError("listener and talker checkpoints must share hidden size and depth")
    return {"listener": M.copy_tree(listener_ckpt.params["listener"]),
            "talker": M.copy_tree(talker_ckpt.params["talker"]),
            "switch": M.init_switch_params(lc)}


def _select(manifests, cfg):
    """Training units for the task: single turns, or whole conversations for the agent."""
    if cfg.task == "agent":
        return [examples_from_manifest(m) for m in manifests]
    role = LISTENER if cfg.task == "listener" else SPEAKER
    return [x for m in manifests for x in examples_from_manifest(m) if x.role == role]


def train_task(config, train_manifests, val_manifests=None, init_checkpoints=None,
               log_path=None, progress=None):
    """Train one task and return the best-validation checkpoint with its metric log.

    ``init_checkpoints`` maps ``"listener"``/``"talker"`` to checkpoints and is
    required for the agent task.  ``val_manifests`` defaults to the training set.
    """
    if not train_manifests:
        raise InvalidInputError("training set is empty")
    val_manifests = val_manifests or train_manifests
    if config.task == "agent":
        if not init_checkpoints or {"listener", "talker"} - set(init_checkpoints):
            raise ConfigError("agent training needs listener and talker checkpoints")
        params = agent_params_from(init_checkpoints["listener"], init_checkpoints["talker"])
        vocabs = {"listener": init_checkpoints["listener"].vocabularies["listener"],
                  "talker": init_checkpoints["talker"].vocabularies["talker"]}
        model_cfg = init_checkpoints["listener"].model_config
    else:
        vocabs = {"listener": _find_vocab(train_manifests, LISTENER, ATTITUDES),
                  "talker": _find_vocab(train_manifests, SPEAKER, DIALOG_ACTS)}
        vocabs = {k: v for k, v in vocabs.items() if k == config.task}
        params = init_params(config, vocabs)
        model_cfg = config.model

    train = _select(train_manifests, config)
    val = _select(val_manifests, config)
    if not train:
        raise InvalidInputError(f"no training units for task {config.task!r}")

    flat = M.flatten(params)
    unknown = set(config.frozen) - set(flat)
    if unknown:
        raise ConfigError(f"frozen parameters not in model: {sorted(unknown)}")
    opt = AdamW(flat, config.beta1, config.beta2, weight_decay=config.weight_decay,
                frozen=config.frozen)
    rng = np.random.default_rng(config.seed)
    records, best, best_epoch, best_params = [], math.inf, -1, None
    sink = open(log_path, "w") if log_path else None
    try:
        for epoch in range(config.epochs):
            lr = config.lr_at(epoch)
            order = rng.permutation(len(train))
            agg = {"gen": 0.0, "mot": 0.0, "turns": 0}
            for start in range(0, len(order), config.accumulate):
                chunk = [train[i] for i in order[start:start + config.accumulate]]
                loss, grads, st = loss_and_grad(params, chunk, config)
                if not math.isfinite(loss):
                    raise NumericError(f"loss diverged at epoch {epoch}, batch {start}: {loss}")
                fg = M.flatten(grads)
                for k in config.frozen:
                    fg[k][...] = 0.0
                clip_global_norm(fg, config.clip_norm)
                opt.step(fg, lr)
                for k in agg:
                    agg[k] += st[k]
            epoch_records = [_record(epoch, "train", agg, lr),
                             _record(epoch, "val", evaluate_loss(params, val, config), lr)]
            for rec in epoch_records:
                if not math.isfinite(rec["L_total"]):
                    raise NumericError(f"non-finite {rec['split']} loss at epoch {epoch}")
                records.append(rec)
                if sink:
                    sink.write(json.dumps(rec) + "\n")
            if epoch_records[1]["L_total"] < best:
                best, best_epoch = epoch_records[1]["L_total"], epoch
                best_params = M.copy_tree(params)
            if progress:
                progress(epoch_records)
            log.debug("epoch %d train %.4f val %.4f lr %.2e", epoch,
                      epoch_records[0]["L_total"], epoch_records[1]["L_total"], lr)
    finally:
        if sink:
            sink.close()
    ckpt = Checkpoint(config.task, model_cfg, best_params, vocabs, config.seed,
                      {"best_epoch": best_epoch, "best_val_L_total": best,
                       "training_config": config.to_dict()})
    return TrainResult(ckpt, records, best_epoch)


def _record(epoch, split, agg, lr):
    n = max(agg["turns"], 1)
    gen, mot = agg["gen"] / n, agg["mot"] / n
    return {"epoch": epoch, "split": split, "L_gen": gen, "L_mot": mot,
            "L_total": gen + mot, "lr": lr}
