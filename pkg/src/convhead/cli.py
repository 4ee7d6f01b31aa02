"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
Configuration precedence: built-in defaults < ``--config`` JSON < ``--set key=value``.
The default seed comes from ``$CONVHEAD_SEED`` when set.
"""

import argparse
import json
import logging
import os
import sys

from . import acoustic, synth, tasks, training
from .checkpoint import Checkpoint
from .coeffs import load_manifest, save_sequence
from .errors import ConfigError, ConvHeadError
from .evaluation import evaluate_run

log = logging.getLogger("convhead")
SEED_ENV = "CONVHEAD_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _default_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"${SEED_ENV} must be an integer, got {raw!r}")


def _parse_value(raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _apply_overrides(base, overrides, known):
    """Apply ``key=value`` pairs (dotted keys reach nested dicts); reject unknown keys."""
    for item in overrides or ():
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        head, _, rest = key.partition(".")
        if head not in known:
            raise UsageError(f"unknown config key {key!r}")
        if rest:
            node = base.setdefault(head, {})
            if not isinstance(node, dict):
                raise UsageError(f"config key {head!r} is not a section")
            node[rest] = _parse_value(raw)
        else:
            base[head] = _parse_value(raw)
    return base


def _load_json(path):
    if path is None:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return data


def _resolve(defaults, args, known):
    cfg = dict(defaults)
    cfg.update(_load_json(args.config))
    seed = _default_seed()
    if seed is not None and "seed" not in _load_json(args.config):
        cfg["seed"] = seed
    if args.seed is not None:
        cfg["seed"] = args.seed
    return _apply_overrides(cfg, args.set, known)


def build_parser():
    parser = _Parser(prog="convhead", description="Conversational head motion generation.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("extract-features", help="45-dim per-frame acoustic features from a WAV file")
    p.add_argument("--audio", required=True)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--out", required=True)

    for name, helptext in (("synth-data", "write a synthetic conversation corpus"),
                           ("train", "train a listener, talker or agent model")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True)
        if name == "train":
            p.add_argument("--task", choices=training.TASKS, required=True)
            p.add_argument("--data", required=True)
            p.add_argument("--init-listener", help="listener checkpoint (agent task)")
            p.add_argument("--init-talker", help="talker checkpoint (agent task)")

    p = sub.add_parser("generate", help="generate an agent's motion for a conversation manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--agent", default="P")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--reset-on-switch", action="store_true")

    p = sub.add_parser("evaluate", help="FD metrics of a method against ground truth")
    p.add_argument("--manifests", required=True, help="corpus directory or a single manifest")
    p.add_argument("--method", required=True, help="mirror | random | ckpt:PATH")
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=("listener", "talker"), default="listener")
    p.add_argument("--split", help="split from the corpus index (default: every manifest)")
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int)
    return parser


def _cmd_extract(args):
    clip = acoustic.read_wav(args.audio)
    feats = acoustic.extract_features(clip, args.fps)
    acoustic.save_features(args.out, feats)
    log.info("wrote %d frames to %s", len(feats), args.out)


def _cmd_synth(args):
    known = set(synth.SynthConfig.__dataclass_fields__)
    cfg = synth.SynthConfig.from_dict(_resolve({}, args, known))
    log.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    paths = synth.synth_corpus(cfg, args.out)
    log.info("wrote %d conversations to %s", len(paths), args.out)


def _manifests(paths):
    return [load_manifest(p) for p in paths]


def _cmd_train(args):
    known = {f for f in training.TrainingConfig.__dataclass_fields__}
    defaults = training.TrainingConfig.for_task(args.task).to_dict()
    resolved = _resolve(defaults, args, known)
    resolved["task"] = args.task
    cfg = training.TrainingConfig.from_dict(resolved)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
    log.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    train = _manifests(synth.load_split(args.data, "train"))
    val = _manifests(synth.load_split(args.data, "val"))
    init = None
    if args.task == "agent":
        if not (args.init_listener and args.init_talker):
            raise UsageError("train --task agent needs --init-listener and --init-talker")
        init = {"listener": Checkpoint.load(args.init_listener),
                "talker": Checkpoint.load(args.init_talker)}
    result = training.train_task(cfg, train, val, init_checkpoints=init,
                                 log_path=os.path.join(args.out, "metrics.jsonl"))
    path = os.path.join(args.out, f"{args.task}.ckpt")
    result.checkpoint.save(path)
    log.info("best epoch %d, checkpoint %s", result.best_epoch, path)


def _cmd_generate(args):
    ckpt = Checkpoint.load(args.checkpoint)
    manifest = load_manifest(args.manifest)
    roles = [t.role_of_P for t in manifest.turns]
    needed = {"listener" if r == 0 else "talker" for r in roles}
    if len(set(roles)) > 1 or any(a != b for a, b in zip(roles, roles[1:])):
        needed.add("switch")
    missing = needed - set(ckpt.params)
    if missing:
        raise ConfigError(f"checkpoint ({ckpt.task}) lacks {sorted(missing)} for this manifest")
    for t in manifest.turns:
        role = "listener" if t.role_of_P == 0 else "talker"
        vocab = ckpt.vocabularies.get(role)
        if vocab is not None and vocab.name != t.vocabulary:
            raise ConfigError(f"turn {t.turn_index}: checkpoint {role} vocabulary {vocab.name!r} "
                              f"!= manifest vocabulary {t.vocabulary!r}")
    outputs = tasks.generate_conversation(manifest, ckpt.params, args.agent, args.reset_on_switch)
    os.makedirs(args.out_dir, exist_ok=True)
    report = {"manifest": os.path.abspath(args.manifest), "agent": args.agent,
              "checkpoint": os.path.abspath(args.checkpoint),
              "reset_on_switch": args.reset_on_switch, "turns": []}
    for turn, seq in zip(manifest.turns, outputs):
        name = f"turn{turn.turn_index:02d}_{args.agent}.vcof"
        save_sequence(os.path.join(args.out_dir, name), seq)
        report["turns"].append({
            "turn_index": turn.turn_index, "role": turn.role_of_P, "frames": len(seq),
            "conditioning": {"vocabulary": turn.vocabulary, "label": turn.label,
                             "name": manifest.vocabularies[turn.vocabulary].labels[turn.label]},
            "file": name})
    with open(os.path.join(args.out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def _cmd_evaluate(args):
    target = args.manifests
    if os.path.isfile(target):
        paths = [target]
    else:
        paths = synth.load_split(target, args.split) if args.split else synth.load_split(target, "train") \
            + synth.load_split(target, "val") + synth.load_split(target, "test")
    if not paths:
        raise ConfigError(f"no manifests found under {target}")
    seed = args.seed if args.seed is not None else (_default_seed() or 0)
    report = evaluate_run(paths, args.method, {"task": args.task, "sigma": args.sigma,
                                               "seed": seed}, dataset=target)
    report.save(args.out)
    log.info("%s: ExpFD %.4f AngleFD %.4f TransFD %.4f over %d clips", report.method,
             report.ExpFD, report.AngleFD, report.TransFD, report.clip_count)


COMMANDS = {"extract-features": _cmd_extract, "synth-data": _cmd_synth, "train": _cmd_train,
            "generate": _cmd_generate, "evaluate": _cmd_evaluate}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"convhead {args.command}: {exc}", file=sys.stderr)
        return 1
    except (ConvHeadError, OSError, ValueError, KeyError) as exc:
        print(f"convhead {args.command}: {type(exc).__module__}.{type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
