"""Command-line entry point: ``wsseg <command> [flags]``.

Every failure exits nonzero and writes one JSON line to stderr::

    {"error": "<category>", "message": "..."}
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .checkpoint import CheckpointError
from .config import Config, ConfigError
from .data import DataError
from .optim import NonFiniteGradient
from .tensor import ContractError, ShapeError

EXIT_CODES = {"internal": 1, "config": 2, "data": 3, "checkpoint": 4, "training": 5,
              "contract": 6, "io": 7, "gradcheck": 8}


class CliError(RuntimeError):
    def __init__(self, category, message):
        super().__init__(message)
        self.category = category


def _category(err):
    from .pipeline import TrainingError

    if isinstance(err, CliError):
        return err.category
    for types, name in (((ConfigError, argparse.ArgumentTypeError), "config"),
                        (DataError, "data"),
                        (CheckpointError, "checkpoint"),
                        ((TrainingError, NonFiniteGradient), "training"),
                        ((ShapeError, ContractError), "contract"),
                        (OSError, "io")):
        if isinstance(err, types):
            return name
    return "internal"


# -- config flags -------------------------------------------------------------
def _flag(name):
    return "--" + name.replace("_", "-")


def _bool(raw):
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {raw!r}")


def add_config_flags(p):
    p.add_argument("--config", type=Path, help="config file; flags override its values")
    group = p.add_argument_group("config keys")
    for f in fields(Config):
        typ = {"int": int, "float": float, "bool": _bool, "str": str}[
            f.type if isinstance(f.type, str) else f.type.__name__]
        group.add_argument(_flag(f.name), dest=f"cfg_{f.name}", type=typ, default=None,
                           metavar=typ.__name__.upper().lstrip("_"))


def config_from_args(args):
    cfg = Config.load(args.config, env=False) if args.config else Config()
    changes = {f.name: getattr(args, f"cfg_{f.name}") for f in fields(Config)
               if getattr(args, f"cfg_{f.name}", None) is not None}
    return cfg.replace(**changes).with_env() if changes else cfg.with_env()


# -- commands -----------------------------------------------------------------
def cmd_gen(args):
    from .data import gen_synthetic

    ids = gen_synthetic(args.out, args.seed, args.n, args.image_size, args.classes, args.split)
    return {"root": str(args.out), "split": args.split, "images": len(ids)}


def cmd_train(args):
    from .pipeline import train

    cfg = config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.ini")
    res = train(cfg, out, log_every=args.log_every)
    last = res.history[-1] if res.history else {}
    return {"checkpoint": str(res.checkpoint_path), "loss_log": str(res.loss_path),
            "epochs": len(res.history), "loss": last.get("loss"),
            "accuracy": last.get("accuracy"), "seconds": round(res.seconds, 3)}


def cmd_infer(args):
    from .data import load_voc_manifest
    from .pipeline import infer, load_model

    _, cfg = load_model(args.checkpoint)
    root = args.data_root or cfg.data_root
    if not root:
        raise CliError("config", "no --data-root given and the checkpoint config has none")
    man = load_voc_manifest(root, args.split or cfg.val_split)
    out = infer(args.checkpoint, man, args.out, crf=args.crf, infer_size=args.infer_size)
    return {"out": str(out), "images": len(man)}


def cmd_eval(args):
    from .data import load_voc_manifest
    from .pipeline import evaluate_dirs

    man = load_voc_manifest(args.data_root, args.split)
    report = evaluate_dirs(args.pred, man)
    if args.out:
        Path(args.out).write_text(report.table())
    print(report.table(), end="")
    return {"miou": report.miou, "skipped": report.skipped}


def cmd_gradcheck(args):
    from .diagnostics import model_sweep, op_sweep

    seeds = range(args.seeds)
    ops = op_sweep(seeds)
    model = model_sweep(seeds, probe=args.probe)
    failures = [f"{name} seed {seed}: rel {rep.max_rel_error:.2e}"
                for name, seed, rep in ops.failures + model.failures]
    summary = {"op_checks": ops.checked, "model_seeds": model.checked,
               "failures": failures, "seconds": round(ops.seconds + model.seconds, 3)}
    if failures:
        raise CliError("gradcheck", json.dumps(summary))
    return summary


def cmd_ablate(args):
    from .pipeline import ablate, summarize_ablation

    cfg = config_from_args(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    results = ablate(cfg, seeds, args.out, crf=cfg.crf)
    return {"table": str(args.out) if args.out else None,
            "mean_miou": summarize_ablation(results)}


def _grid(text):
    try:
        rows, cols = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 64x64, got {text!r}") from None
    return rows, cols


def cmd_bench(args):
    from .pipeline import bench_scaling

    rows = bench_scaling(args.sizes, args.dim, args.hidden, args.repeats)
    print("s,fusion_seconds,attention_seconds")
    for r in rows:
        print(f"{r['s']},{r['fusion_seconds']:.6f},{r['attention_seconds']:.6f}")
    out = {"rows": rows}
    if len(rows) >= 2:
        a, b = rows[0], rows[-1]
        out["fusion_ratio"] = b["fusion_seconds"] / a["fusion_seconds"]
        out["attention_ratio"] = b["attention_seconds"] / a["attention_seconds"]
    return out


# -- parser -------------------------------------------------------------------
def build_parser():
    parser = argparse.ArgumentParser(prog="wsseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a seeded synthetic dataset split in VOC layout")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--image-size", type=int, default=48)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--split", default="train")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train on image-level labels; writes checkpoint and loss log")
    add_config_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="write BPM/CRF pseudo masks and score dumps")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data-root", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--crf", dest="crf", action="store_true", default=None)
    p.add_argument("--no-crf", dest="crf", action="store_false")
    p.add_argument("--infer-size", type=int, default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="mIoU of a mask directory against ground truth")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--out", type=Path, default=None, help="write the per-class table here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the model")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--probe", type=int, default=8, help="entries per tensor after seed 0")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="component and pooling ablations over several seeds")
    add_config_flags(p)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench-scaling", help="time context fusion against dense attention")
    p.add_argument("--sizes", type=_grid, nargs="+", default=[(32, 64), (64, 64)])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--hidden", type=int, default=8)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except Exception as err:  # every failure maps to a category and exit code
        cat = _category(err)
        if cat == "internal" and args.verbose:
            raise
        print(json.dumps({"error": cat, "message": str(err)}), file=sys.stderr)
        return EXIT_CODES[cat]
    print(json.dumps(result, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
