"""Command line entry point: ``mscnet {train,eval,infer,gradcheck,synth,params}``.

Exit codes: 0 ok, 2 invalid arguments, 3 I/O error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data as D
from .config import build_configs, read_config_file
from .engine.mscw import FormatError
from .model import ModelConfig, MSCNet, count_params

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("mscnet")


class UsageError(ValueError):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON file mirroring TrainConfig/ModelConfig")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--width", type=float, choices=(0.25, 1.0), help="MobileNet-V2 width multiplier")
    p.add_argument("--threads", type=int, help="BLAS threads; 0 = strict single thread")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mscnet", description="MSCNet saliency detection on a numpy autograd engine")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a run directory")
    _common(p)
    p.add_argument("--data", required=True, help="manifest.tsv or synth:n=8,size=64,...")
    p.add_argument("--split", default="train")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--wd", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--size", type=int, help="input resolution (multiple of 32)")
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--decoupled-wd", action="store_true")
    p.add_argument("--dtype", choices=("float32", "float64"))

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    _common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", help="manifest split (falls back to all entries)")
    p.add_argument("--size", type=int)

    p = sub.add_parser("infer", help="write saliency maps for images")
    _common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("images", nargs="+")
    p.add_argument("--size", type=int)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _common(p)
    p.add_argument("--no-model", action="store_true", help="skip the full-model case")

    p = sub.add_parser("synth", help="write a synthetic dataset with manifest")
    _common(p)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--split", default="train")
    p.add_argument("--ext", default=".png", choices=(".png", ".ppm"))

    p = sub.add_parser("params", help="parameter census")
    _common(p)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--include-head", action="store_true")
    return ap


def _configs(args):
    file_values = read_config_file(args.config) if args.config else {}
    over = {
        "seed": args.seed, "width": args.width, "threads": args.threads,
        "epochs": getattr(args, "epochs", None), "batch": getattr(args, "batch", None),
        "lr": getattr(args, "lr", None), "wd": getattr(args, "wd", None),
        "lambda": getattr(args, "lam", None), "input_size": getattr(args, "size", None),
        "val_fraction": getattr(args, "val_fraction", None), "dtype": getattr(args, "dtype", None),
    }
    if getattr(args, "no_augment", False):
        over["augment"] = False
    if getattr(args, "decoupled_wd", False):
        over["decoupled_wd"] = True
    return build_configs(file_values, over)


def _run_config_near(weights: str) -> dict:
    """Model section of the run's config.json, if the checkpoint sits in a run directory."""
    cfg = Path(weights).parent / "config.json"
    if cfg.exists():
        return {"model": json.loads(cfg.read_text()).get("model", {})}
    return {}


def load_samples(spec: str, size: int, split: str, seed: int) -> list[D.Sample]:
    if spec.startswith("synth"):
        kw = D.parse_synth_spec(spec)
        n = kw.pop("n", 8)
        return D.synth_dataset(n, seed=kw.pop("seed", seed), size=kw.pop("size", size), **kw)
    manifest = D.read_manifest(spec)
    entries = manifest.split(split) or manifest.entries
    if not entries:
        raise UsageError(f"manifest {spec} is empty")
    return D.load_manifest_samples(entries, size)


def cmd_train(args) -> int:
    from .train import train
    tcfg, mcfg = _configs(args)
    samples = load_samples(args.data, mcfg.input_size, args.split, tcfg.seed)
    out = Path(args.out or "runs/latest")
    train(tcfg, mcfg, samples, out)
    print(f"run written to {out}")
    return EXIT_OK


def _model_for(args):
    from .train import load_model
    if not args.config:
        near = _run_config_near(args.weights)
        tcfg, mcfg = build_configs(near, {"seed": args.seed, "width": args.width,
                                          "input_size": getattr(args, "size", None)})
    else:
        tcfg, mcfg = _configs(args)
    return load_model(args.weights, mcfg, tcfg.dtype), tcfg, mcfg


def cmd_eval(args) -> int:
    from .train import evaluate, thread_limit
    model, tcfg, mcfg = _model_for(args)
    samples = load_samples(args.data, mcfg.input_size, args.split, tcfg.seed)
    with thread_limit(tcfg.threads):
        res = evaluate(model, samples)
    out = Path(args.out or Path(args.weights).parent)
    res.write(out)
    print(json.dumps(res.mean.to_dict(curves=False), indent=1))
    return EXIT_OK


def cmd_infer(args) -> int:
    from .train import infer, thread_limit
    model, tcfg, mcfg = _model_for(args)
    with thread_limit(tcfg.threads):
        written, errors = infer(model, args.images, args.out or "predictions", mcfg.input_size)
    for p in written:
        print(p)
    for path, msg in errors.items():
        print(f"error: {path}: {msg}", file=sys.stderr)
    return EXIT_IO if errors else EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite
    results = run_suite(args.seed or 0, include_model=not args.no_model)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def cmd_synth(args) -> int:
    if args.n <= 0:
        raise UsageError("--n must be positive")
    samples = D.synth_dataset(args.n, seed=args.seed or 0, size=args.size)
    out = Path(args.out or "synth")
    D.write_dataset(samples, out, args.split, args.ext)
    print(out / "manifest.tsv")
    return EXIT_OK


def cmd_params(args) -> int:
    from .backbone import analytic_param_count
    alpha = args.width or 0.25
    model = MSCNet(ModelConfig(alpha=alpha, include_head=args.include_head))
    total, groups = count_params(model, args.depth)
    for name, n in groups.items():
        print(f"{name:<28} {n:>10,}")
    print(f"{'total':<28} {total:>10,}")
    print(f"{'analytic encoder':<28} {analytic_param_count(alpha, args.include_head):>10,}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "infer": cmd_infer, "gradcheck": cmd_gradcheck,
            "synth": cmd_synth, "params": cmd_params}


def main(argv=None) -> int:
    from .train import NumericalError
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad usage
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    sys.exit(main())
