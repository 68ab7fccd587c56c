"""Command-line entry point: synth, train, infer, eval, ablate, plot.

A single JSON file (``--config``) carries per-subcommand sections; flags
override it and ``CRS_SEED`` overrides any seed. Failures exit nonzero with
one ``error[<category>]: <message>`` line on stderr.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from typing import Optional

from . import config as cfgmod
from .config import AblationConfig, InferenceConfig, ModelConfig, TrainConfig, env_seed
from .errors import ConfigError, CrsError, UsageError

EXIT_USAGE = 2
EXIT_FAILURE = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _keys_epilog() -> str:
    lines = ["config keys (JSON sections):"]
    for section, keys in cfgmod.config_keys().items():
        lines.append(f"  {section}: {', '.join(keys)}")
    lines.append("environment: CRS_SEED overrides every seed")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    p = _Parser(prog="crseg", description="Recurrent object-tracking segmentation of EM volumes.",
                epilog=_keys_epilog(), formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic volume and label pair",
                       epilog=_keys_epilog(), formatter_class=fmt)
    s.add_argument("--spec", help="JSON with synth keys (or a config with a 'synth' section)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--name", default="synth")
    s.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="train a network", epilog=_keys_epilog(), formatter_class=fmt)
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir")
    t.add_argument("--mode", help="consistency mode: ST, STL, STN or STC")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float, dest="learning_rate")
    t.add_argument("--max-steps", type=int)
    t.add_argument("--seed", type=int)

    i = sub.add_parser("infer", help="segment a volume from a labeled first slice",
                       epilog=_keys_epilog(), formatter_class=fmt)
    i.add_argument("--volume", required=True)
    i.add_argument("--seed", help="VOL1 labels for the first slice; watershed when omitted")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--mode", help="refuse checkpoints trained in another mode")
    i.add_argument("--config")
    i.add_argument("--chunk-length", type=int)
    i.add_argument("--overlap", type=int, dest="z_overlap")
    i.add_argument("--discover", action="store_true", dest="discover_new_objects", default=None)

    e = sub.add_parser("eval", help="adapted Rand error of a prediction")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--report", default="eval_report.csv", help="CSV to append to")

    a = sub.add_parser("ablate", help="train and score consistency modes over seeds",
                       epilog=_keys_epilog(), formatter_class=fmt)
    a.add_argument("--config")
    a.add_argument("--out", default="ablation")
    a.add_argument("--modes", help="comma-separated, e.g. ST,STC")
    a.add_argument("--seeds", help="comma-separated integers")
    a.add_argument("--steps", type=int)

    pl = sub.add_parser("plot", help="render the ablation CSV as SVG")
    pl.add_argument("--report", required=True)
    pl.add_argument("--out", help="SVG path; defaults to the report path with .svg")
    return p


def _section(data: dict, name: str) -> dict:
    sec = data.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return dict(sec)


def _overrides(args, names) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _model_section(data: dict, mode: Optional[str] = None) -> dict:
    model = _section(data, "model")
    if mode is not None:
        model["consistency_mode"] = mode
    return model


def train_config(data: dict, args=None) -> TrainConfig:
    sec = _section(data, "train")
    model = _model_section(data, getattr(args, "mode", None))
    model.update(sec.pop("model", {}) if isinstance(sec.get("model"), dict) else {})
    sec["model"] = cfgmod.build(ModelConfig, model)
    if args is not None:
        sec.update(_overrides(args, ("epochs", "learning_rate", "max_steps", "seed")))
        if args.out_dir:
            sec["out_dir"] = args.out_dir
    cfg = cfgmod.build(TrainConfig, sec)
    cfg.seed = env_seed(cfg.seed)
    return cfg


def cmd_synth(args) -> int:
    from .synth import SynthSpec, generate
    from .voxel_store import write_pair

    data = cfgmod.load(args.spec)
    if "synth" in data:
        data = _section(data, "synth")
    try:
        spec = SynthSpec.from_dict(data)
    except TypeError as exc:
        raise ConfigError(f"bad synth spec: {exc}") from exc
    seed = args.seed if args.seed is not None else spec.seed
    spec = dataclasses.replace(spec, seed=env_seed(seed))
    v, l = generate(spec)
    vol, lab = write_pair(args.out, args.name, v, l)
    print(vol)
    print(lab)
    return 0


def cmd_train(args) -> int:
    from .plotting import training_curve
    from .trainer import train

    cfg = train_config(cfgmod.load(args.config), args)
    result = train(cfg)
    if result.history:
        training_curve(result.history, os.path.join(cfg.out_dir, "metrics.svg"))
    print(os.path.join(cfg.out_dir, "last.ckpt"))
    return 0


def cmd_infer(args) -> int:
    from .decoder import Network
    from .segmenter import infer_volume
    from .voxel_store import read_volume, write_volume

    net = Network.load(args.checkpoint, mode=args.mode)
    sec = _section(cfgmod.load(args.config), "infer")
    sec.setdefault("chunk_length", max(2, net.cfg.sequence_length))
    sec.update(_overrides(args, ("z_overlap", "discover_new_objects")))
    if args.chunk_length is not None:
        sec["chunk_length"] = args.chunk_length
    icfg = cfgmod.build(InferenceConfig, sec)
    volume = read_volume(args.volume)
    seed = read_volume(args.seed) if args.seed else None
    labels = infer_volume(volume, seed, net, icfg)
    write_volume(args.out, labels)
    print(args.out)
    return 0


def cmd_eval(args) -> int:
    from .rand_metrics import adapted_rand_error
    from .voxel_store import read_volume

    pred, gt = read_volume(args.pred), read_volume(args.gt)
    ari = adapted_rand_error(pred.data, gt.data)
    print(f"{ari:.6f}")
    fresh = not os.path.exists(args.report) or os.path.getsize(args.report) == 0
    with open(args.report, "a", newline="") as fh:
        w = csv.writer(fh)
        if fresh:
            w.writerow(["pred", "gt", "ari"])
        w.writerow([args.pred, args.gt, f"{ari:.10f}"])
    return 0


def _csv_list(raw: Optional[str], cast=str):
    if raw is None:
        return None
    items = [x.strip() for x in raw.split(",") if x.strip()]
    try:
        return [cast(x) for x in items]
    except ValueError as exc:
        raise UsageError(f"bad list {raw!r}: {exc}") from exc


def cmd_ablate(args) -> int:
    from .ablation import run_ablation, write_outputs

    data = cfgmod.load(args.config)
    sec = _section(data, "ablate")
    modes = _csv_list(args.modes)
    if modes is not None:
        sec["modes"] = modes
    seeds = _csv_list(args.seeds, int)
    if seeds is not None:
        sec["seeds"] = seeds
    if args.steps is not None:
        sec["steps"] = args.steps
    if "CRS_SEED" in os.environ and os.environ["CRS_SEED"] != "":
        sec["seeds"] = [env_seed(0)]
    acfg = cfgmod.build(AblationConfig, sec)
    base = train_config(data)
    icfg = cfgmod.build(InferenceConfig, _section(data, "infer")) if "infer" in data else None

    def progress(row):
        print(f"{row['mode']} seed={row['seed']} ari={row['ari']:.4f} "
              f"identity={row['identity_kept']:.2f} infer_s={row['inference_seconds']:.2f}", flush=True)

    rows = run_ablation(acfg, base.model, base, icfg, args.out, progress)
    csv_path, svg_path = write_outputs(rows, args.out)
    print(csv_path)
    print(svg_path)
    return 0


def cmd_plot(args) -> int:
    from .plotting import ablation_chart, read_report

    rows = read_report(args.report)
    out = args.out or os.path.splitext(args.report)[0] + ".svg"
    ablation_chart(rows, out)
    print(out)
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
            "ablate": cmd_ablate, "plot": cmd_plot}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand; see --help")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except CrsError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, UsageError) else EXIT_FAILURE
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
