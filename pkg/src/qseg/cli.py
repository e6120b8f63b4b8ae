"""Command line harness.

Every ExperimentConfig key is also a flag (``--steps 200``), as are the
bit-widths and quantizer modes (``--k_U 16``, ``--mode_E2 off``). Flags
override values from ``--config``.

Exit codes: 0 success, 1 usage or config error, 2 divergence abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import plotting
from .checkpoint import CheckpointError, load_checkpoint
from .config import ExperimentConfig, parse_pairs, read_config_file
from .data import DatasetFormatError, crop_batch, generate_shapes, load_dataset, save_dataset
from .profiling import OBJECTS, profile, summary_rows, write_profile
from .quant import DEFAULT_MODES
from .sweeps import (DEFAULT_SEEDS, sweep_ku, sweep_scaling, sweep_structure,
                     write_table)
from .tensor import Rng
from .train import DivergenceError, evaluate, train

log = logging.getLogger("qseg")

CONFIG_KEYS = [f.name for f in fields(ExperimentConfig) if f.name not in ("bits", "modes")]
BIT_KEYS = [f"k_{o}" for o in DEFAULT_MODES] + [f"mode_{o}" for o in DEFAULT_MODES]


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(s):
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {s!r}")


def _add_config_flags(p):
    g = p.add_argument_group("experiment config")
    g.add_argument("--config", help="key = value config file")
    for key in CONFIG_KEYS + BIT_KEYS:
        g.add_argument(f"--{key}", dest=f"cfg_{key}", metavar="V", default=None)


def _config(args, **defaults) -> ExperimentConfig:
    kw = read_config_file(args.config) if args.config else {}
    pairs = [(k[4:], v) for k, v in vars(args).items() if k.startswith("cfg_") and v is not None]
    over = parse_pairs(pairs)
    for k, v in defaults.items():
        if k not in kw and k not in over:
            over[k] = v
    for key in ("bits", "modes"):
        if key in over:
            kw[key] = {**kw.get(key, {}), **over.pop(key)}
    kw.update(over)
    return ExperimentConfig(**kw)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _datasets(config):
    if not config.dataset:
        raise UsageError("a dataset is required (--dataset PATH)")
    train_ds = load_dataset(config.dataset)
    val_ds = load_dataset(config.val_dataset) if config.val_dataset else train_ds
    return train_ds, val_ds


def cmd_gen_data(args):
    ds = generate_shapes(args.seed, args.n_samples, args.size, args.classes)
    save_dataset(ds, args.out)
    print(json.dumps({"path": str(args.out), "samples": len(ds), "classes": ds.n_classes}))


def cmd_train(args):
    config = _config(args)
    train_ds, val_ds = _datasets(config)
    out = _out_dir(args)
    try:
        res = train(config, train_ds, val_ds, out)
    except DivergenceError as e:
        log.error("divergence: %s", e)
        plotting.plot_loss_curves({config.network: e.record}, out / "loss.png")
        return 2
    plotting.plot_loss_curves({config.network: res.record}, out / "loss.png")
    plotting.plot_grad_scales(res.record, out / "grad_scales.png")
    ev = res.record.evals[-1]
    print(json.dumps({"out_dir": str(out), "miou": ev["miou"], "pixel_acc": ev["pixel_acc"],
                      "final_loss": float(res.record.losses()[-1])}))
    return 0


def cmd_eval(args):
    net, cfg, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    res = evaluate(net, ds, cfg, args.eval_mode)
    res["checkpoint"] = str(args.checkpoint)
    if args.out_dir:
        (_out_dir(args) / "eval.json").write_text(json.dumps(res, indent=1))
    print(json.dumps(res))
    return 0


def cmd_profile(args):
    objects = [o.strip() for o in args.objects.split(",")] if args.objects else list(OBJECTS)
    bad = [o for o in objects if o not in OBJECTS]
    if bad:
        raise UsageError(f"unknown object(s) {bad}; choose from {list(OBJECTS)}")
    out = _out_dir(args)
    if args.checkpoint:
        net, cfg, _ = load_checkpoint(args.checkpoint)
        config = _config(args)
        ds = load_dataset(config.dataset) if config.dataset else None
        if ds is None:
            raise UsageError("a dataset is required (--dataset PATH)")
    else:
        config = _config(args)
        ds, val = _datasets(config)
        try:
            res = train(config, ds, val, out / "run")
        except DivergenceError as e:
            log.error("divergence: %s", e)
            return 2
        net, cfg = res.net, res.cfg
    images, masks = crop_batch(ds, args.batch, config.crop, Rng(config.seed).split(3))
    report = profile(net, cfg, images, masks, objects, seed=config.seed)
    write_profile(report, out)
    rows = summary_rows(report)
    write_table(rows, out / "profile.csv")
    for obj, layers in report.items():
        for layer, r in layers.items():
            plotting.plot_histogram(r, out / f"hist_{obj}_{layer}.png", f"{obj} / {layer}")
    print(json.dumps({"out_dir": str(out), "tensors": len(rows)}))
    return 0


def _sweep_out(out, name, rows, summary, plot):
    write_table(rows, out / f"{name}.csv")
    write_table(summary, out / f"{name}_summary.csv")
    plot(summary, out / f"{name}.png")
    for s in summary:
        print(json.dumps(s))


def cmd_sweep_ku(args):
    config = _config(args)
    train_ds, val_ds = _datasets(config)
    out = _out_dir(args)
    rows, summary = sweep_ku(config, args.values, train_ds, val_ds, args.seeds, out / "runs")
    _sweep_out(out, "sweep_ku", rows, summary, plotting.plot_ku_curve)
    return 0


def cmd_sweep_scaling(args):
    config = _config(args)
    train_ds, val_ds = _datasets(config)
    out = _out_dir(args)
    rows, summary = sweep_scaling(config, train_ds, val_ds, args.seeds, out / "runs")
    _sweep_out(out, "sweep_scaling", rows, summary,
               lambda s, p: plotting.plot_bars(s, ("network", "grad_mode"), p))
    return 0


def cmd_sweep_structure(args):
    config = _config(args, network="toy_fcn")
    train_ds, val_ds = _datasets(config)
    out = _out_dir(args)
    rows, summary = sweep_structure(config, train_ds, val_ds, args.seeds, out / "runs")
    _sweep_out(out, "sweep_structure", rows, summary,
               lambda s, p: plotting.plot_bars(s, ("encoder", "decoder"), p))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = Parser(prog="qseg", description="Quantized training of toy segmentation networks.")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    g = sub.add_parser("gen-data", help="write a synthetic shapes dataset")
    g.add_argument("--out", required=True, type=Path)
    g.add_argument("--n-samples", type=int, default=2000)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one network")
    _add_config_flags(t)
    t.add_argument("--out-dir", default="runs/train")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--eval-mode", choices=("global", "per_image"), default="global")
    e.add_argument("--out-dir")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("profile", help="per-layer distribution histograms")
    _add_config_flags(pr)
    pr.add_argument("--checkpoint", help="profile this checkpoint instead of training first")
    pr.add_argument("--objects", help=f"comma separated subset of {','.join(OBJECTS)}")
    pr.add_argument("--batch", type=int, default=8)
    pr.add_argument("--out-dir", default="runs/profile")
    pr.set_defaults(func=cmd_profile)

    for name, func, extra in (("sweep-ku", cmd_sweep_ku, True),
                              ("sweep-scaling", cmd_sweep_scaling, False),
                              ("sweep-structure", cmd_sweep_structure, False)):
        s = sub.add_parser(name, help=f"{name.split('-')[1]} ablation sweep")
        _add_config_flags(s)
        s.add_argument("--seeds", type=_int_list, default=list(DEFAULT_SEEDS))
        if extra:
            s.add_argument("--values", type=_int_list, default=[24, 20, 16, 12, 10, 9])
        s.add_argument("--out-dir", default=f"runs/{name}")
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except (UsageError, ValueError, OSError, DatasetFormatError, CheckpointError) as e:
        print(f"qseg {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
