"""Command-line entry point.

Subcommands: synthdata, train, translate, eval, schedule. Training options
resolve as flags > JSON config file > built-in defaults, and the effective
configuration (seed included) is always echoed to stderr. Exit codes:
0 success, 1 runtime error, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from .data import (
    PgmError,
    generate_toy_dataset,
    load_dataset,
    load_image,
    normalize_mean,
    save_dataset,
    save_image,
    to_unit_range,
)
from .diffusion import reverse_sample
from .losses import LossWeights
from .metrics import PSNR_CAP_DB, empty_report, psnr, ssim
from .nets import CheckpointError, NetConfig, load_checkpoint
from .schedule import ScheduleError, build_fast_schedule
from .train import TrainConfig, train

CONFIG_KEYS = (
    "epochs",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "batch_size",
    "T",
    "k",
    "beta_min",
    "beta_max",
    "lambda_cyc",
    "gp_weight",
    "seed",
)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _resolve_train_config(args) -> TrainConfig:
    base = TrainConfig()
    values = {
        "epochs": base.epochs,
        "lr": base.lr,
        "adam_beta1": base.adam_beta1,
        "adam_beta2": base.adam_beta2,
        "batch_size": base.batch_size,
        "T": base.T,
        "k": base.k,
        "beta_min": base.beta_min,
        "beta_max": base.beta_max,
        "lambda_cyc": base.weights.lambda_cyc,
        "gp_weight": base.weights.gp_weight,
        "seed": base.seed,
    }
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as f:
                file_values = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"config file {args.config} is not valid JSON: {e}") from e
        unknown = set(file_values) - set(CONFIG_KEYS)
        if unknown:
            raise ValueError(f"config file {args.config} has unknown keys: {sorted(unknown)}")
        values.update(file_values)
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    ints = {k: int(values[k]) for k in ("epochs", "batch_size", "T", "k", "seed")}
    cfg = TrainConfig(
        epochs=ints["epochs"],
        lr=float(values["lr"]),
        adam_beta1=float(values["adam_beta1"]),
        adam_beta2=float(values["adam_beta2"]),
        batch_size=ints["batch_size"],
        T=ints["T"],
        k=ints["k"],
        beta_min=float(values["beta_min"]),
        beta_max=float(values["beta_max"]),
        weights=LossWeights(lambda_cyc=float(values["lambda_cyc"]), gp_weight=float(values["gp_weight"])),
        seed=ints["seed"],
    )
    cfg.schedule()  # validate schedule parameters up front
    return cfg


def _echo_config(cfg: TrainConfig) -> None:
    flat = dataclasses.asdict(cfg)
    weights = flat.pop("weights")
    flat.update(weights)
    _log("config: " + " ".join(f"{k}={flat[k]}" for k in CONFIG_KEYS))


# -- subcommands --------------------------------------------------------------


def cmd_synthdata(args) -> int:
    ds = generate_toy_dataset(args.seed, args.n_train, args.n_eval, args.size)
    save_dataset(ds, args.out)
    _log(f"seed: {args.seed}")
    _log(f"wrote {args.n_train}+{args.n_train} train and {args.n_eval} eval pairs to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_train_config(args)
    _echo_config(cfg)
    ds = load_dataset(args.data)
    pools = ds.training_pools()
    log_path = args.log if args.log else args.out + ".loss.tsv"
    result = train(pools, cfg, ckpt_path=args.out, log_path=log_path, progress=not args.quiet)
    _log(f"checkpoint: {args.out}")
    _log(f"loss log: {log_path}")
    _log(f"trained {len(result['rows'])} iterations in {result['seconds']:.1f}s")
    return 0


def _translate_one(nets, sched_params, source: np.ndarray, direction: str, seed: int, on_step=None):
    schedule = build_fast_schedule(
        sched_params["T"], sched_params["k"], sched_params["beta_min"], sched_params["beta_max"]
    )
    if source.shape[0] != nets.cfg.image_size or source.shape[1] != nets.cfg.image_size:
        raise CheckpointError(
            f"input is {source.shape[0]}x{source.shape[1]} but the checkpoint was built for "
            f"{nets.cfg.image_size}x{nets.cfg.image_size}"
        )
    gen = nets.gen_diff_b if direction == "A2B" else nets.gen_diff_a
    rng = np.random.default_rng(seed)
    y = source[None, None].astype(np.float32)
    out = reverse_sample(gen, y, schedule, rng, on_step=on_step)
    return out.data[0, 0], schedule


def cmd_translate(args) -> int:
    nets, sched_params = load_checkpoint(args.ckpt)
    source = load_image(args.input)
    calls = []
    out, schedule = _translate_one(
        nets, sched_params, source, args.direction, args.seed, on_step=lambda t: calls.append(t)
    )
    save_image(args.out, out)
    _log(f"seed: {args.seed}")
    print(f"generator calls: {len(calls)}")
    _log(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    nets, sched_params = load_checkpoint(args.ckpt)
    ds = load_dataset(args.data)
    if not ds.eval_pairs:
        raise FileNotFoundError(f"no eval pairs found under {args.data}")
    _log(f"seed: {args.seed}")
    report = empty_report()
    for sample_a, sample_b in ds.eval_pairs:
        src, ref = (sample_a, sample_b) if args.direction == "A2B" else (sample_b, sample_a)
        out, _ = _translate_one(nets, sched_params, src.pixels, args.direction, args.seed)
        ref_n = normalize_mean(to_unit_range(ref.pixels))
        out_n = normalize_mean(to_unit_range(out))
        report.add(src.pair_id, psnr(ref_n, out_n), ssim(ref_n, out_n))
    with open(args.out, "w", encoding="utf-8") as f:
        f.write("pair_id\tpsnr_db\tssim\n")
        for pid, p, s in zip(report.pair_ids, report.psnr_db, report.ssim_frac):
            f.write(f"{pid}\t{min(p, PSNR_CAP_DB):.4f}\t{s:.6f}\n")
        f.write(
            f"aggregate\t{report.psnr_mean:.4f}±{report.psnr_std:.4f}"
            f"\t{report.ssim_mean:.6f}±{report.ssim_std:.6f}\n"
        )
    _log(f"PSNR {report.psnr_mean:.2f}±{report.psnr_std:.2f} dB  SSIM {report.ssim_mean:.4f}±{report.ssim_std:.4f}")
    _log(f"wrote {args.out}")
    return 0


def cmd_schedule(args) -> int:
    s = build_fast_schedule(args.T, args.k, args.beta_min, args.beta_max)
    print("t\tgamma\talpha\talpha_bar")
    for t in s.grid:
        print(f"{t}\t{s.gamma(t):.10f}\t{s.alpha(t):.10f}\t{s.alpha_bar(t):.10f}")
    return 0


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="syndiff",
        description="Unpaired image translation via a fast adversarial diffusion sampler.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("synthdata", help="generate the synthetic two-modality dataset", formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--n-train", type=int, default=64, help="training images per modality")
    p.add_argument("--n-eval", type=int, default=16, help="paired eval images")
    p.add_argument("--size", type=int, default=32, help="image side in pixels (power of two)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synthdata)

    p = sub.add_parser("train", help="train the translation model", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset directory (trainA/ trainB/ evalA/ evalB/)")
    p.add_argument("--config", default=None, help="JSON config file overriding defaults")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", default=None, help="loss log TSV path (default: <out>.loss.tsv)")
    p.add_argument("--quiet", action="store_true", help="suppress per-epoch progress lines")
    p.add_argument("--epochs", type=int, default=None, help="training epochs (default 50)")
    p.add_argument("--lr", type=float, default=None, help="learning rate (default 1e-4)")
    p.add_argument("--adam-beta1", dest="adam_beta1", type=float, default=None, help="Adam beta1 (default 0.5)")
    p.add_argument("--adam-beta2", dest="adam_beta2", type=float, default=None, help="Adam beta2 (default 0.9)")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None, help="batch size (default 8)")
    p.add_argument("--T", type=int, default=None, help="total diffusion steps (default 1000)")
    p.add_argument("--k", type=int, default=None, help="step size (default 250)")
    p.add_argument("--beta-min", dest="beta_min", type=float, default=None, help="schedule lower bound (default 0.1)")
    p.add_argument("--beta-max", dest="beta_max", type=float, default=None, help="schedule upper bound (default 20)")
    p.add_argument("--lambda-cyc", dest="lambda_cyc", type=float, default=None, help="cycle weight (default 0.5)")
    p.add_argument("--gp-weight", dest="gp_weight", type=float, default=None, help="gradient penalty weight (default 0.5)")
    p.add_argument("--seed", type=int, default=None, help="training seed (default 0)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate one image through the sampler", formatter_class=fmt)
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--input", required=True, help="source image (.pgm or .f32)")
    p.add_argument("--direction", choices=("A2B", "B2A"), required=True, help="translation direction")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--out", required=True, help="output image (.pgm or .f32)")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("eval", help="score translations against paired eval images", formatter_class=fmt)
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="dataset directory with evalA/ evalB/")
    p.add_argument("--direction", choices=("A2B", "B2A"), default="A2B", help="translation direction")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--out", required=True, help="metrics TSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("schedule", help="dump the noise schedule as TSV", formatter_class=fmt)
    p.add_argument("--T", type=int, default=1000, help="total diffusion steps")
    p.add_argument("--k", type=int, default=250, help="step size")
    p.add_argument("--beta-min", dest="beta_min", type=float, default=0.1, help="schedule lower bound")
    p.add_argument("--beta-max", dest="beta_max", type=float, default=20.0, help="schedule upper bound")
    p.set_defaults(func=cmd_schedule)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PgmError, CheckpointError) as e:
        _log(f"error: {e}")
        return 1
    except (ScheduleError, ValueError) as e:
        _log(f"error: {e}")
        return 2
    except FloatingPointError as e:
        _log(f"error: {e}")
        return 1
    except OSError as e:
        _log(f"error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
