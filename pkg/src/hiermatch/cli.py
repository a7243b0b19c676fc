"""Command-line interface.

Exit status: 0 on success, 1 on usage errors, 2 on data errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from . import __version__
from .config import RunConfig, apply_overrides, load_config
from .errors import HierMatchError, MalformedFile
from .synthetic import ScenePairSpec

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", help="flat key = value config file")
    g.add_argument("--seed", type=int, help="pipeline and generator seed")
    g.add_argument("--mode", choices=["deterministic", "learned"])
    g.add_argument("--params", help="model parameter file (learned mode)")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override, repeatable")
    g.add_argument("--no-double-soft", action="store_true")
    g.add_argument("--no-std", action="store_true")
    g.add_argument("--no-fs", action="store_true")
    g.add_argument("--no-mask", action="store_true")
    g.add_argument("-v", "--verbose", action="store_true", help="per-stage diagnostics on stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="hiermatch", description="Hierarchical soft-matching point cloud registration.")
    parser.add_argument("--version", action="version", version=f"hiermatch {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write synthetic pairs with ground truth")
    p.add_argument("out_dir")
    p.add_argument("-n", "--pairs", type=int, default=10)
    p.add_argument("--rotation", type=float, default=ScenePairSpec.rotation_deg, help="max rotation, degrees")
    p.add_argument("--translation", type=float, default=ScenePairSpec.translation_m, help="max translation, m")
    p.add_argument("--overlap", type=float, default=ScenePairSpec.overlap)
    p.add_argument("--noise", type=float, default=ScenePairSpec.noise_sigma, help="noise sigma, m")

    p = sub.add_parser("register", parents=[common], help="register one pair, JSON to stdout")
    p.add_argument("source", nargs="?", help="source cloud (.bin, .ply, .xyz)")
    p.add_argument("target", nargs="?", help="target cloud")
    p.add_argument("--dataset", help="dataset directory or pair list (with --pair)")
    p.add_argument("--pair", type=int, default=0, help="pair index within --dataset")
    p.add_argument("--gt", help="ground truth: pose file, optionally suffixed :LINE (1-based)")
    p.add_argument("--pose-out", help="append the estimated pose line to this file")
    p.add_argument("--correspondences", help="write coarse correspondences CSV here")
    p.add_argument("--dump-pyramid", help="write one PLY per pyramid level into this directory")
    p.add_argument("--server", help="send the pair to a running service at this URL instead")

    p = sub.add_parser("benchmark", parents=[common], help="benchmark a dataset, write report CSVs")
    p.add_argument("dataset")
    p.add_argument("-o", "--out", default="out")
    p.add_argument("--timing", action="store_true", help="record wall-clock ms (makes CSVs non-reproducible)")
    p.add_argument("--baseline", choices=["icp"], help="run a baseline instead of the pipeline")

    p = sub.add_parser("ablate", parents=[common], help="ablation table over a dataset")
    p.add_argument("dataset")
    p.add_argument("-o", "--out", default="out")
    p.add_argument("--timing", action="store_true")

    p = sub.add_parser("train", parents=[common], help="toy-scale training run")
    p.add_argument("-o", "--out", default="out")
    p.add_argument("--pairs", type=int, default=32)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.0095)

    p = sub.add_parser("eval-only", parents=[common], help="metrics from stored pose estimates")
    p.add_argument("dataset")
    p.add_argument("estimates", help="pose file, one line per pair")
    p.add_argument("-o", "--out", default="out")

    p = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = []
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides.append((key.strip(), value))
    if args.seed is not None:
        overrides.append(("pipeline.seed", str(args.seed)))
    if args.mode:
        overrides.append(("pipeline.mode", args.mode))
    if args.params:
        overrides.append(("params_path", args.params))
    for flag, key in (("no_double_soft", "double_soft"), ("no_std", "sparse_to_denser"),
                      ("no_fs", "feature_consistency"), ("no_mask", "mask")):
        if getattr(args, flag):
            overrides.append((f"pipeline.{key}", "false"))
    try:
        cfg = apply_overrides(cfg, overrides)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad config override: {exc}") from exc
    cfg.check_paths()
    return cfg


def _params(cfg: RunConfig):
    if cfg.params_path is None:
        return None
    from .nn import load_params

    return load_params(cfg.params_path)


def _read_gt(spec: str):
    from .io import read_pose_file

    path, line = spec, None
    head, sep, tail = spec.rpartition(":")
    if sep and tail.isdigit():
        path, line = head, int(tail)
    poses = read_pose_file(path)
    idx = (line or 1) - 1
    if not 0 <= idx < len(poses):
        raise MalformedFile(f"{path}: no pose on line {line}")
    return poses[idx]


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cmd_synth(args, cfg: RunConfig) -> int:
    from .io import write_synthetic_dataset

    spec = ScenePairSpec(
        seed=cfg.pipeline.seed, rotation_deg=args.rotation, translation_m=args.translation,
        overlap=args.overlap, noise_sigma=args.noise,
    )
    refs = write_synthetic_dataset(args.out_dir, args.pairs, spec)
    print(json.dumps({"pairs": len(refs), "dir": str(args.out_dir)}))
    return EXIT_OK


def cmd_register(args, cfg: RunConfig) -> int:
    from .io import read_cloud

    if args.dataset:
        from .io import load_dataset

        refs = load_dataset(args.dataset)
        if not 0 <= args.pair < len(refs):
            raise UsageError(f"--pair {args.pair} out of range (dataset has {len(refs)} pairs)")
        ref = refs[args.pair]
        src_path, tgt_path, gt = ref.src_path, ref.tgt_path, ref.gt
    elif args.source and args.target:
        src_path, tgt_path, gt = args.source, args.target, None
    else:
        raise UsageError("register needs SOURCE TARGET or --dataset")
    if args.gt:
        gt = _read_gt(args.gt)
    src, tgt = read_cloud(src_path), read_cloud(tgt_path)

    if args.server:
        from .service.client import remote_register

        summary = remote_register(args.server, src, tgt, cfg, gt)
    else:
        from .api import register_clouds
        from .io import dump_pyramid

        result, summary = register_clouds(src, tgt, cfg.pipeline, _params(cfg), gt, cfg.eval)
        if args.correspondences:
            from .evaluation import correspondence_csv

            _write(Path(args.correspondences), correspondence_csv(result.coarse, gt, cfg.eval.eps_d))
        if args.dump_pyramid:
            src_pyr, tgt_pyr = result.pyramids
            dump_pyramid(src_pyr, args.dump_pyramid, "src_level")
            dump_pyramid(tgt_pyr, args.dump_pyramid, "tgt_level")
    if args.verbose:
        for s in summary["stages"]:
            err = "" if s["rte_m"] is None else f" rte_m={s['rte_m']:.6f} rre_deg={s['rre_deg']:.6f}"
            print(f"stage={s['stage']}{err} ms={s['ms']:.3f}", file=sys.stderr)
    if args.pose_out:
        with open(args.pose_out, "a", encoding="utf-8") as fh:
            fh.write(summary["pose"] + "\n")
    print(json.dumps(summary))
    return EXIT_OK


def _progress(verbose: bool):
    if not verbose:
        return None

    def report(out):
        state = "ok" if out.success else f"fail {out.error or ''}".strip()
        print(f"pair={out.pair_id} rte_m={out.rte_m:.4f} rre_deg={out.rre_deg:.4f} {state}", file=sys.stderr)

    return report


def cmd_benchmark(args, cfg: RunConfig) -> int:
    from .evaluation import benchmark, icp_benchmark, write_report
    from .io import iter_samples, load_dataset, write_pose_file

    refs = load_dataset(args.dataset)
    samples = iter_samples(refs)
    if args.baseline == "icp":
        report = icp_benchmark(samples, cfg.pipeline, cfg.eval, args.timing)
    else:
        report = benchmark(samples, cfg.pipeline, cfg.eval, _params(cfg), timing=args.timing,
                           progress=_progress(args.verbose))
    out = Path(args.out)
    write_report(report, out)
    poses = [p.transform for p in report.pairs]
    if all(T is not None for T in poses):
        write_pose_file(poses, out / "estimates.txt")
    print(json.dumps(report.summary()))
    return EXIT_OK


def cmd_ablate(args, cfg: RunConfig) -> int:
    from .evaluation import ablation_csv, ablation_suite
    from .io import iter_samples, load_dataset

    samples = list(iter_samples(load_dataset(args.dataset)))
    reports = ablation_suite(samples, cfg.pipeline, cfg.eval, _params(cfg), timing=args.timing)
    _write(Path(args.out) / "ablation.csv", ablation_csv(reports))
    print(json.dumps({name: r.summary() for name, r in reports.items()}))
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    from .training import TrainConfig, save_result, train

    tc = TrainConfig(n_pairs=args.pairs, epochs=args.epochs, lr=args.lr, seed=cfg.pipeline.seed,
                     alpha=cfg.pipeline.alpha)
    progress = (lambda e, l: print(f"epoch={e} loss={l:.6f}", file=sys.stderr)) if args.verbose else None
    result = train(tc, cfg.pipeline, progress=progress)
    curve, params = save_result(result, args.out)
    print(json.dumps({
        "initial_loss": result.initial_loss, "final_loss": result.final_loss,
        "curve": str(curve), "params": str(params), "seconds": result.seconds,
    }))
    return EXIT_OK


def cmd_eval_only(args, cfg: RunConfig) -> int:
    from .evaluation import report_from_transforms, write_report
    from .io import load_dataset, read_pose_file

    refs = load_dataset(args.dataset)
    if any(r.gt is None for r in refs):
        raise MalformedFile(f"{args.dataset}: every pair needs a ground-truth pose")
    report = report_from_transforms(read_pose_file(args.estimates), [r.gt for r in refs], cfg.eval)
    write_report(report, args.out)
    print(json.dumps(report.summary()))
    return EXIT_OK


def cmd_serve(args, cfg: RunConfig) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(cfg, _params(cfg)), host=args.host, port=args.port)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "register": cmd_register, "benchmark": cmd_benchmark, "ablate": cmd_ablate,
    "train": cmd_train, "eval-only": cmd_eval_only, "serve": cmd_serve,
}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"hiermatch: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HierMatchError, OSError, ValueError) as exc:
        print(f"hiermatch: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
