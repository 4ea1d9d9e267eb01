"""Command-line front end.

Each subcommand wraps one library entry point and maps failures onto
stable exit codes: 2 for configuration problems, 3 for unreadable or
malformed inputs, 4 for numerical failures.  Success is 0.
"""

import argparse
import sys
from pathlib import Path

from .clothsim import load_meshseq, save_meshseq, simulate
from .errors import ConfigError, IngestionError, NumericalError
from .gpopt import EvaluationHistory
from .params import load_params
from .pipeline import (
    emit_report,
    gen_target,
    ingest_target,
    load_ground_truth,
    load_refine_config,
    refine,
    target_descriptor,
)
from .render import render_sequence, save_video_pgm
from .spectral import save_descriptor_csv


def cmd_gen_target(args) -> None:
    cfg = load_refine_config(args.config)
    p = load_params(args.params)
    out = gen_target(p, cfg, args.out)
    print(f"wrote {cfg.sim.n_frames} frames and ground truth to {out}")


def cmd_refine(args) -> None:
    cfg = load_refine_config(args.config)
    volume = ingest_target(args.target, cfg)
    history = None
    if args.resume:
        saved = Path(args.out) / "history.csv"
        if saved.is_file():
            history = EvaluationHistory.load_csv(saved)
            print(f"resuming from {len(history)} recorded evaluations")
    result = refine(volume, cfg, history=history, out_dir=args.out)
    truth = load_ground_truth(args.target)
    emit_report(result, args.out, cfg, ground_truth=truth)
    print(
        f"best distance {result.best_distance:.6g} after "
        f"{len(result.history)} evaluations"
    )
    print(
        f"wind {result.best_params.wind_speed:.3f} m/s, "
        f"area weight {result.best_params.area_weight:.4f} kg/m^2"
    )
    print(f"report in {args.out}")


def cmd_simulate(args) -> None:
    cfg = load_refine_config(args.config)
    p = load_params(args.params)
    seq = simulate(p, cfg.sim)
    save_meshseq(seq, args.out)
    print(f"wrote {seq.positions.shape[0]} mesh frames to {args.out}")


def cmd_render(args) -> None:
    cfg = load_refine_config(args.config)
    seq = load_meshseq(args.input)
    volume = render_sequence(seq, cfg.camera, cfg.light)
    save_video_pgm(volume, args.out)
    print(f"rendered {volume.n_frames} frames to {args.out}")


def cmd_features(args) -> None:
    cfg = load_refine_config(args.config)
    volume = ingest_target(args.video, cfg)
    desc = target_descriptor(volume, cfg)
    save_descriptor_csv(desc, args.out)
    print(f"wrote {len(desc)} descriptor values to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flagfit",
        description="Recover flag material and wind parameters from video.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser(
        "gen-target", help="simulate known parameters into a target clip"
    )
    gen.add_argument("--params", required=True, help="parameter file")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--config", help="key-value config file")
    gen.set_defaults(func=cmd_gen_target)

    ref = sub.add_parser("refine", help="fit parameters to a target clip")
    ref.add_argument("--target", required=True, help="target PGM directory")
    ref.add_argument("--config", help="key-value config file")
    ref.add_argument("--out", required=True, help="output directory")
    ref.add_argument(
        "--resume",
        action="store_true",
        help="continue from history.csv in the output directory",
    )
    ref.set_defaults(func=cmd_refine)

    sim = sub.add_parser("simulate", help="run the cloth simulation only")
    sim.add_argument("--params", required=True, help="parameter file")
    sim.add_argument("--out", required=True, help="output mesh-sequence file")
    sim.add_argument("--config", help="key-value config file")
    sim.set_defaults(func=cmd_simulate)

    ren = sub.add_parser("render", help="rasterize a stored mesh sequence")
    ren.add_argument("--in", dest="input", required=True, help="mesh-sequence file")
    ren.add_argument("--out", required=True, help="output directory")
    ren.add_argument("--config", help="key-value config file")
    ren.set_defaults(func=cmd_render)

    fea = sub.add_parser("features", help="compute a clip's spectral descriptor")
    fea.add_argument("--video", required=True, help="PGM clip directory")
    fea.add_argument("--out", required=True, help="output CSV file")
    fea.add_argument("--config", help="key-value config file")
    fea.set_defaults(func=cmd_features)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
