"""``glidergen`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .flightsim import SimulationError
from .learner import DivergenceError
from .learner.io import CheckpointError
from .mesh import MeshError
from .sdf import SdfError

log = logging.getLogger("glidergen")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    # SUPPRESS so a flag given before the subcommand is not reset by the
    # subparser's own default
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", type=Path, help="JSON config; flags override its values")
    p.add_argument("--seed", type=int, help="seed for every random stream (u64)")
    p.add_argument("--threads", type=int, help="worker processes (0 = all cores; default 1)")
    p.add_argument("--out", type=Path, help="output directory (default glidergen_out)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


_GLOBAL_DEFAULTS = {"config": None, "seed": None, "threads": 1, "out": Path("glidergen_out"), "verbose": False}


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="glidergen", description="Latent-space glider design pipeline.", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-corpus", parents=[common], help="write parametric glider meshes")
    p.add_argument("--count", type=int)
    p.add_argument("--resolution", type=int)

    p = sub.add_parser("preprocess", parents=[common], help="meshes -> SDF lattices")
    p.add_argument("mesh_dir", type=Path)
    p.add_argument("--dims", type=int)

    p = sub.add_parser("train", parents=[common], help="train the autoencoder")
    p.add_argument("sdf_dir", type=Path)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("encode", parents=[common], help="SDF lattices -> latent CSV")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("sdf_dir", type=Path)

    p = sub.add_parser("decode", parents=[common], help="latent CSV -> SDF lattices and meshes")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("latents", type=Path)

    p = sub.add_parser("simulate", parents=[common], help="fly one mesh or SDF file")
    p.add_argument("design", type=Path)

    p = sub.add_parser("optimize", parents=[common], help="genetic search in latent space")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("sdf_dir", type=Path)
    p.add_argument("--target", type=float, help="target gap height h* (m)")
    p.add_argument("--generations", type=int)

    p = sub.add_parser("roundtrip", parents=[common], help="mesh -> SDF -> mesh deviation check")
    p.add_argument("mesh", type=Path)
    p.add_argument("--dims", type=int)
    p.add_argument("--no-perturb", action="store_true", help="keep exact-zero nodes (may fail)")
    return parser


def _config(args) -> pipeline.PipelineConfig:
    cfg = pipeline.PipelineConfig.load(args.config) if args.config else pipeline.PipelineConfig()
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.with_seed(args.seed)
    d = cfg.to_dict()
    if getattr(args, "dims", None):
        d["preprocess"]["dims"] = args.dims
        d["learner"]["resolution"] = [args.dims] * 3
    if getattr(args, "epochs", None):
        d["learner"]["epochs"] = args.epochs
    if getattr(args, "generations", None) is not None:
        d["ga"]["generations"] = args.generations
    if getattr(args, "target", None) is not None:
        d["task"]["target_height"] = args.target
    if getattr(args, "count", None):
        d["corpus"]["count"] = args.count
    if getattr(args, "resolution", None):
        d["corpus"]["resolution"] = args.resolution
    return pipeline.PipelineConfig.from_dict(d)


def _run(args) -> int:
    cfg = _config(args)
    threads = pipeline.thread_count(args.threads)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    cmd = args.command
    if cmd == "synth-corpus":
        paths = pipeline.run_synth_corpus(out, cfg, seed=args.seed or 0)
        print(f"wrote {len(paths)} meshes to {out}")
    elif cmd == "preprocess":
        s = pipeline.run_preprocess(args.mesh_dir, out, cfg, threads)
        print(f"preprocessed {len(s.written)} meshes, skipped {len(s.skipped)}")
        for path, err in s.skipped:
            print(f"  skipped {path}: {err}")
    elif cmd == "train":
        def progress(rec):
            if rec.epoch == 1 or rec.epoch % 10 == 0:
                log.info("epoch %d: reconstruction %.3f kl %.3f", rec.epoch, rec.reconstruction, rec.kl)
        result, ckpt = pipeline.run_train(args.sdf_dir, out, cfg, progress)
        h = result.history
        print(f"trained {len(h)} epochs: reconstruction {h[0].reconstruction:.3f} -> {h[-1].reconstruction:.3f}; "
              f"checkpoint {ckpt}")
    elif cmd == "encode":
        Z = pipeline.run_encode(args.checkpoint, args.sdf_dir, out / "latents.csv", cfg)
        print(f"encoded {len(Z)} grids to {out / 'latents.csv'}")
    elif cmd == "decode":
        paths = pipeline.run_decode(args.checkpoint, args.latents, out, cfg)
        print(f"wrote {len(paths)} files to {out}")
    elif cmd == "simulate":
        ev = pipeline.run_simulate(args.design, out, cfg)
        print(json.dumps({"height": ev.height, "feasible": ev.feasible, "status": ev.status,
                          "profile": ev.profile}))
    elif cmd == "optimize":
        run = pipeline.run_optimize(args.checkpoint, args.sdf_dir, out, cfg, threads)
        print(run.report.table(), end="")
    elif cmd == "roundtrip":
        rep = pipeline.run_roundtrip(args.mesh, out, cfg, perturb=not args.no_perturb)
        print(json.dumps({**rep.__dict__, "within_bound": rep.within_bound}))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"glidergen: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for key, value in _GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except UsageError as exc:
        print(f"glidergen: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, SimulationError) as exc:
        print(f"glidergen: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (pipeline.DataError, MeshError, SdfError, CheckpointError, OSError, ValueError) as exc:
        print(f"glidergen: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
