"""Command-line entry point.

Exit codes: 0 on success, 2 on usage or configuration errors, 1 when a run
fails. Configuration precedence: ``--set``/``--seed`` overrides beat the
``--config`` file, which beats the built-in defaults.
"""

from __future__ import annotations

import argparse
import logging
import subprocess
import sys
from pathlib import Path

from . import __version__, config
from .config import ConfigError

logger = logging.getLogger("gcnenhance")


class UsageError(Exception):
    """Bad command-line usage detected after argument parsing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def version_string() -> str:
    """Package version plus ``git describe`` of the source tree when available."""
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5, check=True,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+g{desc}" if desc else __version__


def _existing(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _effective(args) -> dict:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = config.load_config(_existing(args.config, "config file"), overrides)
    return cfg


def _log_header(cfg: dict, out_dir: Path | None = None) -> None:
    logger.info("gcnenhance %s", version_string())
    logger.info("seed = %d", cfg["seed"])
    for line in config.render(cfg).splitlines():
        logger.info("config: %s", line)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.txt").write_text(
            f"# gcnenhance {version_string()}\n" + config.render(cfg) + "\n"
        )


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    from .acoustics import generate_dataset

    cfg = _effective(args)
    speech = _existing(args.speech_dir, "speech directory")
    noise = _existing(args.noise_dir, "noise directory")
    out = Path(args.out)
    _log_header(cfg, out)
    manifests = generate_dataset(config.sim_config(cfg), speech, noise, out)
    for split, path in manifests.items():
        print(f"{split}: {path}")
    return 0


def cmd_train(args) -> int:
    from .train import train

    cfg = _effective(args)
    train_manifest = _existing(args.train_manifest, "training manifest")
    dev_manifest = _existing(args.dev_manifest, "dev manifest")
    resume = _existing(args.resume, "checkpoint")
    out = Path(args.out)
    _log_header(cfg, out)
    result = train(config.train_config(cfg), config.model_config(cfg), config.stft_params(cfg),
                   train_manifest, dev_manifest, out, resume=resume)
    print(f"checkpoint: {result.checkpoint}")
    return 0


def cmd_evaluate(args) -> int:
    from .metrics import evaluate_manifest
    from .plotting import adjacency_heatmap

    cfg = _effective(args)
    ckpt = _existing(args.checkpoint, "checkpoint")
    manifest = _existing(args.manifest, "manifest")
    out = Path(args.out)
    _log_header(cfg, out)
    pesq_cmd = args.pesq_cmd if args.pesq_cmd is not None else cfg["pesq_cmd"]
    report = evaluate_manifest(
        ckpt, manifest, cfg["metrics"], pesq_cmd or None,
        force_identity_mask=args.identity_mask,
        dump_adjacency=args.dump_adjacency,
        max_frames=cfg["max_frames"],
    )
    paths = report.write(out)
    if args.dump_adjacency:
        import numpy as np

        for txt in sorted(Path(args.dump_adjacency).glob("*.txt")):
            adjacency_heatmap(np.loadtxt(txt, ndmin=2), txt.with_suffix(".png"), txt.stem)
    print(paths["table"].read_text(), end="")
    print(f"report: {paths['report']}")
    return 0


def cmd_enhance(args) -> int:
    from .train import enhance_file

    cfg = _effective(args)
    ckpt = _existing(args.checkpoint, "checkpoint")
    src = _existing(args.input, "input file")
    _log_header(cfg)
    enhance_file(ckpt, src, args.output, cfg["max_frames"], cfg["wav_format"])
    print(f"wrote {args.output}")
    return 0


def cmd_ablate(args) -> int:
    from .train import ablate

    grid = _existing(args.grid, "grid file")
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg, axis, values = config.load_grid(grid, overrides)
    for key, flag in (("train_manifest", args.train_manifest), ("dev_manifest", args.dev_manifest),
                      ("out_dir", args.out)):
        if flag:
            cfg[key] = flag
    for key in ("train_manifest", "dev_manifest", "out_dir"):
        if not cfg[key]:
            raise UsageError(f"ablation needs {key} (grid file key or command-line flag)")
    train_manifest = _existing(cfg["train_manifest"], "training manifest")
    dev_manifest = _existing(cfg["dev_manifest"], "dev manifest")
    out = Path(cfg["out_dir"])
    _log_header(cfg, out)
    logger.info("grid axis %s = %s", axis, "; ".join(values))
    result = ablate(cfg, axis, values, train_manifest, dev_manifest, out)
    print(result.table)
    return 0


def cmd_make_corpus(args) -> int:
    from .synth import write_corpus

    speech, noise = write_corpus(args.out, args.n_speech, args.n_noise, args.seconds, seed=args.seed or 0)
    print(f"speech: {speech}\nnoise: {noise}")
    return 0


def cmd_config(args) -> int:
    print(config.render(_effective(args)))
    return 0


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, with_config: bool = True) -> None:
    if with_config:
        p.add_argument("--config", metavar="FILE", help="flat 'key = value' config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable; beats --config)")
    p.add_argument("--seed", type=int, help="random seed (same as --set seed=N)")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")


def build_parser() -> argparse.ArgumentParser:
    epilog = (
        "Precedence: --set/--seed > --config file > defaults. Unknown keys are errors.\n"
        "Exit codes: 0 success, 2 usage/config error, 1 runtime failure.\n\n"
        "Config keys and defaults:\n" + config.describe()
    )
    parser = _Parser(
        prog="gcnenhance",
        description="Multi-channel speech enhancement with a graph-convolutional U-Net.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"gcnenhance {version_string()}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a multi-channel dataset and write manifests")
    _common(p)
    p.add_argument("--speech-dir", required=True, help="directory of 16 kHz speech WAVs")
    p.add_argument("--noise-dir", required=True, help="directory of 16 kHz noise WAVs")
    p.add_argument("--out", required=True, help="output directory (one subdirectory per split)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a model from manifests")
    _common(p)
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--dev-manifest", help="dev manifest for validation loss and early stopping")
    p.add_argument("--out", required=True, help="run directory for logs and checkpoints")
    p.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint with optimizer state")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score noisy and enhanced signals of a manifest")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default="eval", help="report directory (default: eval)")
    p.add_argument("--pesq-cmd", help="external PESQ command; overrides the pesq_cmd key")
    p.add_argument("--dump-adjacency", metavar="DIR", help="write each example's adjacency matrix and heatmap")
    p.add_argument("--identity-mask", action="store_true", help="bypass the network (mask forced to 1+0i)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("enhance", help="enhance one multi-channel WAV file")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True, help="multi-channel input WAV")
    p.add_argument("--out", dest="output", required=True, help="mono output WAV")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("ablate", help="train and compare one model per grid value")
    _common(p, with_config=False)
    p.add_argument("--grid", required=True, help="config file with one 'grid.<key> = a; b' line")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--train-manifest")
    p.add_argument("--dev-manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("make-corpus", help="write a small synthetic speech/noise corpus for demos")
    _common(p, with_config=False)
    p.add_argument("--out", required=True)
    p.add_argument("--n-speech", type=int, default=8)
    p.add_argument("--n-noise", type=int, default=4)
    p.add_argument("--seconds", type=float, default=5.0)
    p.set_defaults(func=cmd_make_corpus)

    p = sub.add_parser("config", help="print the effective configuration")
    _common(p)
    p.set_defaults(func=cmd_config)

    usages = "\n".join(
        "  " + " ".join(sp.format_usage().split()[1:]) for sp in sub.choices.values()
    )
    parser.epilog = "Subcommands and flags:\n" + usages + "\n\n" + epilog
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_help()
        return 2
    level = logging.WARNING if args.verbose == 0 and args.command in ("config",) else (
        logging.DEBUG if args.verbose > 1 else logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"gcnenhance {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        logger.debug("traceback", exc_info=True)
        print(f"gcnenhance {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
