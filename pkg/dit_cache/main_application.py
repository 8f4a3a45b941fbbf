"""
Main Application for dit_cache
Parses the command line, builds the effective configuration and runs one
registered command inside a run directory
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from dit_cache import __version__
from dit_cache.common.errors import ConfigError, DimensionError, FormatError, NumericError
from dit_cache.common.run_config import RunConfig
from dit_cache.common.run_directory import RunDirectory
from dit_cache.debug_system import LogCategory, LogLevel, configure_logging, get_debug_logger
from dit_cache.tools.tool_registry import ToolRegistry

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

# CLI flag -> config key
FLAG_KEYS = {
    "seed": "run.seed",
    "out": "run.out_dir",
    "objective": "train.objective",
    "paradigm": "train.paradigm",
    "beta": "train.beta",
    "interval_c": "train.interval_c",
    "tau": "train.tau",
    "teacher_forcing": "train.teacher_forcing",
    "proxy_metric": "train.proxy_metric",
    "ltc_sampling": "train.ltc_sampling",
    "sdt_rows": "train.sdt_rows",
    "iters": "train.iters",
    "checkpoint_every": "train.checkpoint_every",
    "lr": "train.lr",
    "batch": "train.batch",
    "n_seeds": "eval.n_seeds",
    "steps": "pretrain.steps",
    "cfg_scale": "sampler.cfg_scale",
}


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dit-cache",
                                     description="Learned block caching for a toy Diffusion Transformer")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    for name, info in ToolRegistry.get_all_tools().items():
        sub = commands.add_parser(name, help=info["description"], description=info["description"])
        sub.add_argument("--config", help="INI config file")
        sub.add_argument("--seed", type=_non_negative_int)
        sub.add_argument("--out", help="run directory")
        sub.add_argument("--teacher", help="teacher checkpoint")
        sub.add_argument("--router", action="append", help="router file (repeatable for eval)")
        sub.add_argument("--objective", choices=["iepo", "ltc"])
        sub.add_argument("--paradigm", choices=["sdt", "ltc"])
        sub.add_argument("--beta", type=float)
        sub.add_argument("--interval-c", type=_non_negative_int)
        sub.add_argument("--tau", type=float)
        sub.add_argument("--teacher-forcing", metavar="BOOL")
        sub.add_argument("--proxy-metric", choices=["fro", "l1", "kl"])
        sub.add_argument("--ltc-sampling", choices=["even", "any"])
        sub.add_argument("--sdt-rows", choices=["all", "odd"])
        sub.add_argument("--iters", type=_non_negative_int)
        sub.add_argument("--checkpoint-every", type=_non_negative_int, help="router snapshot interval, 0 = off")
        sub.add_argument("--lr", type=float)
        sub.add_argument("--batch", type=_non_negative_int)
        sub.add_argument("--n-seeds", type=_non_negative_int)
        sub.add_argument("--steps", type=_non_negative_int)
        sub.add_argument("--cfg-scale", type=float)
        sub.add_argument("--with-proxy", action="store_true", help="sample: add the λ column to trajectory CSVs")
        sub.add_argument("--overwrite", action="store_true", help="reuse an --out directory that holds a manifest")
        sub.add_argument("--log-dir", help="directory for the JSON-lines debug log")
        sub.add_argument("--quiet", action="store_true", help="no progress bars, warnings only")
    return parser


def effective_config(args) -> RunConfig:
    overrides = {key: getattr(args, flag) for flag, key in FLAG_KEYS.items()}
    if args.quiet:
        overrides["run.progress"] = False
    return RunConfig.load(args.config, overrides)


class DitCacheApplication:
    """Runs one command and maps its outcome to an exit code"""

    def __init__(self, argv: Optional[List[str]] = None):
        self.args = build_parser().parse_args(argv)
        self.debug_logger = get_debug_logger()

    def run(self) -> int:
        args = self.args
        try:
            config = effective_config(args)
        except ConfigError as e:
            self.report_error(e)
            return EXIT_CONFIG

        out = Path(config.run.out_dir)
        if RunDirectory.has_manifest(out) and not args.overwrite:
            self.report_error(ConfigError([
                f"{out} already holds a run manifest; pass --overwrite or pick another --out"]))
            return EXIT_CONFIG
        configure_logging(args.log_dir or str(out / "logs"),
                          LogLevel.WARNING if args.quiet else LogLevel.INFO)
        self.debug_logger.info(LogCategory.SYSTEM, f"Starting {args.command}", {
            "out_dir": str(out), "seed": config.run.seed, "version": __version__})

        command = ToolRegistry.create_tool(args.command)
        timer = self.debug_logger.start_performance_timer(args.command)
        try:
            with RunDirectory(out, args.command, config.run.seed, config.to_ini()) as run_dir:
                run_dir.record_inputs(config=args.config, teacher=args.teacher, router=args.router)
                result = command.run(config, args, run_dir)
        except ConfigError as e:
            self.report_error(e)
            return EXIT_CONFIG
        except (FormatError, DimensionError) as e:
            self.debug_logger.log_exception(LogCategory.FILE_IO, "Unusable input file", e)
            self.report_error(e)
            return EXIT_CONFIG
        except NumericError as e:
            self.debug_logger.log_exception(LogCategory.SYSTEM, "Numeric failure", e)
            self.report_error(e)
            return EXIT_NUMERIC
        except Exception as e:
            self.debug_logger.log_exception(LogCategory.SYSTEM, f"{args.command} failed", e)
            self.report_error(e)
            return EXIT_FAILURE
        finally:
            self.debug_logger.end_performance_timer(timer)
            self.debug_logger.log_memory_usage(args.command)

        self.debug_logger.info(LogCategory.SYSTEM, f"Finished {args.command}", {"output": str(result)})
        return EXIT_OK

    @staticmethod
    def report_error(error: Exception):
        print(f"error: {error}", file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point"""
    return DitCacheApplication(argv).run()


if __name__ == "__main__":
    sys.exit(main())
