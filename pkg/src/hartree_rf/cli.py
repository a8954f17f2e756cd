import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from .config import LabSettings, get_settings, load_run_config
from .errors import HartreeError
from .lab import HartreeLab, RunWriter
from .lab.persistence import to_jsonable
from .tools import DiagnosticsTools, EquilibriumTools, EvolutionTools, VerificationTools
from .tools.base import Command

# Get logger (logging is configured in __main__.py)
logger = logging.getLogger(__name__)

TOOL_CLASSES = (EquilibriumTools, VerificationTools, EvolutionTools, DiagnosticsTools)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def list_commands() -> List[Command]:
    """All subcommands, in tool order."""
    commands: List[Command] = []
    for tool in TOOL_CLASSES:
        commands.extend(tool(None).get_commands())  # type: ignore[arg-type]
    return commands


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hartree-rf",
        description="Spectral Monte-Carlo lab for the Hartree equation for random fields",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in list_commands():
        sub = subparsers.add_parser(command.name, help=command.description, description=command.description)
        sub.add_argument("--config", type=Path, default=None, help="TOML run configuration")
        sub.add_argument("--out", type=Path, default=None, help="run directory")
        sub.add_argument("--seed", type=int, default=None, help="64-bit seed override")
        sub.add_argument("--workers", type=int, default=None, help="FFT worker threads")
        sub.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted-path config override, repeatable",
        )
    return parser


def _handlers(lab: HartreeLab) -> Dict[str, Callable]:
    registry: Dict[str, Callable] = {}
    for tool_class in TOOL_CLASSES:
        tool = tool_class(lab)
        for command in tool.get_commands():
            registry[command.name] = getattr(tool, command.handler)
    return registry


def _attach_run_log(path: Path, level: str) -> logging.Handler:
    handler = logging.FileHandler(path, encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler.setLevel(level.upper())
    package = logging.getLogger("hartree_rf")
    if package.level == logging.NOTSET:
        package.setLevel(level.upper())
    package.addHandler(handler)
    return handler


def _detach_run_log(handler: logging.Handler) -> None:
    logging.getLogger("hartree_rf").removeHandler(handler)
    handler.close()


def dispatch(argv: Optional[Sequence[str]] = None, settings: Optional[LabSettings] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as e:
        return int(e.code or 0)

    handler: Optional[logging.Handler] = None
    try:
        settings = settings or get_settings()
        if args.workers is not None:
            settings = settings.model_copy(update={"workers": args.workers})
        config = load_run_config(args.config, args.override, args.seed)
        root = Path(config.output.directory or settings.output_root)
        writer = RunWriter(args.command, config, root, args.out, args.override)
        handler = _attach_run_log(writer.log_path, settings.log_level)

        logger.info(f"🚀 hartree-rf {args.command} -> {writer.directory}")
        lab = HartreeLab(config, settings)
        lab.describe()
        summary = _handlers(lab)[args.command](writer)
        logger.info(f"✅ {args.command} finished")
        # the run log is hashed into the manifest, so it must be closed first
        _detach_run_log(handler)
        handler = None
        writer.register_log()
        writer.write_manifest(summary)
        print(json.dumps(to_jsonable({"command": args.command, **summary}), sort_keys=True))
        return 0
    except HartreeError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        print(f"hartree-rf: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.error(f"❌ Unexpected error in {args.command}: {e}", exc_info=True)
        print(f"hartree-rf: unexpected error: {e}", file=sys.stderr)
        return 3
    finally:
        if handler is not None:
            _detach_run_log(handler)
