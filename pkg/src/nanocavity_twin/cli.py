"""Command line: ``nanocavity-twin <recipe> --config <path> --out <dir>``.

Exit codes: 0 success, 2 configuration or input error, 3 solver failure,
4 estimation failure. The output directory may also come from the
``NANOCAVITY_TWIN_OUT`` environment variable; nothing else is read from
the environment.
"""
from __future__ import annotations

import argparse
import os
import re
import sys

from .cavity import SolverError
from .config import ConfigError, load_config
from .estimation import EstimationError
from .mapio import MapFormatError
from .recipes import RECIPES, RecipeError, run_recipe

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ESTIMATION = 0, 2, 3, 4
OUT_ENV = "NANOCAVITY_TWIN_OUT"


def _pixels(text: str):
    m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
    if not m or int(m.group(1)) < 1 or int(m.group(2)) < 1:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nanocavity-twin", description="Fiber-microcavity nanowire optomechanics twin.")
    p.add_argument("recipe", choices=RECIPES)
    p.add_argument("--config", required=True, help="experiment config (.cfg, TOML dialect)")
    p.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV})")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--pixels", type=_pixels, default=None, help="override the scan resolution, fast x slow")
    p.add_argument("--input", default=None, help="input artifact for fit-noise, fit-response or map-export")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out or os.environ.get(OUT_ENV)
    if not out:
        print("error: no output directory (--out or $NANOCAVITY_TWIN_OUT)", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = cfg.with_overrides(seed=args.seed, pixels=args.pixels)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = run_recipe(args.recipe, cfg, out, input=args.input)
    except (ConfigError, RecipeError, MapFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except EstimationError as exc:
        print(f"estimation failure: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    for line in manifest["messages"]:
        print(line)
    print(f"wrote {len(manifest['artifacts'])} artifacts to {out} (config {manifest['config_hash'][:12]})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
