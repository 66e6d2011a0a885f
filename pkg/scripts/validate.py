#!/usr/bin/env python3
"""
torusfit Environment Validation

Checks that the numerical stack imports, that the output directory is
writable and that run configs load. Exits non-zero if a critical check
fails, so a broken setup is caught before a long sweep or probe run.

Usage:
    python scripts/validate.py                      # every config in config/
    python scripts/validate.py config/log_box_probe.json --output /tmp/out
"""

import argparse
import importlib
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

REPO_ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = REPO_ROOT / 'config'
REQUIRED_PACKAGES = ('numpy', 'scipy', 'matplotlib')

# Run from a checkout without installing
sys.path.insert(0, str(REPO_ROOT / 'src'))


class Colors:
    GREEN = '\033[92m'
    YELLOW = '\033[93m'
    RED = '\033[91m'
    BOLD = '\033[1m'
    END = '\033[0m'


def ok(msg): print(f"{Colors.GREEN}✓{Colors.END} {msg}")
def warn(msg): print(f"{Colors.YELLOW}⚠{Colors.END} {msg}")
def err(msg): print(f"{Colors.RED}✗{Colors.END} {msg}")


def validate_packages(packages: Sequence[str] = REQUIRED_PACKAGES) -> bool:
    """Import the numerical stack and report versions."""
    missing = []
    for name in packages:
        try:
            module = importlib.import_module(name)
        except ImportError:
            missing.append(name)
            continue
        ok(f"{name} {getattr(module, '__version__', '?')}")
    if missing:
        err(f"Missing packages: {', '.join(missing)}")
        print("  To fix, run:")
        print("    pip install -e .")
        return False
    return True


def validate_output_dir(output_dir: Path) -> bool:
    """The output directory (and its logs/) must be creatable and writable."""
    try:
        logs_dir = output_dir / 'logs'
        logs_dir.mkdir(parents=True, exist_ok=True)
        probe = logs_dir / '.write_test'
        probe.write_text('ok')
        probe.unlink()
    except OSError as e:
        err(f"Output directory not writable: {output_dir} ({e})")
        print("  Set --output or TORUSFIT_OUTPUT_DIR to a writable directory")
        return False
    ok(f"Output directory writable: {output_dir}")
    return True


def validate_config(path: Path) -> bool:
    """Load one run config; warnings are printed but do not fail the check."""
    from torusfit.utils.config import load_config

    try:
        config = load_config(path)
    except ValueError as e:
        err(f"{path.name}: {e}")
        return False
    system = config.system()
    ok(f"{path.name}: {system.name} (n={system.n}), family={config['model']['family']}, "
       f"label={config['objective']['label']}")
    for message in config.warnings:
        warn(f"  {message}")
    return True


def find_configs(config_dir: Path = CONFIG_DIR) -> List[Path]:
    """Run configs in a directory (the JSON schema is not a run config)."""
    return sorted(p for p in config_dir.glob('*.json') if not p.name.endswith('.schema.json'))


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(description='Validate the torusfit environment and run configs')
    parser.add_argument('configs', nargs='*', help='Config files (default: every config in config/)')
    parser.add_argument('--output', help='Output directory to check (default: $TORUSFIT_OUTPUT_DIR or ./output)')
    args = parser.parse_args(argv)

    print()
    print(f"{Colors.BOLD}torusfit Environment Validation{Colors.END}")
    print("=" * 40)
    print()

    critical_ok = validate_packages()
    output_dir = Path(args.output or os.environ.get('TORUSFIT_OUTPUT_DIR', 'output'))
    if not validate_output_dir(output_dir):
        critical_ok = False

    if critical_ok:
        configs = [Path(p) for p in args.configs] if args.configs else find_configs()
        if not configs:
            warn(f"No configs found in {CONFIG_DIR}")
        for path in configs:
            if not validate_config(path):
                critical_ok = False

    print()
    print("=" * 40)

    if critical_ok:
        print(f"{Colors.GREEN}{Colors.BOLD}Validation passed!{Colors.END}")
        return 0
    print(f"{Colors.RED}{Colors.BOLD}Validation failed!{Colors.END}")
    print("Fix the errors above before running torusfit.")
    return 1


if __name__ == '__main__':
    sys.exit(main())
