#!/usr/bin/env python3
"""
Peelplan fixture writer.

Writes the built-in reference scenes as job directories (meshes plus
job.json) that the ``peelplan`` command line can run directly.

Usage:
    python scripts/make_fixtures.py --out fixtures
    python scripts/make_fixtures.py --out fixtures --scene forest --scene internal_void
    python scripts/make_fixtures.py --list
"""

import argparse
import sys
from pathlib import Path

from peelplan.geometry.fixtures import SCENES, write_job


def main() -> int:
    parser = argparse.ArgumentParser(description="Write reference planning jobs")
    parser.add_argument("--out", type=Path, default=Path("fixtures"), help="target directory")
    parser.add_argument(
        "--scene",
        action="append",
        choices=sorted(SCENES),
        help="scene to write (repeatable, default: all)",
    )
    parser.add_argument("--list", action="store_true", help="list scene names and exit")
    args = parser.parse_args()

    if args.list:
        for name in sorted(SCENES):
            print(name)
        return 0

    for name in args.scene or sorted(SCENES):
        scene = SCENES[name]()
        directory = args.out / name
        path = write_job(scene, directory, output_dir=Path("out") / name)
        print(f"Wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
