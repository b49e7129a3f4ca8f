"""Command line entry point: render a sidecar to a GIF or strip image."""

from __future__ import annotations

import argparse
import sys

from .render import RenderSpec, SidecarError, render


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="render",
        description="Render a joint-position sidecar (*.pos.json) to a GIF "
                    "animation or a horizontal strip image.")
    p.add_argument("--in", dest="input", required=True,
                   help="input sidecar path (*.pos.json)")
    p.add_argument("--out", dest="output", required=True,
                   help="output path; format follows the extension "
                        "(.gif for animation, .png recommended for --strip)")
    p.add_argument("--strip", action="store_true",
                   help="render one horizontal strip image instead of an "
                        "animation")
    p.add_argument("--stride", type=int, default=1, metavar="k",
                   help="render every k-th frame (default 1)")
    p.add_argument("--elev", type=float, default=15.0,
                   help="view elevation in degrees (default 15)")
    p.add_argument("--azim", type=float, default=-60.0,
                   help="view azimuth in degrees (default -60)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = RenderSpec(input=args.input, output=args.output,
                          stride=args.stride, elev=args.elev,
                          azim=args.azim, strip=args.strip)
        out = render(spec)
    except SidecarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
