"""Regenerate the built-in glyph atlas shipped in ``src/lenstext/data``.

Each of the 36 symbols is rendered large with a sans-serif TrueType font,
cropped to its ink box and downsampled so the ink spans exactly the cell
height.  Run once; the outputs are checked in so the package never needs a
font at runtime.

    python tools/build_atlas.py [--font /path/to/font.ttf]
"""

import argparse
import json
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

ORDER = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
CELL_HEIGHT = 40
CELL_PAD = 2
DEFAULT_FONT = "/usr/share/fonts/truetype/dejavu/DejaVuSans-Bold.ttf"
OUT_DIR = Path(__file__).resolve().parents[1] / "src" / "lenstext" / "data"


def render_glyph(font: ImageFont.FreeTypeFont, ch: str) -> np.ndarray:
    canvas = Image.new("L", (400, 400), 0)
    ImageDraw.Draw(canvas).text((100, 100), ch, fill=255, font=font)
    a = np.asarray(canvas)
    rows = np.flatnonzero(a.max(axis=1) > 0)
    cols = np.flatnonzero(a.max(axis=0) > 0)
    crop = canvas.crop((cols[0], rows[0], cols[-1] + 1, rows[-1] + 1))
    width = max(1, round(crop.width * CELL_HEIGHT / crop.height))
    small = np.asarray(crop.resize((width, CELL_HEIGHT), Image.BOX), dtype=np.float64)
    return np.clip(small, 0, 255)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--font", default=DEFAULT_FONT)
    args = parser.parse_args()

    font = ImageFont.truetype(args.font, 200)
    glyphs = [render_glyph(font, ch) for ch in ORDER]
    cell_width = max(g.shape[1] for g in glyphs) + 2 * CELL_PAD
    strip = np.zeros((CELL_HEIGHT, cell_width * len(ORDER)), dtype=np.uint8)
    for i, g in enumerate(glyphs):
        x = i * cell_width + CELL_PAD
        strip[:, x : x + g.shape[1]] = np.rint(g).astype(np.uint8)

    OUT_DIR.mkdir(parents=True, exist_ok=True)
    header = f"P5\n{strip.shape[1]} {strip.shape[0]}\n255\n".encode("ascii")
    (OUT_DIR / "glyphs.pgm").write_bytes(header + strip.tobytes())
    meta = {"cell_width": cell_width, "cell_height": CELL_HEIGHT, "order": ORDER}
    (OUT_DIR / "glyphs.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"wrote {len(ORDER)} glyphs, cell {cell_width}x{CELL_HEIGHT}")


if __name__ == "__main__":
    main()
