"""Multi-frame XYZ files: atom count, a ``frame=<k>`` comment, then ``El x y z`` lines."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ParseError
from .geometry import ELEMENTS

DECIMALS = 9


def format_xyz(elements, frames, comments=None):
    frames = np.asarray(frames, dtype=np.float64).reshape(-1, len(elements), 3)
    out = []
    for k, frame in enumerate(frames):
        out.append(str(len(elements)))
        out.append(comments[k] if comments is not None else f"frame={k}")
        for e, (x, y, z) in zip(elements, frame):
            out.append(f"{e} {x:.{DECIMALS}f} {y:.{DECIMALS}f} {z:.{DECIMALS}f}")
    return "\n".join(out) + ("\n" if out else "")


def write_xyz(path, elements, frames, comments=None):
    Path(path).write_text(format_xyz(elements, frames, comments))


def parse_xyz(text):
    """Returns (elements, frames (T, n, 3)); an empty text gives an empty trajectory."""
    lines = text.splitlines()
    elements = None
    frames = []
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        try:
            count = int(lines[i].strip())
        except ValueError:
            raise ParseError(f"expected an atom count, got {lines[i]!r}", i + 1) from None
        if count < 1:
            raise ParseError("atom count must be positive", i + 1)
        els, coords = [], np.zeros((count, 3))
        for a in range(count):
            ln = i + 2 + a
            if ln >= len(lines):
                raise ParseError(f"frame declares {count} atoms but the file ends early", ln + 1)
            parts = lines[ln].split()
            if len(parts) != 4:
                raise ParseError(f"expected 'El x y z', got {lines[ln]!r}", ln + 1)
            if parts[0] not in ELEMENTS:
                raise ParseError(f"unknown element {parts[0]!r}", ln + 1)
            try:
                coords[a] = [float(v) for v in parts[1:]]
            except ValueError:
                raise ParseError(f"bad coordinate in {lines[ln]!r}", ln + 1) from None
            els.append(parts[0])
        if elements is None:
            elements = tuple(els)
        elif tuple(els) != elements:
            raise ParseError("element order differs from the first frame", i + 1)
        frames.append(coords)
        i += 2 + count
    if elements is None:
        return (), np.zeros((0, 0, 3))
    return elements, np.stack(frames)


def read_xyz(path):
    return parse_xyz(Path(path).read_text())
