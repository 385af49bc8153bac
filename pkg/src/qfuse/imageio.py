"""8-bit grayscale image I/O: binary PGM (P5) natively, PNG through Pillow.

Maps live in memory as float arrays in [0, 1]; on disk they are bytes
``round(255 * value)``.
"""
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)


def to_uint8(values):
    return np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _pgm_tokens(buf, path):
    """Yield (token, end_offset) for the four header fields, skipping comments."""
    pos, n = 0, len(buf)
    for _ in range(4):
        while pos < n:
            ch = buf[pos : pos + 1]
            if ch == b"#":
                eol = buf.find(b"\n", pos)
                pos = n if eol < 0 else eol + 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(path, "truncated PGM header")
        yield buf[start:pos], pos


def read_pgm(path):
    buf = Path(path).read_bytes()
    fields = []
    end = 0
    for tok, end in _pgm_tokens(buf, path):
        fields.append(tok)
    if fields[0] != b"P5":
        raise ImageFormatError(path, f"not a binary PGM (magic {fields[0]!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise ImageFormatError(path, "non-numeric PGM header field") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 256:
        raise ImageFormatError(path, f"unsupported PGM geometry {width}x{height} maxval {maxval}")
    data = buf[end + 1 : end + 1 + width * height]
    if len(data) != width * height:
        raise ImageFormatError(path, "PGM pixel data truncated")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width)


def write_pgm(path, pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes())


def read_png(path):
    from PIL import Image

    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "1", "P", "I;16", "LA"):
                raise ImageFormatError(path, f"PNG is not grayscale (mode {img.mode})")
            return np.asarray(img.convert("L"), dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(path, f"unreadable PNG ({exc})") from None


def write_png(path, pixels):
    from PIL import Image

    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="L").save(path, format="PNG")


def read_image(path):
    """Read a PGM or PNG file (detected by magic bytes) as floats in [0, 1]."""
    path = Path(path)
    try:
        head = path.open("rb").read(8)
    except OSError as exc:
        raise ImageFormatError(path, f"cannot open ({exc.strerror})") from None
    if head.startswith(b"\x89PNG"):
        raw = read_png(path)
    elif head.startswith(b"P5"):
        raw = read_pgm(path)
    else:
        raise ImageFormatError(path, "neither P5 PGM nor PNG")
    return raw.astype(np.float32) / np.float32(255.0)


def write_image(path, values):
    """Write a [0, 1] map; the format follows the suffix (``.png`` or PGM)."""
    path = Path(path)
    pixels = to_uint8(values)
    if path.suffix.lower() == ".png":
        write_png(path, pixels)
    else:
        write_pgm(path, pixels)
