"""Binary PGM (P5) / PPM (P6) reading and writing.

Only 8-bit rasters are supported. Header comments (``#`` to end of line)
are accepted anywhere whitespace is allowed, as in netpbm.
"""

from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

_WHITESPACE = b" \t\r\n\x0b\x0c"


def _tokens(data, count, pos):
    """Pull ``count`` header tokens starting at ``pos``; returns (tokens, offset of raster)."""
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and (data[pos] in _WHITESPACE or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < n and data[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        if pos >= n:
            raise ParseError("truncated header", offset=pos)
        start = pos
        while pos < n and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
            pos += 1
        out.append((data[start:pos], start))
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or data[pos] not in _WHITESPACE:
        raise ParseError("missing whitespace after header", offset=pos)
    return out, pos + 1


def _int_token(tok, what):
    raw, offset = tok
    try:
        value = int(raw.decode("ascii"))
    except (UnicodeDecodeError, ValueError):
        raise ParseError(f"invalid {what} {raw!r}", offset=offset) from None
    if value <= 0:
        raise ParseError(f"{what} must be positive, got {value}", offset=offset)
    return value


def decode_pnm(data: bytes) -> np.ndarray:
    """Decode P5/P6 bytes to uint8 of shape (H, W) or (H, W, 3) on a 0..255 scale."""
    if len(data) < 2:
        raise ParseError("file too short for a magic number", offset=0)
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"unsupported magic {magic!r}; expected P5 or P6", offset=0)
    channels = 1 if magic == b"P5" else 3
    toks, start = _tokens(data, 3, 2)
    width = _int_token(toks[0], "width")
    height = _int_token(toks[1], "height")
    maxval = _int_token(toks[2], "maxval")
    if maxval > 255:
        raise ParseError(f"16-bit rasters (maxval {maxval}) are not supported", offset=toks[2][1])
    expected = width * height * channels
    raster = data[start:start + expected]
    if len(raster) < expected:
        raise ParseError(
            f"raster truncated: expected {expected} bytes, found {len(raster)}",
            offset=start + len(raster),
        )
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    if arr.max(initial=0) > maxval:
        bad = int(np.argmax(arr.reshape(-1) > maxval))
        raise ParseError(f"sample exceeds maxval {maxval}", offset=start + bad)
    if maxval != 255:
        arr = np.round(arr.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return arr[:, :, 0].copy() if channels == 1 else arr.copy()


def encode_pnm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise ValidationError(f"expected uint8 pixels, got {pixels.dtype}")
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValidationError(f"cannot encode array of shape {pixels.shape} as PGM/PPM")
    h, w = pixels.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


def read_pnm(path) -> np.ndarray:
    return decode_pnm(Path(path).read_bytes())


def write_pnm(path, pixels: np.ndarray) -> None:
    Path(path).write_bytes(encode_pnm(pixels))


def to_unit_range(pixels: np.ndarray) -> np.ndarray:
    """Map 0..255 samples to [-1, 1] via 2*(v/255) - 1."""
    return 2.0 * (np.asarray(pixels, dtype=np.float64) / 255.0) - 1.0


def from_unit_range(values: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_unit_range`, rounding and clamping to 0..255."""
    v = (np.asarray(values, dtype=np.float64) + 1.0) * 127.5
    return np.clip(np.rint(v), 0, 255).astype(np.uint8)


def read_image(path) -> np.ndarray:
    """Read a PPM/PGM as an H x W x C float image in [-1, 1]."""
    px = read_pnm(path)
    if px.ndim == 2:
        px = px[:, :, None]
    return to_unit_range(px)


def write_image(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[:, :, 0]
    write_pnm(path, from_unit_range(image))


def read_mask(path) -> np.ndarray:
    """Read a PGM mask; samples >= 128 become 1, the rest 0."""
    px = read_pnm(path)
    if px.ndim != 2:
        raise ParseError(f"{path}: masks must be single-channel PGM (P5)", offset=0)
    return (px >= 128).astype(np.uint8)


def write_mask(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got shape {mask.shape}")
    write_pnm(path, np.where(mask > 0, 255, 0).astype(np.uint8))
