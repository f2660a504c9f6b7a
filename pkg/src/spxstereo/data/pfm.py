"""PFM disparity/image files and binary PGM previews."""
import numpy as np

from ..errors import PFMParseError


def _read_line(buf, pos):
    end = buf.find(b"\n", pos)
    if end < 0:
        raise PFMParseError("unterminated header line", pos)
    return buf[pos:end].decode("ascii", errors="replace").strip(), end + 1


def parse_pfm(buf):
    """Decode PFM bytes into an H x W (``Pf``) or 3 x H x W (``PF``) float32 array."""
    pos = 0
    magic, nxt = _read_line(buf, pos)
    if magic not in ("PF", "Pf"):
        raise PFMParseError(f"bad magic {magic[:8]!r}, expected 'PF' or 'Pf'", pos)
    channels = 3 if magic == "PF" else 1
    pos = nxt
    dims, nxt = _read_line(buf, pos)
    parts = dims.split()
    try:
        width, height = (int(p) for p in parts)
    except ValueError:
        raise PFMParseError(f"bad dimensions line {dims[:32]!r}", pos) from None
    if width <= 0 or height <= 0:
        raise PFMParseError(f"non-positive dimensions {width}x{height}", pos)
    pos = nxt
    scale_line, nxt = _read_line(buf, pos)
    try:
        scale = float(scale_line)
    except ValueError:
        raise PFMParseError(f"bad scale line {scale_line[:32]!r}", pos) from None
    if scale == 0 or not np.isfinite(scale):
        raise PFMParseError("scale must be a non-zero finite number", pos)
    pos = nxt
    need = width * height * channels * 4
    if len(buf) - pos < need:
        raise PFMParseError(f"truncated payload: need {need} bytes, have {len(buf) - pos}", len(buf))
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype, count=width * height * channels, offset=pos)
    data = data.astype(np.float32).reshape(height, width, channels)[::-1]
    if channels == 1:
        return np.ascontiguousarray(data[:, :, 0])
    return np.ascontiguousarray(data.transpose(2, 0, 1))


def read_pfm(path):
    with open(path, "rb") as fh:
        return parse_pfm(fh.read())


def encode_pfm(arr):
    arr = np.asarray(arr)
    if arr.ndim == 2:
        magic, rows = b"Pf", arr[:, :, None]
    elif arr.ndim == 3 and arr.shape[0] == 3:
        magic, rows = b"PF", arr.transpose(1, 2, 0)
    else:
        raise ValueError(f"PFM holds H x W or 3 x H x W maps, got shape {arr.shape}")
    height, width = rows.shape[:2]
    header = magic + b"\n" + f"{width} {height}\n".encode() + b"-1.0\n"
    payload = np.ascontiguousarray(rows[::-1], dtype="<f4").tobytes()
    return header + payload


def write_pfm(arr, path):
    """Write little-endian PFM (scale -1.0), rows bottom to top."""
    with open(path, "wb") as fh:
        fh.write(encode_pfm(arr))


def to_gray8(arr, scale=None):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.mean(axis=0)
    if scale is None:
        top = np.nanmax(arr) if arr.size else 0.0
        scale = 255.0 / top if top > 0 else 1.0
    return np.clip(np.round(np.nan_to_num(arr) * scale), 0, 255).astype(np.uint8)


def write_pgm(arr, path, scale=None):
    """Binary P5 preview; values are multiplied by ``scale`` (default: max maps to 255) and clamped."""
    img = to_gray8(arr, scale)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not buf[end:end + 1].isspace():
            end += 1
        tokens.append(buf[pos:end].decode())
        pos = end
    if tokens[0] != "P5":
        raise ValueError("not a binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=pos + 1).reshape(h, w)
