"""On-disk formats: ``.sect`` float32 tensors, binary PPM/PGM, JSON manifests."""

import json
import struct
from pathlib import Path

import numpy as np

SECT_MAGIC = b"SECT"
SECT_VERSION = 1
DTYPE_FLOAT32 = 0


class FormatError(ValueError):
    """A file did not parse as the expected format; carries the path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


def encode_tensor(array):
    a = np.asarray(array, dtype="<f4", order="C")
    if a.ndim > 255:
        raise ValueError("too many dimensions")
    header = SECT_MAGIC + struct.pack("<IBB", SECT_VERSION, DTYPE_FLOAT32, a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    return header + a.tobytes()


def decode_tensor(data, path="<bytes>"):
    if len(data) < 10 or data[:4] != SECT_MAGIC:
        raise FormatError(path, "not a SECT tensor (bad magic)")
    version, dtype, ndim = struct.unpack_from("<IBB", data, 4)
    if version != SECT_VERSION:
        raise FormatError(path, f"unsupported SECT version {version}")
    if dtype != DTYPE_FLOAT32:
        raise FormatError(path, f"unsupported SECT dtype {dtype}")
    off = 10 + 4 * ndim
    if len(data) < off:
        raise FormatError(path, "truncated SECT header")
    dims = struct.unpack_from(f"<{ndim}I", data, 10)
    count = int(np.prod(dims, dtype=np.int64))
    if len(data) - off != 4 * count:
        raise FormatError(path, f"payload is {len(data) - off} bytes, expected {4 * count}")
    return np.frombuffer(data, dtype="<f4", offset=off).reshape(dims).astype(np.float32)


def write_tensor(path, array):
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path):
    return decode_tensor(Path(path).read_bytes(), path)


def _netpbm_header(data, path, magic):
    # magic, width, height, maxval separated by whitespace, then one whitespace byte
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(path, "truncated header")
        fields.append(data[start:pos])
    if fields[0] != magic:
        raise FormatError(path, f"expected {magic.decode()} file")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise FormatError(path, "malformed header") from None
    if maxval != 255:
        raise FormatError(path, "only 8-bit files are supported")
    return w, h, pos + 1


def image_to_bytes(image):
    """Quantise a [0, 1] RGB image to 8 bits."""
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, image):
    pix = image_to_bytes(image)
    h, w, _ = pix.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + pix.tobytes())


def read_ppm(path):
    """RGB image as float64 in [0, 1]."""
    data = Path(path).read_bytes()
    w, h, off = _netpbm_header(data, path, b"P6")
    if len(data) - off != w * h * 3:
        raise FormatError(path, "pixel payload has the wrong size")
    pix = np.frombuffer(data, dtype=np.uint8, offset=off).reshape(h, w, 3)
    return pix.astype(np.float64) / 255.0


def write_pgm(path, mask):
    m = np.asarray(mask)
    if m.min(initial=0) < 0 or m.max(initial=0) > 255:
        raise ValueError("mask values must fit in 8 bits")
    h, w = m.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + m.astype(np.uint8).tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    w, h, off = _netpbm_header(data, path, b"P5")
    if len(data) - off != w * h:
        raise FormatError(path, "pixel payload has the wrong size")
    return np.frombuffer(data, dtype=np.uint8, offset=off).reshape(h, w).copy()


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(path, f"invalid JSON: {e}") from None
