"""Bit-exact binary containers and PNG export.

TensorFile ("LACT"): magic, format version u16, dtype code u8 (1 = f32,
2 = f64), ndim u8, dims u32 each, then the row-major little-endian
payload.

CheckpointFile ("LACK"): magic, version u16, entry count u32, then per
entry a u16 name length + UTF-8 name + embedded TensorFile bytes, then a
u32-length-prefixed JSON metadata blob.
"""

import json
import struct

import numpy as np

TENSOR_MAGIC = b"LACT"
CKPT_MAGIC = b"LACK"
FORMAT_VERSION = 1

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class FormatError(ValueError):
    pass


def tensor_bytes(arr):
    arr = np.asarray(arr)
    if arr.dtype not in _CODES:
        arr = arr.astype(np.float64)
    code = _CODES[arr.dtype]
    head = TENSOR_MAGIC + struct.pack("<HBB", FORMAT_VERSION, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + dims + np.ascontiguousarray(arr).astype(
        _DTYPES[code], copy=False).tobytes()


def tensor_from_bytes(buf, offset=0):
    """Returns (array, bytes consumed)."""
    if buf[offset:offset + 4] != TENSOR_MAGIC:
        raise FormatError("bad tensor magic")
    version, code, ndim = struct.unpack_from("<HBB", buf, offset + 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported tensor format version {version}")
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dims = struct.unpack_from(f"<{ndim}I", buf, offset + 8)
    start = offset + 8 + 4 * ndim
    count = int(np.prod(dims)) if ndim else 1
    nbytes = count * _DTYPES[code].itemsize
    if start + nbytes > len(buf):
        raise FormatError("truncated tensor payload")
    arr = np.frombuffer(buf[start:start + nbytes], dtype=_DTYPES[code])
    return arr.reshape(dims).copy(), start + nbytes - offset


def write_tensor(path, arr):
    with open(path, "wb") as f:
        f.write(tensor_bytes(arr))


def read_tensor(path):
    with open(path, "rb") as f:
        buf = f.read()
    arr, used = tensor_from_bytes(buf)
    if used != len(buf):
        raise FormatError("trailing bytes after tensor payload")
    return arr


def write_checkpoint(path, tensors, metadata):
    """tensors: ordered dict name -> array; metadata: JSON-serializable."""
    names = list(tensors)
    if len(set(names)) != len(names):
        raise FormatError("duplicate tensor names")
    out = [CKPT_MAGIC, struct.pack("<HI", FORMAT_VERSION, len(names))]
    for name in names:
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(tensor_bytes(tensors[name]))
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    out.append(struct.pack("<I", len(meta)))
    out.append(meta)
    with open(path, "wb") as f:
        f.write(b"".join(out))


def read_checkpoint(path):
    """Returns (tensors dict, metadata)."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 10
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        arr, used = tensor_from_bytes(buf, pos)
        pos += used
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}")
        tensors[name] = arr
    (mlen,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    metadata = json.loads(buf[pos:pos + mlen].decode("utf-8"))
    return tensors, metadata


def write_png(path, data, bits=16):
    """Min-max windowed grayscale PNG with a JSON sidecar recording the
    window, so quantitative work never reads the PNG."""
    from PIL import Image as PILImage

    data = np.asarray(data, dtype=np.float64)
    lo, hi = float(data.min()), float(data.max())
    scale = (hi - lo) or 1.0
    norm = (data - lo) / scale
    if bits == 16:
        img = PILImage.fromarray((norm * 65535).astype(np.uint16))
    elif bits == 8:
        img = PILImage.fromarray((norm * 255).astype(np.uint8), mode="L")
    else:
        raise ValueError("bits must be 8 or 16")
    img.save(path)
    with open(str(path) + ".json", "w") as f:
        json.dump({"window_min": lo, "window_max": hi, "bits": bits}, f)
