"""Named-array archive: a text manifest followed by raw little-endian payloads.

Layout (single file):

    dawgan-archive v1
    meta.<key>=<value>            # free-form strings, newline-free
    array.<name>=<dtype>:<d0>x<d1>x...
    end-header
    <payload bytes, arrays concatenated in sorted-name order>

Array names are sorted and metadata keys are sorted, so writing the same
content always produces the same bytes.
"""

import io

import numpy as np

from .errors import FormatError
from .fileio import write_bytes_atomic

MAGIC = "dawgan-archive v1"

DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "int64": np.dtype("<i8"),
    "uint8": np.dtype("u1"),
}
_DTYPE_NAMES = {np.dtype(v).newbyteorder("="): k for k, v in DTYPES.items()}


def _dtype_name(arr):
    key = arr.dtype.newbyteorder("=")
    if key not in _DTYPE_NAMES:
        raise FormatError(f"unsupported archive dtype {arr.dtype} (allowed: {sorted(DTYPES)})")
    return _DTYPE_NAMES[key]


def save_archive(path, arrays, metadata=None):
    """Write name->ndarray plus string metadata to `path` atomically."""
    metadata = metadata or {}
    header = io.StringIO()
    header.write(MAGIC + "\n")
    for key in sorted(metadata):
        value = str(metadata[key])
        if "\n" in key or "\n" in value:
            raise FormatError(f"metadata entry {key!r} contains a newline")
        header.write(f"meta.{key}={value}\n")
    names = sorted(arrays)
    for name in names:
        arr = np.asarray(arrays[name])
        dims = "x".join(str(d) for d in arr.shape) if arr.ndim else "scalar"
        header.write(f"array.{name}={_dtype_name(arr)}:{dims}\n")
    header.write("end-header\n")

    blob = io.BytesIO()
    blob.write(header.getvalue().encode("utf-8"))
    for name in names:
        arr = np.ascontiguousarray(np.asarray(arrays[name]))
        blob.write(arr.astype(DTYPES[_dtype_name(arr)], copy=False).tobytes())
    write_bytes_atomic(path, blob.getvalue())


def load_archive(path):
    """Read an archive; returns (arrays, metadata)."""
    with open(path, "rb") as fh:
        data = fh.read()

    newline = data.find(b"\n")
    if newline < 0 or data[:newline].decode("utf-8", "replace") != MAGIC:
        raise FormatError(f"{path}: not a {MAGIC!r} file")
    pos = newline + 1
    metadata = {}
    decls = []
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise FormatError(f"{path}: header never terminated with end-header")
        line = data[pos:end].decode("utf-8")
        pos = end + 1
        if line == "end-header":
            break
        if "=" not in line:
            raise FormatError(f"{path}: malformed header line {line!r}")
        key, value = line.split("=", 1)
        if key.startswith("meta."):
            metadata[key[len("meta."):]] = value
        elif key.startswith("array."):
            decls.append((key[len("array."):], value))
        else:
            raise FormatError(f"{path}: unknown header entry {key!r}")

    arrays = {}
    for name, decl in decls:  # payloads follow declaration order
        if ":" not in decl:
            raise FormatError(f"{path}: malformed array declaration for {name!r}")
        dtype_name, dims = decl.split(":", 1)
        if dtype_name not in DTYPES:
            raise FormatError(f"{path}: array {name!r} has unknown dtype {dtype_name!r}")
        dtype = DTYPES[dtype_name]
        shape = () if dims == "scalar" else tuple(int(d) for d in dims.split("x"))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * dtype.itemsize
        if pos + nbytes > len(data):
            raise FormatError(f"{path}: truncated payload for array {name!r}")
        arrays[name] = np.frombuffer(data[pos:pos + nbytes], dtype=dtype).reshape(shape).copy()
        pos += nbytes
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes after declared payloads")
    return arrays, metadata
