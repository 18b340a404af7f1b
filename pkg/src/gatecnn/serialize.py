"""Binary wire formats for keys, encrypted images and score files.

Every file starts with a fixed 16-byte header:

    offset  size  field
    0       4     magic "GCN1"
    4       1     record kind: K key, I image, S scores
    5       1     preset id (0 toy, 1 demo, 255 custom)
    6       1     backend id (0 clear, 1 gsw)
    7       1     reserved, zero
    8       4     u32 LE ct_dim
    12      4     u32 LE log_q

followed by length-prefixed sections (u32 LE byte count, then payload):

    section 1  params block: u32 lattice_dim, f64 noise_stddev, f64 noise_budget
    section 2  kind-specific metadata (see _*_META below)
    section 3  payload

Matrix and vector entries are row-major unsigned little-endian integers
of ceil(log_q / 8) bytes.  A gsw ciphertext record is its f64 noise
estimate followed by ct_dim^2 entries; clear payloads pack one bit per
encoded bit, LSB-first within bytes.  Round trips are bit-exact.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .cnn import EncImage, EncScores
from .errors import ModelFormatError, ParameterError
from .fhe_core import (
    Ciphertext,
    EncBit,
    FheParams,
    SecretKey,
    _PRESET_IDS,
)
from .fixedpoint import FixedPointCipher, FixedPointFormat
from .gates import BitVector

__all__ = [
    "save_secret_key",
    "load_secret_key",
    "save_enc_image",
    "load_enc_image",
    "save_scores",
    "load_scores",
    "read_header",
    "atomic_write_bytes",
]

MAGIC = b"GCN1"
KIND_KEY = ord("K")
KIND_IMAGE = ord("I")
KIND_SCORES = ord("S")

_BACKEND_IDS = {"clear": 0, "gsw": 1}
_BACKEND_NAMES = {v: k for k, v in _BACKEND_IDS.items()}
_ID_PRESETS = {v: k for k, v in _PRESET_IDS.items()}


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".gcn-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _entry_size(log_q: int) -> int:
    return (log_q + 7) // 8


def _pack_entries(values: np.ndarray, esize: int) -> bytes:
    flat = np.ascontiguousarray(values, dtype=np.int64).ravel()
    shifts = np.arange(esize, dtype=np.int64) * 8
    return ((flat[:, None] >> shifts) & 0xFF).astype(np.uint8).tobytes()


def _unpack_entries(blob: bytes, count: int, esize: int) -> np.ndarray:
    raw = np.frombuffer(blob, dtype=np.uint8, count=count * esize)
    raw = raw.reshape(count, esize).astype(np.int64)
    shifts = np.arange(esize, dtype=np.int64) * 8
    return (raw << shifts).sum(axis=1)


def _header(kind: int, params: FheParams, backend_tag: str) -> bytes:
    preset_id = _PRESET_IDS.get(params.preset, 255)
    return MAGIC + struct.pack(
        "<BBBBII", kind, preset_id, _BACKEND_IDS[backend_tag], 0,
        params.ct_dim, params.log_q)


def _params_section(params: FheParams) -> bytes:
    body = struct.pack("<Idd", params.lattice_dim, params.noise_stddev,
                       params.noise_budget)
    return struct.pack("<I", len(body)) + body


def _section(body: bytes) -> bytes:
    return struct.pack("<I", len(body)) + body


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def bytes(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError("file truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.bytes(struct.calcsize(fmt)))

    def section(self) -> bytes:
        (length,) = self.unpack("<I")
        return self.bytes(length)


def read_header(path):
    """Parse a file's header; returns (kind, params, backend_tag)."""
    with open(path, "rb") as fh:
        data = fh.read()
    return _parse_header(_Reader(data))[:3]


def _parse_header(rd: _Reader):
    if rd.bytes(4) != MAGIC:
        raise ModelFormatError("not a gatecnn binary file (bad magic)")
    kind, preset_id, backend_id, _, ct_dim, log_q = rd.unpack("<BBBBII")
    if backend_id not in _BACKEND_NAMES:
        raise ModelFormatError(f"unknown backend id {backend_id}")
    sect = _Reader(rd.section())
    lattice_dim, stddev, budget = sect.unpack("<Idd")
    params = FheParams(lattice_dim, log_q, stddev, budget,
                       preset=_ID_PRESETS.get(preset_id, "custom"))
    if params.ct_dim != ct_dim:
        raise ModelFormatError(
            f"header ct_dim {ct_dim} disagrees with (n+1)*log_q = {params.ct_dim}")
    return kind, params, _BACKEND_NAMES[backend_id], rd


# ----------------------------------------------------------------------
# secret keys
# ----------------------------------------------------------------------

def save_secret_key(sk: SecretKey, path) -> None:
    params = sk.params
    esize = _entry_size(params.log_q)
    blob = (_header(KIND_KEY, params, "gsw")
            + _params_section(params)
            + _section(_pack_entries(sk.secret_vector, esize)))
    atomic_write_bytes(path, blob)


def load_secret_key(path) -> SecretKey:
    with open(path, "rb") as fh:
        rd = _Reader(fh.read())
    kind, params, _, rd = _parse_header(rd)
    if kind != KIND_KEY:
        raise ModelFormatError("file is not a secret key")
    esize = _entry_size(params.log_q)
    vec = _unpack_entries(rd.section(), params.lattice_dim + 1, esize)
    return SecretKey(vec, params)


# ----------------------------------------------------------------------
# encrypted bit payloads
# ----------------------------------------------------------------------

def _write_bits(bits, backend) -> bytes:
    if backend.tag == "clear":
        if backend.lanes != 1:
            raise ParameterError("clear files store single-lane data only")
        packed = bytearray((len(bits) + 7) // 8)
        for i, b in enumerate(bits):
            if b.clear_value:
                packed[i // 8] |= 1 << (i % 8)
        return bytes(packed)
    esize = _entry_size(backend.params.log_q)
    chunks = []
    for b in bits:
        ct = b.ciphertext
        chunks.append(struct.pack("<d", ct.noise_estimate))
        chunks.append(_pack_entries(ct.matrix, esize))
    return b"".join(chunks)


def _read_bits(rd: _Reader, count: int, backend):
    if backend.tag == "clear":
        blob = rd.bytes((count + 7) // 8)
        return [backend.from_mask((blob[i // 8] >> (i % 8)) & 1) for i in range(count)]
    params = backend.params
    esize = _entry_size(params.log_q)
    nn = params.ct_dim
    bits = []
    for _ in range(count):
        (estimate,) = rd.unpack("<d")
        matrix = _unpack_entries(rd.bytes(nn * nn * esize), nn * nn, esize)
        ct = Ciphertext(matrix.reshape(nn, nn), estimate, params)
        bits.append(EncBit(backend, ciphertext=ct))
    return bits


def _check_backend_match(file_tag: str, file_params: FheParams, backend) -> None:
    if backend.tag != file_tag:
        raise ParameterError(
            f"file was written by the {file_tag} backend, got {backend.tag}")
    if file_tag == "gsw" and backend.params != file_params:
        raise ParameterError("file parameters do not match the backend's")


# ----------------------------------------------------------------------
# images and scores
# ----------------------------------------------------------------------

def save_enc_image(img: EncImage, fmt: FixedPointFormat, backend, path,
                   params: FheParams | None = None) -> None:
    params = params if backend.tag == "clear" else backend.params
    if params is None:
        raise ParameterError("clear image files still need preset params for the header")
    meta = struct.pack("<IIIII", len(img.channels), img.height, img.width,
                       fmt.total_bits, fmt.frac_bits)
    bits = []
    for grid in img.channels:
        for row in grid:
            for value in row:
                bits.extend(value.bits.bits)
    blob = (_header(KIND_IMAGE, params, backend.tag)
            + _params_section(params)
            + _section(meta)
            + _section(_write_bits(bits, backend)))
    atomic_write_bytes(path, blob)


def load_enc_image(path, backend):
    """Returns (EncImage, FixedPointFormat); backend must match the file."""
    with open(path, "rb") as fh:
        rd = _Reader(fh.read())
    kind, params, tag, rd = _parse_header(rd)
    if kind != KIND_IMAGE:
        raise ModelFormatError("file is not an encrypted image")
    _check_backend_match(tag, params, backend)
    meta = _Reader(rd.section())
    channels, height, width, total_bits, frac_bits = meta.unpack("<IIIII")
    fmt = FixedPointFormat(total_bits, frac_bits)
    payload = _Reader(rd.section())
    raw = _read_bits(payload, channels * height * width * total_bits, backend)
    grids = []
    pos = 0
    for _ in range(channels):
        grid = []
        for _ in range(height):
            row = []
            for _ in range(width):
                row.append(FixedPointCipher(
                    BitVector(raw[pos:pos + total_bits]), fmt))
                pos += total_bits
            grid.append(row)
        grids.append(grid)
    return EncImage(grids, height, width), fmt


def save_scores(scores: EncScores, fmt: FixedPointFormat, backend, path,
                params: FheParams | None = None) -> None:
    params = params if backend.tag == "clear" else backend.params
    if params is None:
        raise ParameterError("clear score files still need preset params for the header")
    meta = struct.pack("<III", len(scores.scores), fmt.total_bits, fmt.frac_bits)
    bits = []
    for value in scores.scores:
        bits.extend(value.bits.bits)
    blob = (_header(KIND_SCORES, params, backend.tag)
            + _params_section(params)
            + _section(meta)
            + _section(_write_bits(bits, backend)))
    atomic_write_bytes(path, blob)


def load_scores(path, backend):
    """Returns (EncScores, FixedPointFormat)."""
    with open(path, "rb") as fh:
        rd = _Reader(fh.read())
    kind, params, tag, rd = _parse_header(rd)
    if kind != KIND_SCORES:
        raise ModelFormatError("file is not a score file")
    _check_backend_match(tag, params, backend)
    meta = _Reader(rd.section())
    count, total_bits, frac_bits = meta.unpack("<III")
    fmt = FixedPointFormat(total_bits, frac_bits)
    payload = _Reader(rd.section())
    raw = _read_bits(payload, count * total_bits, backend)
    values = [FixedPointCipher(BitVector(raw[i * total_bits:(i + 1) * total_bits]), fmt)
              for i in range(count)]
    return EncScores(values), fmt
