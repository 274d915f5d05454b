"""Bit-exact persistence and ingestion.

File formats (all little-endian, all with a magic, a u32 version, and a
trailing CRC32 over everything after the magic+version):

* ``TRW1`` — float32 model weights.
* ``TRQ1`` — int8 model: per-edge activation params plus per-channel
  weight scales and int32 biases.
* ``TGAL`` — identity gallery: embed dim, record count, then
  (identity, float32 embedding) records.
* manifests — UTF-8 CSV rows ``path,identity,split``.

Images come in as binary PPM (P6, 8-bit) or raw RGB888 with a 12-byte
``TRIM`` header, are bilinearly resized to 64x64 and normalized to
[-1, 1] via x / 127.5 - 1.
"""

from __future__ import annotations

import csv
import io
import math
import random
import struct
import zlib
from pathlib import Path

import numpy as np

from . import arch
from .fp32 import ModelWeightsF32
from .int8 import ModelWeightsI8
from .reid import GalleryDB
from .tensor import QuantParams

VERSION = 1
MAGIC_F32 = b"TRW1"
MAGIC_I8 = b"TRQ1"
MAGIC_GALLERY = b"TGAL"
MAGIC_RAW_IMAGE = b"TRIM"

_HEADER = struct.Struct("<4sIdII")  # magic, version, alpha, n_blocks, embed_dim
_HEADER_PADDED = 32  # header rounded up to a 16-byte boundary

SPLITS = ("train", "gallery", "query")


class StoreError(ValueError):
    """Malformed or truncated on-disk artifact."""


# --- low-level helpers -------------------------------------------------------

def _pack_header(magic: bytes, spec: arch.ModelSpec) -> bytes:
    head = _HEADER.pack(magic, VERSION, spec.alpha, spec.n_blocks, spec.embed_dim)
    return head.ljust(_HEADER_PADDED, b"\0")


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise StoreError(f"{self.path}: truncated file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def name(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def _open_checked(path, magic: bytes) -> tuple[_Reader, arch.ModelSpec | None]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER_PADDED + 4:
        raise StoreError(f"{path}: truncated file")
    got_magic = data[:4]
    if got_magic != magic:
        raise StoreError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[8:-4]) != crc:
        raise StoreError(f"{path}: checksum mismatch")
    r = _Reader(data[:-4], str(path))
    _, version, alpha, n_blocks, embed_dim = _HEADER.unpack(r.take(_HEADER.size))
    if version != VERSION:
        raise StoreError(f"{path}: version {version} unsupported (expected {VERSION})")
    r.take(_HEADER_PADDED - _HEADER.size)
    if magic in (MAGIC_F32, MAGIC_I8):
        return r, arch.build_spec(alpha, n_blocks, embed_dim)
    return r, None


def _finish(path, body: bytearray):
    body += struct.pack("<I", zlib.crc32(bytes(body[8:])))
    Path(path).write_bytes(bytes(body))


# --- float32 model -----------------------------------------------------------

def save_model_f32(path, weights: ModelWeightsF32):
    spec = weights.spec
    body = bytearray(_pack_header(MAGIC_F32, spec))
    shapes = arch.weight_shapes(spec)
    body += struct.pack("<I", len(shapes))
    payload = bytearray()
    for name, shape in shapes.items():
        enc = name.encode("utf-8")
        body += struct.pack("<H", len(enc)) + enc
        body += struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
        payload += weights.tensors[name].astype("<f4").tobytes()
    body += payload
    _finish(path, body)


def load_model_f32(path) -> ModelWeightsF32:
    r, spec = _open_checked(path, MAGIC_F32)
    (count,) = r.unpack("<I")
    table = []
    for _ in range(count):
        name = r.name()
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I")
        table.append((name, dims))
    tensors = {}
    for name, dims in table:
        n = math.prod(dims)
        raw = r.take(4 * n)
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    return ModelWeightsF32(spec=spec, tensors=tensors)


def fp32_file_size(spec: arch.ModelSpec) -> int:
    """Exact TRW1 file size: padded header + tensor table + 4 bytes per
    parameter + trailing CRC."""
    shapes = arch.weight_shapes(spec)
    table = 4 + sum(2 + len(n.encode()) + 1 + 4 * len(s) for n, s in shapes.items())
    return _HEADER_PADDED + table + 4 * arch.param_count(spec) + 4


# --- int8 model --------------------------------------------------------------

def save_model_i8(path, weights: ModelWeightsI8):
    spec = weights.spec
    body = bytearray(_pack_header(MAGIC_I8, spec))
    edges = arch.activation_edges(spec)
    body += struct.pack("<I", len(edges))
    for e in edges:
        qp = weights.act_qparams[e]
        enc = e.encode("utf-8")
        body += struct.pack("<H", len(enc)) + enc
        body += struct.pack("<fi", np.float32(qp.scale), qp.zero_point)
    units = [u for u in arch.exec_units(spec) if u.op in ("conv", "dw", "fc")]
    body += struct.pack("<I", len(units))
    for u in units:
        entry = weights.tensors[u.weight]
        enc = u.weight.encode("utf-8")
        body += struct.pack("<H", len(enc)) + enc
        k = entry["kernel"]
        body += struct.pack("<B", k.ndim) + struct.pack(f"<{k.ndim}I", *k.shape)
        body += k.tobytes()
        nch = entry["w_scale"].shape[0]
        body += struct.pack("<I", nch)
        body += entry["w_scale"].astype("<f4").tobytes()
        body += entry["bias"].astype("<i4").tobytes()
    _finish(path, body)


def load_model_i8(path) -> ModelWeightsI8:
    r, spec = _open_checked(path, MAGIC_I8)
    (n_edges,) = r.unpack("<I")
    act = {}
    for _ in range(n_edges):
        name = r.name()
        scale, zp = r.unpack("<fi")
        act[name] = QuantParams(scale=float(scale), zero_point=zp)
    (n_units,) = r.unpack("<I")
    tensors = {}
    for _ in range(n_units):
        name = r.name()
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I")
        n = math.prod(dims)
        kernel = np.frombuffer(r.take(n), dtype=np.int8).reshape(dims).copy()
        (nch,) = r.unpack("<I")
        w_scale = np.frombuffer(r.take(4 * nch), dtype="<f4").copy()
        bias = np.frombuffer(r.take(4 * nch), dtype="<i4").copy()
        tensors[name] = {"kernel": kernel, "w_scale": w_scale, "bias": bias}
    return ModelWeightsI8(spec=spec, tensors=tensors, act_qparams=act)


def int8_file_size(spec: arch.ModelSpec) -> int:
    edges = arch.activation_edges(spec)
    size = _HEADER_PADDED
    size += 4 + sum(2 + len(e.encode()) + 8 for e in edges)
    size += 4
    shapes = arch.weight_shapes(spec)
    for u in arch.exec_units(spec):
        if u.op not in ("conv", "dw", "fc"):
            continue
        kshape = shapes["fc.w"] if u.op == "fc" else shapes[f"{u.weight}.kernel"]
        nch = u.cin if u.op == "dw" else u.cout
        size += 2 + len(u.weight.encode()) + 1 + 4 * len(kshape)
        size += math.prod(kshape) + 4 + 8 * nch
    return size + 4


def load_model(path) -> ModelWeightsF32 | ModelWeightsI8:
    """Open either model format, dispatching on the magic."""
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == MAGIC_F32:
        return load_model_f32(path)
    if magic == MAGIC_I8:
        return load_model_i8(path)
    raise StoreError(f"{path}: bad magic {magic!r}")


# --- gallery -----------------------------------------------------------------

def save_gallery(path, db: GalleryDB):
    body = bytearray(MAGIC_GALLERY)
    body += struct.pack("<III", VERSION, db.embed_dim, len(db.records))
    for identity, emb in db.records:
        enc = identity.encode("utf-8")
        body += struct.pack("<H", len(enc)) + enc
        body += np.asarray(emb, dtype="<f4").tobytes()
    _finish(path, body)


def load_gallery(path) -> GalleryDB:
    data = Path(path).read_bytes()
    if len(data) < 20:
        raise StoreError(f"{path}: truncated file")
    if data[:4] != MAGIC_GALLERY:
        raise StoreError(f"{path}: bad magic {data[:4]!r}")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[8:-4]) != crc:
        raise StoreError(f"{path}: checksum mismatch")
    r = _Reader(data[:-4], str(path))
    r.take(4)
    version, d, count = r.unpack("<III")
    if version != VERSION:
        raise StoreError(f"{path}: version {version} unsupported")
    records = []
    for _ in range(count):
        identity = r.name()
        emb = np.frombuffer(r.take(4 * d), dtype="<f4").copy()
        records.append((identity, emb))
    return GalleryDB(embed_dim=d, records=records)


# --- dataset manifests -------------------------------------------------------

def validate_manifest(rows: list[tuple[str, str, str]]):
    train_ids = {i for _, i, s in rows if s == "train"}
    eval_ids = {i for _, i, s in rows if s in ("gallery", "query")}
    bad_split = [s for _, _, s in rows if s not in SPLITS]
    if bad_split:
        raise StoreError(f"unknown split names: {sorted(set(bad_split))}")
    overlap = train_ids & eval_ids
    if overlap:
        raise StoreError(f"identities in both train and eval splits: {sorted(overlap)}")


def save_manifest(path, rows: list[tuple[str, str, str]]):
    validate_manifest(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def load_manifest(path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for rec in csv.reader(f):
            if not rec:
                continue
            if len(rec) != 3:
                raise StoreError(f"{path}: malformed manifest row {rec!r}")
            rows.append((rec[0], rec[1], rec[2]))
    validate_manifest(rows)
    return rows


def split_dataset(groups: dict[str, list[str]], train_ratio: float,
                  seed: int) -> list[tuple[str, str, str]]:
    """Identity-disjoint train / gallery / query split.

    floor(train_ratio * n_identities) identities go to train with all
    their images; each remaining identity's images are split gallery/query
    with at least one image on each side.  Deterministic for a fixed seed.
    """
    if len(groups) < 2:
        raise ValueError("need at least 2 identities to split")
    for ident, paths in groups.items():
        if len(paths) < 2:
            raise ValueError(f"identity {ident!r} has fewer than 2 images")
    rng = random.Random(seed)
    ids = sorted(groups)
    rng.shuffle(ids)
    n_train = math.floor(train_ratio * len(ids))
    rows = []
    for ident in ids[:n_train]:
        rows += [(p, ident, "train") for p in sorted(groups[ident])]
    for ident in ids[n_train:]:
        paths = sorted(groups[ident])
        rng.shuffle(paths)
        n_gallery = (len(paths) + 1) // 2
        rows += [(p, ident, "gallery") for p in paths[:n_gallery]]
        rows += [(p, ident, "query") for p in paths[n_gallery:]]
    return rows


# --- images ------------------------------------------------------------------

def _parse_ppm(data: bytes, path: str) -> np.ndarray:
    # P6 header: three whitespace-separated tokens after the magic, with
    # '#' comments allowed between them.
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise StoreError(f"{path}: truncated PPM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError:
        raise StoreError(f"{path}: malformed PPM header") from None
    if w < 1 or h < 1:
        raise StoreError(f"{path}: bad PPM dimensions {w}x{h}")
    if maxval != 255:
        raise StoreError(f"{path}: unsupported PPM maxval {maxval} (need 8-bit)")
    need = w * h * 3
    if len(data) - pos < need:
        raise StoreError(f"{path}: truncated PPM payload")
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3)


def _parse_raw(data: bytes, path: str) -> np.ndarray:
    if len(data) < 12:
        raise StoreError(f"{path}: truncated raw image header")
    w, h = struct.unpack("<II", data[4:12])
    need = w * h * 3
    if len(data) - 12 < need:
        raise StoreError(f"{path}: truncated raw image payload")
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=12).reshape(h, w, 3)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel-centered source coordinates."""
    in_h, in_w = img.shape[:2]
    src = img.astype(np.float64)
    ys = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0, in_h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0, in_w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def load_image(path) -> np.ndarray:
    """Read PPM/raw RGB, resize to 64x64 if needed, normalize to [-1, 1]."""
    data = Path(path).read_bytes()
    if data[:2] == b"P6":
        img = _parse_ppm(data, str(path))
    elif data[:4] == MAGIC_RAW_IMAGE:
        img = _parse_raw(data, str(path))
    else:
        raise StoreError(f"{path}: unsupported image format")
    if img.shape[:2] != (arch.INPUT_H, arch.INPUT_W):
        img = bilinear_resize(img, arch.INPUT_H, arch.INPUT_W)
    return (img.astype(np.float64) / 127.5 - 1.0).astype(np.float32)


def write_ppm(path, img_u8: np.ndarray):
    h, w, _ = img_u8.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(img_u8, dtype=np.uint8).tobytes())


# --- synthetic model ---------------------------------------------------------

def generate_random_model(alpha: float, n_blocks: int, embed_dim: int,
                          seed: int) -> ModelWeightsF32:
    """Random-weight float model for exercising the pipeline without a
    training stack.  He-scaled kernels keep activation magnitudes sane
    through the ReLU6 stack."""
    spec = arch.build_spec(alpha, n_blocks, embed_dim)
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in arch.weight_shapes(spec).items():
        if name.endswith(".scale"):
            tensors[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith(".bias") or name == "fc.b":
            tensors[name] = rng.uniform(-0.05, 0.05, size=shape).astype(np.float32)
        elif name == "fc.w":
            std = (1.0 / shape[0]) ** 0.5
            tensors[name] = (rng.standard_normal(shape) * std).astype(np.float32)
        else:
            fan_in = math.prod(shape[:-1]) if len(shape) == 4 else shape[0] * shape[1]
            std = (2.0 / fan_in) ** 0.5
            tensors[name] = (rng.standard_normal(shape) * std).astype(np.float32)
    return ModelWeightsF32(spec=spec, tensors=tensors)
