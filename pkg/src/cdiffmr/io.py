"""Binary and text file formats.

All binary formats are little-endian and start with a four-byte magic:

* ``CIM1`` complex image: u32 height, u32 width, then (real, imag) float32
  pairs in row-major order.
* ``KMS1`` column mask: u32 width, then one 0/1 byte per column.
* ``KFM1`` mask family: u32 width, u32 T, u8 schedule kind (0 lin, 1 log),
  f64 sr_min, u64 seed, then ``(T + 1) * width`` selection bytes.
* ``CKP1`` checkpoint: u32 version, u32 channels, u32 depth, u64 parameter
  count, float32 payload, u32 metadata length, ``key=value`` UTF-8 lines.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from cdiffmr.errors import FormatError
from cdiffmr.masks import ColumnMask, MaskFamily, ScheduleKind, ScheduleSpec
from cdiffmr.training import CHECKPOINT_VERSION, ModelCheckpoint

CIM_MAGIC = b"CIM1"
KMS_MAGIC = b"KMS1"
KFM_MAGIC = b"KFM1"
CKP_MAGIC = b"CKP1"


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated {self.what} payload")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def magic(self, expected: bytes) -> None:
        got = self.take(4)
        if got != expected:
            raise FormatError(f"bad magic {got!r} for {self.what}, expected {expected!r}")

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes in {self.what}")


# -- complex images ----------------------------------------------------------


def encode_image(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    h, w = img.shape
    pairs = np.empty((h, w, 2), dtype="<f4")
    pairs[..., 0] = img.real
    pairs[..., 1] = img.imag
    return CIM_MAGIC + struct.pack("<II", h, w) + pairs.tobytes()


def decode_image(data: bytes) -> np.ndarray:
    r = _Reader(data, "complex image")
    r.magic(CIM_MAGIC)
    h, w = r.unpack("<II")
    raw = np.frombuffer(r.take(h * w * 8), dtype="<f4").reshape(h, w, 2)
    r.finish()
    return raw[..., 0].astype(np.float64) + 1j * raw[..., 1].astype(np.float64)


def write_image(path, img) -> None:
    Path(path).write_bytes(encode_image(img))


def read_image(path) -> np.ndarray:
    return decode_image(Path(path).read_bytes())


# -- masks -------------------------------------------------------------------


def encode_mask(mask: ColumnMask) -> bytes:
    return KMS_MAGIC + struct.pack("<I", mask.width) + mask.selected.astype(np.uint8).tobytes()


def decode_mask(data: bytes, center_fraction: float | None = None) -> ColumnMask:
    r = _Reader(data, "mask")
    r.magic(KMS_MAGIC)
    (width,) = r.unpack("<I")
    raw = np.frombuffer(r.take(width), dtype=np.uint8)
    r.finish()
    if np.any(raw > 1):
        raise FormatError("mask bytes must be 0 or 1")
    return ColumnMask.from_selection(raw.astype(bool), center_fraction)


def write_mask(path, mask: ColumnMask) -> None:
    Path(path).write_bytes(encode_mask(mask))


def read_mask(path) -> ColumnMask:
    return decode_mask(Path(path).read_bytes())


def encode_family(family: MaskFamily) -> bytes:
    kind = 0 if family.schedule.kind is ScheduleKind.LIN else 1
    head = struct.pack("<IIBdQ", family.width, family.T, kind, family.schedule.sr_min,
                       family.seed & 0xFFFFFFFFFFFFFFFF)
    return KFM_MAGIC + head + family.selection_table().astype(np.uint8).tobytes()


def decode_family(data: bytes) -> MaskFamily:
    r = _Reader(data, "mask family")
    r.magic(KFM_MAGIC)
    width, T, kind, sr_min, seed = r.unpack("<IIBdQ")
    if kind not in (0, 1):
        raise FormatError(f"unknown schedule kind byte {kind}")
    table = np.frombuffer(r.take((T + 1) * width), dtype=np.uint8).reshape(T + 1, width)
    r.finish()
    if np.any(table > 1):
        raise FormatError("selection bytes must be 0 or 1")
    table = table.astype(bool)
    if np.any(table[1:] & ~table[:-1]):
        raise FormatError("family masks are not nested")
    spec = ScheduleSpec(ScheduleKind.LIN if kind == 0 else ScheduleKind.LOG, T, sr_min)
    counts = table.sum(axis=1)
    # columns that survive longest come first; ties keep column order
    last_step = np.where(table, np.arange(T + 1)[:, None], -1).max(axis=0)
    priority = np.lexsort((np.arange(width), -last_step))
    priority.flags.writeable = False
    counts.flags.writeable = False
    return MaskFamily(spec, width, 1.0 / width, int(seed), priority, counts)


def write_family(path, family: MaskFamily) -> None:
    Path(path).write_bytes(encode_family(family))


def read_family(path) -> MaskFamily:
    return decode_family(Path(path).read_bytes())


# -- checkpoints -------------------------------------------------------------


def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def encode_checkpoint(ckpt: ModelCheckpoint) -> bytes:
    payload = np.asarray(ckpt.payload, dtype="<f4")
    meta = "".join(f"{k}={_format_value(v)}\n" for k, v in ckpt.metadata.items()).encode()
    return (CKP_MAGIC + struct.pack("<IIIQ", ckpt.version, ckpt.channels, ckpt.depth, payload.size)
            + payload.tobytes() + struct.pack("<I", len(meta)) + meta)


def decode_checkpoint(data: bytes) -> ModelCheckpoint:
    r = _Reader(data, "checkpoint")
    r.magic(CKP_MAGIC)
    version, channels, depth, count = r.unpack("<IIIQ")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    payload = np.frombuffer(r.take(4 * count), dtype="<f4").astype(np.float32)
    (n_meta,) = r.unpack("<I")
    text = r.take(n_meta).decode()
    r.finish()
    meta = {}
    for line in text.splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"malformed metadata line {line!r}")
        meta[key] = _parse_value(value)
    return ModelCheckpoint(channels, depth, payload, meta, version)


def write_checkpoint(path, ckpt: ModelCheckpoint) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def read_checkpoint(path) -> ModelCheckpoint:
    return decode_checkpoint(Path(path).read_bytes())


# -- datasets, CSV, images for viewing --------------------------------------

DATASET_MANIFEST = "manifest.txt"


def write_dataset(out_dir, images) -> list[str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, img in enumerate(images):
        name = f"slice_{i:05d}.cim"
        write_image(out / name, img)
        names.append(name)
    (out / DATASET_MANIFEST).write_text("".join(n + "\n" for n in names))
    return names


def read_dataset(data_dir) -> tuple[list[str], np.ndarray]:
    root = Path(data_dir)
    names = [n.strip() for n in (root / DATASET_MANIFEST).read_text().splitlines() if n.strip()]
    if not names:
        raise FormatError(f"empty dataset manifest in {root}")
    return names, np.stack([read_image(root / n) for n in names])


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_pgm(path, img) -> None:
    """Binary P5 graymap of the magnitude, scaled so the maximum maps to 255."""
    mag = np.abs(np.asarray(img))
    peak = mag.max()
    scaled = np.zeros_like(mag) if peak == 0 else mag / peak * 255.0
    pix = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    h, w = pix.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + pix.tobytes())
