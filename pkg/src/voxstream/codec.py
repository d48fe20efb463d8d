"""uint8 quantization and a desk-scale feature-video codec.

Each group of frames becomes one self-contained chunk: an intra-coded
keyframe plus closed-loop temporal residuals, all 8x8 block DCT with a
scaled quantization table, zigzag run-length tokens, and the adaptive
range coder for entropy.  A lossless mode stores exact planes/residuals.
Chunks concatenate into a seekable stream with an offset table so any
group decodes from its byte slice alone.
"""

from __future__ import annotations

import json
import shutil
import struct
import subprocess
import zlib
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .feature_field import FeatureImage
from .rangecoder import compress, decompress, read_varint, write_varint

GOFC_MAGIC = b"GOFC"
VRFS_MAGIC = b"VRFS"
BLOCK = 8

# Classic 8x8 luminance quantization steps; the quantizer scales them.
BASE_QUANT = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


def _zigzag_order() -> np.ndarray:
    order = []
    for s in range(2 * BLOCK - 1):
        ij = [(i, s - i) for i in range(min(s, BLOCK - 1), -1, -1) if s - i < BLOCK]
        if s % 2:
            ij.reverse()
        order.extend(ij)
    idx = np.array([i * BLOCK + j for i, j in order], dtype=np.int64)
    assert len(idx) == BLOCK * BLOCK
    return idx


ZIGZAG = _zigzag_order()
UNZIGZAG = np.argsort(ZIGZAG)


class CodecError(ValueError):
    pass


class CodecUnavailableError(RuntimeError):
    pass


@dataclass
class QuantizationProfile:
    """Per-channel value ranges for 8-bit quantization."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=np.float32)
        self.maxs = np.asarray(self.maxs, dtype=np.float32)
        if self.mins.shape != self.maxs.shape or self.mins.ndim != 1:
            raise ValueError("mins/maxs must be matching 1-D arrays")
        if not (self.maxs > self.mins).all():
            raise ValueError("each channel needs max > min")

    @property
    def channels(self) -> int:
        return len(self.mins)

    @classmethod
    def from_images(cls, images) -> "QuantizationProfile":
        stack = np.stack([img.values if isinstance(img, FeatureImage) else img
                          for img in images])
        mins = stack.min(axis=(0, 1, 2)).astype(np.float64)
        maxs = stack.max(axis=(0, 1, 2)).astype(np.float64)
        flat = maxs - mins < 1e-12
        maxs[flat] = mins[flat] + 1e-6  # widen constant channels
        return cls(mins, maxs)

    def to_json(self) -> dict:
        return {"bit_depth": 8, "mins": [float(v) for v in self.mins],
                "maxs": [float(v) for v in self.maxs]}

    @classmethod
    def from_json(cls, d: dict) -> "QuantizationProfile":
        if d.get("bit_depth", 8) != 8:
            raise ValueError("only 8-bit profiles supported")
        return cls(np.asarray(d["mins"]), np.asarray(d["maxs"]))


def quantize(values: np.ndarray, profile: QuantizationProfile) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.shape[-1] != profile.channels:
        raise ValueError(f"channel count {v.shape[-1]} != profile {profile.channels}")
    t = (v - profile.mins) / (profile.maxs.astype(np.float64) - profile.mins)
    return np.floor(255.0 * np.clip(t, 0.0, 1.0) + 0.5).astype(np.uint8)


def dequantize(q: np.ndarray, profile: QuantizationProfile) -> np.ndarray:
    t = np.asarray(q, dtype=np.float64) / 255.0
    v = profile.mins + t * (profile.maxs.astype(np.float64) - profile.mins)
    return v.astype(np.float32)


# --- block transform ----------------------------------------------------------

def _to_blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return (plane.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK)
            .transpose(0, 2, 1, 3).reshape(-1, BLOCK, BLOCK))


def _from_blocks(blocks: np.ndarray, h: int, w: int) -> np.ndarray:
    return (blocks.reshape(h // BLOCK, w // BLOCK, BLOCK, BLOCK)
            .transpose(0, 2, 1, 3).reshape(h, w))


def _dct_quantize(plane: np.ndarray, step: np.ndarray) -> np.ndarray:
    coeff = scipy.fft.dctn(_to_blocks(plane.astype(np.float64)), axes=(1, 2), norm="ortho")
    q = np.floor(coeff / step + 0.5).astype(np.int64)
    return q.reshape(-1, BLOCK * BLOCK)[:, ZIGZAG]

def _dct_reconstruct(coef_zz: np.ndarray, step: np.ndarray, h: int, w: int) -> np.ndarray:
    blocks = (coef_zz[:, UNZIGZAG].reshape(-1, BLOCK, BLOCK)).astype(np.float64) * step
    rec = scipy.fft.idctn(blocks, axes=(1, 2), norm="ortho")
    return _from_blocks(rec, h, w)


def _zigzag_int(n: int) -> int:
    return (n << 1) ^ (n >> 63)


def _unzigzag_int(u: int) -> int:
    return (u >> 1) ^ -(u & 1)


def _encode_tokens(coef_zz: np.ndarray, out: bytearray) -> None:
    for row in coef_zz:
        nz = np.nonzero(row)[0]
        pos = 0
        for idx in nz:
            out.append(1 + int(idx - pos))
            write_varint(out, _zigzag_int(int(row[idx])))
            pos = int(idx) + 1
        if pos < BLOCK * BLOCK:
            out.append(0)


def _decode_tokens(data: bytes, pos: int, num_blocks: int) -> tuple[np.ndarray, int]:
    coef = np.zeros((num_blocks, BLOCK * BLOCK), dtype=np.int64)
    for b in range(num_blocks):
        cur = 0
        while cur < BLOCK * BLOCK:
            if pos >= len(data):
                raise CodecError("truncated token stream")
            tok = data[pos]
            pos += 1
            if tok == 0:
                break
            cur += tok - 1
            if cur >= BLOCK * BLOCK:
                raise CodecError("token run past block end")
            level, pos = read_varint(data, pos)
            coef[b, cur] = _unzigzag_int(level)
            cur += 1
    return coef, pos


# --- per-frame coding ----------------------------------------------------------

def _encode_key_lossy(frame: np.ndarray, step) -> tuple[bytes, np.ndarray]:
    h, w, c = frame.shape
    out = bytearray()
    recon = np.empty_like(frame)
    for ch in range(c):
        coef = _dct_quantize(frame[:, :, ch].astype(np.float64) - 128.0, step)
        _encode_tokens(coef, out)
        rec = _dct_reconstruct(coef, step, h, w) + 128.0
        recon[:, :, ch] = np.clip(np.floor(rec + 0.5), 0, 255).astype(np.uint8)
    return bytes(out), recon


def _encode_inter_lossy(frame: np.ndarray, prev: np.ndarray, step) -> tuple[bytes, np.ndarray]:
    h, w, c = frame.shape
    out = bytearray()
    recon = np.empty_like(frame)
    for ch in range(c):
        res = frame[:, :, ch].astype(np.float64) - prev[:, :, ch].astype(np.float64)
        coef = _dct_quantize(res, step)
        _encode_tokens(coef, out)
        rec = prev[:, :, ch].astype(np.float64) + _dct_reconstruct(coef, step, h, w)
        recon[:, :, ch] = np.clip(np.floor(rec + 0.5), 0, 255).astype(np.uint8)
    return bytes(out), recon


def _decode_lossy(tokens: bytes, h: int, w: int, c: int, step,
                  prev: np.ndarray | None) -> np.ndarray:
    nb = (h // BLOCK) * (w // BLOCK)
    recon = np.empty((h, w, c), dtype=np.uint8)
    pos = 0
    for ch in range(c):
        coef, pos = _decode_tokens(tokens, pos, nb)
        rec = _dct_reconstruct(coef, step, h, w)
        rec += 128.0 if prev is None else prev[:, :, ch].astype(np.float64)
        recon[:, :, ch] = np.clip(np.floor(rec + 0.5), 0, 255).astype(np.uint8)
    if pos != len(tokens):
        raise CodecError("trailing bytes after plane tokens")
    return recon


def _encode_key_lossless(frame: np.ndarray) -> bytes:
    return frame.transpose(2, 0, 1).tobytes()


def _encode_inter_lossless(frame: np.ndarray, prev: np.ndarray) -> bytes:
    res = (frame.astype(np.int16) - prev.astype(np.int16)) % 256
    return res.astype(np.uint8).transpose(2, 0, 1).tobytes()


def _decode_lossless(data: bytes, h: int, w: int, c: int,
                     prev: np.ndarray | None) -> np.ndarray:
    arr = np.frombuffer(data, dtype=np.uint8)
    if arr.size != h * w * c:
        raise CodecError("lossless frame has wrong size")
    planes = arr.reshape(c, h, w).transpose(1, 2, 0)
    if prev is None:
        return planes.copy()
    return ((prev.astype(np.int16) + planes.astype(np.int16)) % 256).astype(np.uint8)


# --- group-of-frames chunks -----------------------------------------------------

_GOFC_HEAD = struct.Struct("<HBBHiiHIIH")  # version mode pad q gid fstart fcount W H C


@dataclass
class EncodedGof:
    group_id: int
    frame_start: int
    quantizer: int
    lossless: bool
    image_size: tuple[int, int]
    channels: int
    frame_sizes: list[int]
    payload: bytes  # complete self-contained chunk

    @property
    def size_bytes(self) -> int:
        return len(self.payload)

    @property
    def keyframe_bytes(self) -> int:
        return self.frame_sizes[0]

    @property
    def inter_bytes(self) -> int:
        return sum(self.frame_sizes[1:])


def encode_gof(
    quantized: np.ndarray,  # (F, H, W, C) uint8
    group_id: int,
    frame_start: int = 0,
    quantizer: int = 4,
    lossless: bool = False,
) -> EncodedGof:
    q = np.asarray(quantized)
    if q.dtype != np.uint8 or q.ndim != 4:
        raise ValueError("expected a (frames, H, W, C) uint8 stack")
    f, h, w, c = q.shape
    if f < 1:
        raise ValueError("a group needs at least one frame")
    if h % BLOCK or w % BLOCK:
        raise ValueError(f"image size must be a multiple of {BLOCK}")
    if quantizer < 1:
        raise ValueError("quantizer must be >= 1")
    step = BASE_QUANT * quantizer
    blobs: list[bytes] = []
    prev = None
    for i in range(f):
        if lossless:
            raw = (_encode_key_lossless(q[i]) if prev is None
                   else _encode_inter_lossless(q[i], prev))
            prev = q[i]
        else:
            raw, prev = (_encode_key_lossy(q[i], step) if prev is None
                         else _encode_inter_lossy(q[i], prev, step))
        blobs.append(compress(raw))
    head = _GOFC_HEAD.pack(1, 1 if lossless else 0, 0, quantizer,
                           group_id, frame_start, f, w, h, c)
    table = b"".join(struct.pack("<I", len(b)) for b in blobs)
    payload = GOFC_MAGIC + head + table + b"".join(blobs)
    return EncodedGof(group_id, frame_start, quantizer, lossless, (w, h), c,
                      [len(b) for b in blobs], payload)


@dataclass
class DecodedGof:
    group_id: int
    frame_start: int
    quantizer: int
    lossless: bool
    quantized: np.ndarray  # (F, H, W, C) uint8

    def to_images(self, profile: QuantizationProfile) -> dict[int, FeatureImage]:
        out = {}
        for i in range(self.quantized.shape[0]):
            frame = self.frame_start + i
            out[frame] = FeatureImage(dequantize(self.quantized[i], profile),
                                      frame, self.group_id)
        return out


def decode_gof(payload: bytes) -> DecodedGof:
    if payload[:4] != GOFC_MAGIC:
        raise CodecError("not a group chunk")
    version, mode, _, quantizer, gid, fstart, fcount, w, h, c = _GOFC_HEAD.unpack_from(
        payload, 4
    )
    if version != 1:
        raise CodecError(f"unsupported chunk version {version}")
    pos = 4 + _GOFC_HEAD.size
    sizes = struct.unpack_from(f"<{fcount}I", payload, pos)
    pos += 4 * fcount
    step = BASE_QUANT * quantizer
    frames = np.empty((fcount, h, w, c), dtype=np.uint8)
    prev = None
    for i, size in enumerate(sizes):
        raw = decompress(payload[pos : pos + size])
        pos += size
        if mode == 1:
            frames[i] = _decode_lossless(raw, h, w, c, prev)
        else:
            frames[i] = _decode_lossy(raw, h, w, c, step, prev)
        prev = frames[i]
    if pos != len(payload):
        raise CodecError("chunk has trailing bytes")
    return DecodedGof(gid, fstart, quantizer, bool(mode), frames)


# --- sequence stream ------------------------------------------------------------

_VRFS_HEAD = struct.Struct("<HHIIBBHI")  # version channels W H mode pad q group_count
_CHUNK_ENTRY = struct.Struct("<iiHHQQI")  # gid fstart fcount pad offset size crc32


@dataclass
class ChunkEntry:
    group_id: int
    frame_start: int
    frame_count: int
    offset: int
    size: int
    crc32: int


@dataclass
class StreamInfo:
    image_size: tuple[int, int]
    channels: int
    lossless: bool
    quantizer: int
    profile: QuantizationProfile
    chunks: list[ChunkEntry]

    def chunk_for_group(self, group_id: int) -> ChunkEntry:
        for ch in self.chunks:
            if ch.group_id == group_id:
                return ch
        raise KeyError(f"group {group_id} not in stream")


def write_stream(path, gofs: list[EncodedGof], profile: QuantizationProfile) -> StreamInfo:
    if not gofs:
        raise ValueError("stream needs at least one group")
    w, h = gofs[0].image_size
    c = gofs[0].channels
    q = gofs[0].quantizer
    lossless = gofs[0].lossless
    for g in gofs:
        if g.image_size != (w, h) or g.channels != c:
            raise ValueError("all groups must share one image geometry")
    if c != profile.channels:
        raise ValueError("profile channel count mismatch")
    head = _VRFS_HEAD.pack(1, c, w, h, 1 if lossless else 0, 0, q, len(gofs))
    prof = np.stack([profile.mins, profile.maxs]).astype("<f4").tobytes()
    base = len(VRFS_MAGIC) + _VRFS_HEAD.size + len(prof) + _CHUNK_ENTRY.size * len(gofs)
    entries = []
    offset = base
    for g in gofs:
        entries.append(ChunkEntry(g.group_id, g.frame_start, len(g.frame_sizes),
                                  offset, len(g.payload), zlib.crc32(g.payload)))
        offset += len(g.payload)
    with open(path, "wb") as f:
        f.write(VRFS_MAGIC)
        f.write(head)
        f.write(prof)
        for e in entries:
            f.write(_CHUNK_ENTRY.pack(e.group_id, e.frame_start, e.frame_count, 0,
                                      e.offset, e.size, e.crc32))
        for g in gofs:
            f.write(g.payload)
    return StreamInfo((w, h), c, lossless, q, profile, entries)


def read_stream_info(path) -> StreamInfo:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != VRFS_MAGIC:
            raise CodecError(f"{path}: not a feature stream")
        version, c, w, h, mode, _, q, count = _VRFS_HEAD.unpack(f.read(_VRFS_HEAD.size))
        if version != 1:
            raise CodecError(f"unsupported stream version {version}")
        prof = np.frombuffer(f.read(8 * c), dtype="<f4").reshape(2, c)
        profile = QuantizationProfile(prof[0], prof[1])
        chunks = []
        for _ in range(count):
            gid, fstart, fcount, _, offset, size, crc = _CHUNK_ENTRY.unpack(
                f.read(_CHUNK_ENTRY.size)
            )
            chunks.append(ChunkEntry(gid, fstart, fcount, offset, size, crc))
    return StreamInfo((w, h), c, bool(mode), q, profile, chunks)


def read_gof_slice(path, info: StreamInfo, group_id: int, verify: bool = True) -> bytes:
    entry = info.chunk_for_group(group_id)
    with open(path, "rb") as f:
        f.seek(entry.offset)
        payload = f.read(entry.size)
    if len(payload) != entry.size:
        raise CodecError(f"group {group_id}: short read")
    if verify and zlib.crc32(payload) != entry.crc32:
        raise CodecError(f"group {group_id}: checksum mismatch")
    return payload


# --- analysis helpers ------------------------------------------------------------

@dataclass(frozen=True)
class RenderContext:
    """Everything needed to render one held-out view from decoded images."""

    table: object
    pyramid: object
    mlp: object
    camera: object
    profile: QuantizationProfile
    frame: int = 0
    step: float | None = None

    def render(self, images: dict) -> np.ndarray:
        from .renderer import render

        return render(images, self.table, self.mlp, self.camera,
                      self.frame, self.pyramid, step=self.step,
                      background="white")


def rate_distortion(quantized: np.ndarray, quantizers, group_id: int = 0,
                    frame_start: int = 0, ctx: RenderContext | None = None) -> list[dict]:
    """Bytes and reconstruction quality of one group across quantizer settings.

    Quantizer 0 means the lossless mode.  With a render context, each row
    also carries the PSNR of a held-out view against the render produced
    by the lossless path (identical uint8 planes, so PSNR is inf there).
    """
    reference = None
    if ctx is not None:
        ref_images = {
            frame_start + i: FeatureImage(dequantize(quantized[i], ctx.profile),
                                          frame_start + i, group_id)
            for i in range(quantized.shape[0])
        }
        reference = ctx.render(ref_images)
    rows = []
    for q in quantizers:
        q = int(q)
        enc = encode_gof(quantized, group_id, frame_start,
                         quantizer=max(q, 1), lossless=(q == 0))
        dec = decode_gof(enc.payload)
        err = np.abs(dec.quantized.astype(np.int16) - quantized.astype(np.int16))
        row = {
            "quantizer": q,
            "bytes": enc.size_bytes,
            "bytes_per_frame": enc.size_bytes / quantized.shape[0],
            "max_abs_error": int(err.max()),
            "mean_abs_error": float(err.mean()),
        }
        if ctx is not None:
            from .metrics import psnr

            row["psnr"] = psnr(ctx.render(dec.to_images(ctx.profile)), reference)
        rows.append(row)
    return rows


# --- external encoder bridge ------------------------------------------------------

def pack_rgb_tiles(quantized: np.ndarray) -> np.ndarray:
    """Stack channels into ceil(C/3) RGB tiles per frame, (F,H,W,C) -> (F,tiles*H,W,3)."""
    f, h, w, c = quantized.shape
    tiles = -(-c // 3)
    padded = np.zeros((f, h, w, tiles * 3), dtype=np.uint8)
    padded[..., :c] = quantized
    # (F,H,W,tiles,3) -> (F,tiles,H,W,3) -> vertical stack
    return padded.reshape(f, h, w, tiles, 3).transpose(0, 3, 1, 2, 4).reshape(
        f, tiles * h, w, 3)


def unpack_rgb_tiles(packed: np.ndarray, channels: int) -> np.ndarray:
    """Inverse of pack_rgb_tiles; trims the zero-padded channel slots."""
    f, th, w, _ = packed.shape
    tiles = -(-channels // 3)
    if th % tiles:
        raise CodecError(f"tile stack height {th} not divisible by {tiles} tiles")
    h = th // tiles
    planes = packed.reshape(f, tiles, h, w, 3).transpose(0, 2, 3, 1, 4)
    return planes.reshape(f, h, w, tiles * 3)[..., :channels]


def external_encoder_available(tool: str = "ffmpeg") -> bool:
    return shutil.which(tool) is not None


def external_encode(quantized: np.ndarray, tool: str = "ffmpeg",
                    args: tuple[str, ...] | None = None) -> bytes:
    """Encode the tile-packed stream with a system video encoder, if present.

    Frames are piped as raw rgb24 video; the argument template may reference
    {w} and {h} for the packed tile-stack geometry.
    """
    if not external_encoder_available(tool):
        raise CodecUnavailableError(
            f"external encoder {tool!r} not found on PATH; "
            f"install it or use the built-in codec"
        )
    packed = pack_rgb_tiles(quantized)
    f, th, w, _ = packed.shape
    if args is None:
        args = ("-c:v", "libx264rgb", "-qp", "0", "-preset", "veryfast",
                "-f", "matroska")
    cmd = [tool, "-loglevel", "error", "-f", "rawvideo", "-pix_fmt", "rgb24",
           "-s", f"{w}x{th}", "-r", "30", "-i", "pipe:0"]
    cmd += [a.format(w=w, h=th) for a in args]
    cmd.append("pipe:1")
    proc = subprocess.run(cmd, input=packed.tobytes(),
                          stdout=subprocess.PIPE, check=True)
    return proc.stdout


def external_decode(payload: bytes, channels: int, image_size: tuple[int, int],
                    tool: str = "ffmpeg") -> np.ndarray:
    """Decode external_encode output back to (F,H,W,C) uint8 frames."""
    if not external_encoder_available(tool):
        raise CodecUnavailableError(
            f"external decoder {tool!r} not found on PATH; "
            f"install it or use the built-in codec"
        )
    w, h = image_size
    tiles = -(-channels // 3)
    frame_bytes = 3 * w * tiles * h
    proc = subprocess.run(
        [tool, "-loglevel", "error", "-i", "pipe:0",
         "-f", "rawvideo", "-pix_fmt", "rgb24", "pipe:1"],
        input=payload, stdout=subprocess.PIPE, check=True)
    if not proc.stdout or len(proc.stdout) % frame_bytes:
        raise CodecError("external decode produced a partial frame")
    n = len(proc.stdout) // frame_bytes
    packed = np.frombuffer(proc.stdout, dtype=np.uint8).reshape(n, tiles * h, w, 3)
    return unpack_rgb_tiles(packed, channels)
