"""Block image codec on top of a trained layer stack.

Images are cut into non-overlapping ``b x b`` blocks (edge-replicated to a
multiple of ``b``), each block is encoded greedily through the layers, and
every layer's indices form one arithmetic-coded payload.  Any prefix of
the payloads decodes on its own.

Bitstream (little-endian)::

    b"MLRQ" | version u8 | width u32 | height u32 | b u8 | J u8 | model hash u64
    J x (payload_len u32 | payload)
"""
from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from mlrq.core import LayerStack, decode_batch, encode_batch
from mlrq.entropy import ac_decode, ac_encode, train_tables
from mlrq.model import Model, write_atomic
from mlrq.trainer import TrainConfig, train_multilayer

MAGIC = b"MLRQ"
VERSION = 1
_HEADER = struct.Struct("<4sBIIBBQ")
DEFAULT_BLOCK = 8


class CodecError(ValueError):
    """Malformed bitstream, model mismatch or bad image."""


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale image, ``pixels`` shaped (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise CodecError("image must be a non-empty 2-d array")
        if p.dtype != np.uint8:
            if not np.all(np.isfinite(p)) or p.min() < 0 or p.max() > 255 or np.any(p != np.round(p)):
                raise CodecError("pixel values must be integers in [0, 255]")
            p = p.astype(np.uint8)
        p = np.array(p, copy=True)
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


# -- PGM ----------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def parse_pgm(data: bytes) -> GrayImage:
    """Binary (P5) 8-bit PGM."""
    tokens, pos = [], 0
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if not m:
            raise CodecError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise CodecError("only binary PGM (P5) is supported")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise CodecError("bad PGM header") from None
    if width < 1 or height < 1 or not 1 <= maxval <= 255:
        raise CodecError("PGM must be non-empty with maxval <= 255")
    pos += 1  # single whitespace after maxval
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise CodecError("truncated PGM raster")
    return GrayImage(np.frombuffer(raster, dtype=np.uint8).reshape(height, width))


def format_pgm(img: GrayImage) -> bytes:
    return b"P5\n%d %d\n255\n" % (img.width, img.height) + img.pixels.tobytes()


def read_pgm(path) -> GrayImage:
    return parse_pgm(Path(path).read_bytes())


def write_pgm(path, img: GrayImage) -> None:
    write_atomic(path, format_pgm(img))


# -- blocks -------------------------------------------------------------------

def extract_blocks(img: GrayImage, b: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Raster-order ``b*b`` vectors and the block grid ``(rows, cols)``."""
    if b < 1:
        raise CodecError("block size must be >= 1")
    h, w = img.height, img.width
    gh, gw = -(-h // b), -(-w // b)
    padded = np.pad(img.pixels, ((0, gh * b - h), (0, gw * b - w)), mode="edge").astype(np.float64)
    blocks = padded.reshape(gh, b, gw, b).swapaxes(1, 2).reshape(gh * gw, b * b)
    return np.ascontiguousarray(blocks), (gh, gw)


def round_clamp(values: np.ndarray) -> np.ndarray:
    """Round half away from zero, then clamp to [0, 255]."""
    r = np.sign(values) * np.floor(np.abs(values) + 0.5)
    return np.clip(r, 0, 255).astype(np.uint8)


def assemble_blocks(blocks, grid: tuple[int, int], b: int, dims: tuple[int, int]) -> GrayImage:
    """Inverse of :func:`extract_blocks`; ``dims`` is ``(width, height)``."""
    gh, gw = grid
    width, height = dims
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.shape != (gh * gw, b * b):
        raise CodecError(f"expected {gh * gw} blocks of {b * b} values, got {blocks.shape}")
    if not (0 < width <= gw * b and 0 < height <= gh * b):
        raise CodecError("image dimensions do not fit the block grid")
    full = blocks.reshape(gh, gw, b, b).swapaxes(1, 2).reshape(gh * b, gw * b)
    return GrayImage(round_clamp(full[:height, :width]))


def block_side(stack: LayerStack) -> int:
    b = math.isqrt(stack.n)
    if b * b != stack.n:
        raise CodecError(f"model dimension {stack.n} is not a square block")
    return b


# -- bitstream ----------------------------------------------------------------

@dataclass(frozen=True)
class Bitstream:
    width: int
    height: int
    block: int
    model_hash: int
    payloads: tuple = field(default=())
    version: int = VERSION

    @property
    def layers(self) -> int:
        return len(self.payloads)

    @property
    def grid(self) -> tuple[int, int]:
        return -(-self.height // self.block), -(-self.width // self.block)

    @property
    def num_blocks(self) -> int:
        gh, gw = self.grid
        return gh * gw

    def payload_bytes(self) -> int:
        return sum(len(p) for p in self.payloads)

    def truncated(self, j: int) -> "Bitstream":
        if not 0 <= j <= self.layers:
            raise CodecError(f"cannot keep {j} of {self.layers} layers")
        return Bitstream(self.width, self.height, self.block, self.model_hash, self.payloads[:j], self.version)

    def to_bytes(self) -> bytes:
        if self.layers > 255 or self.block > 255:
            raise CodecError("layer count and block size must fit in one byte")
        parts = [_HEADER.pack(MAGIC, self.version, self.width, self.height, self.block, self.layers, self.model_hash)]
        for p in self.payloads:
            parts.append(struct.pack("<I", len(p)))
            parts.append(bytes(p))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        data = bytes(data)
        if len(data) < _HEADER.size:
            raise CodecError("truncated bitstream header")
        magic, version, width, height, b, J, h = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise CodecError("not a bitstream (bad magic)")
        if version != VERSION:
            raise CodecError(f"unsupported bitstream version {version}")
        if width < 1 or height < 1 or b < 1:
            raise CodecError("bad bitstream dimensions")
        pos, payloads = _HEADER.size, []
        for i in range(J):
            if pos + 4 > len(data):
                raise CodecError(f"truncated bitstream: missing length of layer {i + 1}")
            (size,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if pos + size > len(data):
                raise CodecError(f"truncated bitstream: layer {i + 1} payload")
            payloads.append(data[pos:pos + size])
            pos += size
        if pos != len(data):
            raise CodecError(f"{len(data) - pos} trailing bytes after the last layer")
        return cls(width, height, b, h, tuple(payloads), version)


def encode_image(img: GrayImage, model: Model, layers: int | None = None) -> Bitstream:
    """Encode ``img`` through the first ``layers`` layers (default: all)."""
    stack = model.stack
    b = block_side(stack)
    J = stack.L if layers is None else layers
    if not 0 <= J <= min(stack.L, 255):
        raise CodecError(f"layers must be in [0, {min(stack.L, 255)}]")
    blocks, _ = extract_blocks(img, b)
    res = encode_batch(stack, blocks, J)
    payloads = tuple(ac_encode(res.indices[:, i], model.tables[i]) for i in range(J))
    return Bitstream(img.width, img.height, b, model.hash, payloads)


def decode_indices(bs: Bitstream, model: Model, layers: int | None = None) -> np.ndarray:
    """Entropy-decode the first ``layers`` index planes, shape (blocks, layers)."""
    if bs.model_hash != model.hash:
        raise CodecError(f"bitstream was made with model {bs.model_hash:016x}, not {model.hash:016x}")
    if bs.block != block_side(model.stack):
        raise CodecError("bitstream block size does not match the model")
    j = bs.layers if layers is None else layers
    if not 0 <= j <= bs.layers:
        raise CodecError(f"can decode at most {bs.layers} layers")
    if bs.layers > model.stack.L:
        raise CodecError("bitstream has more layers than the model")
    m = bs.num_blocks
    idx = np.empty((m, j), dtype=np.int64)
    for i in range(j):
        idx[:, i] = ac_decode(bs.payloads[i], model.tables[i], m)
    return idx


def decode_image(bs: Bitstream, model: Model, layers: int | None = None) -> GrayImage:
    """Reconstruct from the first ``layers`` payloads (default: all)."""
    idx = decode_indices(bs, model, layers)
    recon = decode_batch(model.stack, idx)
    return assemble_blocks(recon, bs.grid, bs.block, (bs.width, bs.height))


def reconstruct(img: GrayImage, model: Model, layers: int | None = None) -> GrayImage:
    """Encoder-side reconstruction, without entropy coding."""
    b = block_side(model.stack)
    blocks, grid = extract_blocks(img, b)
    res = encode_batch(model.stack, blocks, layers)
    return assemble_blocks(res.reconstruction, grid, b, (img.width, img.height))


# -- metrics ------------------------------------------------------------------

def psnr(a: GrayImage, b: GrayImage) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    if a.pixels.shape != b.pixels.shape:
        raise CodecError("images differ in size")
    err = float(np.mean((a.pixels.astype(np.float64) - b.pixels.astype(np.float64)) ** 2))
    if err == 0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / err)


def bpp(bs: Bitstream, stack: LayerStack) -> tuple[float, float]:
    """``(raw_bpp, coded_bpp)``.

    Raw counts ``sum(log2 k_i) / b**2`` over the layers present.  Coded is
    payload bits over real (unpadded) pixels; the header is excluded.
    """
    if bs.layers > stack.L:
        raise CodecError("bitstream has more layers than the stack")
    raw = sum(math.log2(k) for k in stack.sizes[: bs.layers]) / (bs.block * bs.block)
    coded = 8.0 * bs.payload_bytes() / (bs.width * bs.height)
    return raw, coded


# -- training on images -------------------------------------------------------

def pool_blocks(images: Sequence[GrayImage], b: int) -> np.ndarray:
    """Blocks of all images stacked into one training matrix."""
    if not images:
        raise CodecError("no images")
    return np.concatenate([extract_blocks(img, b)[0] for img in images])


def train_image_model(train_images, test_images, cfg: TrainConfig, block: int = DEFAULT_BLOCK):
    """Train a layer stack on pooled blocks and per-layer tables on its indices."""
    train_blocks = pool_blocks(train_images, block)
    test_blocks = pool_blocks(test_images, block)
    stack, report = train_multilayer(train_blocks, test_blocks, cfg)
    planes = encode_batch(stack, train_blocks).indices
    tables = train_tables([planes[:, i] for i in range(stack.L)], stack.sizes)
    return Model(stack, tables), report
