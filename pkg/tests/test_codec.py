import hashlib
import math
from pathlib import Path

import numpy as np
import pytest

from mlrq.codec import (
    Bitstream, CodecError, GrayImage, assemble_blocks, bpp, decode_image, decode_indices, encode_image,
    extract_blocks, format_pgm, parse_pgm, psnr, read_pgm, reconstruct, round_clamp, write_pgm,
)
from mlrq.core import Codebook, LayerStack
from mlrq.corpus import noise_image
from mlrq.model import Model

from golden import golden_image, golden_model

DATA = Path(__file__).parent / "data"
GOLDEN_HASH = 0x0787BDB13B27F2D7
GOLDEN_IMAGE_SHA256 = "2f3514fcec5654682650657f55f3134f952c39f7c1c360350ea8fc11a8be506c"


def random_image(rng, h=None, w=None):
    h = h or int(rng.integers(1, 40))
    w = w or int(rng.integers(1, 40))
    return GrayImage(rng.integers(0, 256, size=(h, w), dtype=np.uint8))


class TestGrayImage:
    @pytest.mark.parametrize("bad", [np.zeros((0, 3)), np.zeros(4), [[256]], [[-1]], [[1.5]]])
    def test_invalid(self, bad):
        with pytest.raises(CodecError):
            GrayImage(np.array(bad))

    def test_integer_floats_accepted(self):
        assert GrayImage(np.array([[0.0, 255.0]])).pixels.dtype == np.uint8


class TestBlocks:
    def test_single_block(self, rng):
        img = random_image(rng, 8, 8)
        blocks, grid = extract_blocks(img, 8)
        assert grid == (1, 1)
        assert np.array_equal(blocks[0], img.pixels.ravel().astype(float))

    def test_padding(self, rng):
        img = random_image(rng, 10, 10)
        blocks, grid = extract_blocks(img, 8)
        assert grid == (2, 2) and blocks.shape == (4, 64)
        # bottom-right block is the corner pixel replicated
        br = blocks[3].reshape(8, 8)
        assert np.all(br[2:, 2:] == img.pixels[9, 9])
        assert np.array_equal(br[:2, :2], img.pixels[8:, 8:])

    def test_raster_and_row_major(self):
        img = GrayImage(np.arange(24, dtype=np.uint8).reshape(4, 6))
        blocks, grid = extract_blocks(img, 2)
        assert grid == (2, 3)
        assert blocks[0].tolist() == [0, 1, 6, 7]
        assert blocks[1].tolist() == [2, 3, 8, 9]
        assert blocks[3].tolist() == [12, 13, 18, 19]

    @pytest.mark.parametrize("b", [1, 3, 4, 8])
    def test_roundtrip(self, rng, b):
        for _ in range(10):
            img = random_image(rng)
            blocks, grid = extract_blocks(img, b)
            assert assemble_blocks(blocks, grid, b, (img.width, img.height)) == img

    def test_clamping(self):
        blocks = np.array([[-3.2, 260.7, 127.5, 126.5]])
        img = assemble_blocks(blocks, (1, 1), 2, (2, 2))
        assert img.pixels.tolist() == [[0, 255], [128, 127]]

    def test_round_half_away_from_zero(self):
        assert round_clamp(np.array([0.5, 1.5, 2.5, -0.5, 254.49])).tolist() == [1, 2, 3, 0, 254]

    def test_inconsistent_dims(self):
        with pytest.raises(CodecError):
            assemble_blocks(np.zeros((3, 4)), (2, 2), 2, (4, 4))
        with pytest.raises(CodecError):
            assemble_blocks(np.zeros((4, 4)), (2, 2), 2, (5, 4))

    def test_bad_block_size(self, rng):
        with pytest.raises(CodecError):
            extract_blocks(random_image(rng), 0)


class TestPgm:
    def test_roundtrip(self, tmp_path, rng):
        img = random_image(rng)
        write_pgm(tmp_path / "a.pgm", img)
        assert read_pgm(tmp_path / "a.pgm") == img

    def test_comments_and_whitespace(self):
        data = b"P5\n# a comment\n3 2\n# another\n255\n" + bytes(range(6))
        assert parse_pgm(data).pixels.tolist() == [[0, 1, 2], [3, 4, 5]]

    def test_format(self):
        assert format_pgm(GrayImage(np.array([[7, 8]], dtype=np.uint8))) == b"P5\n2 1\n255\n\x07\x08"

    @pytest.mark.parametrize("data", [
        b"P2\n1 1\n255\n0", b"P5\n2 2\n255\n\x00", b"P5\n2", b"P5\n1 1\n65535\n\x00\x00", b"P5\nx 1\n255\n\x00",
    ])
    def test_invalid(self, data):
        with pytest.raises(CodecError):
            parse_pgm(data)


def flat_model(value=100.0):
    c1 = np.full((2, 4), value)
    c1[1] = 0
    return Model(LayerStack([Codebook(c1), Codebook(np.eye(4) * 3)]))


class TestEncodeDecode:
    def test_flat_image_exact(self):
        m = flat_model()
        img = GrayImage(np.full((6, 6), 100, dtype=np.uint8))
        idx = decode_indices(encode_image(img, m, 1), m)
        assert np.all(idx[:, 0] == 0)
        assert decode_image(encode_image(img, m, 1), m) == img

    def test_zero_layers(self, rng):
        m = flat_model()
        img = random_image(rng, 5, 7)
        bs = encode_image(img, m, 0)
        assert bs.layers == 0 and len(bs.to_bytes()) == 23
        assert not decode_image(bs, m).pixels.any()

    def test_matches_encoder_side(self, small_model, face_split):
        for img in face_split[1][:5]:
            bs = Bitstream.from_bytes(encode_image(img, small_model).to_bytes())
            assert decode_image(bs, small_model) == reconstruct(img, small_model)

    def test_prefix_property(self, small_model, rng):
        img = random_image(rng, 21, 30)
        bs = encode_image(img, small_model)
        for j in range(bs.layers + 1):
            a = decode_image(bs, small_model, j)
            assert a == decode_image(bs.truncated(j), small_model)
            assert a == decode_image(encode_image(img, small_model, j), small_model)

    def test_deterministic(self, small_model, rng):
        img = random_image(rng)
        assert encode_image(img, small_model).to_bytes() == encode_image(img, small_model).to_bytes()

    def test_hash_mismatch(self, small_model, rng):
        bs = encode_image(random_image(rng), small_model)
        with pytest.raises(CodecError, match="model"):
            decode_image(bs, golden_model())

    def test_block_mismatch(self):
        m = Model(LayerStack([Codebook(np.zeros((2, 8)))]))
        with pytest.raises(CodecError):
            encode_image(GrayImage(np.zeros((4, 4), np.uint8)), m)

    def test_too_many_layers(self, rng):
        with pytest.raises(CodecError):
            encode_image(random_image(rng), flat_model(), 3)

    def test_too_many_layers_requested_on_decode(self, rng):
        m = flat_model()
        with pytest.raises(CodecError):
            decode_image(encode_image(random_image(rng), m, 1), m, 2)


class TestBitstream:
    def _bs(self, rng):
        return encode_image(random_image(rng, 9, 11), flat_model())

    def test_header_layout(self, rng):
        data = self._bs(rng).to_bytes()
        assert data[:4] == b"MLRQ" and data[4] == 1
        assert int.from_bytes(data[5:9], "little") == 11
        assert int.from_bytes(data[9:13], "little") == 9
        assert data[13] == 2 and data[14] == 2
        assert int.from_bytes(data[15:23], "little") == flat_model().hash

    def test_roundtrip(self, rng):
        bs = self._bs(rng)
        assert Bitstream.from_bytes(bs.to_bytes()) == bs

    def test_every_truncation_rejected(self, rng):
        data = self._bs(rng).to_bytes()
        for cut in range(len(data)):
            with pytest.raises(CodecError):
                Bitstream.from_bytes(data[:cut])

    def test_trailing_bytes(self, rng):
        with pytest.raises(CodecError):
            Bitstream.from_bytes(self._bs(rng).to_bytes() + b"\0")

    @pytest.mark.parametrize("pos, value", [(0, ord("X")), (4, 2)])
    def test_bad_magic_or_version(self, rng, pos, value):
        data = bytearray(self._bs(rng).to_bytes())
        data[pos] = value
        with pytest.raises(CodecError):
            Bitstream.from_bytes(bytes(data))


class TestGoldenFixture:
    def test_model_hash(self):
        assert golden_model().hash == GOLDEN_HASH

    def test_decode(self):
        bs = Bitstream.from_bytes((DATA / "golden.mlrq").read_bytes())
        img = decode_image(bs, golden_model())
        assert (img.width, img.height) == (18, 13)
        assert hashlib.sha256(img.pixels.tobytes()).hexdigest() == GOLDEN_IMAGE_SHA256

    def test_encode_reproduces(self):
        data = encode_image(golden_image(), golden_model()).to_bytes()
        assert data == (DATA / "golden.mlrq").read_bytes()


class TestPsnr:
    def test_identical(self, rng):
        img = random_image(rng)
        assert psnr(img, img) == math.inf

    def test_mse_one(self):
        a = GrayImage(np.full((4, 4), 10, np.uint8))
        b = GrayImage(np.full((4, 4), 11, np.uint8))
        assert round(psnr(a, b), 2) == 48.13
        assert psnr(a, b) == pytest.approx(20 * math.log10(255))

    def test_zero_db(self):
        a = GrayImage(np.zeros((3, 3), np.uint8))
        b = GrayImage(np.full((3, 3), 255, np.uint8))
        assert psnr(a, b) == 0.0

    def test_symmetric(self, rng):
        a, b = random_image(rng, 8, 8), random_image(rng, 8, 8)
        assert psnr(a, b) == psnr(b, a)

    def test_monotone_in_noise(self, rng):
        img = GrayImage(rng.integers(60, 196, size=(64, 64), dtype=np.uint8))
        vals = []
        for amp in (1, 4, 16, 64):
            noise = rng.uniform(-amp, amp, size=img.pixels.shape)
            vals.append(psnr(img, GrayImage(np.clip(np.round(img.pixels + noise), 0, 255).astype(np.uint8))))
        assert vals == sorted(vals, reverse=True)

    def test_size_mismatch(self, rng):
        with pytest.raises(CodecError):
            psnr(random_image(rng, 2, 2), random_image(rng, 3, 2))


class TestBpp:
    def test_twenty_layer_configuration(self):
        sizes = [256] * 5 + [128] * 5 + [32] * 5 + [16] * 5
        stack = LayerStack([Codebook(np.zeros((k, 64))) for k in sizes])
        bs = Bitstream(64, 64, 8, 0, tuple(b"" for _ in sizes))
        assert bpp(bs, stack)[0] == 1.875

    def test_zero_layers(self):
        bs = Bitstream(10, 10, 2, 0, ())
        assert bpp(bs, flat_model().stack) == (0.0, 0.0)

    def test_coded_excludes_header_and_padding(self):
        bs = Bitstream(10, 5, 2, 0, (b"abc", b"de"))
        assert bpp(bs, flat_model().stack)[1] == 8 * 5 / 50

    def test_coded_bound_uniform_indices(self, small_model):
        # uniform tables: the coder stays within 16 bytes of the raw index bits
        m = Model(small_model.stack)
        for seed in range(5):
            img = noise_image(seed, 32, 40)
            raw, coded = bpp(encode_image(img, m), m.stack)
            assert coded <= raw + 16 * 8 / (32 * 40)
