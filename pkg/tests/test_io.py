import json
import struct

import numpy as np
import pytest
from PIL import Image

from sscan.io import (
    BadMagicError,
    CorruptEntryError,
    DuplicateNameError,
    TrailingDataError,
    TruncatedFileError,
    UnsupportedDtypeError,
    UnsupportedFormatError,
    UnsupportedVersionError,
    WeightFormatError,
    load_png,
    load_run_config,
    load_weights,
    parse_run_config,
    save_png,
    save_run_config,
    save_weights,
    weights_from_bytes,
    weights_to_bytes,
)
from sscan.metrics import ImageU8
from sscan.model import ConfigError, ModelConfig, count_params, init_weights
from sscan.tensor import Tensor


def entry(name: bytes, dims, dtype=0, byte_len=None, data=None):
    n = int(np.prod(dims)) if dims else 1
    if byte_len is None:
        byte_len = 8 * n
    if data is None:
        data = np.arange(n, dtype="<f8").tobytes()
    return (struct.pack("<H", len(name)) + name + struct.pack("<B", len(dims))
            + struct.pack(f"<{len(dims)}I", *dims) + struct.pack("<BQ", dtype, byte_len) + data)


def container(*entries, version=1, count=None):
    return b"SSCW" + struct.pack("<HI", version, len(entries) if count is None else count) + b"".join(entries)


class TestPNG:
    def test_white_pixel(self, tmp_path):
        img = ImageU8(np.full((1, 1, 3), 255, dtype=np.uint8))
        save_png(img, tmp_path / "w.png")
        np.testing.assert_array_equal(load_png(tmp_path / "w.png").pixels, img.pixels)

    @pytest.mark.parametrize("channels", [1, 3])
    def test_random_roundtrip(self, tmp_path, channels):
        px = np.random.default_rng(channels).integers(0, 256, (16, 16, channels), dtype=np.uint8)
        save_png(ImageU8(px), tmp_path / "r.png")
        assert load_png(tmp_path / "r.png").pixels.tobytes() == px.tobytes()

    def test_sixteen_bit_rejected(self, tmp_path):
        Image.fromarray(np.full((4, 4), 40000, dtype=np.uint16)).save(tmp_path / "d.png")
        with pytest.raises(UnsupportedFormatError, match="16-bit"):
            load_png(tmp_path / "d.png")

    def test_palette_rejected(self, tmp_path):
        Image.new("P", (4, 4)).save(tmp_path / "p.png")
        with pytest.raises(UnsupportedFormatError):
            load_png(tmp_path / "p.png")

    def test_rgba_rejected(self, tmp_path):
        Image.new("RGBA", (4, 4)).save(tmp_path / "a.png")
        with pytest.raises(UnsupportedFormatError):
            load_png(tmp_path / "a.png")

    def test_not_png(self, tmp_path):
        (tmp_path / "x.png").write_bytes(b"GIF89a" + b"\0" * 40)
        with pytest.raises(UnsupportedFormatError):
            load_png(tmp_path / "x.png")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_png(tmp_path / "nope.png")


class TestWeights:
    def test_empty_store(self):
        buf = weights_to_bytes({})
        assert buf == b"SSCW\x01\x00\x00\x00\x00\x00"
        assert weights_from_bytes(buf) == {}

    def test_byte_layout(self):
        buf = weights_to_bytes({"a": Tensor(np.array([1.5, -2.0]))})
        assert buf == container(entry(b"a", (2,), data=np.array([1.5, -2.0], "<f8").tobytes()))

    def test_default_config_roundtrip(self, tmp_path):
        cfg = ModelConfig()
        store = init_weights(cfg, 0)
        save_weights(store, tmp_path / "m.sscw")
        back = load_weights(tmp_path / "m.sscw")
        assert list(back) == list(store)
        assert sum(t.size for t in back.values()) == count_params(cfg)
        assert all(back[k].data.tobytes() == store[k].data.tobytes() for k in store)
        assert weights_to_bytes(back) == (tmp_path / "m.sscw").read_bytes()

    def test_scalar_tensor(self):
        back = weights_from_bytes(weights_to_bytes({"s": Tensor(np.array(3.25))}))
        assert back["s"].shape == () and back["s"].item() == 3.25

    def test_requires_grad_flag(self):
        buf = weights_to_bytes({"a": Tensor(np.ones(2))})
        assert weights_from_bytes(buf)["a"].requires_grad
        assert not weights_from_bytes(buf, requires_grad=False)["a"].requires_grad

    @pytest.mark.parametrize(
        "buf,err",
        [
            (b"XXXX\x01\x00\x00\x00\x00\x00", BadMagicError),
            (b"SS", TruncatedFileError),
            (container(version=2), UnsupportedVersionError),
            (container(count=1), TruncatedFileError),
            (container(entry(b"a", (2,)), entry(b"a", (1,))), DuplicateNameError),
            (container(entry(b"a", (2,), dtype=1)), UnsupportedDtypeError),
            (container(entry(b"a", (2, 0), data=b"")), CorruptEntryError),
            (container(entry(b"a", (2,), byte_len=8, data=b"\0" * 8)), CorruptEntryError),
            (container(entry(b"\xff\xfe", (1,))), CorruptEntryError),
            (container(entry(b"a", (1,))) + b"\0", TrailingDataError),
            (container(entry(b"a", (4,)))[:-3], TruncatedFileError),
        ],
    )
    def test_classified_errors(self, buf, err):
        with pytest.raises(err):
            weights_from_bytes(buf)

    def test_every_truncation_classified(self):
        buf = weights_to_bytes(init_weights(ModelConfig(embed_dim=8, n_sscan_blocks=1, n_fgca_blocks=1,
                                                         window_size=4, num_heads=2, scale=2), 0))
        for cut in range(0, len(buf), 37):
            with pytest.raises(WeightFormatError):
                weights_from_bytes(buf[:cut])

    def test_huge_declared_length_does_not_allocate(self):
        buf = container(entry(b"a", (2**31, 2**31), byte_len=8 * 2**62 % 2**64, data=b""))
        with pytest.raises(WeightFormatError):
            weights_from_bytes(buf)


class TestRunConfig:
    def test_empty_is_defaults(self):
        cfg, acfg = parse_run_config({})
        assert cfg == ModelConfig()
        assert (cfg.window_size, cfg.embed_dim, cfg.n_sscan_blocks, cfg.n_fgca_blocks) == (8, 60, 4, 2)
        assert (acfg.topk_train, acfg.topk_infer) == (32, 64)

    def test_override(self):
        assert parse_run_config({"scale": 3})[0].scale == 3

    def test_range_error(self):
        with pytest.raises(ConfigError) as info:
            parse_run_config({"scale": 7})
        assert info.value.key == "scale"

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as info:
            parse_run_config({"windowsize": 8})
        assert info.value.key == "windowsize"

    def test_not_object(self):
        with pytest.raises(ConfigError):
            parse_run_config([1, 2])

    def test_file_roundtrip(self, tmp_path):
        cfg = ModelConfig(scale=2, layer_order="WA_first", topk_infer=16)
        save_run_config(cfg, tmp_path / "c.json")
        assert load_run_config(tmp_path / "c.json")[0] == cfg
        assert json.loads((tmp_path / "c.json").read_text())["layer_order"] == "WA_first"

    def test_malformed_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{scale: 2")
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "c.json")
