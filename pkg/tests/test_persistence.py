import struct

import numpy as np
import pytest

from lanecast import network, persistence
from lanecast.errors import CorruptModelError, ModelFormatError, ModelVersionError
from lanecast.network import CLASSIFIER, REGRESSOR, Architecture, TrunkConfig
from lanecast.neighborhood import Normalizer


@pytest.fixture
def saved(tmp_path, rng):
    p = network.init_params(Architecture(REGRESSOR), seed=11)
    for v in p.tensors.values():
        v += rng.normal(size=v.shape).astype(np.float32)
    norm = Normalizer(rng.normal(size=4), rng.uniform(0.5, 3, 4), rng.normal(size=(5, 2)), rng.uniform(1, 40, (5, 2)))
    path = persistence.save_model(p, norm, tmp_path / "reg.stcp")
    return p, norm, path


def test_round_trip_is_bit_identical(saved):
    p, norm, path = saved
    q, n2 = persistence.load_model(path)
    assert q.arch == p.arch and list(q.tensors) == list(p.tensors)
    for k in p.tensors:
        assert q.tensors[k].dtype == np.float32
        assert q.tensors[k].tobytes() == p.tensors[k].tobytes()
    for k in ("in_mean", "in_std", "out_mean", "out_std"):
        assert getattr(n2, k).shape == getattr(norm, k).shape
        assert getattr(n2, k).tobytes() == getattr(norm, k).tobytes()
    assert q.normalizer_digest == norm.digest()
    assert persistence.dumps(q, n2) == path.read_bytes()


@pytest.mark.parametrize("arch", [
    Architecture(CLASSIFIER),
    Architecture(REGRESSOR, maneuver_input=False),
    Architecture(CLASSIFIER, TrunkConfig.default(in_channels=2)),
    Architecture(REGRESSOR, TrunkConfig.default(dilated=False)),
])
def test_variants_round_trip(tmp_path, arch):
    p = network.init_params(arch, seed=1)
    norm = Normalizer.identity(arch.trunk.input_shape[0])
    q, n2 = persistence.load_model(persistence.save_model(p, norm, tmp_path / "m.stcp"))
    assert q.arch == arch and n2 == norm and n2.out_mean.shape == (1, 2)
    assert network.count_parameters(q) == network.count_parameters(p)


def test_header_layout(saved):
    _, _, path = saved
    buf = path.read_bytes()
    assert buf[:4] == b"STCP"
    version, tag = struct.unpack("<HB", buf[4:7])
    assert version == persistence.FORMAT_VERSION and tag == persistence.MODULE_TAGS[REGRESSOR]


@pytest.mark.parametrize("cut", [0.1, 0.5, 0.99])
def test_truncated_file_rejected(saved, cut):
    _, _, path = saved
    buf = path.read_bytes()
    path.write_bytes(buf[: int(len(buf) * cut)])
    with pytest.raises(CorruptModelError):
        persistence.load_model(path)


def test_tiny_truncation_rejected(saved):
    _, _, path = saved
    path.write_bytes(path.read_bytes()[:6])
    with pytest.raises(CorruptModelError):
        persistence.load_model(path)


def test_flipped_byte_rejected(saved):
    _, _, path = saved
    buf = bytearray(path.read_bytes())
    buf[len(buf) // 2] ^= 0xFF
    path.write_bytes(bytes(buf))
    with pytest.raises(CorruptModelError, match="checksum"):
        persistence.load_model(path)


def test_version_bump_rejected(saved):
    _, _, path = saved
    buf = bytearray(path.read_bytes())
    buf[4:6] = struct.pack("<H", persistence.FORMAT_VERSION + 1)
    path.write_bytes(bytes(buf))
    with pytest.raises(ModelVersionError):
        persistence.load_model(path)


def test_bad_magic_and_missing_file(tmp_path):
    (tmp_path / "x.stcp").write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(ModelFormatError, match="magic"):
        persistence.load_model(tmp_path / "x.stcp")
    with pytest.raises(FileNotFoundError, match="missing.stcp"):
        persistence.load_model(tmp_path / "missing.stcp")
