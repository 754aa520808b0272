import json
import struct

import numpy as np
import pytest

from biosigflux.checkpoint import MAGIC, CheckpointFormatError, checkpoint_bytes, load_checkpoint, save_checkpoint
from biosigflux.dataset import generate_dataset
from biosigflux.models import CnnConfig, SquatConfig, VitConfig, build_model, predict_mean
from biosigflux.preprocessing import fit_normalizer

TINY = {
    "cnn": CnnConfig(filters=[4, 4, 4, 4, 4], fc=[8, 8], dropout=0.2),
    "bcnn": CnnConfig(filters=[4, 4, 4, 4, 4], fc=[8, 8], dropout=0.2, init_sigma=0.05),
    "vit": VitConfig(dim=8, depth=1, heads=2, mlp_ratio=2, dropout=0.1),
    "squat": SquatConfig(dim=8, depth=1, heads=2, mlp_ratio=2, dropout=0.1, branch_channels=4),
}


@pytest.fixture(scope="module")
def norm():
    return fit_normalizer(generate_dataset(30, seed=1))


@pytest.mark.parametrize("kind", list(TINY))
def test_roundtrip_bit_exact(kind, norm, tmp_path):
    m = build_model(kind, TINY[kind], seed=5)
    m.trained = True
    path = save_checkpoint(tmp_path / "m.ckpt", m, norm, history=[{"epoch": 0}], dataset_fingerprint="abc")
    ck = load_checkpoint(path)
    assert ck.kind == kind and ck.dataset_fingerprint == "abc" and ck.model.trained
    for (na, a), (nb, b) in zip(m.named_parameters(), ck.model.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(a.data, b.data)
    x = np.random.default_rng(0).standard_normal((3, 1, 355)).astype(np.float32)
    np.testing.assert_array_equal(predict_mean(m, x), predict_mean(ck.model, x))
    np.testing.assert_array_equal(ck.normalizer.mean, norm.mean)
    np.testing.assert_array_equal(ck.normalizer.beta, norm.beta)
    # a reloaded model re-serializes to the same bytes
    again = checkpoint_bytes(ck.model, ck.normalizer, history=[{"epoch": 0}], dataset_fingerprint="abc")
    assert again == path.read_bytes()


def test_squat_prior_preserved(norm, tmp_path):
    m = build_model("squat", TINY["squat"])
    ck = load_checkpoint(save_checkpoint(tmp_path / "s.ckpt", m, norm))
    np.testing.assert_array_equal(ck.model.prior.P, m.prior.P)


def test_untrained_flag(norm, tmp_path):
    ck = load_checkpoint(save_checkpoint(tmp_path / "u.ckpt", build_model("cnn", TINY["cnn"]), norm))
    assert ck.model.trained is False


def test_header_layout(norm):
    raw = checkpoint_bytes(build_model("cnn", TINY["cnn"]), norm)
    magic, version, n = struct.unpack_from("<8sIQ", raw)
    assert magic == MAGIC and version == 1
    manifest = json.loads(raw[20:20 + n])
    last = manifest["parameters"][-1]
    assert len(raw) == 20 + n + last["offset"] + last["length"]


def test_bad_magic(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"NOTACKPT" + bytes(30))
    with pytest.raises(CheckpointFormatError, match="SQATCKPT"):
        load_checkpoint(p)


def test_truncated(norm, tmp_path):
    p = tmp_path / "t.ckpt"
    p.write_bytes(checkpoint_bytes(build_model("cnn", TINY["cnn"]), norm)[:-10])
    with pytest.raises(CheckpointFormatError, match="truncated"):
        load_checkpoint(p)


def test_too_short(tmp_path):
    p = tmp_path / "s.ckpt"
    p.write_bytes(b"SQAT")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(p)


def test_missing_file(tmp_path):
    with pytest.raises(OSError, match="gone.ckpt"):
        load_checkpoint(tmp_path / "gone.ckpt")
