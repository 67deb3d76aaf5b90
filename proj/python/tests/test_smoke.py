import numpy as np
import pytest

import afft


def test_tensor_round_trip(tmp_path):
    a = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    path = tmp_path / "t.rft"
    afft.write_tensor(a, path)
    b = afft.read_tensor(path)
    assert b.dtype == np.float32
    assert np.array_equal(a, b)


def test_bad_magic_is_reported_with_module(tmp_path):
    path = tmp_path / "bad.rft"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(afft.AfftError) as info:
        afft.read_tensor(path)
    assert info.value.code == "BadMagic"
    assert info.value.module == "tensor-io"


def test_metrics_on_small_mask():
    mask = np.zeros((4, 4), dtype=np.uint8)
    mask[1:3, 1:3] = 200
    assert afft.metric_sr([(1, 1), (0, 0)], mask) == 0.5
    assert afft.metric_nss([(1, 1)], mask) == 1.0
    assert afft.metric_dtm([(1, 1)], mask) == 0.0
    assert afft.metric_dtm([(0, 1)], mask) == pytest.approx(1.0 / np.hypot(4, 4))


def test_dihedral_codes_and_rotation():
    assert afft.dihedral_codes() == ["r0", "r90", "r180", "r270", "fr0", "fr90", "fr180", "fr270"]
    # 5x3 image: r90 maps (x, y) to (h-1-y, x)
    assert afft.dihedral_apply("r90", 4, 0, 5, 3) == (2, 4)


def test_cosine_and_grasp():
    assert afft.cosine_similarity([1.0, 0.0], [2.0, 0.0]) == pytest.approx(1.0)
    assert afft.select_grasp([(0, 0, 1), (0.1, 0, 0.5), (1, 1, 1)], (0.1, 0.0, 0.45)) == 1


def test_fixture_self_transfer(tmp_path):
    corpus = afft.generate_fixtures(tmp_path / "fx", seed=7)
    records, skipped = afft.extract(corpus["videos"], tmp_path / "mem")
    assert len(records) == 12 and skipped == []
    target = tmp_path / "fx" / "eval" / "images" / "cup_00_same.png"
    out = afft.transfer(tmp_path / "mem", target, "cup", topk=1)
    assert out["source"] == "cup_00"
    assert out["considered"] == ["cup_00"]
    assert len(out["points"]) == 5
