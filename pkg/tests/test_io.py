import numpy as np
import pytest

from mcamvggt import io
from mcamvggt.config import build_scene
from mcamvggt.errors import CorruptFile
from mcamvggt.geometry import PoseSE3
from mcamvggt.synthetic import generate_scene

TINY = {"frames": 2, "cameras": 2, "width": 28, "height": 14, "boxes": 4, "dynamic": 1, "lidar_rays": 256}


@pytest.fixture(scope="module")
def tiny():
    spec = build_scene(TINY)
    return spec, generate_scene(spec)


def test_pose_json_round_trip():
    p = PoseSE3.random(np.random.default_rng(0), 4.0)
    obj = io.pose_to_json(p)
    assert len(obj["R"]) == 9 and len(obj["t"]) == 3
    assert io.pose_from_json(obj).allclose(p, 0.0)


def test_pose_json_rejects_short():
    with pytest.raises(ValueError):
        io.pose_from_json({"R": [1, 0, 0], "t": [0, 0, 0]})


def test_rig_json_round_trip(tiny):
    spec, _ = tiny
    rig = io.rig_from_json(io.rig_to_json(spec.rig))
    for a, b in zip(rig, spec.rig):
        assert a.camera_id == b.camera_id
        assert a.extrinsic.allclose(b.extrinsic, 0.0)
        assert a.intrinsics == b.intrinsics


def test_scene_json_round_trip(tiny):
    spec, frames = tiny
    back = io.scene_from_json(io.scene_to_json(spec))
    again = generate_scene(back)
    for fa, fb in zip(frames, again):
        assert fa.images.tobytes() == fb.images.tobytes()
        assert fa.sparse_points.tobytes() == fb.sparse_points.tobytes()


def test_raw_round_trip(tmp_path):
    a = np.random.default_rng(1).random((5, 7, 3)).astype(np.float32)
    io.write_raw(tmp_path / "a.raw", a)
    assert (tmp_path / "a.raw").stat().st_size == 16 + a.nbytes
    np.testing.assert_array_equal(io.read_raw(tmp_path / "a.raw"), a)


def test_raw_bad_magic(tmp_path):
    (tmp_path / "x.raw").write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(CorruptFile):
        io.read_raw(tmp_path / "x.raw")


def test_dataset_layout_and_round_trip(tmp_path, tiny):
    spec, frames = tiny
    io.write_dataset(tmp_path, spec, frames)
    assert (tmp_path / "scene" / spec.name / "spec.json").exists()
    assert (tmp_path / "rig.json").exists()
    images = sorted(tmp_path.glob("frames/*/*/image.raw"))
    assert len(images) == len(frames) * len(spec.rig)
    spec2, frames2 = io.read_dataset(tmp_path)
    for fa, fb in zip(frames, frames2):
        np.testing.assert_array_equal(fa.images, fb.images)
        np.testing.assert_array_equal(fa.masks, fb.masks)
        np.testing.assert_allclose(fa.depths, fb.depths, rtol=1e-6)
        np.testing.assert_allclose(fa.sparse_points, fb.sparse_points, rtol=1e-6, atol=1e-5)
        assert fa.ego_pose.allclose(fb.ego_pose, 0.0)


def test_dataset_byte_identical(tmp_path, tiny):
    spec, frames = tiny
    io.write_dataset(tmp_path / "a", spec, frames)
    io.write_dataset(tmp_path / "b", spec, generate_scene(build_scene(TINY)))
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_read_dataset_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        io.read_dataset(tmp_path)


@pytest.mark.parametrize("with_color", [False, True])
def test_ply_round_trip(tmp_path, with_color):
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(50, 3))
    col = rng.random((50, 3)) if with_color else None
    io.write_ply(tmp_path / "c.ply", pts, col)
    back, bcol = io.read_ply(tmp_path / "c.ply")
    np.testing.assert_allclose(back, pts, atol=1e-6)
    if with_color:
        np.testing.assert_allclose(bcol, np.round(col * 255) / 255, atol=1e-9)
    else:
        assert bcol is None


def test_checkpoint_round_trip(tmp_path):
    params = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.float32(3.5), "c": np.zeros(0)}
    io.save_checkpoint(tmp_path / "m.ckpt", {"k": 1}, params)
    cfg, back = io.load_checkpoint(tmp_path / "m.ckpt")
    assert cfg == {"k": 1}
    assert list(back) == ["a", "b", "c"]
    np.testing.assert_array_equal(back["a"], params["a"])
    assert back["b"].shape == () and back["b"] == 3.5


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "bad").write_bytes(b"hello world")
    with pytest.raises(CorruptFile):
        io.load_checkpoint(tmp_path / "bad")


@pytest.mark.parametrize("cut", [3, 16, 20])
def test_raw_truncated(tmp_path, cut):
    io.write_raw(tmp_path / "a.raw", np.ones((4, 4), np.float32))
    data = (tmp_path / "a.raw").read_bytes()
    (tmp_path / "a.raw").write_bytes(data[:cut])
    with pytest.raises(CorruptFile):
        io.read_raw(tmp_path / "a.raw")


@pytest.mark.parametrize("edit", ["truncate", "extend"])
def test_checkpoint_wrong_length(tmp_path, edit):
    io.save_checkpoint(tmp_path / "m.ckpt", {}, {"w": np.ones((8, 8), np.float32)})
    data = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "m.ckpt").write_bytes(data[:-10] if edit == "truncate" else data + b"\0\0\0\0")
    with pytest.raises(CorruptFile):
        io.load_checkpoint(tmp_path / "m.ckpt")
