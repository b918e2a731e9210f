#!/usr/bin/env python3
"""
测试文件操作和数据集管理模块
验证点云、图像、高斯集合、检查点、日志、嵌入表的读写以及数据集索引
"""

import sys
import os
import tempfile

import numpy as np
import pandas as pd
import pytest

# 添加当前目录到Python路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from errors import CheckpointError, FormatError, InvalidInputError
from file_manager import INDEX_FILE, DatasetManager
from file_operations import FileOperations
from splat_renderer import GaussianSet


def test_point_cloud_formats():
    """测试点云的二进制和文本格式"""
    print("🧪 测试点云读写...")
    ops = FileOperations()
    pc = np.array([[0.0, 0.5, -1.0], [0.25, 2.0, 3.5]])
    with tempfile.TemporaryDirectory() as tmp:
        binary = ops.write_point_cloud(pc, os.path.join(tmp, "a.bin"))
        assert os.path.getsize(binary) == 8 + 12 * 2
        assert np.array_equal(ops.read_point_cloud(binary), pc)

        text = ops.write_point_cloud(pc, os.path.join(tmp, "sub", "a.txt"), binary=False)
        assert np.array_equal(ops.read_point_cloud(text), pc)

        commented = os.path.join(tmp, "c.txt")
        with open(commented, 'w', encoding='utf-8') as f:
            f.write("# header\n\n1 2 3\n")
        assert ops.read_point_cloud(commented).tolist() == [[1, 2, 3]]

        bad = os.path.join(tmp, "bad.txt")
        with open(bad, 'w', encoding='utf-8') as f:
            f.write("1 2 3\n4 5\n")
        with pytest.raises(FormatError) as info:
            ops.read_point_cloud(bad)
        assert info.value.line == 2

        empty = os.path.join(tmp, "empty.txt")
        with open(empty, 'w', encoding='utf-8') as f:
            f.write("# nothing\n")
        with pytest.raises(InvalidInputError):
            ops.read_point_cloud(empty)
    print("✅ 点云读写测试通过")


def test_images():
    """测试PPM和16位深度PGM"""
    ops = FileOperations()
    rgb = np.zeros((3, 4, 3))
    rgb[0, 0] = [1.0, 0.0, 0.0]
    rgb[2, 3] = [0.0, 0.0, 1.0]
    depth = np.zeros((3, 4))
    depth[1, 1], depth[1, 2], depth[2, 2] = 2.0, 3.0, 2.5
    with tempfile.TemporaryDirectory() as tmp:
        ppm = ops.write_ppm(rgb, os.path.join(tmp, "view.ppm"))
        with open(ppm, 'rb') as f:
            assert f.read(2) == b"P6"
        assert np.array_equal(ops.read_ppm(ppm), rgb)

        pgm = os.path.join(tmp, "depth.pgm")
        assert ops.write_depth_pgm(depth, pgm) == (2.0, 3.0)
        assert os.path.exists(os.path.join(tmp, "depth.txt"))
        restored = ops.read_depth_pgm(pgm)
        assert np.all(restored[depth == 0] == 0)
        assert np.allclose(restored, depth, atol=(3.0 - 2.0) / 65534)

        flat = os.path.join(tmp, "flat.pgm")
        ops.write_depth_pgm(np.full((2, 2), 1.5), flat)
        assert np.array_equal(ops.read_depth_pgm(flat), np.full((2, 2), 1.5))

        with pytest.raises(InvalidInputError):
            ops.write_ppm(np.zeros((2, 2)), os.path.join(tmp, "x.ppm"))
        with open(pgm, 'r+b') as f:
            f.seek(-1, os.SEEK_END)
            f.truncate()
        with pytest.raises(FormatError):
            ops.read_depth_pgm(pgm)


def test_gaussians_file():
    ops = FileOperations()
    gs = GaussianSet(means=np.array([[0.0, 0.5, 1.0]]), scales=np.array([[0.25, 0.5, 0.125]]),
                     rotations=np.array([[1.0, 0.0, 0.0, 0.0]]), opacities=np.array([0.75]),
                     colors=np.array([[1.0, 0.5, 0.0]]))
    with tempfile.TemporaryDirectory() as tmp:
        path = ops.write_gaussians(gs, os.path.join(tmp, "scene.gs"))
        assert os.path.getsize(path) == 8 + 14 * 4
        back = ops.read_gaussians(path)
        assert np.array_equal(back.means, gs.means)
        assert np.array_equal(back.opacities, gs.opacities)
        assert np.array_equal(back.colors, gs.colors)
        with open(path, 'ab') as f:
            f.write(b"\x00")
        with pytest.raises(FormatError):
            ops.read_gaussians(path)


def test_checkpoint():
    """测试检查点保存、加载和损坏检测"""
    print("🧪 测试检查点...")
    ops = FileOperations()
    arrays = {"a.w": np.arange(6, dtype=float).reshape(2, 3), "b": np.array([0.1, 1e-300]), "s": np.array(2.5)}
    with tempfile.TemporaryDirectory() as tmp:
        path = ops.save_checkpoint(os.path.join(tmp, "ckpt"), arrays, {"step": 7, "format": "x"})
        assert path.endswith("ckpt.bin")
        loaded, header = ops.load_checkpoint(os.path.join(tmp, "ckpt"))
        assert list(loaded) == ["a.w", "b", "s"]
        for name, value in arrays.items():
            assert np.array_equal(loaded[name], value)
        assert header == {"step": "7", "format": "x"}
        assert list(ops.load_checkpoint(path)[0]) == ["a.w", "b", "s"]

        with open(path, 'ab') as f:
            f.write(np.zeros(1).tobytes())
        with pytest.raises(CheckpointError):
            ops.load_checkpoint(path)

        with pytest.raises(CheckpointError):
            ops.load_checkpoint(os.path.join(tmp, "missing"))
        with pytest.raises(CheckpointError):
            ops.save_checkpoint(os.path.join(tmp, "bad"), {"tab\tname": np.zeros(1)})

        manifest = os.path.join(tmp, "broken.manifest")
        ops.save_checkpoint(os.path.join(tmp, "broken"), {"w": np.zeros(3)})
        with open(manifest, 'w', encoding='utf-8') as f:
            f.write("w\t3\t1\n")
        with pytest.raises(CheckpointError):
            ops.load_checkpoint(os.path.join(tmp, "broken"))
    print("✅ 检查点测试通过")


def test_jsonl_and_embeddings():
    ops = FileOperations()
    with tempfile.TemporaryDirectory() as tmp:
        log = os.path.join(tmp, "metrics.jsonl")
        assert ops.read_jsonl(log).empty
        ops.append_jsonl({"step": 1, "total": 0.1 + 0.2}, log)
        ops.append_jsonl({"step": 2, "total": 1e-17}, log)
        df = ops.read_jsonl(log)
        assert df["step"].tolist() == [1, 2]
        assert df["total"].tolist() == [0.1 + 0.2, 1e-17]

        embeddings = np.random.default_rng(0).normal(size=(4, 3))
        path = ops.write_embeddings(embeddings, np.array([0, 1, 1, 2]), os.path.join(tmp, "emb.csv"))
        with open(path, 'r', encoding='utf-8') as f:
            assert f.readline().strip() == "label,e0,e1,e2"
        back, labels = ops.read_embeddings(path)
        assert np.array_equal(back, embeddings)
        assert labels.tolist() == [0, 1, 1, 2]

        no_label = os.path.join(tmp, "nolabel.csv")
        pd.DataFrame({"e0": [1.0]}).to_csv(no_label, index=False)
        with pytest.raises(FormatError):
            ops.read_embeddings(no_label)


def test_excel_and_json():
    ops = FileOperations()
    with tempfile.TemporaryDirectory() as tmp:
        xlsx = os.path.join(tmp, "report.xlsx")
        assert ops.write_excel_file(pd.DataFrame({"variant": ["full"], "acc": [0.5]}), xlsx, sheet_name="results")
        assert ops.get_excel_sheets(xlsx) == ["results"]
        assert ops.get_excel_sheets(os.path.join(tmp, "none.xlsx")) == []
        broken = os.path.join(tmp, "broken.xlsx")
        with open(broken, "wb") as f:
            f.write(b"not a workbook")
        assert ops.get_excel_sheets(broken) == []

        path = os.path.join(tmp, "nested", "data.json")
        assert ops.save_json_config({"名称": [1, 2]}, path)
        assert ops.load_json_config(path) == {"名称": [1, 2]}
        assert ops.load_json_config(os.path.join(tmp, "missing.json")) == {}


def test_dataset_manager():
    """测试数据集写入、索引和重新加载"""
    print("🧪 测试数据集管理...")
    rng = np.random.default_rng(1)
    samples = [(rng.normal(size=(20, 3)), label) for label in (0, 0, 1)]
    with tempfile.TemporaryDirectory() as tmp:
        data_dir = os.path.join(tmp, "data")
        manager = DatasetManager(data_dir)
        assert manager.records == []
        result = manager.materialize(samples, [5, 6, 7], ["sphere", "cube"])
        assert result["written"] == 3
        assert os.path.exists(os.path.join(data_dir, INDEX_FILE))

        reloaded = DatasetManager(data_dir)
        loaded = reloaded.load()
        assert [label for _, label in loaded] == [0, 0, 1]
        for (pc, _), (orig, _) in zip(loaded, samples):
            assert np.allclose(pc, orig, atol=1e-6)
        assert reloaded.get_summary()["classes"] == {"sphere": 2, "cube": 1}
        record = reloaded.get_record_by_name("shape_00002.bin")
        assert record.class_name == "cube" and record.seed == 7 and record.point_count == 20
        assert reloaded.get_record_by_name("nope.bin") is None

        os.remove(os.path.join(data_dir, "shape_00000.bin"))
        assert len(DatasetManager(data_dir).load()) == 2

        reloaded.clear_all()
        assert DatasetManager(data_dir).records == []
    print("✅ 数据集管理测试通过")


def test_materialize_fails_when_index_not_saved():
    """索引保存失败时materialize抛出OSError，而不是报告成功"""
    samples = [(np.zeros((20, 3)), 0)]
    with tempfile.TemporaryDirectory() as tmp:
        manager = DatasetManager(os.path.join(tmp, "data"))
        manager.file_ops.save_json_config = lambda data, path: False
        with pytest.raises(OSError):
            manager.materialize(samples, [0], ["sphere"])

        # 索引路径被目录占用
        blocked = os.path.join(tmp, "blocked")
        os.makedirs(os.path.join(blocked, INDEX_FILE))
        with pytest.raises(OSError):
            DatasetManager(blocked).materialize(samples, [0], ["sphere"])


if __name__ == "__main__":
    print("🚀 开始测试文件操作模块")
    print("=" * 50)
    tests = [test_point_cloud_formats, test_images, test_gaussians_file, test_checkpoint, test_jsonl_and_embeddings,
             test_excel_and_json, test_dataset_manager, test_materialize_fails_when_index_not_saved]
    for test in tests:
        test()
    print("=" * 50)
    print(f"🎉 全部 {len(tests)} 项测试通过")
