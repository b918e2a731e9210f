#!/usr/bin/env python3
"""
测试训练与评估模块
验证预训练循环、检查点恢复、线性探针、小样本评估、梯度检查和消融结论
"""

import sys
import os
import json
import tempfile
from dataclasses import replace
from unittest import mock

import numpy as np
import pandas as pd
import pytest

# 添加当前目录到Python路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import autodiff as ad
import trainer_eval
from config_loader import load_config
from encoders import EncoderConfig
from errors import CheckpointError, InvalidArgumentError, NumericAbortError
from file_operations import FileOperations
from losses import LossConfig
from trainer_eval import (COMPONENTS, FewShotConfig, LinearProbe, TrainConfig, ablation_verdict, embed,
                          embed_clouds, epoch_order, fewshot_from_embeddings, gradcheck_total_loss, linear_probe,
                          load_model, pretrain, stratified_split, summarize_metrics,
                          write_ablation_report)
from triplet_pipeline import PipelineConfig, make_dataset

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config")

TINY = TrainConfig(
    epochs=2, batch_size=2, lr0=1e-3, per_class=1,
    pipeline=PipelineConfig(n_points=32, source_points=64, render_size=8, n_views=2, k_nn=4),
    encoder=EncoderConfig(embed_dim=8, hidden_dim=8, k_neighbors=4, num_groups=4, group_size=8,
                          mask_ratio=0.5, patch_size=4),
)


def _dataset():
    return make_dataset(TINY.pipeline, TINY.per_class, TINY.seed)


def test_train_config_checks():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(batch_size=1)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(epochs=-1)
    for bad in (0, 6):
        with pytest.raises(InvalidArgumentError):
            TrainConfig(num_classes=bad)
    assert TrainConfig().num_classes == 5
    assert TrainConfig().to_dict()["loss"]["tau"] == 0.1


def test_epoch_order():
    assert np.array_equal(epoch_order(0, 1, 20), epoch_order(0, 1, 20))
    assert not np.array_equal(epoch_order(0, 1, 20), epoch_order(0, 2, 20))
    assert sorted(epoch_order(3, 0, 20).tolist()) == list(range(20))


def test_pretrain_writes_checkpoint_and_metrics():
    """测试预训练写出检查点和逐步指标"""
    print("🧪 测试预训练...")
    with tempfile.TemporaryDirectory() as tmp:
        result = pretrain(TINY, _dataset(), tmp, progress=False)
        assert result.steps == 4
        assert os.path.exists(result.checkpoint)
        with open(result.metrics, 'r', encoding='utf-8') as f:
            records = [json.loads(line) for line in f]
        assert [r["step"] for r in records] == [1, 2, 3, 4]
        assert records[0]["lr"] == pytest.approx(TINY.lr0)
        for record in records:
            assert set(record) == {"step", "lr", "total", *COMPONENTS}
            assert all(np.isfinite(record[k]) for k in COMPONENTS)
        assert records[-1]["total"] == pytest.approx(result.final_total)

        summary = summarize_metrics(result.metrics, window=2)
        assert list(summary.index) == ["first", "last"]
        assert "total" in summary.columns

        model, header, _ = load_model(result.checkpoint)
        assert header["step"] == "4"
        assert model.cfg == TINY.encoder
    print("✅ 预训练测试通过")


def test_resume_matches_uninterrupted_run():
    """中断后恢复训练与不中断训练得到相同参数"""
    print("🧪 测试检查点恢复...")
    dataset = _dataset()
    file_ops = FileOperations()
    with tempfile.TemporaryDirectory() as tmp:
        full = pretrain(TINY, dataset, os.path.join(tmp, "full"), progress=False)
        first = pretrain(TINY, dataset, os.path.join(tmp, "part"), stop_after=2, progress=False)
        assert first.steps == 2
        resumed = pretrain(TINY, dataset, os.path.join(tmp, "resumed"), resume_from=first.checkpoint,
                           progress=False)
        assert resumed.steps == 4
        a, _ = file_ops.load_checkpoint(full.checkpoint)
        b, _ = file_ops.load_checkpoint(resumed.checkpoint)
        assert list(a) == list(b)
        for name in a:
            assert np.array_equal(a[name], b[name]), name
        assert resumed.final_total == full.final_total

        other = replace(TINY, encoder=replace(TINY.encoder, hidden_dim=6))
        with pytest.raises(CheckpointError):
            pretrain(other, dataset, os.path.join(tmp, "bad"), resume_from=first.checkpoint, progress=False)
    print("✅ 检查点恢复测试通过")


def test_zero_horizon_and_bad_dataset():
    with tempfile.TemporaryDirectory() as tmp:
        result = pretrain(replace(TINY, epochs=0), _dataset(), tmp, progress=False)
        assert result.steps == 0
        assert os.path.exists(result.checkpoint)
        assert os.path.getsize(result.metrics) == 0
        with pytest.raises(InvalidArgumentError):
            pretrain(TINY, [], tmp, progress=False)
        with pytest.raises(InvalidArgumentError):
            pretrain(replace(TINY, batch_size=8), _dataset(), tmp, progress=False)


def test_embed():
    """测试冻结编码器嵌入"""
    with tempfile.TemporaryDirectory() as tmp:
        result = pretrain(replace(TINY, epochs=0), _dataset(), tmp, progress=False)
        embeddings, labels = embed(result.checkpoint, _dataset())
        assert embeddings.shape == (5, 8)
        assert labels.tolist() == [0, 1, 2, 3, 4]
        assert np.allclose(np.linalg.norm(embeddings, axis=1), 1.0)
        again, _ = embed(result.checkpoint, _dataset())
        assert np.array_equal(embeddings, again)

        model, _, _ = load_model(result.checkpoint)
        assert embed_clouds(model, [], 32).shape == (0, 8)


def test_linear_probe_separable_and_shuffled():
    """测试线性探针：可分数据准确率高，打乱标签接近随机"""
    print("🧪 测试线性探针...")
    rng = np.random.default_rng(0)
    centers = np.eye(3) * 5.0
    labels = np.repeat(np.arange(3), 20)
    features = centers[labels] + rng.normal(scale=0.5, size=(60, 3))
    assert linear_probe(features, labels, 0) >= 0.95

    noise = rng.normal(size=(1000, 4))
    random_labels = rng.permutation(np.repeat([0, 1], 500))
    assert abs(linear_probe(noise, random_labels, 1) - 0.5) < 0.1

    with pytest.raises(InvalidArgumentError):
        linear_probe(features, np.zeros(60, dtype=int), 0)
    with pytest.raises(InvalidArgumentError):
        linear_probe(features[:23], labels[:23], 0)
    print("✅ 线性探针测试通过")


def test_stratified_split_and_linear_classifier():
    labels = np.repeat([0, 1, 2], 10)
    train, test = stratified_split(labels, 3)
    assert len(train) == 21 and len(test) == 9
    assert set(train).isdisjoint(test)
    assert np.bincount(labels[test]).tolist() == [3, 3, 3]
    again = stratified_split(labels, 3)
    assert np.array_equal(train, again[0])

    classifier = LinearProbe(steps=200).fit(np.array([[0.0], [1.0], [10.0], [11.0]]), np.array([7, 7, 9, 9]))
    assert classifier.predict(np.array([[0.5], [10.5]])).tolist() == [7, 9]


def test_fewshot_perfect_embeddings():
    """测试one-hot嵌入上的小样本评估"""
    print("🧪 测试小样本评估...")
    labels = np.repeat(np.arange(5), 30)
    embeddings = 3.0 * np.eye(5)[labels]
    mean, std = fewshot_from_embeddings(embeddings, labels, FewShotConfig(), 0)
    assert mean == 1.0 and std == 0.0

    seeds = [11, 12, 13]
    fs = FewShotConfig(k_way=3, n_shot=2, n_query=5, runs=3)
    assert fewshot_from_embeddings(embeddings, labels, fs, 0, seeds) == fewshot_from_embeddings(
        embeddings, labels, fs, 99, seeds)

    # 类别不足K个时自动缩小K
    three = labels < 3
    assert fewshot_from_embeddings(embeddings[three], labels[three], FewShotConfig(runs=2), 0)[0] == 1.0

    with pytest.raises(InvalidArgumentError, match="类别 4"):
        fewshot_from_embeddings(embeddings[:149], labels[:149], FewShotConfig(), 0)
    print("✅ 小样本评估测试通过")


def test_gradcheck_total_loss():
    """测试总损失的梯度检查（嵌入维度16）"""
    print("🧪 测试总损失梯度检查...")
    cfg = load_config(os.path.join(CONFIG_DIR, "gradcheck_tiny.cfg"))
    assert cfg.encoder.embed_dim == 16 and not cfg.pipeline.jitter
    assert gradcheck_total_loss(cfg, coords=8) < 1e-4
    print("✅ 总损失梯度检查通过")


def test_logged_total_matches_weighted_components():
    """日志中的total等于各分量按系数加权求和"""
    loss = LossConfig(alpha=0.5, beta=0.25, gamma=2.0, delta=0.75)
    cfg = replace(TINY, loss=loss)
    with tempfile.TemporaryDirectory() as tmp:
        result = pretrain(cfg, _dataset(), tmp, progress=False)
        with open(result.metrics, 'r', encoding='utf-8') as f:
            records = [json.loads(line) for line in f]
    assert len(records) == result.steps
    for r in records:
        weighted = loss.alpha * r["l_im"] + loss.beta * r["l_cm_pi"] + loss.gamma * r["l_cm_pd"] + loss.delta * r["l_cd"]
        assert abs(r["total"] - weighted) <= 1e-12


def test_smoke_config_is_deterministic_and_learns():
    """冒烟配置：同种子两次运行日志逐字节相同，末尾损失低于开头"""
    print("🧪 冒烟预训练...")
    cfg = load_config(os.path.join(CONFIG_DIR, "pretrain_smoke.cfg"))
    dataset = make_dataset(cfg.pipeline, cfg.per_class, cfg.seed, cfg.num_classes)
    assert len(dataset) == 16
    with tempfile.TemporaryDirectory() as tmp:
        first = pretrain(cfg, dataset, os.path.join(tmp, "a"), progress=False)
        second = pretrain(cfg, dataset, os.path.join(tmp, "b"), progress=False)
        with open(first.metrics, 'rb') as a, open(second.metrics, 'rb') as b:
            assert a.read() == b.read()
        totals = FileOperations().read_jsonl(first.metrics)["total"]
        assert len(totals) == 30
        assert totals.tail(5).mean() < totals.head(5).mean()
    print("✅ 冒烟预训练通过")


def test_nonfinite_component_aborts_training():
    """某一步的损失分量变为NaN时中止，报告分量名和步数，且不写该步日志"""
    real = trainer_eval.intra_modal_loss
    calls = []

    def nan_from_second_call(z1, z2, tau):
        calls.append(1)
        value = real(z1, z2, tau)
        return ad.mul(value, np.nan) if len(calls) >= 2 else value

    with tempfile.TemporaryDirectory() as tmp:
        with mock.patch.object(trainer_eval, "intra_modal_loss", side_effect=nan_from_second_call):
            with pytest.raises(NumericAbortError) as info:
                pretrain(TINY, _dataset(), tmp, progress=False)
        assert info.value.component == "l_im"
        assert info.value.step == 2
        assert np.isnan(info.value.value)
        with open(os.path.join(tmp, "metrics.jsonl"), 'r', encoding='utf-8') as f:
            assert [json.loads(line)["step"] for line in f] == [1]


def test_write_ablation_report():
    df = pd.DataFrame([{"variant": "full", "seed": 0, "probe_accuracy": 0.8}])
    with tempfile.TemporaryDirectory() as tmp:
        xlsx = write_ablation_report(df, os.path.join(tmp, "out"))
        assert os.path.exists(os.path.join(tmp, "out", "ablation_results.csv"))
        assert "results" in FileOperations().get_excel_sheets(xlsx)
        assert pd.read_excel(xlsx, sheet_name="results")["probe_accuracy"].tolist() == [0.8]

        class SilentFailure(FileOperations):
            def write_excel_file(self, df, output_path, sheet_name='Sheet1', index=False):
                return True

        with pytest.raises(OSError):
            write_ablation_report(df, os.path.join(tmp, "silent"), SilentFailure())


def test_ablation_verdict():
    rows = []
    accuracy = {
        0: {"full": 0.8, "no_image": 0.7, "single_view": 0.6, "random_init": 0.4},
        1: {"full": 0.6, "no_image": 0.7, "single_view": 0.45, "random_init": 0.4},
        2: {"full": 0.9, "no_image": 0.85, "single_view": 0.55, "random_init": 0.4},
    }
    for seed, values in accuracy.items():
        for variant, value in values.items():
            rows.append({"variant": variant, "seed": seed, "probe_accuracy": value})
    verdict = ablation_verdict(pd.DataFrame(rows), [0, 1, 2])
    assert verdict == {"no_image": True, "single_view": True}

    accuracy[2]["no_image"] = 0.95
    rows = [{"variant": v, "seed": s, "probe_accuracy": a} for s, vals in accuracy.items() for v, a in vals.items()]
    assert ablation_verdict(pd.DataFrame(rows), [0, 1, 2])["no_image"] is False


if __name__ == "__main__":
    print("🚀 开始测试训练与评估模块")
    print("=" * 50)
    tests = [test_train_config_checks, test_epoch_order, test_pretrain_writes_checkpoint_and_metrics,
             test_resume_matches_uninterrupted_run, test_zero_horizon_and_bad_dataset, test_embed,
             test_linear_probe_separable_and_shuffled, test_stratified_split_and_linear_classifier,
             test_fewshot_perfect_embeddings, test_gradcheck_total_loss,
             test_logged_total_matches_weighted_components, test_smoke_config_is_deterministic_and_learns,
             test_nonfinite_component_aborts_training, test_write_ablation_report, test_ablation_verdict]
    for test in tests:
        test()
    print("=" * 50)
    print(f"🎉 全部 {len(tests)} 项测试通过")
