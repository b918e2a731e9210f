#!/usr/bin/env python3
"""
长时间实验测试
预训练相对随机初始化的提升以及消融方向；
需要设置 TRIMODAL_RUN_SLOW=1 才会运行
"""

import sys
import os
import tempfile

import numpy as np
import pytest

# 添加当前目录到Python路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config_loader import ConfigValidator, load_config, load_preset
from file_operations import FileOperations
from trainer_eval import FewShotConfig, embed, fewshot_from_embeddings, linear_probe, pretrain
from triplet_pipeline import make_split

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config")
SEEDS = (0, 1, 2)

slow = pytest.mark.skipif(os.getenv("TRIMODAL_RUN_SLOW") != "1", reason="设置 TRIMODAL_RUN_SLOW=1 运行长时间实验")


def _window_means(metrics_path: str, window: int):
    df = FileOperations().read_jsonl(metrics_path)
    return df["total"].head(window).mean(), df["total"].tail(window).mean()


@slow
def test_pretraining_beats_random_init():
    """桌面规模：探针和5-way 10-shot准确率相对随机初始化的提升，3个种子多数投票"""
    print("🧪 预训练相对随机初始化...")
    validator = ConfigValidator()
    base = validator.apply_overrides(load_config(os.path.join(CONFIG_DIR, "pretrain_desk.cfg")), {"max_steps": 300})
    fs = FewShotConfig(k_way=5, n_shot=10, n_query=20, runs=10)
    probe_wins, fewshot_wins = 0, 0
    with tempfile.TemporaryDirectory() as tmp:
        for seed in SEEDS:
            cfg = validator.apply_overrides(base, {"seed": seed})
            train = make_split(cfg.pipeline, cfg.per_class, seed, "train")
            test = make_split(cfg.pipeline, 40, seed, "test")
            trained = pretrain(cfg, train, os.path.join(tmp, f"trained{seed}"), progress=False)
            head, tail = _window_means(trained.metrics, 20)
            assert tail < head

            random_cfg = validator.apply_overrides(cfg, {"epochs": 0, "max_steps": 0})
            random_init = pretrain(random_cfg, train, os.path.join(tmp, f"random{seed}"), progress=False)

            e_trained, labels = embed(trained.checkpoint, test)
            e_random, _ = embed(random_init.checkpoint, test)
            assert np.linalg.norm(e_trained[labels == 0].mean(0) - e_trained[labels == 1].mean(0)) > 0
            if linear_probe(e_trained, labels, seed) >= linear_probe(e_random, labels, seed) + 0.10:
                probe_wins += 1
            trained_fs, _ = fewshot_from_embeddings(e_trained, labels, fs, seed)
            random_fs, _ = fewshot_from_embeddings(e_random, labels, fs, seed)
            if trained_fs > random_fs:
                fewshot_wins += 1
    assert probe_wins * 2 > len(SEEDS)
    assert fewshot_wins * 2 > len(SEEDS)
    print("✅ 预训练提升测试通过")


@slow
def test_ablation_direction():
    """消融：完整目标不差于去掉单项的变体，单视角仍优于随机初始化"""
    from trainer_eval import run_ablation

    base = ConfigValidator().apply_overrides(load_config(os.path.join(CONFIG_DIR, "pretrain_desk.cfg")),
                                             {"max_steps": 300})
    preset = load_preset(os.path.join(CONFIG_DIR, "ablation.json5"))
    preset["test_per_class"] = 40
    with tempfile.TemporaryDirectory() as tmp:
        df, verdict = run_ablation(base, preset, tmp)
        assert set(df["variant"]) == {"full", "no_image", "no_depth", "no_intra", "single_view", "random_init"}
        assert os.path.exists(os.path.join(tmp, "ablation_results.xlsx"))
        full = df[df["variant"] == "full"]["final_total"].to_numpy()
        no_image = df[df["variant"] == "no_image"]["final_total"].to_numpy()
        assert not np.array_equal(full, no_image)
    assert all(verdict.values()), verdict


if __name__ == "__main__":
    print("🚀 长时间实验请使用: TRIMODAL_RUN_SLOW=1 pytest test_experiments.py -s")
    sys.exit(pytest.main([__file__, "-v", "-s"]))
