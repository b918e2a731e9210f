"""
三模态预训练工具 - 主控制器模块
负责整合所有模块，解析命令行子命令并把错误映射为退出码
"""

import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config_loader import load_config, load_preset
from errors import ConfigError, InvalidArgumentError, NumericError, TrimodalError
from file_manager import DatasetManager
from file_operations import FileOperations
from resource_manager import DEFAULT_CONFIG_NAME, ResourceManager
from trainer_eval import (FewShotConfig, PretrainResult, TrainConfig, embed, fewshot_eval,
                          gradcheck_total_loss, linear_probe, pretrain, run_ablation, summarize_metrics)
from triplet_pipeline import CLASS_NAMES, build_triplet, load_pointcloud, make_dataset, shape_seed, write_preview

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
GRADCHECK_TOLERANCE = 1e-4


class TrimodalController:
    """三模态预训练工具主控制器"""

    def __init__(self, resource_manager: Optional[ResourceManager] = None):
        self.resource_manager = resource_manager or ResourceManager()
        self.file_operations = FileOperations()
        self.workers = self.resource_manager.workers

    def _config(self, config_path: Optional[str]) -> TrainConfig:
        path = self.resource_manager.get_resource_path(config_path or DEFAULT_CONFIG_NAME)
        return load_config(path)

    def _dataset(self, data_dir: str) -> List[Tuple[np.ndarray, int]]:
        manager = DatasetManager(data_dir)
        samples = manager.load()
        if not samples:
            raise InvalidArgumentError(f"数据集目录中没有可用的形状: {data_dir}")
        print(f"📂 已加载数据集 {data_dir}: {len(samples)} 个形状")
        return samples

    def handle_pretrain(self, config_path: Optional[str], out_dir: Optional[str],
                        resume: Optional[str] = None, data_dir: Optional[str] = None) -> PretrainResult:
        """
        处理预训练

        Args:
            config_path: 配置文件
            out_dir: 输出目录，缺省为资源管理器的输出目录
            resume: 恢复用的检查点
            data_dir: 已物化的数据集目录，缺省时按配置种子生成合成数据集

        Returns:
            PretrainResult
        """
        cfg = self._config(config_path)
        out_dir = out_dir or self.resource_manager.get_output_directory()
        dataset = (self._dataset(data_dir) if data_dir
                   else make_dataset(cfg.pipeline, cfg.per_class, cfg.seed, cfg.num_classes))
        result = pretrain(cfg, dataset, out_dir, resume_from=resume, workers=self.workers)
        print(f"✅ 预训练完成: {result.steps} 步，最终总损失 {result.final_total:.6f}")
        print(f"   检查点: {result.checkpoint}")
        if os.path.getsize(result.metrics) > 0:
            print(summarize_metrics(result.metrics).to_string(float_format=lambda v: f"{v:.4f}"))
        return result

    def handle_embed(self, checkpoint: str, data_dir: str, out_path: str) -> str:
        """计算数据集嵌入并写出CSV"""
        embeddings, labels = embed(checkpoint, self._dataset(data_dir))
        path = self.file_operations.write_embeddings(embeddings, labels, out_path)
        print(f"✅ 嵌入已写出: {path} ({embeddings.shape[0]} × {embeddings.shape[1]})")
        return path

    def handle_probe(self, emb_path: str, seed: int) -> float:
        embeddings, labels = self.file_operations.read_embeddings(emb_path)
        accuracy = linear_probe(embeddings, labels, seed)
        print(f"✅ 线性探针准确率: {accuracy:.4f}")
        return accuracy

    def handle_fewshot(self, checkpoint: str, data_dir: str, k_way: int, n_shot: int, seed: int,
                       n_query: int = 20, runs: int = 10) -> Tuple[float, float]:
        """处理 K-way N-shot 小样本评估"""
        fs = FewShotConfig(k_way=k_way, n_shot=n_shot, n_query=n_query, runs=runs)
        mean, std = fewshot_eval(checkpoint, self._dataset(data_dir), fs, seed)
        print(f"✅ {k_way}-way {n_shot}-shot: {mean * 100:.2f}% ± {std * 100:.2f}%")
        return mean, std

    def handle_gradcheck(self, config_path: Optional[str], coords: Optional[int] = None) -> float:
        """
        对总损失做梯度检查

        Raises:
            NumericError: 最大相对误差超过容差
        """
        error = gradcheck_total_loss(self._config(config_path), coords=coords)
        if error >= GRADCHECK_TOLERANCE:
            raise NumericError(f"梯度检查失败: 最大相对误差 {error:.3e} >= {GRADCHECK_TOLERANCE:g}")
        print(f"✅ 梯度检查通过: 最大相对误差 {error:.3e}")
        return error

    def handle_gen_synthetic(self, out_dir: str, per_class: int, seed: int,
                             config_path: Optional[str] = None) -> dict:
        """生成合成数据集并写入目录和索引"""
        cfg = self._config(config_path)
        samples = make_dataset(cfg.pipeline, per_class, seed, cfg.num_classes)
        manager = DatasetManager(out_dir)
        manager.clear_all()
        result = manager.materialize(samples, [shape_seed(seed, i) for i in range(len(samples))], CLASS_NAMES)
        print(f"✅ 已生成 {result['written']} 个形状，索引: {result['index']}")
        for class_name, count in manager.get_summary()['classes'].items():
            print(f"   {class_name}: {count}")
        return result

    def handle_render_preview(self, in_path: str, prefix: str, config_path: Optional[str] = None,
                              seed: int = 0) -> List[str]:
        """为单个形状写出输入视图、新视角和深度图"""
        pipeline = self._config(config_path).pipeline
        pc = load_pointcloud(in_path)
        if len(pc) < pipeline.n_points:
            logger.warning(f"点云只有 {len(pc)} 个点，n_points 降为 {len(pc)}")
            pipeline = replace(pipeline, n_points=len(pc), k_nn=min(pipeline.k_nn, len(pc) - 1))
        parent = os.path.dirname(prefix)
        if parent:
            os.makedirs(parent, exist_ok=True)
        paths = write_preview(build_triplet(pc, pipeline, seed), prefix, self.file_operations)
        print(f"✅ 预览已写出 {len(paths)} 个文件:")
        for path in paths:
            print(f"   {path}")
        return paths

    def handle_ablation(self, config_path: Optional[str], preset_path: str, out_dir: Optional[str]):
        cfg = self._config(config_path)
        preset = load_preset(preset_path)
        out_dir = out_dir or os.path.join(self.resource_manager.get_output_directory(), "ablation")
        df, verdict = run_ablation(cfg, preset, out_dir, workers=self.workers)
        print(df.to_string(index=False))
        for name, passed in verdict.items():
            print(f"{'✅' if passed else '❌'} {name}")
        return df, verdict


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trimodal", description="三模态点云自监督预训练工具")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="预训练三个编码器")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--resume")
    p.add_argument("--data")

    p = sub.add_parser("embed", help="用冻结的点云编码器计算嵌入")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("probe", help="嵌入上的线性探针")
    p.add_argument("--emb", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("fewshot", help="K-way N-shot 小样本评估")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--query", type=int, default=20)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gradcheck", help="总损失梯度检查")
    p.add_argument("--config")
    p.add_argument("--coords", type=int)

    p = sub.add_parser("gen-synthetic", help="生成合成形状数据集")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")

    p = sub.add_parser("render-preview", help="渲染单个形状的三元组预览")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ablation", help="消融实验")
    p.add_argument("--config")
    p.add_argument("--preset", required=True)
    p.add_argument("--out")
    return parser


def dispatch(controller: TrimodalController, args: argparse.Namespace):
    if args.command == "pretrain":
        return controller.handle_pretrain(args.config, args.out, args.resume, args.data)
    if args.command == "embed":
        return controller.handle_embed(args.ckpt, args.data, args.out)
    if args.command == "probe":
        return controller.handle_probe(args.emb, args.seed)
    if args.command == "fewshot":
        return controller.handle_fewshot(args.ckpt, args.data, args.k, args.n, args.seed, args.query, args.runs)
    if args.command == "gradcheck":
        return controller.handle_gradcheck(args.config, args.coords)
    if args.command == "gen-synthetic":
        return controller.handle_gen_synthetic(args.out, args.per_class, args.seed, args.config)
    if args.command == "render-preview":
        return controller.handle_render_preview(args.in_path, args.out, args.config, args.seed)
    if args.command == "ablation":
        return controller.handle_ablation(args.config, args.preset, args.out)
    raise InvalidArgumentError(f"未知命令: {args.command}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    主函数

    Returns:
        退出码：0 成功，1 其他失败，2 配置错误，3 数值错误
    """
    args = build_parser().parse_args(argv)
    try:
        resource_manager = ResourceManager()
        logging.basicConfig(level=getattr(logging, resource_manager.log_level),
                            format='%(asctime)s - %(levelname)s - %(message)s')
        dispatch(TrimodalController(resource_manager), args)
        return EXIT_OK
    except ConfigError as e:
        print(f"❌ 配置错误: {e}")
        return EXIT_CONFIG
    except NumericError as e:
        print(f"❌ 数值错误: {e}")
        return EXIT_NUMERIC
    except (TrimodalError, OSError) as e:
        print(f"❌ 执行失败: {e}")
        return EXIT_FAILURE
    except Exception as e:
        logger.exception(f"未预期的错误: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
