"""
三模态预训练工具 - 训练与评估模块
负责AdamW+余弦退火预训练、检查点、冻结编码器嵌入、线性探针、K-way N-shot小样本评估和消融实验
"""

import logging
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

import autodiff as ad
from encoders import EncoderConfig, TrimodalModel, mask_groups
from errors import CheckpointError, InvalidArgumentError, NumericAbortError
from file_operations import FileOperations
from geometry import as_point_cloud, fps, normalize_unit_sphere
from losses import LossConfig, cross_modal_loss, intra_modal_loss, mean_embedding, total_loss
from optimizer import AdamWState, adamw_step, cosine_lr
from triplet_pipeline import CLASS_NAMES, PipelineConfig, Triplet, build_triplets, make_dataset, make_split

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint"
METRICS_NAME = "metrics.jsonl"
CHECKPOINT_FORMAT = "trimodal-ckpt-1"
COMPONENTS = ("l_im", "l_cm_pi", "l_cm_pd", "l_cd")


@dataclass
class TrainConfig:
    """预训练参数，内含损失、三元组和编码器配置"""
    epochs: int = 20
    batch_size: int = 8
    lr0: float = 1e-4
    weight_decay: float = 0.05
    seed: int = 0
    deterministic: bool = True
    max_steps: int = 0
    per_class: int = 8
    num_classes: int = len(CLASS_NAMES)
    checkpoint_every_epoch: bool = True
    loss: LossConfig = field(default_factory=LossConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.batch_size < 2:
            raise InvalidArgumentError(f"batch_size 必须 >= 2（对比损失在N=1时恒为0），实际 {self.batch_size}")
        if self.epochs < 0 or self.max_steps < 0:
            raise InvalidArgumentError("epochs 和 max_steps 不能为负")
        if self.per_class < 1:
            raise InvalidArgumentError(f"per_class 必须 >= 1，实际 {self.per_class}")
        if not 1 <= self.num_classes <= len(CLASS_NAMES):
            raise InvalidArgumentError(f"num_classes 必须在 1..{len(CLASS_NAMES)} 之间，实际 {self.num_classes}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FewShotConfig:
    """K-way N-shot 设置"""
    k_way: int = 5
    n_shot: int = 10
    n_query: int = 20
    runs: int = 10


@dataclass
class PretrainResult:
    checkpoint: str
    metrics: str
    steps: int
    final_total: float


# ---------------------------------------------------------------- 训练

def _seed_rng(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(e) for e in entropy]))


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """第epoch轮的样本顺序，只依赖 (seed, epoch)"""
    return _seed_rng(seed, 1, epoch).permutation(n)


def mask_seed(seed: int, step: int, sample: int) -> int:
    return int(np.random.SeedSequence([int(seed), 2, int(step), int(sample)]).generate_state(1)[0])


def batch_losses(model: TrimodalModel, triplets: Sequence[Triplet], cfg: TrainConfig,
                 step: int, indices: Sequence[int]) -> Dict[str, ad.Tensor]:
    """
    一个批次的前向计算

    Args:
        model: 模型
        triplets: 三元组缓存
        cfg: 训练参数
        step: 全局步数（决定掩码种子）
        indices: 批次中的样本下标

    Returns:
        包含 l_im、l_cm_pi、l_cm_pd、l_cd、total 的张量字典

    Raises:
        NumericAbortError: 某个损失分量非有限，携带分量名和全局步数(step+1)
    """
    enc = cfg.encoder
    z1_rows, z2_rows, cd_terms = [], [], []
    for i in indices:
        tri = triplets[i]
        grouping = mask_groups(tri.point_cloud, enc.num_groups, enc.group_size, enc.mask_ratio,
                               mask_seed(cfg.seed, step, i))
        reconstructed, l_cd = model.mae(grouping, tri.point_cloud)
        z1_rows.append(ad.reshape(model.point(reconstructed), (1, -1)))
        z2_rows.append(ad.reshape(model.point(tri.gs_points), (1, -1)))
        cd_terms.append(ad.reshape(l_cd, (1,)))
    z1 = ad.concat(z1_rows, axis=0)
    z2 = ad.concat(z2_rows, axis=0)
    h_rgb = model.image(np.stack([triplets[i].novel_view for i in indices]))
    h_depth = model.depth(np.stack([triplets[i].depth_map for i in indices]))

    zbar = mean_embedding(z1, z2)
    parts = {
        "l_im": intra_modal_loss(z1, z2, cfg.loss.tau),
        "l_cm_pi": cross_modal_loss(zbar, h_rgb, cfg.loss.tau),
        "l_cm_pd": cross_modal_loss(zbar, h_depth, cfg.loss.tau),
        "l_cd": ad.mean(ad.concat(cd_terms, axis=0)),
    }
    for name in COMPONENTS:
        value = parts[name].item()
        if not np.isfinite(value):
            raise NumericAbortError(name, step + 1, value)
    parts["total"] = total_loss(parts["l_im"], parts["l_cm_pi"], parts["l_cm_pd"], parts["l_cd"], cfg.loss)
    return parts


def checkpoint_header(cfg: TrainConfig, step: int) -> Dict[str, Any]:
    header: Dict[str, Any] = {"format": CHECKPOINT_FORMAT, "step": step, "seed": cfg.seed,
                              "pipeline.n_points": cfg.pipeline.n_points}
    for key, value in cfg.encoder.to_dict().items():
        header[f"encoder.{key}"] = value
    return header


def encoder_config_from_header(header: Dict[str, str]) -> EncoderConfig:
    values = {k[len("encoder."):]: v for k, v in header.items() if k.startswith("encoder.")}
    if not values:
        raise CheckpointError("检查点清单缺少编码器配置")
    try:
        return EncoderConfig.from_dict(values)
    except ValueError as e:
        raise CheckpointError(f"检查点编码器配置无法解析: {e}")


def save_training_state(path: str, model: TrimodalModel, state: AdamWState, cfg: TrainConfig,
                        file_ops: FileOperations) -> str:
    arrays = model.state_dict()
    arrays.update(state.to_arrays())
    return file_ops.save_checkpoint(path, arrays, checkpoint_header(cfg, state.step))


def load_model(checkpoint: str, file_ops: Optional[FileOperations] = None) -> Tuple[TrimodalModel, Dict[str, str],
                                                                                  Dict[str, np.ndarray]]:
    """
    从检查点构建模型

    Returns:
        (模型, 清单头部, 全部数组)
    """
    file_ops = file_ops or FileOperations()
    arrays, header = file_ops.load_checkpoint(checkpoint)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"不支持的检查点格式: {header.get('format')!r}")
    model = TrimodalModel(encoder_config_from_header(header))
    model.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("adamw.")})
    return model, header, arrays


def pretrain(cfg: TrainConfig, dataset: Sequence[Tuple[np.ndarray, int]], out_dir: str,
             resume_from: Optional[str] = None, stop_after: Optional[int] = None,
             workers: int = 1, progress: bool = True) -> PretrainResult:
    """
    三模态预训练

    每步：构造批次 → MAE重建与点云编码 → 图像/深度编码 → 四项损失加权 → 反向传播 → AdamW。
    每步写一条JSON行指标；每轮结束和训练结束时写检查点。

    Args:
        cfg: 训练参数
        dataset: (点云, 标签) 序列
        out_dir: 输出目录
        resume_from: 从该检查点恢复参数、优化器状态和步数
        stop_after: 全局步数达到该值时保存检查点并提前返回
        workers: 三元组构造线程数
        progress: 是否显示进度条

    Returns:
        PretrainResult
    """
    if not dataset:
        raise InvalidArgumentError("预训练数据集为空")
    steps_per_epoch = len(dataset) // cfg.batch_size
    if steps_per_epoch == 0:
        raise InvalidArgumentError(f"数据集大小 {len(dataset)} 小于 batch_size={cfg.batch_size}")
    horizon = cfg.max_steps if cfg.max_steps > 0 else cfg.epochs * steps_per_epoch

    os.makedirs(out_dir, exist_ok=True)
    file_ops = FileOperations()
    ckpt_path = os.path.join(out_dir, CHECKPOINT_NAME)
    metrics_path = os.path.join(out_dir, METRICS_NAME)

    model = TrimodalModel(cfg.encoder, cfg.seed)
    params = model.parameters()
    state = AdamWState.for_params(params)
    if resume_from:
        resumed, header, arrays = load_model(resume_from, file_ops)
        if encoder_config_from_header(header) != cfg.encoder:
            raise CheckpointError("恢复检查点的编码器配置与当前配置不一致")
        model.load_state_dict(resumed.state_dict())
        state = AdamWState.from_arrays(arrays, int(header.get("step", 0)))
        logger.info(f"从检查点恢复: {resume_from}，第 {state.step} 步")
    elif os.path.exists(metrics_path):
        os.remove(metrics_path)
    open(metrics_path, 'a', encoding='utf-8').close()

    if horizon == 0:
        logger.info("训练步数为0，写出随机初始化检查点")
        path = save_training_state(ckpt_path, model, state, cfg, file_ops)
        return PretrainResult(path, metrics_path, 0, float("nan"))

    fps_start = 0 if cfg.deterministic else None
    triplets = build_triplets(dataset, cfg.pipeline, cfg.seed, workers=workers, fps_start=fps_start)
    last_step = horizon if stop_after is None else min(horizon, stop_after)
    final_total = float("nan")
    logger.info(f"开始预训练: {len(dataset)} 个样本，每轮 {steps_per_epoch} 步，共 {horizon} 步，参数 {model.num_parameters()} 个")

    for step in tqdm(range(state.step, last_step), desc="预训练", disable=not progress):
        epoch, position = divmod(step, steps_per_epoch)
        order = epoch_order(cfg.seed, epoch, len(dataset))
        indices = order[position * cfg.batch_size:(position + 1) * cfg.batch_size]
        lr = cosine_lr(step, horizon, cfg.lr0)

        model.zero_grad()
        parts = batch_losses(model, triplets, cfg, step, indices)
        values = {name: parts[name].item() for name in COMPONENTS}
        final_total = parts["total"].item()
        if not np.isfinite(final_total):
            raise NumericAbortError("total", step + 1, final_total)
        ad.backward(parts["total"])
        adamw_step(state, params, lr=lr, wd=cfg.weight_decay)

        record = {"step": step + 1, "lr": lr}
        record.update(values)
        record["total"] = final_total
        file_ops.append_jsonl(record, metrics_path)

        if cfg.checkpoint_every_epoch and (step + 1) % steps_per_epoch == 0:
            save_training_state(ckpt_path, model, state, cfg, file_ops)

    path = save_training_state(ckpt_path, model, state, cfg, file_ops)
    logger.info(f"预训练结束: 第 {state.step} 步，最终总损失 {final_total:.6f}")
    return PretrainResult(path, metrics_path, state.step, final_total)


def summarize_metrics(path: str, window: int = 5) -> pd.DataFrame:
    """
    训练日志首尾窗口的均值

    Returns:
        行为 first/last、列为各损失分量的DataFrame
    """
    df = FileOperations().read_jsonl(path)
    if df.empty:
        raise InvalidArgumentError(f"训练日志为空: {path}")
    columns = list(COMPONENTS) + ["total"]
    window = max(1, min(window, len(df)))
    return pd.DataFrame({"first": df[columns].head(window).mean(), "last": df[columns].tail(window).mean()}).T


# ---------------------------------------------------------------- 评估

def embed_clouds(model: TrimodalModel, clouds: Sequence[np.ndarray], n_points: int) -> np.ndarray:
    """冻结点云编码器：归一化、FPS(起点0)降采样、编码并l2归一化"""
    rows = []
    with ad.no_grad():
        for pc in clouds:
            normalized = normalize_unit_sphere(pc)
            sampled = normalized[fps(normalized, min(n_points, len(normalized)), 0)]
            rows.append(ad.l2_normalize(model.point(sampled)).data)
    return np.stack(rows) if rows else np.zeros((0, model.cfg.embed_dim))


def embed(checkpoint: str, dataset: Sequence[Tuple[np.ndarray, int]],
          n_points: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    用检查点中的点云编码器计算嵌入

    Returns:
        (嵌入矩阵 (N, d), 标签 (N,))
    """
    model, header, _ = load_model(checkpoint)
    if n_points is None:
        n_points = int(header.get("pipeline.n_points", PipelineConfig().n_points))
    embeddings = embed_clouds(model, [as_point_cloud(pc) for pc, _ in dataset], n_points)
    labels = np.array([label for _, label in dataset], dtype=np.int64)
    return embeddings, labels


class LinearProbe:
    """一对多线性分类器：平方hinge损失 + L2正则，全批量梯度下降"""

    def __init__(self, lam: float = 1e-3, steps: int = 500, lr: float = 0.1):
        self.lam = lam
        self.steps = steps
        self.lr = lr
        self.classes: Optional[np.ndarray] = None
        self.mean: Optional[np.ndarray] = None
        self.std: Optional[np.ndarray] = None
        self.weight: Optional[ad.Tensor] = None
        self.bias: Optional[ad.Tensor] = None

    def _standardize(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std

    def fit(self, features: np.ndarray, labels: np.ndarray) -> "LinearProbe":
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels)
        self.classes = np.unique(labels)
        if len(self.classes) < 2:
            raise InvalidArgumentError("线性探针至少需要2个类别")
        self.mean = features.mean(axis=0)
        std = features.std(axis=0)
        self.std = np.where(std > 1e-12, std, 1.0)
        x = ad.constant(self._standardize(features))
        signs = np.where(labels[:, None] == self.classes[None, :], 1.0, -1.0)
        self.weight = ad.parameter(np.zeros((features.shape[1], len(self.classes))))
        self.bias = ad.parameter(np.zeros(len(self.classes)))
        for _ in range(self.steps):
            self.weight.zero_grad()
            self.bias.zero_grad()
            margins = ad.mul(ad.dense(x, self.weight, self.bias), signs)
            slack = ad.hinge(margins, 1.0)
            data_term = ad.mean(ad.sum(ad.mul(slack, slack), axis=1))
            loss = ad.add(data_term, ad.mul(ad.sum(ad.mul(self.weight, self.weight)), self.lam))
            ad.backward(loss)
            self.weight.data -= self.lr * self.weight.grad
            self.bias.data -= self.lr * self.bias.grad
        return self

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        return self._standardize(features) @ self.weight.data + self.bias.data

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.decision_function(features), axis=1)]

    def score(self, features: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.predict(features) == np.asarray(labels)))


def stratified_split(labels: np.ndarray, seed: int, train_fraction: float = 0.7) -> Tuple[np.ndarray, np.ndarray]:
    """按类别分层的确定性划分，每类训练和测试至少各1个"""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.nonzero(labels == c)[0])
        n_train = min(max(int(round(train_fraction * len(idx))), 1), len(idx) - 1)
        train.extend(idx[:n_train].tolist())
        test.extend(idx[n_train:].tolist())
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(test, dtype=np.int64))


def linear_probe(embeddings: np.ndarray, labels: np.ndarray, seed: int) -> float:
    """
    冻结嵌入上的线性探针，70/30分层划分后返回测试准确率

    Args:
        embeddings: (N, d) 嵌入
        labels: (N,) 标签
        seed: 划分种子

    Returns:
        测试集准确率
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise InvalidArgumentError("线性探针至少需要2个类别")
    if counts.min() < 4:
        raise InvalidArgumentError(f"类别 {classes[np.argmin(counts)]} 只有 {counts.min()} 个样本，至少需要4个")
    train, test = stratified_split(labels, seed)
    classifier = LinearProbe().fit(embeddings[train], labels[train])
    accuracy = classifier.score(embeddings[test], labels[test])
    logger.info(f"线性探针: 训练 {len(train)} 个，测试 {len(test)} 个，准确率 {accuracy:.4f}")
    return accuracy


def fewshot_from_embeddings(embeddings: np.ndarray, labels: np.ndarray, fs: FewShotConfig, seed: int,
                            run_seeds: Optional[Sequence[int]] = None) -> Tuple[float, float]:
    """
    在预先计算的嵌入上执行K-way N-shot评估

    Args:
        embeddings: (N, d) 嵌入
        labels: (N,) 标签
        fs: 小样本设置
        seed: 主种子，第r次实验使用由 (seed, r) 派生的种子
        run_seeds: 显式指定每次实验的种子

    Returns:
        (平均准确率, 总体标准差)
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    need = fs.n_shot + fs.n_query
    for c, count in zip(classes, counts):
        if count < need:
            raise InvalidArgumentError(f"类别 {c} 只有 {count} 个样本，少于 N+查询数 = {need}")
    k = min(fs.k_way, len(classes))
    if k < fs.k_way:
        logger.warning(f"类别数只有 {len(classes)}，K 从 {fs.k_way} 调整为 {k}")
    if k < 2:
        raise InvalidArgumentError("小样本评估至少需要2个类别")

    seeds = list(run_seeds) if run_seeds is not None else [
        int(np.random.SeedSequence([int(seed), r]).generate_state(1)[0]) for r in range(fs.runs)]
    accuracies = []
    for run_seed in seeds:
        rng = np.random.default_rng(run_seed)
        chosen = np.sort(rng.choice(classes, size=k, replace=False))
        support, query = [], []
        for c in chosen:
            idx = rng.permutation(np.nonzero(labels == c)[0])
            support.extend(idx[:fs.n_shot].tolist())
            query.extend(idx[fs.n_shot:need].tolist())
        classifier = LinearProbe().fit(embeddings[support], labels[support])
        accuracies.append(classifier.score(embeddings[query], labels[query]))
    mean, std = float(np.mean(accuracies)), float(np.std(accuracies))
    logger.info(f"{k}-way {fs.n_shot}-shot: {len(accuracies)} 次实验，平均 {mean:.4f} ± {std:.4f}")
    return mean, std


def fewshot_eval(checkpoint: str, dataset: Sequence[Tuple[np.ndarray, int]], fs: FewShotConfig,
                 seed: int) -> Tuple[float, float]:
    embeddings, labels = embed(checkpoint, dataset)
    return fewshot_from_embeddings(embeddings, labels, fs, seed)


# ---------------------------------------------------------------- 实验

def gradcheck_total_loss(cfg: TrainConfig, coords: Optional[int] = None) -> float:
    """
    在两个三元组的微批次上对总损失做全参数梯度检查

    Returns:
        最大相对误差
    """
    pipeline = replace(cfg.pipeline, n_points=min(cfg.pipeline.n_points, cfg.pipeline.source_points))
    samples = make_dataset(pipeline, 1, cfg.seed)[:2]
    triplets = build_triplets(samples, pipeline, cfg.seed)
    model = TrimodalModel(cfg.encoder, cfg.seed)
    params = list(model.parameters().values())

    def objective() -> ad.Tensor:
        return batch_losses(model, triplets, cfg, 0, [0, 1])["total"]

    error = ad.gradcheck(objective, params, coords=coords, seed=cfg.seed)
    logger.info(f"总损失梯度检查: {len(params)} 个参数张量，最大相对误差 {error:.3e}")
    return error


def run_ablation(base_cfg: TrainConfig, preset: Dict[str, Any], out_dir: str,
                 workers: int = 1) -> Tuple[pd.DataFrame, Dict[str, bool]]:
    """
    消融实验：每个种子上训练各变体和随机初始化基线，在测试划分上做线性探针和小样本评估

    Args:
        base_cfg: 基础训练参数
        preset: {"seeds": [...], "variants": {名称: {配置键: 值}}, "test_per_class": 可选, "fewshot": 可选}
        out_dir: 输出目录，写出 ablation_results.csv 和 ablation_results.xlsx
        workers: 三元组构造线程数

    Returns:
        (结果表, 各变体的多数投票结论)
    """
    from config_loader import ConfigValidator

    validator = ConfigValidator()
    seeds = [int(s) for s in preset.get("seeds", [0, 1, 2])]
    variants: Dict[str, Dict[str, Any]] = preset.get("variants", {"full": {}})
    if "full" not in variants:
        raise InvalidArgumentError("消融预设必须包含 full 变体")
    fs = FewShotConfig(**preset.get("fewshot", {}))
    test_per_class = int(preset.get("test_per_class", base_cfg.per_class))
    file_ops = FileOperations()
    rows = []

    for seed in seeds:
        seed_cfg = validator.apply_overrides(base_cfg, {"seed": seed})
        train = make_split(seed_cfg.pipeline, seed_cfg.per_class, seed, "train", seed_cfg.num_classes)
        test = make_split(seed_cfg.pipeline, test_per_class, seed, "test", seed_cfg.num_classes)
        runs = dict(variants)
        runs["random_init"] = {"epochs": 0, "max_steps": 0}
        for name, overrides in runs.items():
            cfg = validator.apply_overrides(seed_cfg, overrides)
            run_dir = os.path.join(out_dir, f"seed{seed}", name)
            result = pretrain(cfg, train, run_dir, workers=workers, progress=False)
            embeddings, labels = embed(result.checkpoint, test)
            accuracy = linear_probe(embeddings, labels, seed)
            try:
                fs_mean, fs_std = fewshot_from_embeddings(embeddings, labels, fs, seed)
            except InvalidArgumentError as e:
                logger.warning(f"跳过小样本评估: {e}")
                fs_mean, fs_std = float("nan"), float("nan")
            rows.append({"variant": name, "seed": seed, "probe_accuracy": accuracy,
                         "fewshot_mean": fs_mean, "fewshot_std": fs_std, "final_total": result.final_total})
            logger.info(f"消融 seed={seed} {name}: 探针准确率 {accuracy:.4f}")

    df = pd.DataFrame(rows, columns=["variant", "seed", "probe_accuracy", "fewshot_mean", "fewshot_std",
                                     "final_total"])
    verdict = ablation_verdict(df, seeds)
    write_ablation_report(df, out_dir, file_ops)
    return df, verdict


def write_ablation_report(df: pd.DataFrame, out_dir: str, file_ops: Optional[FileOperations] = None) -> str:
    """
    写出 ablation_results.csv 和 ablation_results.xlsx，并确认工作簿中有 results 工作表

    Returns:
        Excel文件路径

    Raises:
        OSError: 工作簿写入失败或缺少 results 工作表
    """
    file_ops = file_ops or FileOperations()
    os.makedirs(out_dir, exist_ok=True)
    df.to_csv(os.path.join(out_dir, "ablation_results.csv"), index=False)
    xlsx = os.path.join(out_dir, "ablation_results.xlsx")
    if not file_ops.write_excel_file(df, xlsx, sheet_name="results") or "results" not in file_ops.get_excel_sheets(xlsx):
        raise OSError(f"消融结果工作簿写入失败: {xlsx}")
    logger.info(f"消融结果已写出: {xlsx}")
    return xlsx


def ablation_verdict(df: pd.DataFrame, seeds: Sequence[int], margin: float = 0.10) -> Dict[str, bool]:
    """
    多数投票：full 不差于每个去项变体；单视角变体比随机初始化至少高 margin
    """
    table = df.pivot(index="seed", columns="variant", values="probe_accuracy")
    verdict = {}
    for name in table.columns:
        if name in ("full", "random_init"):
            continue
        if name == "single_view":
            wins = (table[name] >= table["random_init"] + margin).sum()
        else:
            wins = (table["full"] >= table[name]).sum()
        verdict[name] = bool(wins * 2 > len(seeds))
    return verdict
