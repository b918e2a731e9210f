"""
三模态预训练工具 - 编码器模块
点云编码器（简化边卷积）、图像/深度编码器（分块全连接）以及生成重建点云的掩码自编码器
"""

import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

import autodiff as ad
from autodiff import Tensor
from errors import CheckpointError, ContractViolation, InvalidArgumentError, ShapeError
from geometry import as_point_cloud, fps, knn

logger = logging.getLogger(__name__)

PREFIX_POINT = "f_theta_P"
PREFIX_IMAGE = "f_theta_I"
PREFIX_DEPTH = "f_theta_D"
PREFIX_MAE = "mae"


@dataclass
class EncoderConfig:
    """编码器结构参数"""
    embed_dim: int = 64
    hidden_dim: int = 64
    k_neighbors: int = 8
    num_groups: int = 16
    group_size: int = 32
    mask_ratio: float = 0.6
    patch_size: int = 8

    def __post_init__(self):
        for name in ("embed_dim", "hidden_dim", "k_neighbors", "num_groups", "group_size", "patch_size"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"编码器参数 {name} 必须 >= 1")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise InvalidArgumentError(f"掩码比例 {self.mask_ratio} 超出范围 [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        kwargs = {}
        for name, value in data.items():
            if name in cls.__dataclass_fields__:
                kind = cls.__dataclass_fields__[name].type
                kwargs[name] = float(value) if kind in (float, "float") else int(value)
        return cls(**kwargs)


class Dense:
    """全连接层，权重和偏置按 U(-1/√fan_in, 1/√fan_in) 初始化"""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(fan_in)
        self.weight = ad.parameter(rng.uniform(-bound, bound, (fan_in, fan_out)))
        self.bias = ad.parameter(rng.uniform(-bound, bound, fan_out))

    def __call__(self, x) -> Tensor:
        return ad.dense(x, self.weight, self.bias)


class ParamModule:
    """按属性顺序收集 Dense 层和独立参数"""

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        params = OrderedDict()
        for name, value in vars(self).items():
            if isinstance(value, Dense):
                params[f"{name}.weight"] = value.weight
                params[f"{name}.bias"] = value.bias
            elif isinstance(value, Tensor) and value.requires_grad:
                params[name] = value
        return params


class PointEncoder(ParamModule):
    """
    点云编码器 f_θP

    两层边特征：对每个点的k个近邻（含自身）构造 [x_i, x_j - x_i]，全连接+relu后在近邻上取最大；
    全局特征为点维最大池化与平均池化之和，再映射到d维。
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.k = cfg.k_neighbors
        self.edge1 = Dense(6, cfg.hidden_dim, rng)
        self.edge2 = Dense(2 * cfg.hidden_dim, cfg.hidden_dim, rng)
        self.head = Dense(cfg.hidden_dim, cfg.embed_dim, rng)

    @staticmethod
    def _edge(x: Tensor, nbr: np.ndarray, layer: Dense) -> Tensor:
        center_idx = np.repeat(np.arange(nbr.shape[0])[:, None], nbr.shape[1], axis=1)
        center = ad.gather(x, center_idx)
        features = ad.concat([center, ad.sub(ad.gather(x, nbr), center)], axis=2)
        return ad.max_reduce(ad.relu(layer(features)), axis=1)

    def __call__(self, pc) -> Tensor:
        x = pc if isinstance(pc, Tensor) else ad.constant(as_point_cloud(pc))
        if x.ndim != 2 or x.shape[1] != 3:
            raise ShapeError(f"点云编码器需要 (N, 3) 输入，实际 {x.shape}")
        n = x.shape[0]
        if n < self.k:
            raise InvalidArgumentError(f"点数 {n} 少于近邻数量 {self.k}")
        nbr = knn(x.data, x.data, self.k)
        h = self._edge(x, nbr, self.edge1)
        h = self._edge(h, nbr, self.edge2)
        pooled = ad.add(ad.max_reduce(h, axis=0), ad.mean(h, axis=0))
        return self.head(pooled)

    def encode_batch(self, clouds: Sequence) -> Tensor:
        """逐个编码并堆叠为 (B, d)"""
        rows = [ad.reshape(self(pc), (1, -1)) for pc in clouds]
        return ad.concat(rows, axis=0)


def patchify(image: np.ndarray, patch_size: int, channels: int) -> np.ndarray:
    """
    把图像切成不重叠的 p×p 分块并展平

    Args:
        image: (H, W, C) 或单通道 (H, W)
        patch_size: 分块边长
        channels: 期望通道数

    Returns:
        (分块数, p*p*C) 数组
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3 or img.shape[2] != channels:
        raise ShapeError(f"图像形状 {img.shape} 与通道数 {channels} 不匹配")
    h, w, _ = img.shape
    p = patch_size
    if h % p or w % p:
        raise ShapeError(f"图像尺寸 {h}x{w} 不能被分块大小 {p} 整除")
    blocks = img.reshape(h // p, p, w // p, p, channels).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(-1, p * p * channels)


class ImageEncoder(ParamModule):
    """图像编码器 f_θI（3通道）或深度编码器 f_θD（1通道），结构相同、参数独立"""

    def __init__(self, cfg: EncoderConfig, channels: int, rng: np.random.Generator):
        if channels not in (1, 3):
            raise InvalidArgumentError(f"通道数必须为1或3，实际 {channels}")
        self.channels = channels
        self.patch_size = cfg.patch_size
        patch_dim = cfg.patch_size * cfg.patch_size * channels
        self.embed = Dense(patch_dim, cfg.hidden_dim, rng)
        self.block1 = Dense(cfg.hidden_dim, cfg.hidden_dim, rng)
        self.block2 = Dense(cfg.hidden_dim, cfg.hidden_dim, rng)
        self.head = Dense(cfg.hidden_dim, cfg.embed_dim, rng)

    def _is_single(self, images: np.ndarray) -> bool:
        if self.channels == 3:
            return images.ndim == 3
        return images.ndim == 2 or (images.ndim == 3 and images.shape[2] == 1)

    def __call__(self, images) -> Tensor:
        """单张图像返回 (d,)，批次返回 (B, d)"""
        images = np.asarray(images, dtype=np.float64)
        single = self._is_single(images)
        batch = images[None] if single else images
        patches = np.stack([patchify(img, self.patch_size, self.channels) for img in batch])
        h = self.embed(ad.constant(patches))
        h = ad.relu(self.block1(h))
        h = ad.relu(self.block2(h))
        out = self.head(ad.mean(h, axis=1))
        return ad.reshape(out, (out.shape[1],)) if single else out


@dataclass
class Grouping:
    """掩码分组：G个FPS中心、G×M近邻成员、每组是否被掩码"""
    centers: np.ndarray
    members: np.ndarray
    mask: np.ndarray
    ratio: float

    @property
    def num_masked(self) -> int:
        return int(self.mask.sum())


def masked_count(ratio: float, groups: int) -> int:
    """四舍五入(半数进位)后的掩码组数，0<ratio<1 时限制在 [1, G-1]"""
    count = int(math.floor(ratio * groups + 0.5))
    if 0.0 < ratio < 1.0:
        count = min(max(count, 1), groups - 1)
    return count


def mask_groups(pc, G: int, M: int, ratio: float, rng_seed: int) -> Grouping:
    """
    FPS选中心、kNN取组成员、按种子随机掩码

    Args:
        pc: 点云
        G: 组数
        M: 每组点数
        ratio: 掩码比例
        rng_seed: 随机种子

    Returns:
        Grouping
    """
    pc = as_point_cloud(pc)
    n = len(pc)
    if G < 1 or G > n:
        raise InvalidArgumentError(f"组数 G={G} 超出范围 [1, {n}]")
    if M < 1 or M > n:
        raise InvalidArgumentError(f"组大小 M={M} 超出范围 [1, {n}]")
    if not 0.0 <= ratio <= 1.0:
        raise InvalidArgumentError(f"掩码比例 {ratio} 超出范围 [0, 1]")
    if G < 2 and 0.0 < ratio < 1.0:
        raise InvalidArgumentError("部分掩码至少需要2个组")
    centers = fps(pc, G, 0)
    members = knn(pc, pc[centers], M)
    rng = np.random.default_rng(rng_seed)
    mask = np.zeros(G, dtype=bool)
    mask[rng.permutation(G)[:masked_count(ratio, G)]] = True
    return Grouping(centers=centers, members=members, mask=mask, ratio=ratio)


class MaskedAutoencoder(ParamModule):
    """单尺度掩码自编码器，为被掩码的组预测 M 个相对中心的偏移"""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        hidden = cfg.hidden_dim
        self.group_size = cfg.group_size
        self.hidden = hidden
        self.group_embed = Dense(cfg.group_size * 3, hidden, rng)
        self.pos_embed = Dense(3, hidden, rng)
        self.block1 = Dense(hidden, hidden, rng)
        self.block2 = Dense(2 * hidden, hidden, rng)
        self.decoder1 = Dense(2 * hidden, hidden, rng)
        self.decoder2 = Dense(hidden, cfg.group_size * 3, rng)
        self.mask_token = ad.parameter(rng.uniform(-1.0, 1.0, hidden) / math.sqrt(hidden))

    def _encode_visible(self, local: np.ndarray, centers: np.ndarray) -> Tensor:
        v = len(local)
        if v == 0:
            return ad.constant(np.zeros(self.hidden))
        tokens = ad.add(self.group_embed(ad.constant(local.reshape(v, -1))),
                        self.pos_embed(ad.constant(centers)))
        h1 = ad.relu(self.block1(tokens))
        context = ad.broadcast(ad.max_reduce(h1, axis=0), (v,))
        h2 = ad.relu(self.block2(ad.concat([h1, context], axis=1)))
        return ad.max_reduce(h2, axis=0)

    @staticmethod
    def _group_chamfer(pred: Tensor, truth: np.ndarray) -> Tensor:
        """逐组 l2 Chamfer（组内坐标），再对组取平均"""
        g, m, _ = truth.shape
        rows = (np.arange(g)[:, None, None] * m + np.arange(m)[None, :, None]).repeat(m, axis=2)
        pred_exp = ad.gather(ad.reshape(pred, (g * m, 3)), rows)
        truth_exp = np.broadcast_to(truth[:, None, :, :], (g, m, m, 3))
        diff = ad.sub(pred_exp, truth_exp)
        dist = ad.sum(ad.mul(diff, diff), axis=3)
        to_truth = ad.mean(ad.min_reduce(dist, axis=2), axis=1)
        to_pred = ad.mean(ad.min_reduce(dist, axis=1), axis=1)
        return ad.mean(ad.add(to_truth, to_pred))

    def __call__(self, grouping: Grouping, pc) -> Tuple[Tensor, Tensor]:
        pc = as_point_cloud(pc)
        masked = np.nonzero(grouping.mask)[0]
        visible = np.nonzero(~grouping.mask)[0]
        if len(masked) == 0:
            if grouping.ratio > 0:
                raise ContractViolation(f"掩码比例 {grouping.ratio} > 0 但没有被掩码的组")
            return ad.constant(pc.copy()), ad.constant(0.0)
        if grouping.members.shape[1] != self.group_size:
            raise ShapeError(f"组大小 {grouping.members.shape[1]} 与解码器输出 {self.group_size} 不一致")

        centers = pc[grouping.centers]
        groups = pc[grouping.members]
        local = groups - centers[:, None, :]

        context = self._encode_visible(local[visible], centers[visible])
        gm = len(masked)
        queries = ad.add(ad.broadcast(self.mask_token, (gm,)), self.pos_embed(ad.constant(centers[masked])))
        decoded = ad.relu(self.decoder1(ad.concat([queries, ad.broadcast(context, (gm,))], axis=1)))
        offsets = ad.reshape(self.decoder2(decoded), (gm, self.group_size, 3))

        loss = self._group_chamfer(offsets, local[masked])
        anchors = np.repeat(centers[masked][:, None, :], self.group_size, axis=1)
        predicted = ad.reshape(ad.add(offsets, anchors), (gm * self.group_size, 3))
        kept = ad.constant(groups[visible].reshape(-1, 3))
        return ad.concat([kept, predicted], axis=0), loss


def point_encoder_forward(encoder: PointEncoder, pc) -> Tensor:
    return encoder(pc)


def image_encoder_forward(encoder: ImageEncoder, image) -> Tensor:
    return encoder(image)


def mae_forward(mae: MaskedAutoencoder, grouping: Grouping, pc) -> Tuple[Tensor, Tensor]:
    """
    掩码重建

    Returns:
        (P̂: 可见组原始点与被掩码组预测点的并集, 组内Chamfer损失)
    """
    return mae(grouping, pc)


class TrimodalModel:
    """持有三个编码器和掩码自编码器的全部参数"""

    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.point = PointEncoder(cfg, rng)
        self.image = ImageEncoder(cfg, 3, rng)
        self.depth = ImageEncoder(cfg, 1, rng)
        self.mae = MaskedAutoencoder(cfg, rng)

    def parameters(self) -> "OrderedDict[str, Tensor]":
        params = OrderedDict()
        for prefix, module in ((PREFIX_POINT, self.point), (PREFIX_IMAGE, self.image),
                               (PREFIX_DEPTH, self.depth), (PREFIX_MAE, self.mae)):
            for name, tensor in module.named_parameters().items():
                tensor.name = f"{prefix}.{name}"
                params[tensor.name] = tensor
        return params

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, t.data.copy()) for name, t in self.parameters().items())

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        """按名称和形状严格匹配后原地写入"""
        params = self.parameters()
        missing = [name for name in params if name not in state]
        unexpected = [name for name in state if name not in params]
        if missing or unexpected:
            raise CheckpointError(f"检查点参数与模型不匹配，缺少 {missing[:5]}，多余 {unexpected[:5]}")
        for name, tensor in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise CheckpointError(f"参数 {name} 形状 {value.shape} 与模型 {tensor.shape} 不匹配")
            tensor.data[...] = value

    def zero_grad(self):
        ad.zero_grad(self.parameters().values())


def build_model(cfg: EncoderConfig, seed: int) -> TrimodalModel:
    logger.info(f"初始化模型: 嵌入维度 {cfg.embed_dim}，隐藏维度 {cfg.hidden_dim}")
    return TrimodalModel(cfg, seed)

