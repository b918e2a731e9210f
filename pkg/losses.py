"""
三模态预训练工具 - 损失函数模块
模态内NT-Xent、跨模态对比损失以及加权总损失
"""

import logging
from dataclasses import asdict, dataclass
from typing import Union

import numpy as np

import autodiff as ad
from autodiff import Tensor
from errors import InvalidArgumentError, NumericError, ShapeError

logger = logging.getLogger(__name__)

Scalar = Union[float, Tensor]


@dataclass
class LossConfig:
    """温度τ与总损失系数 α(模态内)、β(点云-图像)、γ(点云-深度)、δ(重建)"""
    tau: float = 0.1
    alpha: float = 1e-3
    beta: float = 1e-3
    gamma: float = 1e-3
    delta: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise InvalidArgumentError(f"温度tau必须为正，实际 {self.tau}")
        for name in ("alpha", "beta", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"损失系数 {name} 不能为负")

    def to_dict(self) -> dict:
        return asdict(self)


def cosine_sim(a, b) -> float:
    """余弦相似度 a·b/(|a||b|)"""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"向量长度不一致: {a.shape} 与 {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na <= 1e-12 or nb <= 1e-12:
        raise NumericError("余弦相似度的输入向量范数过小")
    return float(np.dot(a, b) / (na * nb))


def _check_batches(z1: Tensor, z2: Tensor, what: str):
    if z1.ndim != 2 or z2.ndim != 2:
        raise ShapeError(f"{what}需要二维嵌入批次，实际 {z1.shape} 与 {z2.shape}")
    if z1.shape != z2.shape:
        raise ShapeError(f"{what}的两组嵌入形状不一致: {z1.shape} 与 {z2.shape}")
    if z1.shape[0] == 0:
        raise InvalidArgumentError(f"{what}的批次不能为空")


def intra_modal_loss(z1, z2, tau: float) -> Tensor:
    """
    模态内NT-Xent损失

    拼接为 [Z1; Z2]，第i行的正样本是第i+N行；分母遍历除自身外的全部2N行。

    Args:
        z1: (N, d) 第一视图嵌入（由重建点云得到）
        z2: (N, d) 第二视图嵌入（由高斯点云得到）
        tau: 温度

    Returns:
        标量张量
    """
    z1, z2 = ad.as_tensor(z1), ad.as_tensor(z2)
    _check_batches(z1, z2, "模态内损失")
    if tau <= 0:
        raise InvalidArgumentError(f"温度tau必须为正，实际 {tau}")
    n = z1.shape[0]
    z = ad.l2_normalize(ad.concat([z1, z2], axis=0), axis=1)
    logits = ad.mul(ad.matmul(z, ad.transpose(z)), 1.0 / tau)
    mask = ~np.eye(2 * n, dtype=bool)
    targets = np.concatenate([np.arange(n, 2 * n), np.arange(0, n)])
    return ad.mean(ad.softmax_cross_entropy(logits, targets, mask))


def cross_modal_loss(zbar, h, tau: float) -> Tensor:
    """
    跨模态对比损失，分母包含同下标项，并对两个方向取平均

    Args:
        zbar: (N, d) 点云平均嵌入
        h: (N, d) 图像或深度嵌入
        tau: 温度

    Returns:
        标量张量
    """
    zbar, h = ad.as_tensor(zbar), ad.as_tensor(h)
    _check_batches(zbar, h, "跨模态损失")
    if tau <= 0:
        raise InvalidArgumentError(f"温度tau必须为正，实际 {tau}")
    n = zbar.shape[0]
    a = ad.l2_normalize(zbar, axis=1)
    b = ad.l2_normalize(h, axis=1)
    logits = ad.mul(ad.matmul(a, ad.transpose(b)), 1.0 / tau)
    targets = np.arange(n)
    forward = ad.softmax_cross_entropy(logits, targets)
    reverse = ad.softmax_cross_entropy(ad.transpose(logits), targets)
    return ad.mean(ad.concat([forward, reverse], axis=0))


def mean_embedding(z1, z2) -> Tensor:
    """z̄ = normalize((z1 + z2)/2)"""
    return ad.l2_normalize(ad.mul(ad.add(z1, z2), 0.5), axis=-1)


def total_loss(l_im: Scalar, l_cm_pi: Scalar, l_cm_pd: Scalar, l_cd: Scalar, cfg: LossConfig) -> Scalar:
    """
    α·l_im + β·l_cm_pi + γ·l_cm_pd + δ·l_cd

    输入全为浮点数时返回浮点数，任一为张量时返回张量。
    """
    components = {"l_im": l_im, "l_cm_pi": l_cm_pi, "l_cm_pd": l_cm_pd, "l_cd": l_cd}
    for name, value in components.items():
        number = value.item() if isinstance(value, Tensor) else float(value)
        if not np.isfinite(number):
            raise NumericError(f"损失分量 {name} 非有限: {number}")
    coefficients = (cfg.alpha, cfg.beta, cfg.gamma, cfg.delta)
    if not any(isinstance(v, Tensor) for v in components.values()):
        return (cfg.alpha * float(l_im) + cfg.beta * float(l_cm_pi)
                + cfg.gamma * float(l_cm_pd) + cfg.delta * float(l_cd))
    total = None
    for coefficient, value in zip(coefficients, components.values()):
        term = ad.mul(value, coefficient)
        total = term if total is None else ad.add(total, term)
    return total
