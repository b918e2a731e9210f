"""
三模态预训练工具 - 几何计算模块
负责点云归一化、最远点采样、k近邻查询以及l2 Chamfer距离

所有距离均以平方形式计算；所有函数不修改输入。
"""

import logging
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist
from scipy.spatial.transform import Rotation

from errors import InvalidArgumentError, InvalidInputError

logger = logging.getLogger(__name__)

# 点云统一用 (N, 3) float64 数组表示
PointCloud = np.ndarray
IndexSet = np.ndarray


def as_point_cloud(points, name: str = "点云") -> PointCloud:
    """
    将输入转换为 (N, 3) float64 点云并检查有限性

    Args:
        points: 任意可转换为数组的坐标序列
        name: 错误信息中使用的名称

    Returns:
        (N, 3) float64 数组
    """
    pc = np.asarray(points, dtype=np.float64)
    if pc.size == 0:
        raise InvalidArgumentError(f"{name}不能为空")
    if pc.ndim == 1 and pc.size == 3:
        pc = pc.reshape(1, 3)
    if pc.ndim != 2 or pc.shape[1] != 3:
        raise InvalidInputError(f"{name}必须是 (N, 3) 坐标数组，实际形状 {pc.shape}")
    if not np.all(np.isfinite(pc)):
        raise InvalidInputError(f"{name}包含非有限坐标")
    return pc


def pairwise_sq_dist(a: PointCloud, b: PointCloud) -> np.ndarray:
    """暴力计算两组点之间的平方距离矩阵 (|a|, |b|)"""
    return cdist(a, b, metric="sqeuclidean")


def normalize_unit_sphere(pc: PointCloud) -> PointCloud:
    """
    平移到质心并缩放到单位球

    所有点重合时只做平移，缩放保持为1。

    Args:
        pc: 输入点云

    Returns:
        新的归一化点云
    """
    pc = as_point_cloud(pc)
    centroid = pc.mean(axis=0)
    centered = pc - centroid
    radius = np.sqrt(np.max(np.sum(centered * centered, axis=1)))
    if radius <= 0.0:
        logger.debug("点云退化为单点，跳过缩放")
        return centered
    return centered / radius


def fps(pc: PointCloud, k: int, start: int = 0) -> IndexSet:
    """
    最远点采样

    每一步选取到已选点集最小平方距离最大的点，并列时取最小下标。

    Args:
        pc: 输入点云
        k: 采样数量，1 <= k <= N
        start: 起始点下标

    Returns:
        长度为k的下标数组，首元素为start
    """
    pc = as_point_cloud(pc)
    n = pc.shape[0]
    if k < 1 or k > n:
        raise InvalidArgumentError(f"最远点采样数量 k={k} 超出范围 [1, {n}]")
    if start < 0 or start >= n:
        raise InvalidArgumentError(f"起始下标 {start} 超出范围 [0, {n})")

    indices = np.empty(k, dtype=np.int64)
    indices[0] = start
    min_dist = np.full(n, np.inf)
    selected = np.zeros(n, dtype=bool)
    selected[start] = True
    current = start
    for i in range(1, k):
        diff = pc - pc[current]
        dist = np.sum(diff * diff, axis=1)
        np.minimum(min_dist, dist, out=min_dist)
        candidate = np.where(selected, -1.0, min_dist)
        current = int(np.argmax(candidate))
        indices[i] = current
        selected[current] = True
    return indices


def knn(pc: PointCloud, queries: PointCloud, k: int) -> np.ndarray:
    """
    k近邻查询

    Args:
        pc: 被查询点云
        queries: 查询点
        k: 近邻数量

    Returns:
        (|queries|, k) 下标矩阵，按平方距离升序，并列时下标小者优先
    """
    pc = as_point_cloud(pc)
    queries = as_point_cloud(queries, "查询点")
    if k < 1 or k > pc.shape[0]:
        raise InvalidArgumentError(f"近邻数量 k={k} 超出范围 [1, {pc.shape[0]}]")
    dist = pairwise_sq_dist(queries, pc)
    order = np.argsort(dist, axis=1, kind="stable")
    return order[:, :k]


def chamfer_l2(p: PointCloud, q: PointCloud) -> float:
    """
    l2 Chamfer距离（平方范数形式）

    Args:
        p: 点云P
        q: 点云Q

    Returns:
        mean_p min_q |p-q|^2 + mean_q min_p |q-p|^2
    """
    p = as_point_cloud(p, "点云P")
    q = as_point_cloud(q, "点云Q")
    dist = pairwise_sq_dist(p, q)
    return float(dist.min(axis=1).mean() + dist.min(axis=0).mean())


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """均匀随机旋转矩阵"""
    return Rotation.random(None, rng).as_matrix()


def apply_rigid(pc: PointCloud, rotation: np.ndarray, translation: Optional[np.ndarray] = None) -> PointCloud:
    """对点云施加刚体变换 p -> R p + t"""
    pc = as_point_cloud(pc)
    out = pc @ np.asarray(rotation, dtype=np.float64).T
    if translation is not None:
        out = out + np.asarray(translation, dtype=np.float64)
    return out
