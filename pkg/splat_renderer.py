"""
三模态预训练工具 - 高斯泼溅渲染模块
负责把三维高斯投影到像平面并按深度从前到后做alpha合成，输出RGB、深度和alpha图；
同时提供从点云构造高斯、从高斯采样点云、环绕相机和颜色光度细化

图像数组为 高×宽(×通道)，第0行在顶部，像素中心位于 (列+0.5, 行+0.5)。
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from matplotlib.colors import hsv_to_rgb
from scipy.spatial.transform import Rotation

import autodiff as ad
from errors import InvalidArgumentError, InvalidInputError, ShapeError
from geometry import as_point_cloud, pairwise_sq_dist
from optimizer import AdamWState, adamw_step

logger = logging.getLogger(__name__)

# 抗锯齿膨胀，加到二维协方差对角线上（像素²）
DILATION = 0.3
ALPHA_CLAMP = 0.99
DEPTH_ALPHA_MIN = 1e-4
DEFAULT_OPACITY = 0.8
WHITE = (1.0, 1.0, 1.0)


def _vec3(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name}必须是有限的三维向量，实际 {value}")
    return arr


@dataclass
class Camera:
    """针孔相机，世界到相机的旋转行向量为 [右, 下, 前]"""
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    focal: float
    width: int
    height: int
    near: float = 0.01

    def __post_init__(self):
        self.position = _vec3(self.position, "相机位置")
        self.look_at = _vec3(self.look_at, "相机注视点")
        self.up = _vec3(self.up, "相机上方向")
        if self.focal <= 0:
            raise InvalidArgumentError(f"焦距必须为正，实际 {self.focal}")
        if self.width < 1 or self.height < 1:
            raise InvalidArgumentError(f"图像尺寸必须为正，实际 {self.width}x{self.height}")
        if self.near <= 0:
            raise InvalidArgumentError(f"近裁剪面必须为正，实际 {self.near}")
        view = self.look_at - self.position
        if np.linalg.norm(view) < 1e-12:
            raise InvalidArgumentError("相机位置与注视点重合")
        forward = view / np.linalg.norm(view)
        side = np.cross(forward, self.up)
        if np.linalg.norm(side) < 1e-9 * max(np.linalg.norm(self.up), 1e-12):
            raise InvalidArgumentError("相机上方向与视线方向平行")
        right = side / np.linalg.norm(side)
        true_up = np.cross(right, forward)
        self._rotation = np.stack([right, -true_up, forward])

    @property
    def forward(self) -> np.ndarray:
        return self._rotation[2].copy()

    @property
    def rotation(self) -> np.ndarray:
        """世界到相机的旋转矩阵 W"""
        return self._rotation.copy()

    @property
    def principal_point(self) -> Tuple[float, float]:
        return self.width / 2.0, self.height / 2.0

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.position) @ self._rotation.T


@dataclass
class Gaussian3D:
    """单个三维高斯"""
    mean: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray  # 单位四元数 (w, x, y, z)
    opacity: float = DEFAULT_OPACITY
    color: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        self.mean = _vec3(self.mean, "高斯均值")
        self.scale = _vec3(self.scale, "高斯尺度")
        self.color = _vec3(self.color, "高斯颜色")
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.opacity = float(self.opacity)
        _validate_gaussians(self.scale[None], self.rotation[None], np.array([self.opacity]), self.color[None])

    def covariance(self) -> np.ndarray:
        return _covariances(self.scale[None], self.rotation[None])[0]


def _validate_gaussians(scales, rotations, opacities, colors):
    if np.any(scales <= 0):
        raise InvalidInputError("高斯尺度必须全部为正")
    norms = np.linalg.norm(rotations, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise InvalidInputError("高斯旋转四元数必须为单位四元数")
    if np.any(opacities <= 0) or np.any(opacities > 1):
        raise InvalidInputError("高斯不透明度必须位于 (0, 1]")
    if np.any(colors < 0) or np.any(colors > 1):
        raise InvalidInputError("高斯颜色必须位于 [0, 1]")


def _rotation_matrices(rotations: np.ndarray) -> np.ndarray:
    if len(rotations) == 0:
        return np.zeros((0, 3, 3))
    # scipy 使用 (x, y, z, w) 顺序
    return Rotation.from_quat(rotations[:, [1, 2, 3, 0]]).as_matrix()


def _covariances(scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    R = _rotation_matrices(rotations)
    return np.einsum("nij,nj,nkj->nik", R, scales * scales, R)


@dataclass
class GaussianSet:
    """高斯集合，按数组存储；下标访问返回 Gaussian3D"""
    means: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        if not np.all(np.isfinite(self.means)):
            raise InvalidInputError("高斯均值包含非有限值")
        if n:
            _validate_gaussians(self.scales, self.rotations, self.opacities, self.colors)

    @classmethod
    def empty(cls) -> "GaussianSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3)))

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian3D]) -> "GaussianSet":
        if not gaussians:
            return cls.empty()
        return cls(
            np.stack([g.mean for g in gaussians]),
            np.stack([g.scale for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.array([g.opacity for g in gaussians]),
            np.stack([g.color for g in gaussians]),
        )

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> Gaussian3D:
        return Gaussian3D(self.means[i], self.scales[i], self.rotations[i], self.opacities[i], self.colors[i])

    def covariances(self) -> np.ndarray:
        return _covariances(self.scales, self.rotations)

    def with_colors(self, colors: np.ndarray) -> "GaussianSet":
        return GaussianSet(self.means.copy(), self.scales.copy(), self.rotations.copy(),
                           self.opacities.copy(), np.clip(colors, 0.0, 1.0))

    def permuted(self, order: np.ndarray) -> "GaussianSet":
        return GaussianSet(self.means[order], self.scales[order], self.rotations[order],
                           self.opacities[order], self.colors[order])


@dataclass
class Projection:
    """单个高斯在像平面上的投影"""
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float


@dataclass
class RenderOutput:
    """渲染结果：rgb (H,W,3)，depth (H,W)，alpha (H,W)；未覆盖像素深度为0"""
    rgb: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray


def project_gaussians(gs: GaussianSet, cam: Camera) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    批量投影高斯

    Args:
        gs: 高斯集合
        cam: 相机

    Returns:
        (means2d (N,2), cov2d (N,2,2), depths (N,), visible (N,))；不可见高斯的投影值无意义
    """
    n = len(gs)
    if n == 0:
        return np.zeros((0, 2)), np.zeros((0, 2, 2)), np.zeros(0), np.zeros(0, dtype=bool)
    W = cam.rotation
    t = cam.world_to_camera(gs.means)
    depths = t[:, 2]
    visible = depths >= cam.near
    z = np.where(visible, depths, 1.0)
    f = cam.focal
    cx, cy = cam.principal_point
    means2d = np.stack([f * t[:, 0] / z + cx, f * t[:, 1] / z + cy], axis=1)

    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = f / z
    J[:, 0, 2] = -f * t[:, 0] / (z * z)
    J[:, 1, 1] = f / z
    J[:, 1, 2] = -f * t[:, 1] / (z * z)
    cov_cam = np.einsum("ij,njk,lk->nil", W, gs.covariances(), W)
    cov2d = np.einsum("nij,njk,nlk->nil", J, cov_cam, J)
    cov2d = 0.5 * (cov2d + np.transpose(cov2d, (0, 2, 1)))
    cov2d[:, 0, 0] += DILATION
    cov2d[:, 1, 1] += DILATION
    return means2d, cov2d, depths, visible


def project_gaussian(g: Gaussian3D, cam: Camera) -> Optional[Projection]:
    """
    投影单个高斯；位于近裁剪面之后时返回None（渲染时被剔除）
    """
    means2d, cov2d, depths, visible = project_gaussians(GaussianSet.from_gaussians([g]), cam)
    if not visible[0]:
        return None
    return Projection(means2d[0], cov2d[0], float(depths[0]))


def _composite(gs: GaussianSet, cam: Camera, background=WHITE, collect: bool = False):
    """
    从前到后的alpha合成

    collect为True时额外返回每个(像素, 高斯)的合成权重 α·T，供颜色细化使用。
    """
    H, W = cam.height, cam.width
    background = np.asarray(background, dtype=np.float64).reshape(3)
    color_acc = np.zeros((H, W, 3))
    depth_acc = np.zeros((H, W))
    transmit = np.ones((H, W))
    pixel_ids: List[np.ndarray] = []
    gauss_ids: List[np.ndarray] = []
    weights: List[np.ndarray] = []

    means2d, cov2d, depths, visible = project_gaussians(gs, cam)
    candidates = np.nonzero(visible)[0]
    order = candidates[np.lexsort((candidates, depths[candidates]))]
    col_centers = np.arange(W) + 0.5
    row_centers = np.arange(H) + 0.5

    for i in order:
        cov = cov2d[i]
        radius = 3.0 * math.sqrt(float(np.linalg.eigvalsh(cov)[-1]))
        u, v = means2d[i]
        c0 = max(0, math.ceil(u - radius - 0.5))
        c1 = min(W - 1, math.floor(u + radius - 0.5))
        r0 = max(0, math.ceil(v - radius - 0.5))
        r1 = min(H - 1, math.floor(v + radius - 0.5))
        if c0 > c1 or r0 > r1:
            continue
        inv = np.linalg.inv(cov)
        dx = (col_centers[c0:c1 + 1] - u)[None, :]
        dy = (row_centers[r0:r1 + 1] - v)[:, None]
        q = inv[0, 0] * dx * dx + 2.0 * inv[0, 1] * dx * dy + inv[1, 1] * dy * dy
        alpha = np.minimum(ALPHA_CLAMP, gs.opacities[i] * np.exp(-0.5 * q))
        window_t = transmit[r0:r1 + 1, c0:c1 + 1]
        weight = alpha * window_t
        color_acc[r0:r1 + 1, c0:c1 + 1] += weight[..., None] * gs.colors[i]
        depth_acc[r0:r1 + 1, c0:c1 + 1] += weight * depths[i]
        window_t *= 1.0 - alpha
        if collect:
            rows, cols = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
            pixel_ids.append((rows * W + cols).reshape(-1))
            gauss_ids.append(np.full(weight.size, i, dtype=np.int64))
            weights.append(weight.reshape(-1))

    alpha_img = 1.0 - transmit
    rgb = np.clip(color_acc + background * transmit[..., None], 0.0, 1.0)
    covered = alpha_img > DEPTH_ALPHA_MIN
    depth = np.zeros((H, W))
    depth[covered] = depth_acc[covered] / alpha_img[covered]
    output = RenderOutput(rgb=rgb, depth=depth, alpha=alpha_img)
    if not collect:
        return output
    if weights:
        contributions = (np.concatenate(pixel_ids), np.concatenate(gauss_ids), np.concatenate(weights))
    else:
        contributions = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))
    return output, contributions, transmit


def render(gs: GaussianSet, cam: Camera, background=WHITE) -> RenderOutput:
    """
    渲染高斯集合

    Args:
        gs: 高斯集合（可为空）
        cam: 相机
        background: 背景颜色，默认白色

    Returns:
        RenderOutput
    """
    return _composite(gs, cam, background)


def height_colormap(points) -> np.ndarray:
    """按归一化高度y着色：最低处红色，最高处蓝色"""
    pc = as_point_cloud(points)
    y = pc[:, 1]
    span = y.max() - y.min()
    t = (y - y.min()) / span if span > 0 else np.zeros_like(y)
    hsv = np.stack([t * (2.0 / 3.0), np.ones_like(t), np.ones_like(t)], axis=1)
    return np.clip(hsv_to_rgb(hsv), 0.0, 1.0)


def gaussians_from_points(pc, k_nn: int = 4, scale_factor: float = 0.6,
                          opacity: float = DEFAULT_OPACITY) -> GaussianSet:
    """
    每个点构造一个各向同性高斯

    尺度 = scale_factor × 到k_nn个最近邻（不含自身）的平均距离。

    Args:
        pc: 点云，至少2个点
        k_nn: 近邻数量
        scale_factor: 尺度系数
        opacity: 不透明度

    Returns:
        GaussianSet
    """
    pc = as_point_cloud(pc)
    n = len(pc)
    if n < 2:
        raise InvalidArgumentError(f"构造高斯至少需要2个点，实际 {n}")
    if k_nn < 1 or k_nn > n - 1:
        raise InvalidArgumentError(f"近邻数量 k_nn={k_nn} 超出范围 [1, {n - 1}]")
    if scale_factor <= 0:
        raise InvalidArgumentError(f"尺度系数必须为正，实际 {scale_factor}")
    dist = pairwise_sq_dist(pc, pc)
    np.fill_diagonal(dist, np.inf)
    nearest = np.sort(dist, axis=1)[:, :k_nn]
    mean_dist = np.sqrt(nearest).mean(axis=1)
    scale = np.maximum(scale_factor * mean_dist, 1e-6)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    return GaussianSet(
        means=pc.copy(),
        scales=np.repeat(scale[:, None], 3, axis=1),
        rotations=rotations,
        opacities=np.full(n, opacity),
        colors=height_colormap(pc),
    )


def sample_point_cloud(gs: GaussianSet, jitter: bool, rng_seed: int) -> np.ndarray:
    """
    从高斯集合提取点云：不抖动时为均值，抖动时每个高斯按其协方差采一个点
    """
    if len(gs) == 0:
        raise InvalidArgumentError("高斯集合为空，无法采样点云")
    if not jitter:
        return gs.means.copy()
    rng = np.random.default_rng(rng_seed)
    noise = rng.standard_normal(gs.means.shape) * gs.scales
    return gs.means + np.einsum("nij,nj->ni", _rotation_matrices(gs.rotations), noise)


def orbit_camera_at(center, radius: float, azimuth_deg: float, elevation_deg: float,
                    focal: float, wh: Tuple[int, int], near: float = 0.01) -> Camera:
    """在给定方位角和仰角处放置注视中心的相机"""
    center = _vec3(center, "环绕中心")
    a = math.radians(azimuth_deg)
    e = math.radians(elevation_deg)
    offset = radius * np.array([math.cos(e) * math.cos(a), math.sin(e), math.cos(e) * math.sin(a)])
    return Camera(center + offset, center, np.array([0.0, 1.0, 0.0]), focal, int(wh[0]), int(wh[1]), near)


def orbit_cameras(center, radius: float, count: int, elevation_deg: float,
                  focal: float, wh: Tuple[int, int]) -> List[Camera]:
    """
    方位角均匀分布的环绕相机，第i台位于 360°·i/count

    Args:
        center: 注视中心
        radius: 环绕半径
        count: 相机数量
        elevation_deg: 仰角（度）
        focal: 焦距（像素）
        wh: (宽, 高)

    Returns:
        相机列表
    """
    if radius <= 0:
        raise InvalidArgumentError(f"环绕半径必须为正，实际 {radius}")
    if count < 1:
        raise InvalidArgumentError(f"相机数量必须 >= 1，实际 {count}")
    return [orbit_camera_at(center, radius, 360.0 * i / count, elevation_deg, focal, wh) for i in range(count)]


def rotate_scene(gs: GaussianSet, cam: Camera, rotation: np.ndarray) -> Tuple[GaussianSet, Camera]:
    """对高斯集合和相机同时施加同一个绕原点的旋转"""
    R = np.asarray(rotation, dtype=np.float64)
    if len(gs):
        composed = Rotation.from_matrix(R) * Rotation.from_quat(gs.rotations[:, [1, 2, 3, 0]])
        quats = composed.as_quat()[:, [3, 0, 1, 2]]
    else:
        quats = gs.rotations.copy()
    rotated = GaussianSet(gs.means @ R.T, gs.scales.copy(), quats, gs.opacities.copy(), gs.colors.copy())
    moved = Camera(R @ cam.position, R @ cam.look_at, R @ cam.up, cam.focal, cam.width, cam.height, cam.near)
    return rotated, moved


def refine_colors(gs: GaussianSet, cameras: Sequence[Camera], targets: Sequence[np.ndarray],
                  steps: int = 0, lr: float = 0.05, background=WHITE) -> GaussianSet:
    """
    几何和不透明度固定，按输入视图的光度均方误差优化高斯颜色

    合成权重与颜色无关，因此每个像素是颜色的线性函数，权重只需计算一次。

    Args:
        gs: 待细化的高斯集合
        cameras: 输入视图相机
        targets: 与相机一一对应的目标RGB图像 (H,W,3)
        steps: 优化步数，0表示不细化
        lr: AdamW学习率
        background: 背景颜色

    Returns:
        颜色更新后的新高斯集合
    """
    if steps <= 0 or len(gs) == 0:
        return gs
    if len(cameras) != len(targets):
        raise InvalidArgumentError(f"相机数量 {len(cameras)} 与目标图像数量 {len(targets)} 不一致")
    background = np.asarray(background, dtype=np.float64).reshape(3)

    views = []
    for cam, target in zip(cameras, targets):
        target = np.asarray(target, dtype=np.float64)
        if target.shape != (cam.height, cam.width, 3):
            raise ShapeError(f"目标图像形状 {target.shape} 与相机 ({cam.height}, {cam.width}, 3) 不匹配")
        _, (pixels, gauss, weight), transmit = _composite(gs, cam, background, collect=True)
        base = transmit.reshape(-1, 1) * background
        views.append((pixels, gauss, np.repeat(weight[:, None], 3, axis=1), base, target.reshape(-1, 3)))

    colors = ad.parameter(gs.colors.copy(), name="colors")
    params = {"colors": colors}
    state = AdamWState.for_params(params)
    for step in range(steps):
        colors.zero_grad()
        loss = None
        for pixels, gauss, weight, base, target in views:
            contrib = ad.mul(ad.gather(colors, gauss), weight)
            pred = ad.add(ad.scatter_add(contrib, pixels, len(target)), base)
            diff = ad.sub(pred, target)
            term = ad.mean(ad.mul(diff, diff))
            loss = term if loss is None else ad.add(loss, term)
        loss = ad.mul(loss, 1.0 / len(views))
        ad.backward(loss)
        adamw_step(state, params, lr=lr, wd=0.0)
        np.clip(colors.data, 0.0, 1.0, out=colors.data)
        if step == 0 or step == steps - 1:
            logger.debug(f"颜色细化第{step + 1}步，光度误差 {loss.item():.6f}")
    return gs.with_colors(colors.data)
