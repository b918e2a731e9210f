"""
三模态预训练工具 - 三元组构造模块
负责合成形状、构造数据集，以及为每个形状生成 (点云, 新视角图像, 深度图) 训练三元组
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import InvalidArgumentError
from file_operations import FileOperations
from geometry import apply_rigid, as_point_cloud, fps, normalize_unit_sphere, random_rotation
from splat_renderer import (GaussianSet, gaussians_from_points, orbit_camera_at, orbit_cameras, refine_colors,
                            render, sample_point_cloud)

logger = logging.getLogger(__name__)

NOVEL_VIEW_GAP_DEG = 10.0
TEST_SPLIT_OFFSET = 10007
MIN_SHAPE_POINTS = 16


class SynthClass(Enum):
    """合成形状类别，顺序即类别编号"""
    SPHERE = "sphere"
    CUBE = "cube"
    CYLINDER = "cylinder"
    CONE = "cone"
    TORUS = "torus"

    @property
    def label(self) -> int:
        return CLASS_ORDER.index(self)


CLASS_ORDER: List[SynthClass] = list(SynthClass)
CLASS_NAMES: List[str] = [c.value for c in CLASS_ORDER]


def resolve_class(value: Union[SynthClass, str, int]) -> SynthClass:
    """按枚举、名称或编号解析类别"""
    if isinstance(value, SynthClass):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        if 0 <= int(value) < len(CLASS_ORDER):
            return CLASS_ORDER[int(value)]
    elif isinstance(value, str) and value in CLASS_NAMES:
        return SynthClass(value)
    raise InvalidArgumentError(f"未知的形状类别: {value!r}，可选 {CLASS_NAMES}")


@dataclass
class PipelineConfig:
    """三元组构造参数"""
    n_points: int = 512
    source_points: int = 1024
    render_size: int = 64
    n_views: int = 4
    elevation_deg: float = 20.0
    radius_factor: float = 2.2
    focal_factor: float = 1.2
    jitter: bool = True
    scale_factor: float = 0.6
    k_nn: int = 4
    seed: int = 0
    refine_steps: int = 0
    refine_lr: float = 0.05

    def __post_init__(self):
        if self.n_points < 2:
            raise InvalidArgumentError(f"n_points 必须 >= 2，实际 {self.n_points}")
        if self.source_points < MIN_SHAPE_POINTS:
            raise InvalidArgumentError(f"source_points 必须 >= {MIN_SHAPE_POINTS}")
        if self.render_size < 1 or self.n_views < 1:
            raise InvalidArgumentError("render_size 和 n_views 必须 >= 1")
        if self.radius_factor <= 0 or self.focal_factor <= 0 or self.scale_factor <= 0:
            raise InvalidArgumentError("radius_factor、focal_factor、scale_factor 必须为正")
        if self.refine_steps < 0:
            raise InvalidArgumentError("refine_steps 不能为负")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Triplet:
    """训练三元组及其构造过程中的中间产物"""
    point_cloud: np.ndarray
    novel_view: np.ndarray
    depth_map: np.ndarray
    input_views: List[np.ndarray] = field(default_factory=list)
    gs_points: Optional[np.ndarray] = None
    label: Optional[int] = None
    novel_azimuth: float = 0.0
    depth_view_index: int = 0
    gaussians: Optional[GaussianSet] = None


def shape_seed(seed: int, index: int) -> int:
    """由 (全局种子, 形状序号) 派生独立的形状种子"""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _mirrored(half: np.ndarray, n: int) -> np.ndarray:
    # 中心对称形状成对取点，质心严格为0
    return np.concatenate([half, -half], axis=0)[:n]


def _sphere(rng: np.random.Generator, m: int) -> np.ndarray:
    v = rng.standard_normal((m, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _cube(rng: np.random.Generator, m: int) -> np.ndarray:
    # 边长2；各面面积相同，面编号轮流分配
    faces = rng.permutation(np.arange(m) % 6)
    axis = faces // 2
    sign = np.where(faces % 2 == 0, 1.0, -1.0)
    pts = rng.uniform(-1.0, 1.0, (m, 3))
    pts[np.arange(m), axis] = sign
    return pts


def _cylinder(rng: np.random.Generator, m: int) -> np.ndarray:
    # 半径1、高2：侧面 4π，两个底面共 2π
    theta = rng.uniform(0.0, 2.0 * math.pi, m)
    lateral = rng.random(m) < 2.0 / 3.0
    radius = np.where(lateral, 1.0, np.sqrt(rng.random(m)))
    y = np.where(lateral, rng.uniform(-1.0, 1.0, m), np.where(rng.random(m) < 0.5, 1.0, -1.0))
    return np.stack([radius * np.cos(theta), y, radius * np.sin(theta)], axis=1)


def _cone(rng: np.random.Generator, n: int) -> np.ndarray:
    # 半径1、高2，顶点在 y=1；侧面积 π√5，底面积 π
    slant = math.sqrt(5.0)
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    lateral = rng.random(n) < slant / (slant + 1.0)
    t = np.sqrt(rng.random(n))
    radius = np.where(lateral, t, np.sqrt(rng.random(n)))
    y = np.where(lateral, 1.0 - 2.0 * t, -1.0)
    return np.stack([radius * np.cos(theta), y, radius * np.sin(theta)], axis=1)


def _torus(rng: np.random.Generator, m: int, major: float = 1.0, minor: float = 0.35) -> np.ndarray:
    # 面积元 ∝ (R + r·cosθ)，对管截面角做拒绝采样
    accepted: List[np.ndarray] = []
    total = 0
    while total < m:
        theta = rng.uniform(0.0, 2.0 * math.pi, 2 * m)
        keep = rng.random(2 * m) < (major + minor * np.cos(theta)) / (major + minor)
        accepted.append(theta[keep])
        total += int(keep.sum())
    theta = np.concatenate(accepted)[:m]
    phi = rng.uniform(0.0, 2.0 * math.pi, m)
    ring = major + minor * np.cos(theta)
    return np.stack([ring * np.cos(phi), minor * np.sin(theta), ring * np.sin(phi)], axis=1)


def synth_shape(shape_class: Union[SynthClass, str, int], n: int, rng_seed: int) -> np.ndarray:
    """
    在单位尺度基本体表面按面积均匀采样

    Args:
        shape_class: 类别（枚举、名称或编号）
        n: 点数，至少16
        rng_seed: 随机种子

    Returns:
        (n, 3) 点云
    """
    shape_class = resolve_class(shape_class)
    if n < MIN_SHAPE_POINTS:
        raise InvalidArgumentError(f"形状点数必须 >= {MIN_SHAPE_POINTS}，实际 {n}")
    rng = np.random.default_rng(rng_seed)
    half = (n + 1) // 2
    if shape_class is SynthClass.SPHERE:
        return _mirrored(_sphere(rng, half), n)
    if shape_class is SynthClass.CUBE:
        return _mirrored(_cube(rng, half), n)
    if shape_class is SynthClass.CYLINDER:
        return _mirrored(_cylinder(rng, half), n)
    if shape_class is SynthClass.TORUS:
        return _mirrored(_torus(rng, half), n)
    return _cone(rng, n)


def _random_shape(shape_class: SynthClass, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    base = synth_shape(shape_class, n, int(rng.integers(2 ** 31)))
    scale = rng.uniform(0.7, 1.3, 3)
    return apply_rigid(base * scale, random_rotation(rng))


def make_dataset(cfg: PipelineConfig, n_per_class: int, rng_seed: int,
                 num_classes: Optional[int] = None) -> List[Tuple[np.ndarray, int]]:
    """
    生成按类别排列的合成数据集，每个形状带随机旋转和各轴 [0.7, 1.3] 的缩放

    Args:
        cfg: 三元组构造参数（使用 source_points）
        n_per_class: 每类形状数量
        rng_seed: 随机种子
        num_classes: 使用 CLASS_ORDER 中的前几类，None表示全部

    Returns:
        (点云, 标签) 列表
    """
    if n_per_class < 1:
        raise InvalidArgumentError(f"每类形状数量必须 >= 1，实际 {n_per_class}")
    num_classes = len(CLASS_ORDER) if num_classes is None else num_classes
    if not 1 <= num_classes <= len(CLASS_ORDER):
        raise InvalidArgumentError(f"类别数必须在 1..{len(CLASS_ORDER)} 之间，实际 {num_classes}")
    samples = []
    for label, shape_class in enumerate(CLASS_ORDER[:num_classes]):
        for j in range(n_per_class):
            index = label * n_per_class + j
            samples.append((_random_shape(shape_class, cfg.source_points, shape_seed(rng_seed, index)), label))
    logger.info(f"合成数据集: {num_classes} 类 × {n_per_class} 个形状，种子 {rng_seed}")
    return samples


def make_split(cfg: PipelineConfig, n_per_class: int, seed: int, split: str = "train",
               num_classes: Optional[int] = None) -> List[Tuple[np.ndarray, int]]:
    """训练集使用种子本身，测试集使用种子偏移后的独立序列"""
    if split == "train":
        return make_dataset(cfg, n_per_class, seed, num_classes)
    if split == "test":
        return make_dataset(cfg, n_per_class, seed + TEST_SPLIT_OFFSET, num_classes)
    raise InvalidArgumentError(f"未知的数据划分: {split!r}")


def _angular_gap(a: float, b: float) -> float:
    return abs((a - b + 180.0) % 360.0 - 180.0)


def _novel_azimuth(rng: np.random.Generator, input_azimuths: Sequence[float],
                   gap: float = NOVEL_VIEW_GAP_DEG, attempts: int = 1000) -> float:
    for _ in range(attempts):
        azimuth = float(rng.uniform(0.0, 360.0))
        if all(_angular_gap(azimuth, a) >= gap for a in input_azimuths):
            return azimuth
    raise InvalidArgumentError(f"{len(input_azimuths)} 个输入视角之间没有留出 ±{gap}° 的新视角空间")


def build_triplet(pc, cfg: PipelineConfig, rng_seed: int, fps_start: Optional[int] = 0,
                  label: Optional[int] = None) -> Triplet:
    """
    为一个形状构造训练三元组

    输入视图和深度图由稠密源点云拟合的高斯渲染；P_GS 和新视角由降采样点云拟合的高斯得到。

    Args:
        pc: 源点云，点数不少于 cfg.n_points
        cfg: 三元组构造参数
        rng_seed: 随机种子
        fps_start: 最远点采样起点，None表示随机抽取
        label: 类别标签

    Returns:
        Triplet
    """
    pc = as_point_cloud(pc)
    if len(pc) < cfg.n_points:
        raise InvalidArgumentError(f"源点云只有 {len(pc)} 个点，少于 n_points={cfg.n_points}")
    rng = np.random.default_rng(rng_seed)
    source = normalize_unit_sphere(pc)
    start = int(rng.integers(len(source))) if fps_start is None else fps_start
    points = source[fps(source, cfg.n_points, start)]

    size = cfg.render_size
    focal = cfg.focal_factor * size
    center = np.zeros(3)
    cameras = orbit_cameras(center, cfg.radius_factor, cfg.n_views, cfg.elevation_deg, focal, (size, size))
    source_gs = gaussians_from_points(source, cfg.k_nn, cfg.scale_factor)
    renders = [render(source_gs, cam) for cam in cameras]

    gs = gaussians_from_points(points, cfg.k_nn, cfg.scale_factor)
    if cfg.refine_steps > 0:
        gs = refine_colors(gs, cameras, [r.rgb for r in renders], cfg.refine_steps, cfg.refine_lr)
    gs_points = sample_point_cloud(gs, bool(cfg.jitter), int(rng.integers(2 ** 31)))

    input_azimuths = [360.0 * i / cfg.n_views for i in range(cfg.n_views)]
    azimuth = _novel_azimuth(rng, input_azimuths)
    novel_cam = orbit_camera_at(center, cfg.radius_factor, azimuth, cfg.elevation_deg, focal, (size, size))
    novel = render(gs, novel_cam)

    depth_index = int(rng.integers(cfg.n_views))
    return Triplet(
        point_cloud=points,
        novel_view=novel.rgb,
        depth_map=renders[depth_index].depth,
        input_views=[r.rgb for r in renders],
        gs_points=gs_points,
        label=label,
        novel_azimuth=azimuth,
        depth_view_index=depth_index,
        gaussians=gs,
    )


def build_triplets(samples: Sequence[Tuple[np.ndarray, int]], cfg: PipelineConfig, seed: int,
                   workers: int = 1, fps_start: Optional[int] = 0) -> List[Triplet]:
    """
    并行构造三元组，第i个形状使用由 (seed, i) 派生的种子，输出顺序与输入一致

    Args:
        samples: (点云, 标签) 序列
        cfg: 三元组构造参数
        seed: 全局种子
        workers: 线程数
        fps_start: 最远点采样起点

    Returns:
        三元组列表
    """
    def task(index: int) -> Triplet:
        pc, label = samples[index]
        return build_triplet(pc, cfg, shape_seed(seed, index), fps_start, label)

    if workers <= 1:
        triplets = [task(i) for i in range(len(samples))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            triplets = list(pool.map(task, range(len(samples))))
    logger.info(f"三元组构造完成: {len(triplets)} 个，线程数 {max(1, workers)}")
    return triplets


def load_pointcloud(path: str) -> np.ndarray:
    """读取文本或二进制点云"""
    return FileOperations().read_point_cloud(path)


def write_preview(triplet: Triplet, prefix: str, file_ops: Optional[FileOperations] = None) -> List[str]:
    """
    写出输入视图、新视角、深度图预览，以及生成 P_GS 和新视角所用的高斯集合 PREFIX.gs

    Returns:
        写出的文件路径列表
    """
    file_ops = file_ops or FileOperations()
    paths = []
    for i, view in enumerate(triplet.input_views):
        paths.append(file_ops.write_ppm(view, f"{prefix}_view{i}.ppm"))
    paths.append(file_ops.write_ppm(triplet.novel_view, f"{prefix}_novel.ppm"))
    depth_path = f"{prefix}_depth.pgm"
    file_ops.write_depth_pgm(triplet.depth_map, depth_path)
    paths.extend([depth_path, f"{prefix}_depth.txt"])
    if triplet.gaussians is not None:
        paths.append(file_ops.write_gaussians(triplet.gaussians, f"{prefix}.gs"))
    return paths
