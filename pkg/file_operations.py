"""
三模态预训练工具 - 文件操作模块
负责点云、图像(PPM/PGM)、高斯集合、检查点、训练日志、嵌入表和Excel报告的读写
"""

import json
import logging
import os
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import openpyxl
import pandas as pd
from PIL import Image

from errors import CheckpointError, FormatError, InvalidInputError
from geometry import as_point_cloud
from splat_renderer import GaussianSet

logger = logging.getLogger(__name__)

POINT_RECORD = np.dtype("<f4")
GAUSSIAN_FIELDS = 14  # mean(3) scale(3) quat(4) opacity(1) color(3)
DEPTH_LEVELS = 65534  # 0 保留给"无表面"


def _ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    if parent and not os.path.exists(parent):
        os.makedirs(parent)


def _checkpoint_paths(path: str) -> Tuple[str, str]:
    base = str(path)
    for suffix in (".bin", ".manifest"):
        if base.endswith(suffix):
            base = base[:-len(suffix)]
    return base + ".bin", base + ".manifest"


class FileOperations:
    """文件操作类"""

    def __init__(self):
        """初始化文件操作器"""
        self.encoding = 'utf-8'

    # ------------------------------------------------------------ 点云

    def read_point_cloud(self, file_path: str) -> np.ndarray:
        """
        读取点云文件，自动识别二进制或文本格式

        二进制格式：8字节小端无符号点数 + 每点3个小端float32；
        文件大小恰好等于 8 + 12·点数 时按二进制解析，否则按文本解析。

        Args:
            file_path: 文件路径

        Returns:
            (N, 3) float64 点云
        """
        data = Path(file_path).read_bytes()
        if len(data) >= 8:
            count = int(np.frombuffer(data[:8], dtype="<u8")[0])
            if len(data) == 8 + 12 * count:
                if count == 0:
                    raise InvalidInputError(f"点云文件为空: {file_path}")
                points = np.frombuffer(data, dtype=POINT_RECORD, count=3 * count, offset=8)
                return as_point_cloud(points.reshape(count, 3).astype(np.float64))
        try:
            text = data.decode(self.encoding)
        except UnicodeDecodeError as e:
            if len(data) >= 8:
                raise FormatError(f"二进制点云长度不符: 头部声明 {count} 个点，文件共 {len(data)} 字节",
                                  offset=len(data))
            raise FormatError("无法解析点云文件", offset=e.start)
        return self._parse_point_text(text, file_path)

    def _parse_point_text(self, text: str, file_path: str) -> np.ndarray:
        rows = []
        for line_no, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith('#'):
                continue
            tokens = stripped.split()
            if len(tokens) != 3:
                raise FormatError(f"每行需要3个坐标，实际 {len(tokens)} 个: '{stripped}'", line=line_no)
            try:
                rows.append([float(t) for t in tokens])
            except ValueError:
                raise FormatError(f"无法解析坐标: '{stripped}'", line=line_no)
        if not rows:
            raise InvalidInputError(f"点云文件为空: {file_path}")
        return as_point_cloud(rows)

    def write_point_cloud(self, pc: np.ndarray, file_path: str, binary: bool = True) -> str:
        """
        写入点云

        Args:
            pc: 点云
            file_path: 输出路径
            binary: True写二进制，False写文本（每行 "x y z"）

        Returns:
            输出路径
        """
        pc = as_point_cloud(pc)
        _ensure_parent(file_path)
        if binary:
            header = np.array([len(pc)], dtype="<u8").tobytes()
            Path(file_path).write_bytes(header + pc.astype(POINT_RECORD).tobytes())
        else:
            lines = [f"{x!r} {y!r} {z!r}" for x, y, z in pc.tolist()]
            Path(file_path).write_text("\n".join(lines) + "\n", encoding=self.encoding)
        logger.debug(f"点云写入成功: {file_path} ({len(pc)} 个点)")
        return file_path

    # ------------------------------------------------------------ 图像

    def write_ppm(self, rgb: np.ndarray, file_path: str) -> str:
        """写入P6彩色图像（maxval 255，左上角为原点）"""
        rgb = np.asarray(rgb, dtype=np.float64)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise InvalidInputError(f"RGB图像必须为 (H, W, 3)，实际 {rgb.shape}")
        _ensure_parent(file_path)
        pixels = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(pixels).save(file_path, format="PPM")
        return file_path

    def read_ppm(self, file_path: str) -> np.ndarray:
        """读取PPM为 [0,1] 浮点图像"""
        with Image.open(file_path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0

    def write_depth_pgm(self, depth: np.ndarray, file_path: str) -> Tuple[float, float]:
        """
        写入16位P5深度图及量化范围边车文件

        有表面的像素线性量化到 [1, 65535]，0表示无表面；范围写入同名 .txt 文件。

        Args:
            depth: (H, W) 深度图，0为无表面
            file_path: 输出路径

        Returns:
            (最小深度, 最大深度)
        """
        depth = np.asarray(depth, dtype=np.float64)
        if depth.ndim != 2:
            raise InvalidInputError(f"深度图必须为二维，实际 {depth.shape}")
        covered = depth > 0
        lo = float(depth[covered].min()) if covered.any() else 0.0
        hi = float(depth[covered].max()) if covered.any() else 0.0
        span = hi - lo
        levels = np.zeros(depth.shape, dtype=np.int64)
        if covered.any():
            scaled = (depth[covered] - lo) / span if span > 0 else np.zeros(int(covered.sum()))
            levels[covered] = 1 + np.round(scaled * DEPTH_LEVELS).astype(np.int64)
        h, w = depth.shape
        _ensure_parent(file_path)
        with open(file_path, 'wb') as f:
            f.write(b"P5\n%d %d\n65535\n" % (w, h))
            f.write(levels.astype(">u2").tobytes())
        sidecar = os.path.splitext(file_path)[0] + ".txt"
        with open(sidecar, 'w', encoding=self.encoding) as f:
            f.write(f"min={lo!r}\nmax={hi!r}\n")
        return lo, hi

    def read_depth_pgm(self, file_path: str) -> np.ndarray:
        """读取 write_depth_pgm 写出的深度图并反量化"""
        data = Path(file_path).read_bytes()
        tokens: List[bytes] = []
        pos = 0
        while len(tokens) < 4:
            while pos < len(data) and data[pos:pos + 1].isspace():
                pos += 1
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace():
                pos += 1
            if start == pos:
                raise FormatError("PGM文件头不完整", offset=pos)
            tokens.append(data[start:pos])
        pos += 1
        if tokens[0] != b"P5" or tokens[3] != b"65535":
            raise FormatError(f"不支持的PGM格式: {tokens[0]!r} maxval {tokens[3]!r}", offset=0)
        w, h = int(tokens[1]), int(tokens[2])
        if len(data) - pos != 2 * w * h:
            raise FormatError(f"PGM像素数据长度不符，期望 {2 * w * h} 字节", offset=pos)
        levels = np.frombuffer(data, dtype=">u2", count=w * h, offset=pos).reshape(h, w).astype(np.float64)
        lo, hi = self._read_depth_range(os.path.splitext(file_path)[0] + ".txt")
        depth = np.zeros((h, w))
        covered = levels > 0
        depth[covered] = lo + (levels[covered] - 1.0) / DEPTH_LEVELS * (hi - lo)
        return depth

    def _read_depth_range(self, sidecar: str) -> Tuple[float, float]:
        values = {}
        with open(sidecar, 'r', encoding=self.encoding) as f:
            for line_no, line in enumerate(f, start=1):
                if '=' not in line:
                    continue
                key, value = line.split('=', 1)
                try:
                    values[key.strip()] = float(value)
                except ValueError:
                    raise FormatError(f"无法解析深度范围: '{line.strip()}'", line=line_no)
        if 'min' not in values or 'max' not in values:
            raise FormatError(f"深度范围文件缺少 min/max: {sidecar}")
        return values['min'], values['max']

    # ------------------------------------------------------------ 高斯集合

    def write_gaussians(self, gs: GaussianSet, file_path: str) -> str:
        """写入高斯集合：8字节点数头 + 每个高斯14个小端float32"""
        records = np.concatenate([gs.means, gs.scales, gs.rotations, gs.opacities[:, None], gs.colors], axis=1)
        _ensure_parent(file_path)
        header = np.array([len(gs)], dtype="<u8").tobytes()
        Path(file_path).write_bytes(header + records.astype("<f4").tobytes())
        return file_path

    def read_gaussians(self, file_path: str) -> GaussianSet:
        data = Path(file_path).read_bytes()
        if len(data) < 8:
            raise FormatError("高斯文件缺少数量头", offset=0)
        count = int(np.frombuffer(data[:8], dtype="<u8")[0])
        expected = 8 + 4 * GAUSSIAN_FIELDS * count
        if len(data) != expected:
            raise FormatError(f"高斯文件长度不符，期望 {expected} 字节，实际 {len(data)}", offset=len(data))
        records = np.frombuffer(data, dtype="<f4", offset=8).reshape(count, GAUSSIAN_FIELDS).astype(np.float64)
        rotations = records[:, 6:10]
        if count:
            rotations = rotations / np.linalg.norm(rotations, axis=1, keepdims=True)
        return GaussianSet(records[:, 0:3], records[:, 3:6], rotations, records[:, 10], records[:, 11:14])

    # ------------------------------------------------------------ 检查点

    def save_checkpoint(self, path: str, arrays: Dict[str, np.ndarray],
                        header: Optional[Dict[str, Any]] = None) -> str:
        """
        保存检查点

        NAME.bin 为小端float64连续数据；NAME.manifest 以 "# key=value" 头行开始，
        之后每行 "名称<TAB>形状<TAB>偏移"（形状写作 AxBxC，偏移以float64元素计）。

        Args:
            path: 检查点路径（可带或不带 .bin 后缀）
            arrays: 有序的名称到数组映射
            header: 写入清单头部的键值对

        Returns:
            .bin 文件路径
        """
        bin_path, manifest_path = _checkpoint_paths(path)
        _ensure_parent(bin_path)
        lines = [f"# {key}={value}" for key, value in (header or {}).items()]
        chunks = []
        offset = 0
        for name, array in arrays.items():
            if '\t' in name or '\n' in name:
                raise CheckpointError(f"参数名包含非法字符: {name!r}")
            array = np.ascontiguousarray(array, dtype="<f8")
            shape = "x".join(str(d) for d in array.shape) if array.ndim else "-"
            lines.append(f"{name}\t{shape}\t{offset}")
            chunks.append(array.tobytes())
            offset += array.size
        Path(bin_path).write_bytes(b"".join(chunks))
        Path(manifest_path).write_text("\n".join(lines) + "\n", encoding=self.encoding)
        logger.info(f"检查点保存成功: {bin_path} ({len(arrays)} 个数组，{offset} 个数值)")
        return bin_path

    def load_checkpoint(self, path: str) -> Tuple["OrderedDict[str, np.ndarray]", Dict[str, str]]:
        """
        加载检查点

        Returns:
            (名称到数组的有序映射, 清单头部键值对)
        """
        bin_path, manifest_path = _checkpoint_paths(path)
        if not os.path.exists(bin_path) or not os.path.exists(manifest_path):
            raise CheckpointError(f"检查点文件不存在: {bin_path}")
        blob = np.frombuffer(Path(bin_path).read_bytes(), dtype="<f8")
        header: Dict[str, str] = {}
        arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
        expected_offset = 0
        text = Path(manifest_path).read_text(encoding=self.encoding)
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            if line.startswith('#'):
                key, _, value = line[1:].strip().partition('=')
                header[key.strip()] = value.strip()
                continue
            parts = line.split('\t')
            if len(parts) != 3:
                raise CheckpointError(f"清单第{line_no}行格式错误: {line!r}")
            name, shape_text, offset_text = parts
            try:
                shape = () if shape_text == "-" else tuple(int(d) for d in shape_text.split("x"))
                offset = int(offset_text)
            except ValueError:
                raise CheckpointError(f"清单第{line_no}行无法解析: {line!r}")
            size = int(np.prod(shape)) if shape else 1
            if offset != expected_offset or offset + size > blob.size:
                raise CheckpointError(f"清单第{line_no}行偏移 {offset} 与数据文件不一致")
            arrays[name] = blob[offset:offset + size].reshape(shape).astype(np.float64)
            expected_offset = offset + size
        if expected_offset != blob.size:
            raise CheckpointError(f"数据文件有 {blob.size} 个数值，清单只描述了 {expected_offset} 个")
        return arrays, header

    # ------------------------------------------------------------ 日志与表格

    def append_jsonl(self, record: Dict[str, Any], file_path: str):
        with open(file_path, 'a', encoding=self.encoding) as f:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")

    def read_jsonl(self, file_path: str) -> pd.DataFrame:
        """读取JSON行日志为DataFrame（保留双精度）"""
        if not os.path.exists(file_path) or os.path.getsize(file_path) == 0:
            return pd.DataFrame()
        return pd.read_json(file_path, lines=True, precise_float=True)

    def write_embeddings(self, embeddings: np.ndarray, labels: np.ndarray, file_path: str) -> str:
        """嵌入表CSV：label列 + e0..e{d-1}"""
        embeddings = np.asarray(embeddings, dtype=np.float64)
        df = pd.DataFrame(embeddings, columns=[f"e{i}" for i in range(embeddings.shape[1])])
        df.insert(0, 'label', np.asarray(labels, dtype=np.int64))
        _ensure_parent(file_path)
        df.to_csv(file_path, index=False, float_format="%.17g")
        return file_path

    def read_embeddings(self, file_path: str) -> Tuple[np.ndarray, np.ndarray]:
        df = pd.read_csv(file_path, float_precision="round_trip")
        if 'label' not in df.columns:
            raise FormatError(f"嵌入表缺少label列: {file_path}", line=1)
        labels = df['label'].to_numpy(dtype=np.int64)
        embeddings = df.drop(columns=['label']).to_numpy(dtype=np.float64)
        return embeddings, labels

    def write_excel_file(self, df: pd.DataFrame, output_path: str,
                         sheet_name: str = 'Sheet1', index: bool = False) -> bool:
        """
        写入Excel文件

        Args:
            df: 要写入的DataFrame
            output_path: 输出文件路径
            sheet_name: 工作表名称
            index: 是否包含索引

        Returns:
            写入是否成功
        """
        try:
            _ensure_parent(output_path)
            with pd.ExcelWriter(output_path, engine='openpyxl') as writer:
                df.to_excel(writer, sheet_name=sheet_name, index=index)
            logger.info(f"文件写入成功: {output_path}")
            return True
        except Exception as e:
            logger.error(f"写入Excel文件失败: {output_path}, 错误: {e}")
            return False

    def get_excel_sheets(self, file_path: str) -> List[str]:
        """报告工作簿中的工作表名称，文件缺失或无法解析时为空列表"""
        if not os.path.exists(file_path):
            return []
        try:
            workbook = openpyxl.load_workbook(file_path, read_only=True)
        except Exception as e:
            logger.error(f"无法打开工作簿: {file_path}, 错误: {e}")
            return []
        names = list(workbook.sheetnames)
        workbook.close()
        return names

    # ------------------------------------------------------------ JSON

    def save_json_config(self, data: Any, config_path: str) -> bool:
        """
        保存JSON文件

        Args:
            data: 要保存的数据
            config_path: 文件路径

        Returns:
            保存是否成功
        """
        try:
            _ensure_parent(config_path)
            with open(config_path, 'w', encoding=self.encoding) as f:
                json.dump(data, f, ensure_ascii=False, indent=2)
            logger.debug(f"JSON文件保存成功: {config_path}")
            return True
        except Exception as e:
            logger.error(f"保存JSON失败: {config_path}, 错误: {e}")
            return False

    def load_json_config(self, config_path: str) -> Any:
        """
        加载JSON文件

        Returns:
            数据，文件不存在或解析失败时返回空字典
        """
        try:
            if not os.path.exists(config_path):
                logger.warning(f"JSON文件不存在: {config_path}")
                return {}
            with open(config_path, 'r', encoding=self.encoding) as f:
                return json.load(f)
        except Exception as e:
            logger.error(f"加载JSON失败: {config_path}, 错误: {e}")
            return {}
