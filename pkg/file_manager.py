"""
三模态预训练工具 - 数据集管理模块
负责合成形状语料的落盘、索引（dataset_index.json）和重新加载
"""

import logging
import os
from datetime import datetime
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from file_operations import FileOperations

logger = logging.getLogger(__name__)

INDEX_FILE = "dataset_index.json"


class ShapeRecord:
    """单个形状文件的索引记录"""

    def __init__(self, file_name: str, label: int, class_name: str, seed: int,
                 point_count: int, created_time: datetime = None):
        self.file_name = file_name
        self.label = label
        self.class_name = class_name
        self.seed = seed
        self.point_count = point_count
        self.created_time = created_time or datetime.now()

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典"""
        return {
            'file_name': self.file_name,
            'label': self.label,
            'class_name': self.class_name,
            'seed': self.seed,
            'point_count': self.point_count,
            'created_time': self.created_time.isoformat()
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ShapeRecord':
        """从字典创建"""
        return cls(
            file_name=data['file_name'],
            label=int(data['label']),
            class_name=data.get('class_name', str(data['label'])),
            seed=int(data.get('seed', 0)),
            point_count=int(data.get('point_count', 0)),
            created_time=datetime.fromisoformat(data['created_time']) if 'created_time' in data else None
        )


class DatasetManager:
    """数据集管理类"""

    def __init__(self, data_dir: str):
        """
        Args:
            data_dir: 数据集目录，索引文件位于其中
        """
        self.data_dir = data_dir
        self.index_file = os.path.join(data_dir, INDEX_FILE)
        self.file_ops = FileOperations()
        self.records: List[ShapeRecord] = []
        self.load_index()

    def add_shape(self, pc: np.ndarray, label: int, class_name: str, seed: int,
                  file_name: Optional[str] = None) -> ShapeRecord:
        """
        写入一个形状并登记（不立即保存索引）

        Args:
            pc: 点云
            label: 类别标签
            class_name: 类别名称
            seed: 生成该形状的种子
            file_name: 文件名，默认按序号命名

        Returns:
            新记录
        """
        file_name = file_name or f"shape_{len(self.records):05d}.bin"
        self.file_ops.write_point_cloud(pc, os.path.join(self.data_dir, file_name), binary=True)
        record = ShapeRecord(file_name, int(label), class_name, int(seed), len(pc))
        self.records.append(record)
        return record

    def materialize(self, samples: List[Tuple[np.ndarray, int]], seeds: List[int],
                    class_names: List[str]) -> Dict[str, Any]:
        """
        把 (点云, 标签) 序列写入目录并保存索引

        Returns:
            结果字典 {'written': 数量, 'index': 索引路径}

        Raises:
            OSError: 索引文件保存失败
        """
        os.makedirs(self.data_dir, exist_ok=True)
        for (pc, label), seed in zip(samples, seeds):
            self.add_shape(pc, label, class_names[label], seed)
        if not self.save_index():
            raise OSError(f"数据集索引保存失败: {self.index_file}")
        logger.info(f"合成数据集写入完成: {len(samples)} 个形状 -> {self.data_dir}")
        return {'written': len(samples), 'index': self.index_file}

    def load(self) -> List[Tuple[np.ndarray, int]]:
        """按索引顺序读取全部形状，缺失的文件跳过并告警"""
        samples = []
        for record in self.records:
            path = os.path.join(self.data_dir, record.file_name)
            if not os.path.exists(path):
                logger.warning(f"文件不存在，跳过: {path}")
                continue
            samples.append((self.file_ops.read_point_cloud(path), record.label))
        return samples

    def get_record_by_name(self, file_name: str) -> Optional[ShapeRecord]:
        """根据文件名获取记录"""
        for record in self.records:
            if record.file_name == file_name:
                return record
        return None

    def clear_all(self):
        """清空索引（不删除点云文件）"""
        self.records.clear()
        self.save_index()

    def save_index(self) -> bool:
        """保存索引"""
        return self.file_ops.save_json_config([r.to_dict() for r in self.records], self.index_file)

    def load_index(self):
        """加载索引，目录或索引不存在时为空"""
        self.records = []
        if not os.path.exists(self.index_file):
            return
        data = self.file_ops.load_json_config(self.index_file)
        if not isinstance(data, list):
            logger.error(f"索引文件格式错误: {self.index_file}")
            return
        for item in data:
            try:
                self.records.append(ShapeRecord.from_dict(item))
            except (KeyError, ValueError) as e:
                logger.warning(f"跳过无效索引记录: {item}, 错误: {e}")

    def get_summary(self) -> Dict[str, Any]:
        """获取数据集摘要"""
        per_class: Dict[str, int] = {}
        for record in self.records:
            per_class[record.class_name] = per_class.get(record.class_name, 0) + 1
        return {
            'total_shapes': len(self.records),
            'classes': per_class,
            'data_dir': self.data_dir
        }
