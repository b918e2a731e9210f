"""
三模态预训练工具 - 配置加载模块
解析 key=value 配置文件，按字段名分派到 训练/损失/三元组/编码器 四个配置类，
收集错误和警告；另负责读取json5格式的消融实验预设
"""

import logging
import os
from dataclasses import fields, replace
from datetime import datetime
from typing import Any, Dict, List, Optional, Tuple

import json5

from encoders import EncoderConfig
from errors import ConfigError, TrimodalError
from losses import LossConfig
from trainer_eval import TrainConfig
from triplet_pipeline import PipelineConfig

logger = logging.getLogger(__name__)

NESTED_FIELDS = ("loss", "pipeline", "encoder")
SECTIONS = {
    "train": TrainConfig,
    "loss": LossConfig,
    "pipeline": PipelineConfig,
    "encoder": EncoderConfig,
}
TRUE_VALUES = ("1", "true", "yes", "on")
FALSE_VALUES = ("0", "false", "no", "off")


def _section_fields(section: str) -> Dict[str, type]:
    return {f.name: f.type for f in fields(SECTIONS[section]) if not (section == "train" and f.name in NESTED_FIELDS)}


def coerce_value(value: Any, kind: type) -> Any:
    """把配置值转换为字段声明的类型，失败抛出ValueError"""
    if kind is bool:
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in TRUE_VALUES:
            return True
        if text in FALSE_VALUES:
            return False
        raise ValueError(f"无法解析为布尔值: {value!r}")
    if kind is int:
        if isinstance(value, bool):
            raise ValueError(f"无法解析为整数: {value!r}")
        if isinstance(value, float):
            if not value.is_integer():
                raise ValueError(f"无法解析为整数: {value!r}")
            return int(value)
        return int(str(value).strip())
    if kind is float:
        return float(str(value).strip()) if not isinstance(value, (int, float)) else float(value)
    return str(value)


class ConfigValidator:
    """配置验证器"""

    def __init__(self, config_path: Optional[str] = None):
        self.config_path = config_path
        self.values: Dict[str, str] = {}
        self.errors: List[str] = []
        self.warnings: List[str] = []
        self.parse_errors: List[str] = []
        self.parse_warnings: List[str] = []
        self.routes: Dict[str, List[str]] = {}
        for section in SECTIONS:
            for name in _section_fields(section):
                self.routes.setdefault(name, []).append(section)

    def load_file(self, config_path: Optional[str] = None) -> bool:
        """读取配置文件"""
        path = config_path or self.config_path
        self.config_path = path
        if not path or not os.path.exists(path):
            self.parse_errors.append(f"配置文件不存在: {path}")
            self.errors = list(self.parse_errors)
            return False
        with open(path, 'r', encoding='utf-8') as f:
            self.parse_text(f.read())
        logger.info(f"成功加载配置 {path}: {len(self.values)} 项")
        return True

    def parse_text(self, text: str) -> Dict[str, str]:
        """解析 key=value 文本，#开头为注释，空行忽略"""
        for line_no, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith('#'):
                continue
            if '=' not in stripped:
                self.parse_errors.append(f"第{line_no}行缺少 '=': {stripped}")
                continue
            key, value = (part.strip() for part in stripped.split('=', 1))
            if not key:
                self.parse_errors.append(f"第{line_no}行缺少配置名")
                continue
            if key in self.values:
                self.parse_warnings.append(f"配置项 {key} 重复，使用第{line_no}行的值")
            self.values[key] = value
        return self.values

    def _route(self, values: Dict[str, Any]) -> Dict[str, Dict[str, Any]]:
        routed: Dict[str, Dict[str, Any]] = {section: {} for section in SECTIONS}
        unknown = [key for key in values if key not in self.routes]
        if unknown:
            self.errors.append(f"未知配置项: {', '.join(sorted(unknown))}")
        for key, value in values.items():
            for section in self.routes.get(key, []):
                kind = _section_fields(section)[key]
                try:
                    routed[section][key] = coerce_value(value, kind)
                except ValueError as e:
                    self.errors.append(f"配置项 {key}: {e}")
        return routed

    def _check_consistency(self, cfg: TrainConfig):
        pipeline, encoder = cfg.pipeline, cfg.encoder
        if pipeline.render_size % encoder.patch_size:
            self.errors.append(f"render_size={pipeline.render_size} 不能被 patch_size={encoder.patch_size} 整除")
        if pipeline.source_points < pipeline.n_points:
            self.errors.append(f"source_points={pipeline.source_points} 少于 n_points={pipeline.n_points}")
        for name in ("num_groups", "group_size", "k_neighbors"):
            if getattr(encoder, name) > pipeline.n_points:
                self.errors.append(f"{name}={getattr(encoder, name)} 超过 n_points={pipeline.n_points}")
        if pipeline.k_nn >= pipeline.n_points:
            self.errors.append(f"k_nn={pipeline.k_nn} 必须小于 n_points={pipeline.n_points}")
        if cfg.lr0 > 1e-2:
            self.warnings.append(f"学习率 lr0={cfg.lr0} 较大，训练可能不稳定")
        if encoder.mask_ratio == 0:
            self.warnings.append("mask_ratio=0，重建损失恒为0")
        if cfg.batch_size > cfg.per_class * cfg.num_classes:
            self.warnings.append(f"batch_size={cfg.batch_size} 超过合成数据集大小 {cfg.per_class * cfg.num_classes}")

    def _assemble(self, base: TrainConfig, routed: Dict[str, Dict[str, Any]]) -> Optional[TrainConfig]:
        try:
            loss = replace(base.loss, **routed["loss"])
            pipeline = replace(base.pipeline, **routed["pipeline"])
            encoder = replace(base.encoder, **routed["encoder"])
            return replace(base, loss=loss, pipeline=pipeline, encoder=encoder, **routed["train"])
        except TrimodalError as e:
            self.errors.append(str(e))
            return None

    def _evaluate(self) -> Optional[TrainConfig]:
        self.errors = list(self.parse_errors)
        self.warnings = list(self.parse_warnings)
        routed = self._route(self.values)
        cfg = self._assemble(TrainConfig(), routed) if not self.errors else None
        if cfg is not None:
            self._check_consistency(cfg)
        return cfg

    def validate(self) -> Tuple[bool, List[str], List[str]]:
        """验证已读取的配置"""
        self._evaluate()
        return len(self.errors) == 0, self.errors, self.warnings

    def build(self) -> TrainConfig:
        """
        构建训练配置

        Returns:
            TrainConfig

        Raises:
            ConfigError: 存在任何错误时
        """
        cfg = self._evaluate()
        for warning in self.warnings:
            logger.warning(warning)
        if self.errors or cfg is None:
            raise ConfigError(f"配置无效 {self.config_path or ''}".strip(), self.errors)
        return cfg

    def apply_overrides(self, cfg: TrainConfig, overrides: Dict[str, Any]) -> TrainConfig:
        """在已有配置上覆盖部分字段（消融变体使用）"""
        self.errors = []
        routed = self._route(overrides)
        updated = self._assemble(cfg, routed) if not self.errors else None
        if self.errors or updated is None:
            raise ConfigError("配置覆盖无效", self.errors)
        return updated

    def generate_report(self) -> str:
        """生成配置报告"""
        report = ["=" * 50, "配置验证报告", "=" * 50,
                  f"验证时间: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}",
                  f"配置文件: {self.config_path}",
                  f"配置项数: {len(self.values)}",
                  f"错误数量: {len(self.errors)}",
                  f"警告数量: {len(self.warnings)}", ""]
        if self.errors:
            report.append("错误列表:")
            report.extend(f"  {i}. {error}" for i, error in enumerate(self.errors, 1))
            report.append("")
        if self.warnings:
            report.append("警告列表:")
            report.extend(f"  {i}. {warning}" for i, warning in enumerate(self.warnings, 1))
        return "\n".join(report)


def load_config(config_path: str) -> TrainConfig:
    """读取并构建训练配置，失败抛出ConfigError"""
    validator = ConfigValidator(config_path)
    if not validator.load_file():
        raise ConfigError("配置文件读取失败", validator.errors)
    return validator.build()


def load_preset(preset_path: str) -> Dict[str, Any]:
    """读取json5消融预设"""
    if not os.path.exists(preset_path):
        raise ConfigError(f"预设文件不存在: {preset_path}")
    try:
        with open(preset_path, 'r', encoding='utf-8') as f:
            preset = json5.load(f)
    except ValueError as e:
        raise ConfigError(f"预设文件解析失败: {preset_path}", [str(e)])
    if not isinstance(preset, dict) or not isinstance(preset.get("variants", {}), dict):
        raise ConfigError(f"预设文件结构错误: {preset_path}", ["需要包含 variants 字典"])
    return preset
