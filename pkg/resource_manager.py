"""
三模态预训练工具 - 资源管理器
负责读取 config.env 环境配置、解析配置/输出目录，并在缺少时写出默认配置文件
"""

import logging
import os
from typing import Dict, Optional

from dotenv import load_dotenv

from encoders import EncoderConfig
from errors import ConfigError
from losses import LossConfig
from trainer_eval import TrainConfig
from triplet_pipeline import PipelineConfig

logger = logging.getLogger(__name__)

ENV_FILE = "config.env"
DEFAULT_CONFIG_NAME = "pipeline_default.cfg"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class ResourceManager:
    """资源管理器类"""

    def __init__(self, base_dir: Optional[str] = None, env_file: str = ENV_FILE):
        """
        初始化资源管理器

        Args:
            base_dir: 工作目录，默认当前目录
            env_file: 环境配置文件名，存在时用python-dotenv加载（不覆盖已有环境变量）
        """
        self.base_dir = base_dir or os.getcwd()
        self.config_dir = os.path.join(self.base_dir, "config")
        env_path = os.path.join(self.base_dir, env_file)
        self.env_loaded = load_dotenv(env_path) if os.path.exists(env_path) else False
        if self.env_loaded:
            logger.debug(f"已加载环境配置: {env_path}")

    @property
    def log_level(self) -> str:
        level = os.getenv("TRIMODAL_LOG_LEVEL", "INFO").strip().upper()
        if level not in LOG_LEVELS:
            raise ConfigError(f"TRIMODAL_LOG_LEVEL 无效: {level}", [f"可选值: {', '.join(LOG_LEVELS)}"])
        return level

    @property
    def workers(self) -> int:
        raw = os.getenv("TRIMODAL_WORKERS", "1").strip()
        try:
            workers = int(raw)
        except ValueError:
            raise ConfigError(f"TRIMODAL_WORKERS 不是整数: {raw!r}")
        return max(1, workers)

    def get_output_directory(self) -> str:
        """
        获取输出目录

        Returns:
            输出目录路径（已创建）
        """
        output_dir = os.getenv("TRIMODAL_OUTPUT_DIR") or os.path.join(self.base_dir, "output")
        os.makedirs(output_dir, exist_ok=True)
        return output_dir

    def get_resource_path(self, resource_name: str) -> str:
        """
        获取配置资源路径：先找工作目录，再找 config/ 目录，都不存在时
        对默认配置名写出默认文件

        Args:
            resource_name: 资源文件名或路径

        Returns:
            资源文件的实际路径
        """
        for candidate in (resource_name, os.path.join(self.config_dir, os.path.basename(resource_name))):
            if os.path.exists(candidate):
                return candidate
        if os.path.basename(resource_name) == DEFAULT_CONFIG_NAME:
            return self.create_default_config()
        return resource_name

    def create_default_config(self, config_name: str = DEFAULT_CONFIG_NAME) -> str:
        """把各配置类的默认值写成 key=value 文件"""
        path = os.path.join(self.config_dir, config_name)
        os.makedirs(self.config_dir, exist_ok=True)
        lines = ["# 三模态预训练默认配置（由资源管理器生成）"]
        for title, values in self.default_values().items():
            lines.append("")
            lines.append(f"# {title}")
            lines.extend(f"{key}={value}" for key, value in values.items())
        with open(path, 'w', encoding='utf-8') as f:
            f.write("\n".join(lines) + "\n")
        logger.info(f"创建默认配置文件: {path}")
        return path

    @staticmethod
    def default_values() -> Dict[str, Dict[str, str]]:
        train = {k: v for k, v in TrainConfig().to_dict().items() if k not in ("loss", "pipeline", "encoder")}
        pipeline = {k: v for k, v in PipelineConfig().to_dict().items() if k != "seed"}
        sections = {"训练": train, "损失": LossConfig().to_dict(), "三元组": pipeline,
                     "编码器": EncoderConfig().to_dict()}
        return {title: {k: _format_value(v) for k, v in values.items()} for title, values in sections.items()}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    return str(value)
