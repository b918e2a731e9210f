"""
三模态预训练工具 - 异常定义模块
集中定义各模块抛出的异常类型，命令行层据此映射退出码
"""

from typing import List, Optional


class TrimodalError(Exception):
    """工具内所有异常的基类"""


class InvalidArgumentError(TrimodalError, ValueError):
    """参数不合法（数量、k值、比例、类别等）"""


class InvalidInputError(TrimodalError, ValueError):
    """输入数据不合法（非有限坐标、空文件等）"""


class FormatError(TrimodalError, ValueError):
    """文件格式解析失败"""

    def __init__(self, message: str, line: Optional[int] = None, offset: Optional[int] = None):
        """
        Args:
            message: 错误描述
            line: 出错的行号（从1开始，文本格式）
            offset: 出错的字节偏移（二进制格式）
        """
        location = ""
        if line is not None:
            location = f"第{line}行: "
        elif offset is not None:
            location = f"偏移{offset}: "
        super().__init__(f"{location}{message}")
        self.line = line
        self.offset = offset


class ShapeError(TrimodalError, ValueError):
    """张量形状不匹配"""


class NumericError(TrimodalError, ArithmeticError):
    """数值错误（非有限值、范数过小等）"""


class NumericAbortError(NumericError):
    """训练因非有限损失中止"""

    def __init__(self, component: str, step: int, value: float):
        super().__init__(f"第{step}步损失分量 {component} 非有限: {value}")
        self.component = component
        self.step = step
        self.value = value


class CheckpointError(TrimodalError):
    """检查点文件损坏或与模型清单不匹配"""


class ConfigError(TrimodalError):
    """配置文件解析或校验失败"""

    def __init__(self, message: str, errors: Optional[List[str]] = None):
        self.errors = list(errors or [])
        if self.errors:
            message = message + ": " + "; ".join(self.errors)
        super().__init__(message)


class ContractViolation(TrimodalError, RuntimeError):
    """内部约定被破坏"""
