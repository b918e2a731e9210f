"""
三模态预训练工具 - 优化器模块
AdamW（解耦权重衰减）与无预热的余弦退火学习率，训练器和颜色细化共用
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from autodiff import Tensor
from errors import InvalidArgumentError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class AdamWState:
    """按参数名保存的一阶/二阶矩与步数"""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor]) -> "AdamWState":
        state = cls()
        for name, param in params.items():
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        return state

    def to_arrays(self) -> Dict[str, np.ndarray]:
        """展开为检查点使用的 adamw.m/<name>、adamw.v/<name> 数组"""
        arrays = {}
        for name in self.m:
            arrays[f"adamw.m/{name}"] = self.m[name]
            arrays[f"adamw.v/{name}"] = self.v[name]
        return arrays

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], step: int) -> "AdamWState":
        state = cls(step=step)
        for key, value in arrays.items():
            if key.startswith("adamw.m/"):
                state.m[key[len("adamw.m/"):]] = np.array(value, dtype=np.float64)
            elif key.startswith("adamw.v/"):
                state.v[key[len("adamw.v/"):]] = np.array(value, dtype=np.float64)
        return state


def adamw_step(state: AdamWState, params: Mapping[str, Tensor], grads: Optional[Mapping[str, np.ndarray]] = None,
               lr: float = 1e-3, wd: float = 0.0) -> AdamWState:
    """
    执行一步AdamW更新（原地修改参数数据）

    θ ← θ − lr·(m̂/(√v̂+eps) + wd·θ)

    Args:
        state: 优化器状态
        params: 参数名到张量的映射
        grads: 参数名到梯度的映射，默认使用各参数的 .grad（缺失视为0）
        lr: 学习率
        wd: 权重衰减系数

    Returns:
        更新后的状态（同一对象）
    """
    # 全部形状先校验，失败时状态和参数保持不变
    resolved = {}
    for name, param in params.items():
        if grads is not None and name in grads:
            grad = np.asarray(grads[name], dtype=np.float64)
        elif param.grad is not None:
            grad = param.grad
        else:
            grad = np.zeros_like(param.data)
        if grad.shape != param.shape:
            raise ShapeError(f"参数 {name} 形状 {param.shape} 与梯度形状 {grad.shape} 不匹配")
        for moments in (state.m, state.v):
            if name in moments and moments[name].shape != param.shape:
                raise ShapeError(f"参数 {name} 形状 {param.shape} 与矩估计形状 {moments[name].shape} 不匹配")
        resolved[name] = grad

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for name, param in params.items():
        grad = resolved[name]
        m = state.m.setdefault(name, np.zeros_like(param.data))
        v = state.v.setdefault(name, np.zeros_like(param.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        param.data -= lr * (m_hat / (np.sqrt(v_hat) + state.eps) + wd * param.data)
    return state


def cosine_lr(t: int, T: int, lr0: float) -> float:
    """lr0·½(1+cos(πt/T))，无预热，下限为0"""
    if T < 1:
        raise InvalidArgumentError(f"余弦退火总步数必须 >= 1，实际 {T}")
    if t < 0 or t > T:
        raise InvalidArgumentError(f"步数 t={t} 超出范围 [0, {T}]")
    return max(0.0, lr0 * 0.5 * (1.0 + math.cos(math.pi * t / T)))
