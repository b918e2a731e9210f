#!/usr/bin/env python3
"""
测试优化器模块
验证AdamW更新、状态序列化和余弦退火学习率
"""

import sys
import os

import numpy as np
import pytest

# 添加当前目录到Python路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import autodiff as ad
from errors import InvalidArgumentError, ShapeError
from optimizer import AdamWState, adamw_step, cosine_lr


def test_first_step_moves_by_lr():
    """测试第一步更新幅度约为lr·sign(g)"""
    print("🧪 测试AdamW第一步...")
    params = {"w": ad.parameter(np.array([1.0, -2.0, 0.5]))}
    state = AdamWState.for_params(params)
    adamw_step(state, params, {"w": np.array([3.0, -0.1, 0.0])}, lr=0.01)
    assert state.step == 1
    assert np.allclose(params["w"].data, [0.99, -1.99, 0.5], atol=1e-6)
    print("✅ AdamW第一步测试通过")


def test_weight_decay_and_missing_grad():
    params = {"w": ad.parameter(np.array([2.0, -4.0]))}
    state = AdamWState.for_params(params)
    adamw_step(state, params, lr=0.1, wd=0.5)
    assert np.allclose(params["w"].data, [2.0 - 0.1 * 0.5 * 2.0, -4.0 + 0.1 * 0.5 * 4.0])

    p = ad.parameter(np.ones(2))
    ad.backward(ad.sum(ad.mul(p, p)))
    named = {"p": p}
    adamw_step(AdamWState(), named, lr=0.1)
    assert np.allclose(p.data, 0.9, atol=1e-6)

    with pytest.raises(ShapeError):
        adamw_step(AdamWState(), {"q": ad.parameter(np.ones(3))}, {"q": np.ones(2)})


def test_adamw_minimizes_quadratic():
    """测试AdamW能最小化二次函数"""
    target = np.array([1.5, -0.5, 2.0])
    params = {"x": ad.parameter(np.zeros(3))}
    state = AdamWState.for_params(params)
    for _ in range(500):
        ad.zero_grad(params.values())
        diff = ad.sub(params["x"], target)
        ad.backward(ad.sum(ad.mul(diff, diff)))
        adamw_step(state, params, lr=0.05)
    assert np.allclose(params["x"].data, target, atol=5e-2)


def test_state_round_trip():
    """测试优化器状态展开和恢复"""
    print("🧪 测试优化器状态往返...")
    params = {"a": ad.parameter(np.ones((2, 2))), "b.c": ad.parameter(np.zeros(3))}
    state = AdamWState.for_params(params)
    grads = {"a": np.full((2, 2), 0.3), "b.c": np.array([1.0, -1.0, 2.0])}
    for _ in range(3):
        adamw_step(state, params, grads, lr=0.01)
    arrays = state.to_arrays()
    assert sorted(arrays) == ["adamw.m/a", "adamw.m/b.c", "adamw.v/a", "adamw.v/b.c"]
    restored = AdamWState.from_arrays(arrays, state.step)
    assert restored.step == 3
    for name in params:
        assert np.array_equal(restored.m[name], state.m[name])
        assert np.array_equal(restored.v[name], state.v[name])

    # 恢复后继续更新与不中断的结果一致
    copies = {name: ad.parameter(p.data.copy()) for name, p in params.items()}
    adamw_step(state, params, grads, lr=0.01)
    adamw_step(restored, copies, grads, lr=0.01)
    for name in params:
        assert np.array_equal(params[name].data, copies[name].data)
    print("✅ 优化器状态往返测试通过")


def test_cosine_lr():
    """测试余弦退火学习率"""
    assert cosine_lr(0, 100, 1e-3) == pytest.approx(1e-3)
    assert cosine_lr(50, 100, 1e-3) == pytest.approx(5e-4)
    assert cosine_lr(100, 100, 1e-3) == pytest.approx(0.0, abs=1e-18)
    values = [cosine_lr(t, 10, 1.0) for t in range(11)]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert cosine_lr(0, 1, 0.5) == 0.5
    with pytest.raises(InvalidArgumentError):
        cosine_lr(0, 0, 1e-3)
    with pytest.raises(InvalidArgumentError):
        cosine_lr(11, 10, 1e-3)
    with pytest.raises(InvalidArgumentError):
        cosine_lr(-1, 10, 1e-3)


def test_shape_error_leaves_state_untouched():
    """后面的参数形状不匹配时，前面的参数和步数都不应被更新"""
    first = ad.parameter(np.array([1.0, 2.0]))
    second = ad.parameter(np.ones(3))
    params = {"a": first, "b": second}
    state = AdamWState.for_params(params)
    with pytest.raises(ShapeError):
        adamw_step(state, params, {"a": np.ones(2), "b": np.ones(2)}, lr=0.1)
    assert state.step == 0
    assert first.data.tolist() == [1.0, 2.0]
    assert not state.m["a"].any() and not state.v["a"].any()

    state.m["b"] = np.zeros(4)
    with pytest.raises(ShapeError):
        adamw_step(state, params, {"a": np.ones(2), "b": np.ones(3)}, lr=0.1)
    assert state.step == 0 and first.data.tolist() == [1.0, 2.0]


if __name__ == "__main__":
    print("🚀 开始测试优化器模块")
    print("=" * 50)
    tests = [test_first_step_moves_by_lr, test_weight_decay_and_missing_grad, test_adamw_minimizes_quadratic,
             test_state_round_trip, test_cosine_lr, test_shape_error_leaves_state_untouched]
    for test in tests:
        test()
    print("=" * 50)
    print(f"🎉 全部 {len(tests)} 项测试通过")
