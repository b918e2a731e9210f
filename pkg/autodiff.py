"""
三模态预训练工具 - 自动微分模块
基于numpy的最小反向模式自动微分，全部使用双精度，
并提供中心差分梯度检查作为所有损失实现的校验基准

广播规则：只允许前导维度广播，即较短的形状必须是较长形状的尾部。
"""

import logging
import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import InvalidArgumentError, NumericError, ShapeError

logger = logging.getLogger(__name__)

_state = threading.local()


def is_grad_enabled() -> bool:
    """当前线程是否记录计算图"""
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """在上下文中禁用计算图记录（冻结评估时使用）"""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """稠密双精度张量，记录生成它的运算以便反向传播"""

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        """
        Args:
            data: 数值数据
            requires_grad: 是否需要梯度（叶子参数设为True）
            name: 参数名称，仅用于日志和检查点
        """
        array = np.asarray(data, dtype=np.float64)
        if not array.flags.c_contiguous:
            array = np.ascontiguousarray(array)
        self.data = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.op = "leaf"
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("只支持除以常数标量")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)


TensorLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(value: TensorLike) -> Tensor:
    """把常量包装为不需要梯度的张量"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def constant(value) -> Tensor:
    """创建常量张量"""
    return Tensor(value, requires_grad=False)


def parameter(value, name: Optional[str] = None) -> Tensor:
    """创建需要梯度的叶子参数"""
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_broadcast(a_shape: Tuple[int, ...], b_shape: Tuple[int, ...], op: str):
    if a_shape == b_shape:
        return
    short, long_ = (a_shape, b_shape) if len(a_shape) <= len(b_shape) else (b_shape, a_shape)
    if len(short) == len(long_) or long_[len(long_) - len(short):] != short:
        raise ShapeError(f"{op} 形状不兼容: {a_shape} 与 {b_shape}")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    return grad


# ---------------------------------------------------------------- 逐元素运算

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    active = a.data > 0

    def backward(g):
        return (g * active,)

    return _make(np.where(active, a.data, 0.0), (a,), backward, "relu")


def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _make(out, (a,), backward, "exp")


def log(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericError("log 的输入必须为正数")

    def backward(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), backward, "log")


def hinge(a: TensorLike, margin: float = 1.0) -> Tensor:
    """max(0, margin - a)"""
    a = as_tensor(a)
    slack = margin - a.data
    active = slack > 0

    def backward(g):
        return (-g * active,)

    return _make(np.where(active, slack, 0.0), (a,), backward, "hinge")


# ---------------------------------------------------------------- 线性代数与形状

def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """(..., n) @ (n, m) -> (..., m)"""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul 形状不兼容: {a.shape} 与 {b.shape}")
    n, m = b.shape
    a2 = a.data.reshape(-1, n)
    out = (a2 @ b.data).reshape(a.shape[:-1] + (m,))

    def backward(g):
        g2 = g.reshape(-1, m)
        grad_a = (g2 @ b.data.T).reshape(a.shape)
        grad_b = a2.T @ g2
        return grad_a, grad_b

    return _make(out, (a, b), backward, "matmul")


def transpose(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose 只支持二维张量，实际 {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a: TensorLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape 形状不兼容: {a.shape} 与 {tuple(shape)}")
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def broadcast(a: TensorLike, leading: Sequence[int]) -> Tensor:
    """沿新增的前导维度复制: shape -> leading + shape"""
    a = as_tensor(a)
    leading = tuple(leading)
    out = np.broadcast_to(a.data, leading + a.shape).copy()

    def backward(g):
        return (_unbroadcast(g, a.shape),)

    return _make(out, (a,), backward, "broadcast")


def concat(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise InvalidArgumentError("concat 至少需要一个张量")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat 形状不兼容: {[t.shape for t in tensors]}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tensors, backward, "concat")


def gather(a: TensorLike, indices) -> Tensor:
    """按第0维取行: out[...] = a[indices[...]]"""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= a.shape[0]):
        raise ShapeError(f"gather 下标越界: 张量第0维 {a.shape[0]}")

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, indices, g)
        return (grad,)

    return _make(a.data[indices], (a,), backward, "gather")


def scatter_add(a: TensorLike, indices, size: int) -> Tensor:
    """gather的伴随: out[indices[i]] += a[i]，输出第0维长度为size"""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 1 or indices.shape[0] != a.shape[0]:
        raise ShapeError(f"scatter_add 下标形状 {indices.shape} 与张量 {a.shape} 不匹配")
    out = np.zeros((size,) + a.shape[1:])
    np.add.at(out, indices, a.data)

    def backward(g):
        return (g[indices],)

    return _make(out, (a,), backward, "scatter_add")


# ---------------------------------------------------------------- 归约

def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a: TensorLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)),)

    return _make(out, (a,), backward, "sum")


def mean(a: TensorLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    out = np.mean(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / count,)

    return _make(out, (a,), backward, "mean")


def max_reduce(a: TensorLike, axis: int) -> Tensor:
    """沿axis取最大值，梯度流向第一个最大元素"""
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise ShapeError(f"max_reduce 轴长度为0: {a.shape}")
    arg = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, arg, axis=axis).squeeze(axis)

    def backward(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, arg, np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return _make(out, (a,), backward, "max")


def min_reduce(a: TensorLike, axis: int) -> Tensor:
    return neg(max_reduce(neg(a), axis))


# ---------------------------------------------------------------- 复合原语

def l2_normalize(a: TensorLike, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """沿axis做l2归一化，范数低于eps时按eps缩放"""
    a = as_tensor(a)
    norm = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))
    safe = np.maximum(norm, eps)
    out = a.data / safe

    def backward(g):
        proj = np.sum(g * out, axis=axis, keepdims=True)
        grad = np.where(norm > eps, (g - out * proj) / safe, g / safe)
        return (grad,)

    return _make(out, (a,), backward, "l2_normalize")


def softmax_cross_entropy(logits: TensorLike, targets, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    逐行softmax交叉熵，使用最大值平移的log-sum-exp

    Args:
        logits: (n, c) 张量
        targets: (n,) 目标列下标
        mask: (n, c) 布尔矩阵，False的位置不参与归一化

    Returns:
        (n,) 每行损失 logsumexp(masked row) - row[target]
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy 需要二维logits，实际 {logits.shape}")
    n, c = logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (n,):
        raise ShapeError(f"目标形状 {targets.shape} 与logits {logits.shape} 不匹配")
    if mask is None:
        mask = np.ones((n, c), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n, c):
        raise ShapeError(f"掩码形状 {mask.shape} 与logits {logits.shape} 不匹配")
    rows = np.arange(n)
    if not np.all(mask[rows, targets]):
        raise InvalidArgumentError("目标位置被掩码排除")

    masked = np.where(mask, logits.data, -np.inf)
    shift = np.max(masked, axis=1, keepdims=True)
    weights = np.where(mask, np.exp(masked - shift), 0.0)
    total = np.sum(weights, axis=1, keepdims=True)
    lse = shift + np.log(total)
    out = lse[:, 0] - logits.data[rows, targets]
    probs = weights / total

    def backward(g):
        grad = probs.copy()
        grad[rows, targets] -= 1.0
        return (grad * g[:, None],)

    return _make(out, (logits,), backward, "softmax_cross_entropy")


def dense(x: TensorLike, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """全连接层 x @ W + b"""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# ---------------------------------------------------------------- 反向传播

class Graph:
    """从损失出发的拓扑有序计算图"""

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: List[Tensor] = self._toposort(root)

    @staticmethod
    def _toposort(root: Tensor) -> List[Tensor]:
        order: List[Tensor] = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> List[Tensor]:
        return [node for node in self.nodes if node.is_leaf]


def backward(loss: Tensor, graph: Optional[Graph] = None):
    """
    反向传播，梯度累加到需要梯度的叶子参数的 .grad 上

    多次调用而不清零时梯度按次数累加。

    Args:
        loss: 标量损失
        graph: 预先构建的计算图，默认从loss构建
    """
    if loss.data.ndim != 0:
        raise InvalidArgumentError(f"反向传播需要标量损失，实际形状 {loss.shape}")
    if not loss.requires_grad:
        logger.warning("损失不依赖任何需要梯度的参数，跳过反向传播")
        return
    graph = graph or Graph(loss)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = np.array(g) if node.grad is None else node.grad + g
            continue
        for parent, parent_grad in zip(node._parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad


def zero_grad(params: Iterable[Tensor]):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------- 梯度检查

def gradcheck(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
              coords: Optional[int] = None, seed: int = 0, mask_kinks: bool = True,
              kink_rtol: float = 1e-2, floor: float = 1e-8) -> float:
    """
    中心差分梯度检查

    相对误差为 |a-n| / max(floor, |a|+|n|)。单侧差分不一致时把步长缩小10倍再看：
    光滑函数的不一致量随步长线性缩小（曲率），按原步长检查；小步长下单侧差分
    一致说明折点落在两个步长之间，按小步长检查；其余坐标视为处于
    relu/max/hinge 的折点上并被排除。解析值与数值差在有限差分噪声以内的坐标记为0误差。

    Args:
        f: 无参函数，每次调用都用当前参数值重新构建并返回标量损失
        params: 待检查的叶子参数
        eps: 差分步长
        coords: 每个参数最多抽查的坐标数，None表示全部
        seed: 抽查坐标的随机种子
        mask_kinks: 是否排除折点坐标
        kink_rtol: 单侧差分一致性的相对阈值
        floor: 相对误差分母下限

    Returns:
        最大相对误差

    Raises:
        NumericError: 候选坐标全部被判定为折点，没有任何坐标得到检查
    """
    params = list(params)
    zero_grad(params)
    loss = f()
    f0 = _scalar_value(loss)
    backward(loss)
    rng = np.random.default_rng(seed)

    def noise(step: float) -> float:
        return 100.0 * np.finfo(np.float64).eps * (abs(f0) + 1.0) / step

    def consistent(d_plus: float, d_minus: float, step: float) -> bool:
        return abs(d_plus - d_minus) <= kink_rtol * max(abs(d_plus) + abs(d_minus), floor) + noise(step)

    worst = 0.0
    checked = 0
    skipped = 0
    for param in params:
        analytic = np.zeros_like(param.data) if param.grad is None else param.grad
        flat = param.data.reshape(-1)
        flat_grad = analytic.reshape(-1)
        if coords is None or coords >= flat.size:
            chosen = np.arange(flat.size)
        else:
            chosen = np.sort(rng.choice(flat.size, size=coords, replace=False))
        for i in chosen:
            step = eps
            d_plus, d_minus = _one_sided(f, flat, i, step, f0)
            numeric = (d_plus + d_minus) / 2.0
            if mask_kinks and not consistent(d_plus, d_minus, step):
                small = step / 10.0
                s_plus, s_minus = _one_sided(f, flat, i, small, f0)
                gap, small_gap = abs(d_plus - d_minus), abs(s_plus - s_minus)
                small_numeric = (s_plus + s_minus) / 2.0
                curvature = (abs(small_gap - gap / 10.0) <= 0.1 * gap / 10.0 + noise(small)
                             and abs(small_numeric - numeric) <= kink_rtol * (abs(small_numeric) + abs(numeric))
                             + noise(small))
                if not curvature:
                    if not consistent(s_plus, s_minus, small):
                        skipped += 1
                        continue
                    step, numeric = small, small_numeric
            a = float(flat_grad[i])
            error = abs(a - numeric)
            rel = 0.0 if error <= noise(step) else error / max(floor, abs(a) + abs(numeric))
            worst = max(worst, rel)
            checked += 1
    logger.info(f"梯度检查完成: 检查 {checked} 个坐标，排除折点 {skipped} 个，最大相对误差 {worst:.3e}")
    if checked == 0 and skipped > 0:
        raise NumericError(f"梯度检查没有可用坐标: {skipped} 个坐标全部被判定为折点")
    if skipped > checked:
        logger.warning(f"被排除的折点坐标({skipped})多于检查的坐标({checked})，检查结果可信度低")
    return worst


def _one_sided(f: Callable[[], Tensor], flat: np.ndarray, i: int, step: float, f0: float) -> Tuple[float, float]:
    """第i个坐标上的前向、后向差商，结束后恢复原值"""
    original = flat[i]
    flat[i] = original + step
    f_plus = _scalar_value(f())
    flat[i] = original - step
    f_minus = _scalar_value(f())
    flat[i] = original
    return (f_plus - f0) / step, (f0 - f_minus) / step


def _scalar_value(t: Tensor) -> float:
    value = float(np.asarray(t.data).reshape(-1)[0]) if t.data.size == 1 else None
    if value is None:
        raise InvalidArgumentError(f"梯度检查的函数必须返回标量，实际形状 {t.shape}")
    if not np.isfinite(value):
        raise NumericError(f"梯度检查中函数值非有限: {value}")
    return value
