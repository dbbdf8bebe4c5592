"""Dense tensor with reverse-mode autodiff on an explicit gradient tape.

Data lives in a contiguous row-major numpy array of 64-bit floats (32-bit
is supported for the benchmark harness only). Tensors are immutable after
construction: every primitive returns a fresh tensor, and slicing copies.
Recording happens onto the innermost active :class:`GradTape`; with no tape
active, primitives run forward-only.
"""
from __future__ import annotations

import weakref
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

__all__ = ["Tensor", "GradTape", "no_tape", "active_tape", "alloc_counters"]


class _AllocCounters:
    """Live-byte accounting for every Tensor data buffer.

    ``reset_peak`` rezeroes the per-run counter: ``peak`` afterwards reports
    the maximum bytes allocated above the live baseline at reset time.
    Single-threaded by contract (the benchmark harness runs serially).
    """

    def __init__(self) -> None:
        self.current = 0
        self._baseline = 0
        self._peak_above_baseline = 0

    def add(self, nbytes: int) -> None:
        self.current += nbytes
        delta = self.current - self._baseline
        if delta > self._peak_above_baseline:
            self._peak_above_baseline = delta

    def release(self, nbytes: int) -> None:
        self.current -= nbytes

    def reset_peak(self) -> None:
        self._baseline = self.current
        self._peak_above_baseline = 0

    @property
    def peak(self) -> int:
        return self._peak_above_baseline


alloc_counters = _AllocCounters()


class Tensor:
    """N-dimensional array with optional gradient accumulator.

    ``data`` is always a C-contiguous numpy array owned by this tensor.
    ``grad`` is populated by :meth:`GradTape.backward` for leaf tensors
    created with ``requires_grad=True`` and accumulates across calls.
    """

    __slots__ = ("data", "requires_grad", "grad", "_finalizer", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else np.float64, order="C")
        if arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._finalizer = weakref.finalize(self, alloc_counters.release, arr.nbytes)
        alloc_counters.add(arr.nbytes)

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Adopt ``arr`` without copying. ``arr`` must be fresh, contiguous
        and never aliased by the caller afterwards."""
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t._finalizer = weakref.finalize(t, alloc_counters.release, arr.nbytes)
        alloc_counters.add(arr.nbytes)
        return t

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Copy of the underlying data (tensors stay immutable)."""
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- operator sugar (implemented in ops.py, bound lazily) ----------------

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def permute(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.permute(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


class _Record:
    """One primitive application: inputs, output, and its backward rule."""

    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs: tuple[Tensor, ...], output: Tensor,
                 backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


_TAPE_STACK: list["GradTape | None"] = []


def active_tape() -> "GradTape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class no_tape:
    """Context manager disabling recording (pure inference)."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


class GradTape:
    """Ordered record of primitive applications for reverse-mode replay.

    Single-owner: use as a context manager around the forward computation,
    then call :meth:`backward` on a scalar loss. Replaying in reverse order
    sends each recorded application's output gradient through its backward
    rule exactly once.
    """

    def __init__(self) -> None:
        self.records: list[_Record] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPE_STACK.pop()
        return False

    def record(self, inputs: tuple[Tensor, ...], output: Tensor, backward_fn) -> None:
        self.records.append(_Record(inputs, output, backward_fn))
        self._produced.add(id(output))

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

        Repeated calls accumulate. Raises :class:`ContractError` if ``loss``
        is not a scalar.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        produced = {id(r.output) for r in self.records}
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for rec in reversed(self.records):
            g_out = grads.pop(id(rec.output), None)
            if g_out is None:
                continue
            for inp, g in zip(rec.inputs, rec.backward_fn(g_out)):
                if g is None:
                    continue
                key = id(inp)
                if key not in produced and not inp.requires_grad:
                    continue  # constant input: gradient is never consumed
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                if inp.requires_grad and key not in produced:
                    leaves[key] = inp
        for key, leaf in leaves.items():
            g = grads.pop(key)
            if leaf.grad is None:
                leaf.grad = g.astype(leaf.data.dtype, copy=False)
            else:
                leaf.grad = leaf.grad + g


def backward(tape: GradTape, loss: Tensor) -> None:
    """Free-function spelling of :meth:`GradTape.backward`."""
    tape.backward(loss)


def check_same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")
