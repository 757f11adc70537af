"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tape` records operations in execution order while it is
active; :meth:`Tape.backward` replays the records in reverse to fill
in gradients. Tensors store float32 data by default (float64 is
supported for verification such as finite-difference checks), always
in C (row-major) layout.

A tape and the tensors recorded on it belong to one thread. Separate
training runs can proceed in parallel as long as each has its own tape.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Sequence

import numpy as np

__all__ = ["Tensor", "Tape", "active_tape", "DimensionError"]


class DimensionError(ValueError):
    """Raised when operand shapes cannot be combined."""


_node_ids = itertools.count(1)
_tls = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tls, "tapes", None)
    if stack is None:
        stack = []
        _tls.tapes = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense n-dimensional array that can participate in a tape.

    ``requires_grad`` marks leaves (parameters, probed inputs) whose
    ``grad`` should be populated by backward. Gradients accumulate
    additively, both across multiple uses within one graph and across
    repeated backward calls; optimizers zero them between steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        # order="C" copies only when needed and, unlike ascontiguousarray,
        # leaves 0-d arrays 0-d.
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of operations, replayed in reverse by backward.

    Records are appended as operations execute, so the list is already
    topologically ordered. Use as a context manager::

        with Tape() as tape:
            loss = ...
        tape.backward(loss)
    """

    def __init__(self):
        # Each record: (out, inputs, grad_fn) where grad_fn(out_grad)
        # returns one gradient array (or None) per input.
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self, "tape stack corrupted"
        stack.pop()

    def record(self, out: Tensor, inputs: Sequence[Tensor], grad_fn: Callable) -> None:
        self._records.append((out, tuple(inputs), grad_fn))

    def clear(self) -> None:
        self._records.clear()

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` for every requires_grad tensor that ``loss`` depends on."""
        if loss.data.ndim != 0 and loss.data.size != 1:
            raise DimensionError(f"backward requires a scalar loss, got shape {loss.shape}")

        # Forward sweep: mark nodes on a differentiable path from a
        # requires_grad leaf. Records are already in topological order.
        marked: set[int] = set()
        output_ids: set[int] = set()
        for out, inputs, _ in self._records:
            output_ids.add(out.node_id)
            if any(t.requires_grad or t.node_id in marked for t in inputs):
                marked.add(out.node_id)

        grads: dict[int, np.ndarray] = {
            loss.node_id: np.ones_like(loss.data)
        }
        if loss.requires_grad:
            loss.accumulate_grad(grads[loss.node_id])
        for out, inputs, grad_fn in reversed(self._records):
            g = grads.pop(out.node_id, None)
            if g is None:
                continue
            input_grads = grad_fn(g)
            for t, ig in zip(inputs, input_grads):
                if ig is None:
                    continue
                if t.node_id in output_ids:
                    # Intermediate: stash until its producing record is reached.
                    if t.node_id in marked:
                        if t.node_id in grads:
                            grads[t.node_id] += ig
                        else:
                            arr = np.asarray(ig, dtype=t.data.dtype)
                            if not arr.flags.writeable:
                                arr = arr.copy()
                            grads[t.node_id] = arr
                        if t.requires_grad:
                            t.accumulate_grad(np.asarray(ig, dtype=t.data.dtype))
                elif t.requires_grad:
                    # Leaf: contributions sum directly into .grad.
                    t.accumulate_grad(np.asarray(ig, dtype=t.data.dtype))


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype or np.result_type(np.asarray(x), np.float32))
