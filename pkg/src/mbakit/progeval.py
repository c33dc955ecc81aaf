"""Batched expression evaluation over assignment matrices.

An :class:`Expr` is compiled once into a flat postfix program, which is then
evaluated over many variable assignments at a time.  This is the hot loop of
truth-table extraction, equivalence checking, and dataset verification, so
two interchangeable backends exist:

* ``compiled`` — the Cython kernel in :mod:`mbakit._evalcore`;
* ``python``  — a vectorized numpy interpreter.

The compiled backend is selected at import when the extension built; setting
``MBAKIT_BACKEND=python`` in the environment forces the fallback.  Both
produce identical uint64 results (``benchmarks/bench_eval.py`` compares
their speed).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .exprs import Binary, Const, Expr, Unary, Var

__all__ = ["EvalProgram", "compile_expr", "eval_program", "BACKEND"]

OP_CONST, OP_VAR, OP_NOT, OP_NEG, OP_ADD, OP_SUB, OP_MUL, OP_AND, OP_OR, OP_XOR = range(10)

_BINOP_CODE = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "&": OP_AND, "|": OP_OR, "^": OP_XOR}

try:
    from . import _evalcore
except ImportError:  # extension not built; numpy interpreter takes over
    _evalcore = None

if os.environ.get("MBAKIT_BACKEND", "").lower() == "python":
    _evalcore = None

BACKEND = "compiled" if _evalcore is not None else "python"


@dataclass(frozen=True)
class EvalProgram:
    """Postfix program: parallel opcode/argument arrays plus stack bound."""

    codes: np.ndarray  # uint8 opcodes
    args: np.ndarray  # uint64: constant value or variable column index
    max_stack: int
    n_vars: int


def compile_expr(expr: Expr, var_order: list[str] | tuple[str, ...]) -> EvalProgram:
    """Flatten ``expr`` into a postfix program over ``var_order`` columns."""
    index = {name: i for i, name in enumerate(var_order)}
    codes: list[int] = []
    args: list[int] = []

    def emit(e: Expr) -> int:
        if isinstance(e, Var):
            codes.append(OP_VAR)
            args.append(index[e.name])
            return 1
        if isinstance(e, Const):
            codes.append(OP_CONST)
            args.append(e.value & 0xFFFFFFFFFFFFFFFF)
            return 1
        if isinstance(e, Unary):
            depth = emit(e.child)
            codes.append(OP_NOT if e.op == "~" else OP_NEG)
            args.append(0)
            return depth
        dl = emit(e.left)
        dr = emit(e.right)
        codes.append(_BINOP_CODE[e.op])
        args.append(0)
        return max(dl, dr + 1)

    max_stack = emit(expr)
    return EvalProgram(
        codes=np.asarray(codes, dtype=np.uint8),
        args=np.asarray(args, dtype=np.uint64),
        max_stack=max_stack,
        n_vars=len(var_order),
    )


def eval_program(prog: EvalProgram, assigns: np.ndarray, width: int) -> np.ndarray:
    """Evaluate ``prog`` on every row of ``assigns`` (uint64, one column per
    variable in program order); returns a uint64 vector of results mod
    ``2**width``."""
    if not 1 <= width <= 64:
        raise ValueError(f"width must be in [1, 64], got {width}")
    assigns = np.ascontiguousarray(assigns, dtype=np.uint64)
    if assigns.ndim != 2 or assigns.shape[1] < prog.n_vars:
        raise ValueError(
            f"assignment matrix has shape {assigns.shape}, need (rows, >={prog.n_vars})"
        )
    mask = (1 << width) - 1
    if _evalcore is not None:
        return _evalcore.eval_program(
            prog.codes, prog.args, assigns, np.uint64(mask), prog.max_stack
        )
    return _eval_python(prog, assigns, np.uint64(mask))


def _eval_python(prog: EvalProgram, assigns: np.ndarray, mask: np.uint64) -> np.ndarray:
    rows = assigns.shape[0]
    stack: list[np.ndarray] = []
    for code, arg in zip(prog.codes, prog.args):
        if code == OP_CONST:
            stack.append(np.full(rows, arg & mask, dtype=np.uint64))
        elif code == OP_VAR:
            stack.append(assigns[:, int(arg)] & mask)
        elif code == OP_NOT:
            stack[-1] = stack[-1] ^ mask
        elif code == OP_NEG:
            stack[-1] = ((stack[-1] ^ mask) + np.uint64(1)) & mask
        else:
            b = stack.pop()
            a = stack[-1]
            if code == OP_ADD:
                stack[-1] = (a + b) & mask
            elif code == OP_SUB:
                stack[-1] = (a - b) & mask
            elif code == OP_MUL:
                stack[-1] = (a * b) & mask
            elif code == OP_AND:
                stack[-1] = a & b
            elif code == OP_OR:
                stack[-1] = a | b
            else:
                stack[-1] = a ^ b
    return stack[0]
