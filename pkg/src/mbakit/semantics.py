"""Truth-table semantics for MBA expressions.

A truth table records an expression's value at every 0/1 assignment of its
variables, in lexicographic row order ((0,...,0) first, (1,...,1) last).
Two kinds exist:

* ``bool`` — each value reduced mod 2 (logical behavior only);
* ``ext``  — the full w-bit value (computational behavior).

Entry-wise equality of extended tables is the package's primary equivalence
oracle.  Over 0/1 inputs alone this is sound for the linear MBA families the
toolkit generates but is not a proof for arbitrary polynomial MBA over full
words, so :func:`randomized_check` supplements it with full-range sampling;
the ``verify`` CLI requires both.

Tables also convert to fixed-length feature vectors for the neural model:
values are read as signed w-bit words, scaled by ``2**(w-1)`` into [-1, 1],
and zero-padded into ``2**max_vars`` slots per table.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import TooManyVariablesError
from .exprs import DEFAULT_WIDTH, Expr, variables
from .progeval import compile_expr, eval_program

__all__ = [
    "TruthTable",
    "extract",
    "equivalent",
    "randomized_check",
    "counterexample",
    "to_feature_vector",
    "expression_features",
    "feature_length",
    "DEFAULT_MAX_VARS",
    "KIND_BOOL",
    "KIND_EXT",
    "SEMANTICS_CHOICES",
]

DEFAULT_MAX_VARS = 4

KIND_BOOL = "bool"
KIND_EXT = "ext"
SEMANTICS_CHOICES = ("bool", "ext", "both")


@dataclass(frozen=True)
class TruthTable:
    """2**n expression values over ``vars`` in lexicographic row order."""

    vars: tuple[str, ...]
    width: int
    kind: str  # "bool" or "ext"
    values: tuple[int, ...]

    def __post_init__(self):
        if self.kind not in (KIND_BOOL, KIND_EXT):
            raise ValueError(f"kind must be 'bool' or 'ext', got {self.kind!r}")
        if len(self.values) != 1 << len(self.vars):
            raise ValueError(
                f"{len(self.vars)} variables need {1 << len(self.vars)} rows, "
                f"got {len(self.values)}"
            )

    def rows(self):
        """Yield (input tuple, value) pairs in table order."""
        for bits, value in zip(itertools.product((0, 1), repeat=len(self.vars)), self.values):
            yield bits, value


def _binary_assignments(n: int) -> np.ndarray:
    """All 2**n 0/1 rows, lexicographic, as a uint64 matrix."""
    rows = 1 << n
    idx = np.arange(rows, dtype=np.uint64)
    if n == 0:
        return np.zeros((1, 0), dtype=np.uint64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.uint64)
    return (idx[:, None] >> shifts[None, :]) & np.uint64(1)


def _check_var_budget(names, max_vars: int) -> None:
    if len(names) > max_vars:
        raise TooManyVariablesError(
            f"{len(names)} variables ({', '.join(names)}) exceed the limit of {max_vars}"
        )


def extract(
    expr: Expr,
    vars: list[str] | tuple[str, ...] | None = None,
    width: int = DEFAULT_WIDTH,
    kind: str = KIND_EXT,
    max_vars: int = DEFAULT_MAX_VARS,
) -> TruthTable:
    """Build the truth table of ``expr`` over ``vars`` (default: its own
    variables, sorted).  ``vars`` must cover every free variable."""
    own = variables(expr)
    if vars is None:
        vars = own
    else:
        missing = set(own) - set(vars)
        if missing:
            raise ValueError(f"vars does not cover free variables: {sorted(missing)}")
    vars = tuple(vars)
    _check_var_budget(vars, max_vars)
    prog = compile_expr(expr, vars)
    values = eval_program(prog, _binary_assignments(len(vars)), width)
    if kind == KIND_BOOL:
        values = values & np.uint64(1)
    elif kind != KIND_EXT:
        raise ValueError(f"kind must be 'bool' or 'ext', got {kind!r}")
    return TruthTable(vars=vars, width=width, kind=kind, values=tuple(int(v) for v in values))


def _union_vars(e1: Expr, e2: Expr, max_vars: int) -> tuple[str, ...]:
    names = sorted(set(variables(e1)) | set(variables(e2)))
    _check_var_budget(names, max_vars)
    return tuple(names)


def equivalent(
    e1: Expr,
    e2: Expr,
    width: int = DEFAULT_WIDTH,
    max_vars: int = DEFAULT_MAX_VARS,
) -> bool:
    """True iff the extended tables of ``e1`` and ``e2`` agree entry-wise
    over the union of their variables."""
    names = _union_vars(e1, e2, max_vars)
    assigns = _binary_assignments(len(names))
    v1 = eval_program(compile_expr(e1, names), assigns, width)
    v2 = eval_program(compile_expr(e2, names), assigns, width)
    return bool(np.array_equal(v1, v2))


def _random_assignments(n: int, width: int, trials: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if n == 0:
        return np.zeros((trials, 0), dtype=np.uint64)
    high = 1 << width  # exclusive
    return rng.integers(0, high, size=(trials, n), dtype=np.uint64)


def randomized_check(
    e1: Expr,
    e2: Expr,
    width: int = DEFAULT_WIDTH,
    trials: int = 256,
    seed: int = 0,
) -> bool:
    """True iff ``e1`` and ``e2`` agree on ``trials`` pseudo-random
    full-range assignments drawn deterministically from ``seed``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    names = sorted(set(variables(e1)) | set(variables(e2)))
    assigns = _random_assignments(len(names), width, trials, seed)
    v1 = eval_program(compile_expr(e1, names), assigns, width)
    v2 = eval_program(compile_expr(e2, names), assigns, width)
    return bool(np.array_equal(v1, v2))


def counterexample(
    e1: Expr,
    e2: Expr,
    width: int = DEFAULT_WIDTH,
    trials: int = 256,
    seed: int = 0,
    max_vars: int = DEFAULT_MAX_VARS,
) -> dict[str, int] | None:
    """First assignment on which the expressions differ, or None.

    Scans the 2**n 0/1 assignments first, then the randomized full-range
    sample, so a returned witness is as small as the table check allows.
    """
    names = _union_vars(e1, e2, max_vars)
    p1 = compile_expr(e1, names)
    p2 = compile_expr(e2, names)
    for assigns in (
        _binary_assignments(len(names)),
        _random_assignments(len(names), width, trials, seed),
    ):
        v1 = eval_program(p1, assigns, width)
        v2 = eval_program(p2, assigns, width)
        diff = np.nonzero(v1 != v2)[0]
        if diff.size:
            row = assigns[diff[0]]
            return {name: int(row[i]) for i, name in enumerate(names)}
    return None


def feature_length(semantics: str, max_vars: int = DEFAULT_MAX_VARS) -> int:
    """Length of the flat feature vector for one semantics choice."""
    if semantics not in SEMANTICS_CHOICES:
        raise ValueError(f"semantics must be one of {SEMANTICS_CHOICES}, got {semantics!r}")
    block = 1 << max_vars
    return 2 * block if semantics == "both" else block


def _scale_block(table: TruthTable, max_vars: int) -> np.ndarray:
    _check_var_budget(table.vars, max_vars)
    block = np.zeros(1 << max_vars, dtype=np.float64)
    half = 1 << (table.width - 1)
    full = half << 1
    # plain int arithmetic: width 64 exceeds the int64 range
    signed = [v - full if v >= half else v for v in table.values]
    block[: len(table.values)] = np.asarray(signed, dtype=np.float64) / half
    return block


def expression_features(
    expr: Expr,
    semantics: str = KIND_EXT,
    width: int = DEFAULT_WIDTH,
    max_vars: int = DEFAULT_MAX_VARS,
) -> np.ndarray:
    """Extract and flatten in one step: the feature vector of ``expr`` for
    one semantics choice (see :func:`to_feature_vector`)."""
    if semantics == "both":
        pair = (
            extract(expr, width=width, kind=KIND_BOOL, max_vars=max_vars),
            extract(expr, width=width, kind=KIND_EXT, max_vars=max_vars),
        )
        return to_feature_vector(pair, semantics, max_vars)
    return to_feature_vector(
        extract(expr, width=width, kind=semantics, max_vars=max_vars), semantics, max_vars
    )


def to_feature_vector(
    tables: TruthTable | tuple[TruthTable, ...] | list[TruthTable],
    semantics: str = KIND_EXT,
    max_vars: int = DEFAULT_MAX_VARS,
) -> np.ndarray:
    """Flatten one table ('bool'/'ext') or a (bool, ext) pair ('both') into
    a fixed-length float vector.

    Each value is read as a signed w-bit word and divided by 2**(w-1), so
    every entry lies in [-1, 1]; each table occupies its own 2**max_vars
    block, zero-padded past the first 2**n slots.  For 'both' the Boolean
    block precedes the extended block.
    """
    if isinstance(tables, TruthTable):
        tables = (tables,)
    else:
        tables = tuple(tables)
    if semantics == "both":
        if len(tables) != 2 or tables[0].kind != KIND_BOOL or tables[1].kind != KIND_EXT:
            raise ValueError("'both' needs a (bool, ext) table pair")
    elif semantics in (KIND_BOOL, KIND_EXT):
        if len(tables) != 1 or tables[0].kind != semantics:
            raise ValueError(f"semantics {semantics!r} needs exactly one {semantics!r} table")
    else:
        raise ValueError(f"semantics must be one of {SEMANTICS_CHOICES}, got {semantics!r}")
    return np.concatenate([_scale_block(t, max_vars) for t in tables])
