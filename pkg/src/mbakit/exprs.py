"""Mixed Boolean-Arithmetic expression trees.

Parsing, printing, and bit-exact evaluation of expressions over w-bit
wraparound integers.  The grammar covers variables, non-negative decimal
constants, the Boolean operators ``& | ^ ~`` and the arithmetic operators
``+ - *`` (binary and unary minus).  Precedence is C-like::

    ~  >  unary -  >  *  >  + -  >  &  >  ^  >  |

with parentheses overriding.  Multiplication must be written explicitly
(``2*(a&b)``, never ``2(a&b)``).

Evaluation is performed modulo ``2**width``: Boolean operators act bitwise
on w-bit words, unary minus is two's-complement negation, and ``~`` is the
bitwise complement.  Constants are reduced mod ``2**width`` at evaluation
time so the same tree can be evaluated at any width.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping, Union

from .errors import MbaSyntaxError, UnboundVariableError

__all__ = [
    "Expr",
    "Var",
    "Const",
    "Unary",
    "Binary",
    "parse",
    "render",
    "evaluate",
    "variables",
    "walk",
    "DEFAULT_WIDTH",
]

DEFAULT_WIDTH = 8


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Unary:
    op: str  # '-' (two's-complement negate) or '~' (bitwise not)
    child: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * & | ^
    left: "Expr"
    right: "Expr"


Expr = Union[Var, Const, Unary, Binary]

_BIN_PREC = {"|": 1, "^": 2, "&": 3, "+": 4, "-": 4, "*": 5}
_UNARY_PREC = {"-": 6, "~": 7}
_ATOM_PREC = 9

# Binary levels from loosest to tightest; all left-associative.
_LEVELS = (("|",), ("^",), ("&",), ("+", "-"), ("*",))


# ---------------------------------------------------------------------------
# Lexer

_TOK_NAME = "name"
_TOK_CONST = "const"
_TOK_OP = "op"
_TOK_EOF = "eof"

_OP_CHARS = set("+-*&|^~()")


def _tokenize(text: str, lowercase_only: bool = True) -> list[tuple[str, str, int]]:
    """Split ``text`` into (kind, lexeme, offset) triples.

    ``lowercase_only=False`` additionally admits uppercase letters in names;
    the rewrite-rule template parser uses it, the public grammar does not.
    """
    toks = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in _OP_CHARS:
            toks.append((_TOK_OP, c, i))
            i += 1
            continue
        if c.isdigit():
            j = i + 1
            while j < n and text[j].isdigit():
                j += 1
            toks.append((_TOK_CONST, text[i:j], i))
            i = j
            continue
        if ("a" <= c <= "z") or (not lowercase_only and "A" <= c <= "Z"):
            j = i + 1
            while j < n and (text[j].isdigit() or "a" <= text[j] <= "z"):
                j += 1
            toks.append((_TOK_NAME, text[i:j], i))
            i = j
            continue
        raise MbaSyntaxError(f"unknown token {c!r}", i)
    toks.append((_TOK_EOF, "", n))
    return toks


# ---------------------------------------------------------------------------
# Parser (recursive descent, one function per precedence level)


class _Parser:
    def __init__(self, toks: list[tuple[str, str, int]]):
        self.toks = toks
        self.pos = 0
        self.open_parens: list[int] = []  # offsets of '(' not yet closed

    def peek(self) -> tuple[str, str, int]:
        return self.toks[self.pos]

    def advance(self) -> tuple[str, str, int]:
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def fail_eof(self) -> None:
        # blame the innermost unbalanced '(' when there is one
        if self.open_parens:
            raise MbaSyntaxError("unbalanced parenthesis", self.open_parens[-1])
        raise MbaSyntaxError("unexpected end of input", self.peek()[2])

    def expr(self, level: int = 0) -> Expr:
        if level == len(_LEVELS):
            return self.unary()
        node = self.expr(level + 1)
        ops = _LEVELS[level]
        while True:
            kind, lex, _ = self.peek()
            if kind == _TOK_OP and lex in ops:
                self.advance()
                rhs = self.expr(level + 1)
                node = Binary(lex, node, rhs)
            else:
                return node

    def unary(self) -> Expr:
        kind, lex, off = self.peek()
        if kind == _TOK_OP and lex in ("-", "~"):
            self.advance()
            return Unary(lex, self.unary())
        return self.atom()

    def atom(self) -> Expr:
        kind, lex, off = self.peek()
        if kind == _TOK_NAME:
            self.advance()
            return Var(lex)
        if kind == _TOK_CONST:
            self.advance()
            return Const(int(lex))
        if kind == _TOK_OP and lex == "(":
            self.advance()
            self.open_parens.append(off)
            inner = self.expr()
            kind2, lex2, off2 = self.peek()
            if kind2 == _TOK_EOF:
                self.fail_eof()
            if not (kind2 == _TOK_OP and lex2 == ")"):
                raise MbaSyntaxError(f"expected ')', found {lex2!r}", off2)
            self.advance()
            self.open_parens.pop()
            return inner
        if kind == _TOK_EOF:
            self.fail_eof()
        raise MbaSyntaxError(f"unexpected token {lex!r}", off)


def parse(text: str, _template: bool = False) -> Expr:
    """Parse an expression string into an :class:`Expr` tree.

    Raises :class:`~mbakit.errors.MbaSyntaxError` (with the byte offset)
    for unbalanced parentheses, unknown tokens, or dangling operators.
    The private ``_template`` flag admits uppercase variable names and
    exists for rewrite-rule templates only.
    """
    if not text.strip():
        raise MbaSyntaxError("empty expression", 0)
    p = _Parser(_tokenize(text, lowercase_only=not _template))
    node = p.expr()
    kind, lex, off = p.peek()
    if kind != _TOK_EOF:
        raise MbaSyntaxError(f"unexpected token {lex!r}", off)
    return node


# ---------------------------------------------------------------------------
# Printing


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _BIN_PREC[e.op]
    if isinstance(e, Unary):
        return _UNARY_PREC[e.op]
    return _ATOM_PREC


def render(expr: Expr) -> str:
    """Render ``expr`` as minimal-parentheses text with no whitespace.

    ``parse(render(e))`` is structurally equal to ``e``: parentheses are
    emitted exactly where re-parsing would otherwise change the tree, so
    associativity is preserved (``x+(y+z)`` keeps its parentheses).
    """
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Const):
        return str(expr.value)
    if isinstance(expr, Unary):
        child = render(expr.child)
        # a binary operand always binds looser than a prefix operator
        if isinstance(expr.child, Binary):
            child = f"({child})"
        return expr.op + child
    p = _BIN_PREC[expr.op]
    left = render(expr.left)
    if _prec(expr.left) < p:
        left = f"({left})"
    right = render(expr.right)
    # left-associative grammar: a right child at the same level reassociates
    if _prec(expr.right) <= p:
        right = f"({right})"
    return left + expr.op + right


# ---------------------------------------------------------------------------
# Evaluation


def evaluate(expr: Expr, assignment: Mapping[str, int], width: int = DEFAULT_WIDTH) -> int:
    """Evaluate ``expr`` under ``assignment`` on ``width``-bit words.

    All arithmetic is modulo ``2**width``; the result is the unsigned
    residue in ``[0, 2**width)``.  Raises
    :class:`~mbakit.errors.UnboundVariableError` for missing bindings.
    """
    if not 1 <= width <= 64:
        raise ValueError(f"width must be in [1, 64], got {width}")
    mask = (1 << width) - 1
    return _eval(expr, assignment, mask)


def _eval(e: Expr, a: Mapping[str, int], mask: int) -> int:
    if isinstance(e, Var):
        try:
            return a[e.name] & mask
        except KeyError:
            raise UnboundVariableError(e.name) from None
    if isinstance(e, Const):
        return e.value & mask
    if isinstance(e, Unary):
        v = _eval(e.child, a, mask)
        if e.op == "~":
            return v ^ mask
        return (mask + 1 - v) & mask
    l = _eval(e.left, a, mask)
    r = _eval(e.right, a, mask)
    op = e.op
    if op == "+":
        return (l + r) & mask
    if op == "-":
        return (l - r) & mask
    if op == "*":
        return (l * r) & mask
    if op == "&":
        return l & r
    if op == "|":
        return l | r
    return l ^ r


def variables(expr: Expr) -> list[str]:
    """All variable names in ``expr``, sorted ascending, deduplicated."""
    seen = set()
    for node in walk(expr):
        if isinstance(node, Var):
            seen.add(node.name)
    return sorted(seen)


def walk(expr: Expr) -> Iterator[Expr]:
    """Yield every node of ``expr`` in pre-order."""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Unary):
            stack.append(node.child)
        elif isinstance(node, Binary):
            stack.append(node.right)
            stack.append(node.left)
