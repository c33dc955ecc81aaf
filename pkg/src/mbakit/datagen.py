"""Rule-based MBA obfuscation and dataset generation.

The obfuscator applies classic MBA rewrite identities (``x+y`` to
``(x^y)+2*(x&y)`` and friends) at random positions of an expression tree.
Every rule is verified against the truth-table oracle the first time the
rule table is requested, so a bad identity fails loudly at startup.

Datasets are (src, trg) pairs of obfuscated and simplified expression text,
one ``src,trg`` line per pair, matching the two-column corpora this task
usually ships with.  Generation is deterministic: pair ``i`` of a run with
seed ``s`` draws from ``random.Random(s ^ i)`` and nothing else.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass

from .errors import DatasetFormatError, RuleVerificationError
from .exprs import DEFAULT_WIDTH, Binary, Const, Expr, Unary, Var, parse, render, variables
from .semantics import DEFAULT_MAX_VARS, equivalent, expression_features, randomized_check

__all__ = [
    "RewriteRule",
    "DatasetPair",
    "DatasetStats",
    "GenConfig",
    "rule_table",
    "obfuscate",
    "generate",
    "load_pairs",
    "save_pairs",
    "stats",
    "format_stats",
    "stats_kv",
]


@dataclass(frozen=True)
class RewriteRule:
    """Oriented rewrite ``pattern -> replacement``.

    Every variable in ``pattern`` is a metavariable matching an arbitrary
    subexpression; replacement variables missing from the pattern are
    instantiated with a variable drawn from the obfuscator's pool.
    """

    name: str
    pattern: Expr
    replacement: Expr


# (name, pattern, replacement); all are width-independent MBA identities,
# oracle-checked in rule_table().
_RULE_SPECS = [
    ("add-to-xor-and", "a+b", "(a^b)+2*(a&b)"),
    ("add-to-or-and", "a+b", "(a|b)+(a&b)"),
    ("xor-to-or-and", "a^b", "(a|b)-(a&b)"),
    ("xor-to-add-and", "a^b", "a+b-2*(a&b)"),
    ("and-to-or-xor", "a&b", "(a|b)-(a^b)"),
    ("and-to-add-or", "a&b", "a+b-(a|b)"),
    ("or-to-and-xor", "a|b", "(a&b)+(a^b)"),
    ("or-to-add-and", "a|b", "a+b-(a&b)"),
    ("sub-to-xor-notand", "a-b", "(a^b)-2*(~a&b)"),
    ("sub-to-and-xor", "a-b", "2*(a&~b)-(a^b)"),
    ("not-to-neg", "~a", "-a-1"),
    ("neg-to-not", "-a", "~a+1"),
    ("split-on-fresh-and", "a", "(a&y)+(a&~y)"),
    ("xor-twice-fresh", "a", "(a^y)^y"),
]

_rules_cache: list[RewriteRule] | None = None


def rule_table() -> list[RewriteRule]:
    """The built-in rewrite rules, each verified against the oracle once.

    Raises :class:`~mbakit.errors.RuleVerificationError` naming the first
    rule whose sides the truth-table or randomized check can distinguish.
    """
    global _rules_cache
    if _rules_cache is None:
        rules = []
        for name, lhs, rhs in _RULE_SPECS:
            rule = RewriteRule(name, parse(lhs), parse(rhs))
            if not equivalent(rule.pattern, rule.replacement, DEFAULT_WIDTH):
                raise RuleVerificationError(f"rule {name!r} fails truth-table equality")
            if not randomized_check(rule.pattern, rule.replacement, DEFAULT_WIDTH, 256, seed=0):
                raise RuleVerificationError(f"rule {name!r} fails the randomized check")
            rules.append(rule)
        _rules_cache = rules
    return list(_rules_cache)


# ---------------------------------------------------------------------------
# Matching and rewriting


def _match(pattern: Expr, node: Expr, bindings: dict[str, Expr]) -> bool:
    if isinstance(pattern, Var):
        bound = bindings.get(pattern.name)
        if bound is None:
            bindings[pattern.name] = node
            return True
        return bound == node
    if isinstance(pattern, Const):
        return pattern == node
    if isinstance(pattern, Unary):
        return (
            isinstance(node, Unary)
            and node.op == pattern.op
            and _match(pattern.child, node.child, bindings)
        )
    return (
        isinstance(node, Binary)
        and isinstance(pattern, Binary)
        and node.op == pattern.op
        and _match(pattern.left, node.left, bindings)
        and _match(pattern.right, node.right, bindings)
    )


def _substitute(template: Expr, bindings: dict[str, Expr]) -> Expr:
    if isinstance(template, Var):
        return bindings[template.name]
    if isinstance(template, Const):
        return template
    if isinstance(template, Unary):
        return Unary(template.op, _substitute(template.child, bindings))
    return Binary(
        template.op,
        _substitute(template.left, bindings),
        _substitute(template.right, bindings),
    )


def _paths(expr: Expr, prefix: tuple[int, ...] = ()):
    yield prefix, expr
    if isinstance(expr, Unary):
        yield from _paths(expr.child, prefix + (0,))
    elif isinstance(expr, Binary):
        yield from _paths(expr.left, prefix + (0,))
        yield from _paths(expr.right, prefix + (1,))


def _rewrite_at(expr: Expr, path: tuple[int, ...], new: Expr) -> Expr:
    if not path:
        return new
    head, rest = path[0], path[1:]
    if isinstance(expr, Unary):
        return Unary(expr.op, _rewrite_at(expr.child, rest, new))
    assert isinstance(expr, Binary)
    if head == 0:
        return Binary(expr.op, _rewrite_at(expr.left, rest, new), expr.right)
    return Binary(expr.op, expr.left, _rewrite_at(expr.right, rest, new))


def _fresh_var(rng: random.Random, present: set[str], pool, max_vars: int) -> Var:
    if len(present) >= max_vars:
        return Var(rng.choice(sorted(present)))
    return Var(rng.choice(list(pool)))


def obfuscate(
    expr: Expr,
    steps: int,
    seed: int = 0,
    rules: list[RewriteRule] | None = None,
    var_pool=("x", "y", "z", "t"),
    max_vars: int = DEFAULT_MAX_VARS,
) -> Expr:
    """Apply ``steps`` random oracle-equivalent rewrites to ``expr``.

    Each step picks a uniformly random node at which at least one rule
    matches, then applies the first matching rule of a freshly shuffled
    rule order (a uniform choice among the matches).  Fresh variables
    introduced by a replacement come from ``var_pool`` while the expression
    has fewer than ``max_vars`` distinct variables, and from the existing
    variables afterwards.  Deterministic given ``seed``; ``steps=0`` returns
    the input unchanged.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if rules is None:
        rules = rule_table()
    rng = random.Random(seed)
    for _ in range(steps):
        expr = _obfuscate_step(expr, rng, rules, var_pool, max_vars)
    return expr


def _obfuscate_step(expr, rng, rules, var_pool, max_vars):
    candidates = []
    for path, node in _paths(expr):
        matching = [r for r in rules if _match(r.pattern, node, {})]
        if matching:
            candidates.append((path, node, matching))
    if not candidates:
        return expr
    path, node, matching = candidates[rng.randrange(len(candidates))]
    order = list(matching)
    rng.shuffle(order)
    rule = order[0]
    bindings: dict[str, Expr] = {}
    _match(rule.pattern, node, bindings)
    present = set(variables(expr))
    for name in sorted(set(variables(rule.replacement)) - set(bindings)):
        bindings[name] = _fresh_var(rng, present, var_pool, max_vars)
    return _rewrite_at(expr, path, _substitute(rule.replacement, bindings))


# ---------------------------------------------------------------------------
# Corpus generation


@dataclass(frozen=True)
class DatasetPair:
    src: str  # obfuscated expression text
    trg: str  # simplified expression text


@dataclass(frozen=True)
class GenConfig:
    """Knobs for :func:`generate`; the defaults give a desk-scale corpus
    with short simplified targets (1 to ~35 chars) and sources capped at
    104 chars.

    ``target_pool=k`` draws every trg from a fixed pool of ``k`` distinct
    pre-generated targets instead of sampling a fresh one per pair.  That
    mirrors how deobfuscation corpora are usually built: a limited set of
    ground-truth simplified forms, each re-obfuscated many times, so the
    same simplified form (and its truth table) recurs across splits.
    Pool entries are distinct as functions (extended-table signature), not
    merely as strings.
    """

    steps: tuple[int, int] = (1, 3)
    var_pool: tuple[str, ...] = ("x", "y", "z", "t")
    coef_range: tuple[int, int] = (2, 9)
    width: int = DEFAULT_WIDTH
    max_vars: int = DEFAULT_MAX_VARS
    max_src_len: int = 104
    max_trg_len: int = 35
    target_pool: int | None = None


def _sample_factor(rng: random.Random, cfg: GenConfig) -> Expr:
    """A small Boolean factor: a possibly-negated variable or a chain like
    (x|~y) / (x&y&z)."""
    arity = rng.choices((1, 2, 3), weights=(30, 55, 15))[0]
    names = rng.sample(cfg.var_pool, k=min(arity, len(cfg.var_pool)))

    def atom(name: str) -> Expr:
        v: Expr = Var(name)
        if rng.random() < 0.2:
            v = Unary("~", v)
        return v

    node = atom(names[0])
    if len(names) > 1:
        op = rng.choice(("&", "|", "^"))
        for name in names[1:]:
            node = Binary(op, node, atom(name))
    return node


def _sample_term(rng: random.Random, cfg: GenConfig) -> Expr:
    if rng.random() < 0.06:
        return Const(rng.randint(1, 9))
    factor = _sample_factor(rng, cfg)
    if rng.random() < 0.45:
        coef = rng.randint(*cfg.coef_range)
        return Binary("*", Const(coef), factor)
    return factor


def _sample_target(rng: random.Random, cfg: GenConfig) -> Expr:
    n_terms = rng.choices((1, 2, 3), weights=(40, 40, 20))[0]
    term = _sample_term(rng, cfg)
    if rng.random() < 0.2:
        term = _negate_term(term)
    expr = term
    for _ in range(n_terms - 1):
        op = rng.choice(("+", "-"))
        expr = Binary(op, expr, _sample_term(rng, cfg))
    return expr


def _negate_term(term: Expr) -> Expr:
    # negative coefficient reads "-3*(x&y)", not "-(3*(x&y))"
    if isinstance(term, Binary) and term.op == "*" and isinstance(term.left, Const):
        return Binary("*", Unary("-", term.left), term.right)
    return Unary("-", term)


def _build_target_pool(cfg: GenConfig, seed: int) -> list[tuple[Expr, str]]:
    """``cfg.target_pool`` semantically distinct targets, deterministic in seed.

    Entries are deduplicated on their extended-table feature signature, not
    just their text: a pool of ground-truth simplified forms should contain
    each function once (otherwise two pool entries, e.g. alpha-renamings of
    one another, would share a truth table and no simplifier could tell
    which of them to emit).
    """
    if cfg.target_pool < 1:
        raise ValueError("target_pool must be >= 1")
    # seed derivation disjoint from the per-pair seeds (seed ^ index)
    rng = random.Random((seed << 32) ^ 0x706F6F6C)
    pool: list[tuple[Expr, str]] = []
    seen: set[tuple[float, ...]] = set()
    attempts = 0
    while len(pool) < cfg.target_pool:
        attempts += 1
        if attempts > 200 * cfg.target_pool:
            raise ValueError(
                f"cannot draw {cfg.target_pool} distinct targets"
                f" under max_trg_len={cfg.max_trg_len}"
            )
        expr = _sample_target(rng, cfg)
        text = render(expr)
        if len(text) > cfg.max_trg_len:
            continue
        sig = tuple(
            expression_features(expr, semantics="ext", width=cfg.width, max_vars=cfg.max_vars)
        )
        if sig in seen:
            continue
        seen.add(sig)
        pool.append((expr, text))
    return pool


def _generate_one(
    index: int,
    seed: int,
    cfg: GenConfig,
    taken: set[str],
    pool: list[tuple[Expr, str]] | None = None,
) -> DatasetPair:
    rng = random.Random(seed ^ index)
    for attempt in range(64):
        if pool is not None:
            trg_expr, trg = pool[rng.randrange(len(pool))]
        else:
            trg_expr = _sample_target(rng, cfg)
            trg = render(trg_expr)
            if len(trg) > cfg.max_trg_len:
                continue
        steps = rng.randint(*cfg.steps)
        src_expr = obfuscate(
            trg_expr,
            steps,
            seed=rng.randrange(1 << 30),
            var_pool=cfg.var_pool,
            max_vars=cfg.max_vars,
        )
        src = render(src_expr)
        if len(src) > cfg.max_src_len:
            continue
        if src in taken and attempt < 48:
            continue  # prefer distinct sources; give up after enough tries
        if not equivalent(src_expr, trg_expr, cfg.width, cfg.max_vars):
            raise AssertionError(f"generated pair is not equivalent: {src} vs {trg}")
        taken.add(src)
        return DatasetPair(src=src, trg=trg)
    raise AssertionError("exhausted attempts while generating a pair")


def generate(n: int, config: GenConfig | None = None, seed: int = 0) -> list[DatasetPair]:
    """Generate ``n`` oracle-verified (src, trg) pairs, deterministically.

    Targets come from a grammar of short simplified forms; sources are the
    targets after 1-3 random rewrite steps (see ``GenConfig.steps``).
    Sources longer than ``max_src_len`` are discarded and regenerated, and
    duplicate sources are avoided on a best-effort basis.  With
    ``config.target_pool`` set, targets repeat: each pair's trg is drawn
    from a fixed seed-derived pool of that many distinct simplified forms.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = config or GenConfig()
    pool = _build_target_pool(cfg, seed) if cfg.target_pool is not None else None
    taken: set[str] = set()
    return [_generate_one(i, seed, cfg, taken, pool) for i in range(n)]


# ---------------------------------------------------------------------------
# Dataset files


def load_pairs(path, skip_header: bool = False) -> list[DatasetPair]:
    """Read ``src,trg`` lines from a UTF-8 file.

    Lines beginning with ``#`` and blank lines are skipped;
    ``skip_header=True`` additionally drops the first remaining line.
    Malformed lines raise :class:`~mbakit.errors.DatasetFormatError` with
    their 1-based line number.
    """
    pairs = []
    first_seen = False
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if skip_header and not first_seen:
                first_seen = True
                continue
            first_seen = True
            cols = line.split(",")
            if len(cols) != 2:
                raise DatasetFormatError(
                    f"expected 'src,trg', found {len(cols)} column(s)", lineno
                )
            pairs.append(DatasetPair(src=cols[0], trg=cols[1]))
    return pairs


def save_pairs(pairs, path) -> None:
    """Write pairs as ``src,trg`` lines; inverse of :func:`load_pairs`."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(f"{p.src},{p.trg}\n")


# ---------------------------------------------------------------------------
# Statistics

_NAME_RE = re.compile(r"[a-z][a-z0-9]*")
_OP_CHARS = set("+-*&|^~")


@dataclass(frozen=True)
class SideStats:
    """Midrange +/- half-range of per-expression counts for one column."""

    vars: tuple[float, float]
    ops: tuple[float, float]
    length: tuple[float, float]


@dataclass(frozen=True)
class DatasetStats:
    count: int
    src: SideStats
    trg: SideStats


def _midrange(values: list[int]) -> tuple[float, float]:
    if not values:
        return (0.0, 0.0)
    lo, hi = min(values), max(values)
    return ((hi + lo) / 2.0, (hi - lo) / 2.0)


def _side_stats(texts: list[str]) -> SideStats:
    return SideStats(
        vars=_midrange([len(_NAME_RE.findall(t)) for t in texts]),
        ops=_midrange([sum(c in _OP_CHARS for c in t) for t in texts]),
        length=_midrange([len(t) for t in texts]),
    )


def stats(pairs) -> DatasetStats:
    """Per-side variable-occurrence, operator-token, and length statistics,
    reported as midrange +/- half-range."""
    return DatasetStats(
        count=len(pairs),
        src=_side_stats([p.src for p in pairs]),
        trg=_side_stats([p.trg for p in pairs]),
    )


def format_stats(s: DatasetStats) -> str:
    """Aligned text table, one metric per row."""
    rows = [("", "src", "trg"), ("size", str(s.count), str(s.count))]
    for label, attr in (("# of vars", "vars"), ("# of ops", "ops"), ("length", "length")):
        cells = []
        for side in (s.src, s.trg):
            mid, half = getattr(side, attr)
            cells.append(f"{mid:.1f} +/- {half:.1f}")
        rows.append((label, *cells))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    return "\n".join(
        "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows
    )


def stats_kv(s: DatasetStats) -> str:
    """Machine-readable ``key=value`` lines."""
    lines = [f"count={s.count}"]
    for side_name, side in (("src", s.src), ("trg", s.trg)):
        for attr in ("vars", "ops", "length"):
            mid, half = getattr(side, attr)
            lines.append(f"{side_name}.{attr}.mid={mid}")
            lines.append(f"{side_name}.{attr}.half={half}")
    return "\n".join(lines)
