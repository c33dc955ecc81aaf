"""Expression parsing, rendering, and evaluation."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbakit.errors import MbaSyntaxError, UnboundVariableError
from mbakit.exprs import Binary, Const, Unary, Var, evaluate, parse, render, variables, walk


class TestParse:
    def test_precedence_levels(self):
        # loosest to tightest: | ^ & (+,-) * unary
        assert parse("a|b^c") == Binary("|", Var("a"), Binary("^", Var("b"), Var("c")))
        assert parse("a^b&c") == Binary("^", Var("a"), Binary("&", Var("b"), Var("c")))
        assert parse("a&b+c") == Binary("&", Var("a"), Binary("+", Var("b"), Var("c")))
        assert parse("a+b*c") == Binary("+", Var("a"), Binary("*", Var("b"), Var("c")))
        assert parse("-a*b") == Binary("*", Unary("-", Var("a")), Var("b"))
        assert parse("~a&b") == Binary("&", Unary("~", Var("a")), Var("b"))

    def test_left_associative(self):
        assert parse("a-b-c") == Binary("-", Binary("-", Var("a"), Var("b")), Var("c"))
        assert parse("a-(b-c)") == Binary("-", Var("a"), Binary("-", Var("b"), Var("c")))

    def test_unary_nesting(self):
        assert parse("~~x") == Unary("~", Unary("~", Var("x")))
        assert parse("-~x") == Unary("-", Unary("~", Var("x")))

    def test_multichar_names_and_constants(self):
        assert parse("ab1+x0") == Binary("+", Var("ab1"), Var("x0"))
        assert parse("255") == Const(255)
        assert parse("2*x") == Binary("*", Const(2), Var("x"))

    def test_whitespace(self):
        assert parse(" x + y ") == parse("x+y")

    def test_explicit_multiplication_required(self):
        with pytest.raises(MbaSyntaxError):
            parse("2x")
        with pytest.raises(MbaSyntaxError):
            parse("x(y)")

    def test_error_offsets(self):
        with pytest.raises(MbaSyntaxError) as e:
            parse("x+(")
        assert e.value.offset == 2
        with pytest.raises(MbaSyntaxError) as e:
            parse("x++y")
        assert e.value.offset == 2
        with pytest.raises(MbaSyntaxError) as e:
            parse("")
        assert e.value.offset == 0
        with pytest.raises(MbaSyntaxError) as e:
            parse("x+y)")
        assert e.value.offset == 3

    def test_rejects_uppercase_and_unknown(self):
        with pytest.raises(MbaSyntaxError):
            parse("X+y")
        with pytest.raises(MbaSyntaxError):
            parse("x$y")


class TestRender:
    @pytest.mark.parametrize(
        "text",
        [
            "x+y",
            "(x^y)+2*(x&y)",
            "a-b-c",
            "a-(b-c)",
            "x*(y+z)",
            "~(a|b)&c",
            "-2*(x|~y)-~x-1",
            "a|b&c^d",
            "-(a+b)",
            "~x",
        ],
    )
    def test_round_trip(self, text):
        assert parse(render(parse(text))) == parse(text)

    def test_minimal_parens(self):
        assert render(parse("x+y*z")) == "x+y*z"
        assert render(parse("(x+y)*z")) == "(x+y)*z"
        assert render(parse("a-(b-c)")) == "a-(b-c)"
        assert render(parse("a-b-c")) == "a-b-c"
        assert render(parse("~(x)")) == "~x"
        assert render(parse("~(x+y)")) == "~(x+y)"

    def test_no_whitespace_in_output(self):
        out = render(parse(" x + 2 * ( y & z ) "))
        assert " " not in out


class TestEvaluate:
    def test_modular_arithmetic(self):
        assert evaluate(parse("x+y"), {"x": 200, "y": 100}, width=8) == 44
        assert evaluate(parse("x*y"), {"x": 16, "y": 16}, width=8) == 0
        assert evaluate(parse("x-y"), {"x": 0, "y": 1}, width=8) == 255

    def test_bitwise(self):
        env = {"x": 0b1100, "y": 0b1010}
        assert evaluate(parse("x&y"), env) == 0b1000
        assert evaluate(parse("x|y"), env) == 0b1110
        assert evaluate(parse("x^y"), env) == 0b0110

    def test_complement_and_negation(self):
        assert evaluate(parse("~x"), {"x": 5}, width=8) == 250
        assert evaluate(parse("-x"), {"x": 5}, width=8) == 251
        assert evaluate(parse("-x-1"), {"x": 5}, width=8) == 250

    def test_width_one(self):
        # single-bit words: + is xor, * is and
        for x in (0, 1):
            for y in (0, 1):
                assert evaluate(parse("x+y"), {"x": x, "y": y}, width=1) == x ^ y
                assert evaluate(parse("x*y"), {"x": x, "y": y}, width=1) == x & y

    def test_width_64(self):
        big = (1 << 64) - 1
        assert evaluate(parse("x+1"), {"x": big}, width=64) == 0
        assert evaluate(parse("~x"), {"x": 0}, width=64) == big

    def test_constants_reduced(self):
        assert evaluate(parse("256"), {}, width=8) == 0
        assert evaluate(parse("300"), {}, width=8) == 44

    def test_inputs_reduced(self):
        assert evaluate(parse("x"), {"x": 300}, width=8) == 44

    def test_unbound_variable(self):
        with pytest.raises(UnboundVariableError):
            evaluate(parse("x+y"), {"x": 1})

    def test_table_one_identity(self):
        lhs, rhs = parse("x+y"), parse("(x^y)+2*(x&y)")
        for x in range(4):
            for y in range(4):
                env = {"x": x, "y": y}
                assert evaluate(lhs, env) == evaluate(rhs, env)


class TestHelpers:
    def test_variables_sorted_unique(self):
        assert variables(parse("z+y*z+a")) == ["a", "y", "z"]
        assert variables(parse("5")) == []

    def test_walk_preorder(self):
        nodes = list(walk(parse("x+y")))
        assert nodes[0] == parse("x+y")
        assert Var("x") in nodes and Var("y") in nodes
        assert len(nodes) == 3


_names = st.sampled_from(["x", "y", "z", "t"])


def _exprs(depth):
    if depth == 0:
        return st.one_of(
            _names.map(Var), st.integers(min_value=0, max_value=255).map(Const)
        )
    sub = _exprs(depth - 1)
    return st.one_of(
        _names.map(Var),
        st.integers(min_value=0, max_value=255).map(Const),
        st.tuples(st.sampled_from("~-"), sub).map(lambda p: Unary(*p)),
        st.tuples(st.sampled_from("|^&+-*"), sub, sub).map(lambda p: Binary(*p)),
    )


class TestProperties:
    @given(_exprs(4))
    @settings(max_examples=300, deadline=None)
    def test_parse_render_round_trip(self, expr):
        assert parse(render(expr)) == expr

    @given(_exprs(3), st.integers(0, 255), st.integers(0, 255),
           st.integers(0, 255), st.integers(0, 255))
    @settings(max_examples=200, deadline=None)
    def test_render_preserves_value(self, expr, x, y, z, t):
        env = {"x": x, "y": y, "z": z, "t": t}
        assert evaluate(parse(render(expr)), env) == evaluate(expr, env)
