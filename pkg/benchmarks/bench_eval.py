"""Throughput of the expression evaluator: compiled kernel vs numpy fallback.

Run as ``python3 benchmarks/bench_eval.py``.  Measures rows/second of
``eval_program`` on random full-width assignments for expressions of
increasing size, plus the derived cost of one 4-variable truth-table
extraction.  The two backends produce bit-identical results; the point of
the compiled kernel is the tight opcode loop, which avoids one numpy
temporary per operation.
"""

import argparse
import time

import numpy as np

from mbakit import progeval
from mbakit.datagen import obfuscate
from mbakit.exprs import parse, render, variables
from mbakit.progeval import _eval_python, compile_expr, eval_program


def _bench(fn, *args, min_seconds=0.3):
    fn(*args)  # warm up
    reps, elapsed = 0, 0.0
    while elapsed < min_seconds:
        t0 = time.perf_counter()
        fn(*args)
        elapsed += time.perf_counter() - t0
        reps += 1
    return elapsed / reps


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=100_000)
    ap.add_argument("--width", type=int, default=8)
    args = ap.parse_args()

    cases = [("base", parse("(x^y)+2*(x&y)"))]
    for steps in (4, 8, 16):
        cases.append((f"{steps}-step", obfuscate(parse("x+y-(x&z)"), steps, seed=1)))

    rng = np.random.default_rng(0)
    print(f"backend available: {progeval.BACKEND}")
    print(f"{args.rows} rows, width {args.width}\n")
    print(f"{'expression':>12s} {'ops':>5s} {'compiled':>12s} {'python':>12s} {'speedup':>8s}")

    for name, expr in cases:
        prog = compile_expr(expr, variables(expr))
        assigns = rng.integers(0, 1 << 63, size=(args.rows, prog.n_vars), dtype=np.uint64)
        mask = np.uint64((1 << args.width) - 1)

        t_py = _bench(_eval_python, prog, assigns, mask)
        if progeval.BACKEND == "compiled":
            t_c = _bench(eval_program, prog, assigns, args.width)
            ok = np.array_equal(
                eval_program(prog, assigns, args.width), _eval_python(prog, assigns, mask)
            )
            assert ok, f"backend mismatch on {render(expr)}"
            speed = f"{t_py / t_c:6.2f}x"
            c_rate = f"{args.rows / t_c / 1e6:9.1f}M/s"
        else:
            speed, c_rate = "-", "-"
        print(
            f"{name:>12s} {len(prog.codes):>5d} {c_rate:>12s} "
            f"{args.rows / t_py / 1e6:9.1f}M/s {speed:>8s}"
        )

    # The other regime: one 4-variable truth table is only 16 rows, so the
    # per-opcode numpy dispatch overhead dominates and the tight C loop wins.
    # This is the hot path — generation and verification extract thousands
    # of these small tables.
    print("\ntruth-table extraction (16 rows):")
    print(f"{'expression':>12s} {'ops':>5s} {'compiled':>12s} {'python':>12s} {'speedup':>8s}")
    for steps in (4, 8, 16):
        expr = obfuscate(parse("x+y-(z&t)"), steps, seed=2)
        prog = compile_expr(expr, variables(expr))
        grid = np.array(
            [[(i >> b) & 1 for b in range(prog.n_vars - 1, -1, -1)]
             for i in range(1 << prog.n_vars)],
            dtype=np.uint64,
        )
        mask = np.uint64((1 << args.width) - 1)
        t_py = _bench(_eval_python, prog, grid, mask, min_seconds=0.2)
        if progeval.BACKEND == "compiled":
            t_c = _bench(eval_program, prog, grid, args.width, min_seconds=0.2)
            speed = f"{t_py / t_c:6.2f}x"
            c_rate = f"{t_c * 1e6:9.1f}us"
        else:
            speed, c_rate = "-", "-"
        print(f"{f'{steps}-step':>12s} {len(prog.codes):>5d} {c_rate:>12s} "
              f"{t_py * 1e6:9.1f}us {speed:>8s}")


if __name__ == "__main__":
    main()
