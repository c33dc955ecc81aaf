"""Command-line interface.

Subcommands cover the whole pipeline: ``tt`` (truth tables and feature
vectors), ``verify`` (equivalence oracle), ``obfuscate``, ``gen`` and
``stats`` (datasets), ``train`` / ``eval`` / ``grid`` (experiments), and
``simplify`` (run a checkpoint on one expression and verify the result).

Exit codes: 0 on success, 1 on domain errors (parse failure, missing file,
non-equivalence for ``verify``), 2 on usage errors (argparse's default).
Every random choice sits behind ``--seed``.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .datagen import GenConfig, format_stats, generate, load_pairs, obfuscate, save_pairs, stats, stats_kv
from .errors import MbaError
from .exprs import DEFAULT_WIDTH, parse, render
from .model import FusionSpec, ModelConfig, Seq2SeqModel
from .semantics import (
    DEFAULT_MAX_VARS,
    SEMANTICS_CHOICES,
    counterexample,
    equivalent,
    expression_features,
    extract,
    randomized_check,
)
from .training import (
    TrainConfig,
    default_grid,
    evaluate_model,
    run_grid,
    train,
    write_grid_csv,
    write_loss_log,
)

__all__ = ["main"]


def _add_width(p: argparse.ArgumentParser) -> None:
    p.add_argument("--width", type=int, default=DEFAULT_WIDTH,
                   help="word width in bits (default %(default)s)")


def _add_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0,
                   help="seed for all random choices (default %(default)s)")


def _build_parser() -> argparse.ArgumentParser:
    root = argparse.ArgumentParser(
        prog="mbakit",
        description="Mixed Boolean-Arithmetic deobfuscation toolkit",
    )
    sub = root.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tt", help="print the truth table and feature vector")
    p.add_argument("--expr", required=True)
    p.add_argument("--kind", choices=SEMANTICS_CHOICES, default="ext")
    _add_width(p)
    p.add_argument("--json-lines-style", action="store_true",
                   help="one tab-separated row per line, no banner")
    p.set_defaults(fn=_cmd_tt)

    p = sub.add_parser("verify", help="check two expressions for equivalence")
    p.add_argument("--lhs", required=True)
    p.add_argument("--rhs", required=True)
    p.add_argument("--trials", type=int, default=256,
                   help="randomized full-width trials (default %(default)s)")
    _add_width(p)
    _add_seed(p)
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("obfuscate", help="apply random rewrite steps")
    p.add_argument("--expr", required=True)
    p.add_argument("--steps", type=int, default=2)
    _add_width(p)
    _add_seed(p)
    p.set_defaults(fn=_cmd_obfuscate)

    p = sub.add_parser("gen", help="generate an obfuscated/simplified corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-steps", type=int, default=1)
    p.add_argument("--max-steps", type=int, default=3)
    p.add_argument(
        "--target-pool", type=int, default=None,
        help="draw all targets from a fixed pool of this many simplified forms",
    )
    _add_width(p)
    _add_seed(p)
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--kv", action="store_true", help="key=value output")
    p.set_defaults(fn=_cmd_stats)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--train", required=True, dest="train_path")
    p.add_argument("--val", dest="val_path")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-log", help="write epoch,split,loss CSV here")
    _add_fusion_flags(p)
    _add_train_flags(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    _add_width(p)
    p.add_argument("--show-errors", type=int, default=0, metavar="N",
                   help="print the first N mismatched predictions")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("grid", help="train/evaluate the configuration grid")
    p.add_argument("--train", required=True, dest="train_path")
    p.add_argument("--val", dest="val_path")
    p.add_argument("--test", required=True, dest="test_path")
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--include-hidden", action="store_true",
                   help="append add and hidden-concat rows to the standard grid")
    _add_train_flags(p)
    p.set_defaults(fn=_cmd_grid)

    p = sub.add_parser("simplify", help="run a checkpoint on one expression")
    p.add_argument("--expr", required=True)
    p.add_argument("--checkpoint", required=True)
    _add_width(p)
    p.set_defaults(fn=_cmd_simplify)

    return root


def _add_fusion_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("vanilla", "add", "token_concat", "hidden_concat"),
                   default="vanilla")
    p.add_argument("--semantics", choices=SEMANTICS_CHOICES)
    p.add_argument("--position", choices=("back", "front", "back_front_of_pad"))
    p.add_argument("--sep", action="store_true", help="insert the separator token")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=0)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--layers", type=int, default=2, help="encoder and decoder layer count")
    p.add_argument("--ffn-dim", type=int, default=256)
    p.add_argument("--max-len", type=int, default=128)
    p.add_argument("--dropout", type=float, default=0.0)
    _add_width(p)
    _add_seed(p)


def _fusion_spec(args) -> FusionSpec:
    return FusionSpec(
        mode=args.mode,
        semantics=args.semantics,
        position=args.position,
        use_sep=args.sep,
    )


def _train_config(args, spec: FusionSpec) -> TrainConfig:
    model = ModelConfig(
        d_model=args.d_model,
        n_heads=args.n_heads,
        n_encoder_layers=args.layers,
        n_decoder_layers=args.layers,
        ffn_dim=args.ffn_dim,
        max_len=args.max_len,
        dropout=args.dropout,
    )
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        patience=args.patience,
        width=args.width,
        spec=spec,
        model=model,
    )


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_tt(args) -> int:
    expr = parse(args.expr)
    kinds = ("bool", "ext") if args.kind == "both" else (args.kind,)
    tables = [extract(expr, width=args.width, kind=k) for k in kinds]
    names = tables[0].vars
    assignments = [a for a, _ in tables[0].rows()]
    if not args.json_lines_style:
        print("\t".join(list(names) + [t.kind for t in tables]))
    for assignment, values in zip(assignments, zip(*(t.values for t in tables))):
        cells = [str(b) for b in assignment] + [str(v) for v in values]
        print("\t".join(cells))
    feats = expression_features(expr, args.kind, args.width)
    print("features\t" + " ".join(f"{v:g}" for v in feats))
    return 0


def _cmd_verify(args) -> int:
    lhs = parse(args.lhs)
    rhs = parse(args.rhs)
    table_ok = equivalent(lhs, rhs, args.width)
    random_ok = randomized_check(lhs, rhs, args.width, args.trials, seed=args.seed)
    if table_ok and random_ok:
        print(f"EQUIVALENT (table equality and {args.trials} randomized trials "
              f"at width {args.width})")
        return 0
    witness = counterexample(lhs, rhs, args.width, trials=args.trials, seed=args.seed)
    detail = " ".join(f"{k}={v}" for k, v in sorted(witness.items())) if witness else "?"
    print(f"NOT-EQUIVALENT (witness: {detail})")
    return 1


def _cmd_obfuscate(args) -> int:
    expr = parse(args.expr)
    out = obfuscate(expr, args.steps, seed=args.seed)
    if not equivalent(expr, out, args.width):
        raise MbaError("internal: obfuscation produced a non-equivalent expression")
    print(render(out))
    return 0


def _cmd_gen(args) -> int:
    if args.min_steps < 0 or args.max_steps < args.min_steps:
        raise MbaError("need 0 <= min-steps <= max-steps")
    if args.target_pool is not None and args.target_pool < 1:
        raise MbaError("target-pool must be >= 1")
    config = GenConfig(
        steps=(args.min_steps, args.max_steps),
        width=args.width,
        target_pool=args.target_pool,
    )
    pairs = generate(args.n, config, seed=args.seed)
    save_pairs(pairs, args.out)
    print(f"wrote {len(pairs)} pairs to {args.out}")
    return 0


def _cmd_stats(args) -> int:
    pairs = load_pairs(args.data)
    s = stats(pairs)
    print(stats_kv(s) if args.kv else format_stats(s))
    return 0


def _cmd_train(args) -> int:
    spec = _fusion_spec(args)
    config = replace(_train_config(args, spec),
                     train_path=args.train_path, val_path=args.val_path)
    model, loss_log = train(config, log=lambda msg: print(msg, flush=True))
    model.save(args.out)
    if args.loss_log:
        write_loss_log(loss_log, args.loss_log)
    print(f"saved checkpoint to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = Seq2SeqModel.load(args.checkpoint)
    pairs = load_pairs(args.data)
    report = evaluate_model(model, pairs, width=args.width)
    n_equiv = sum(r.equivalent for r in report.records)
    print(f"acc {report.acc:.2f}")
    print(f"bleu {report.bleu:.2f}")
    print(f"equivalent {100.0 * n_equiv / len(report.records):.2f}")
    shown = 0
    for r in report.records:
        if shown >= args.show_errors:
            break
        if not r.match:
            print(f"miss src={r.src} trg={r.trg} pred={r.pred}")
            shown += 1
    return 0


def _cmd_grid(args) -> int:
    spec_grid = default_grid()
    if args.include_hidden:
        for semantics in SEMANTICS_CHOICES:
            spec_grid.append(FusionSpec("add", semantics))
            spec_grid.append(FusionSpec("hidden_concat", semantics))
    config = _train_config(args, FusionSpec())
    train_pairs = load_pairs(args.train_path)
    val_pairs = load_pairs(args.val_path) if args.val_path else None
    test_pairs = load_pairs(args.test_path)
    rows = run_grid(spec_grid, config, train_pairs, val_pairs, test_pairs,
                    log=lambda msg: print(msg, flush=True))
    write_grid_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _cmd_simplify(args) -> int:
    model = Seq2SeqModel.load(args.checkpoint)
    expr = parse(args.expr)
    src = render(expr)
    src_ids = model.vocab.encode(src)[None, :]
    feats = None
    if model.spec.fused:
        feats = expression_features(expr, model.spec.semantics, args.width)[None, :]
    ids = model.greedy_decode(src_ids, feats)[0]
    pred = model.vocab.decode(ids)
    try:
        pred_expr = parse(pred)
    except MbaError:
        print(f"PRED {pred} INVALID")
        return 0
    table_ok = equivalent(expr, pred_expr, args.width)
    random_ok = randomized_check(expr, pred_expr, args.width, 256, seed=0)
    verdict = "VERIFIED" if (table_ok and random_ok) else "UNVERIFIED"
    print(f"PRED {pred} {verdict}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except MbaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
