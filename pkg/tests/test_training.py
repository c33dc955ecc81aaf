"""Training loop, metrics, evaluation, and the configuration grid."""

import math
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from mbakit.datagen import DatasetPair, GenConfig, generate
from mbakit.errors import TrainingDivergedError
from mbakit.model import FusionSpec, ModelConfig
from mbakit.training import (
    EvalReport,
    GridRow,
    TrainConfig,
    bleu,
    default_grid,
    evaluate_model,
    exact_match,
    run_grid,
    train,
    write_grid_csv,
    write_loss_log,
)


class TestExactMatch:
    def test_whitespace_insensitive(self):
        assert exact_match("x + y", "x+y")
        assert exact_match("x+y", " x\t+ y ")

    def test_content_sensitive(self):
        assert not exact_match("x+y", "y+x")
        assert not exact_match("x", "x+0")


def _reference_bleu(preds, refs):
    """Independent corpus char-BLEU-4 for cross-checking (test-local)."""

    def grams(s, n):
        return Counter(s[i : i + n] for i in range(len(s) - n + 1))

    pred_len = sum(len(p) for p in preds)
    ref_len = sum(len(r) for r in refs)
    if pred_len == 0:
        return 0.0
    logs = []
    for n in (1, 2, 3, 4):
        clipped = 0
        total = 0
        for p, r in zip(preds, refs):
            pg, rg = grams(p, n), grams(r, n)
            for g, c in pg.items():
                clipped += min(c, rg.get(g, 0))
            total += max(len(p) - n + 1, 0)
        if n == 1 and clipped == 0:
            return 0.0
        logs.append(math.log(clipped / total) if clipped and total else math.log(1e-9))
    bp = 1.0 if pred_len > ref_len else math.exp(1.0 - ref_len / pred_len)
    return 100.0 * bp * math.exp(sum(logs) / 4.0)


class TestBleu:
    def test_identical_is_100(self):
        texts = ["x+y", "2*(x&y)", "~x"]
        assert bleu(texts, list(texts)) == pytest.approx(100.0)

    def test_disjoint_is_0(self):
        assert bleu(["aaaa"], ["bbbb"]) == 0.0

    def test_empty_predictions(self):
        assert bleu(["", ""], ["x", "y"]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bleu(["x"], ["x", "y"])

    def test_matches_reference_implementation(self):
        cases = [
            (["x+y", "2*(x&y)"], ["x+y*z", "2*(x|y)"]),
            (["(x^y)+2*(x&y)"], ["x+y"]),
            (["x+y", ""], ["x+y", "z"]),
            (["abcd"], ["dcba"]),
        ]
        for preds, refs in cases:
            assert bleu(preds, refs) == pytest.approx(_reference_bleu(preds, refs), abs=1e-6)

    def test_partial_overlap_between_0_and_100(self):
        score = bleu(["x+y+z"], ["x+y"])
        assert 0.0 < score < 100.0


def _quick_config(spec=FusionSpec(), **kw):
    model = ModelConfig(d_model=16, n_heads=2, n_encoder_layers=1,
                        n_decoder_layers=1, ffn_dim=32, max_len=64,
                        feature_len=spec.feature_len)
    kw.setdefault("epochs", 2)
    kw.setdefault("batch_size", 8)
    kw.setdefault("lr", 1e-3)
    kw.setdefault("seed", 0)
    return TrainConfig(spec=spec, model=model, **kw)


@pytest.fixture(scope="module")
def tiny_pairs():
    return generate(24, GenConfig(max_src_len=56, max_trg_len=24), seed=11)


class TestTrain:
    def test_loss_decreases(self, tiny_pairs):
        config = _quick_config(epochs=4)
        model, log = train(config, train_pairs=tiny_pairs)
        tr = [v for e, s, v in log if s == "train"]
        assert len(tr) == 4
        assert tr[-1] < tr[0]

    def test_deterministic(self, tiny_pairs):
        config = _quick_config()
        _, log_a = train(config, train_pairs=tiny_pairs)
        _, log_b = train(config, train_pairs=tiny_pairs)
        assert log_a == log_b

    def test_val_split_logged(self, tiny_pairs):
        config = _quick_config()
        _, log = train(config, train_pairs=tiny_pairs[:16], val_pairs=tiny_pairs[16:])
        splits = {s for _, s, _ in log}
        assert splits == {"train", "val"}

    def test_divergence_detected(self, tiny_pairs):
        # clipping plus stable softmax keep moderate lr finite; only a
        # float64 overflow (lr ~1e200) drives the loss non-finite
        config = _quick_config(lr=1e200, epochs=5)
        with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError):
            train(config, train_pairs=tiny_pairs)

    def test_fused_training_runs(self, tiny_pairs):
        spec = FusionSpec(mode="token_concat", semantics="ext", use_sep=True)
        model, log = train(_quick_config(spec), train_pairs=tiny_pairs)
        assert model.spec == spec

    def test_loads_from_paths(self, tiny_pairs, tmp_path):
        from mbakit.datagen import save_pairs

        tp = tmp_path / "train.csv"
        vp = tmp_path / "val.csv"
        save_pairs(tiny_pairs[:16], tp)
        save_pairs(tiny_pairs[16:], vp)
        config = replace(_quick_config(), train_path=str(tp), val_path=str(vp))
        _, log = train(config)
        assert {s for _, s, _ in log} == {"train", "val"}

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(lr=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


class TestEvaluate:
    def test_empty_pairs(self, tiny_pairs):
        model, _ = train(_quick_config(), train_pairs=tiny_pairs)
        report = evaluate_model(model, [])
        assert report == EvalReport(acc=0.0, bleu=0.0, records=())

    def test_report_structure(self, tiny_pairs):
        model, _ = train(_quick_config(), train_pairs=tiny_pairs)
        report = evaluate_model(model, tiny_pairs[:6])
        assert len(report.records) == 6
        assert 0.0 <= report.acc <= 100.0
        assert 0.0 <= report.bleu <= 100.0
        # records preserve input order
        assert [r.src for r in report.records] == [p.src for p in tiny_pairs[:6]]

    def test_match_implies_equivalent(self, tiny_pairs):
        model, _ = train(_quick_config(), train_pairs=tiny_pairs)
        report = evaluate_model(model, tiny_pairs[:8])
        for r in report.records:
            assert not r.match or r.equivalent

    def test_overfit_single_pair(self):
        pairs = [DatasetPair("(x^y)+2*(x&y)", "x+y")] * 8
        config = _quick_config(epochs=30, lr=3e-3)
        model, _ = train(config, train_pairs=pairs)
        report = evaluate_model(model, pairs[:1])
        assert report.acc == 100.0
        assert report.records[0].pred == "x+y"


class TestGrid:
    def test_default_grid_layout(self):
        grid = default_grid()
        assert len(grid) == 19
        assert grid[0] == FusionSpec()
        assert all(s.mode == "token_concat" for s in grid[1:])
        # bool rows first, then ext, then both; sep toggles fastest
        assert grid[1].semantics == "bool" and grid[1].position == "back"
        assert not grid[1].use_sep and grid[2].use_sep
        assert grid[7].semantics == "ext"
        assert grid[13].semantics == "both"

    def test_run_grid_isolates_failures(self, tiny_pairs):
        # feature extraction on >4 distinct variables fails inside the cell
        bad = [DatasetPair("a+b+c+d+e", "a+b+c+d+e")] * 4
        grid = [FusionSpec(), FusionSpec(mode="add", semantics="ext")]
        rows = run_grid(grid, _quick_config(), bad, None, bad)
        assert rows[0].error is None
        assert rows[1].error is not None
        assert math.isnan(rows[1].acc)

    def test_run_grid_empty_rejected(self, tiny_pairs):
        with pytest.raises(ValueError):
            run_grid([], _quick_config(), tiny_pairs, None, tiny_pairs)

    def test_csv_and_loss_log_format(self, tmp_path):
        rows = [
            GridRow(FusionSpec(), 50.0, 61.25, 1.0),
            GridRow(FusionSpec(mode="token_concat", semantics="ext",
                               position="back", use_sep=True), 75.0, 80.5, 1.0),
            GridRow(FusionSpec(mode="hidden_concat", semantics="both"),
                    float("nan"), float("nan"), 0.5, error="boom"),
        ]
        path = tmp_path / "grid.csv"
        write_grid_csv(rows, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "semantics,position,sep,acc,bleu"
        assert lines[1] == "vanilla,-,-,50.00,61.25"
        assert lines[2] == "ext,back,Y,75.00,80.50"
        assert lines[3] == "both,hidden,-,nan,nan"

        lpath = tmp_path / "loss.csv"
        write_loss_log([(1, "train", 2.5), (1, "val", 2.25)], lpath)
        assert lpath.read_text() == "epoch,split,loss\n1,train,2.500000\n1,val,2.250000\n"
