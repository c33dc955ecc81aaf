"""Command-line interface: exit codes and output formats."""

import pytest

from mbakit.cli import main
from mbakit.datagen import load_pairs


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestTT:
    def test_extended_table(self, capsys):
        code, out, _ = run(capsys, "tt", "--expr", "(x^y)+2*(x&y)")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "x\ty\text"
        assert lines[1:5] == ["0\t0\t0", "0\t1\t1", "1\t0\t1", "1\t1\t2"]
        assert lines[5].startswith("features\t")

    def test_bool_kind(self, capsys):
        code, out, _ = run(capsys, "tt", "--expr", "(x^y)+2*(x&y)", "--kind", "bool")
        values = [l.split("\t")[-1] for l in out.strip().splitlines()[1:5]]
        assert values == ["0", "1", "1", "0"]

    def test_both_kinds_two_value_columns(self, capsys):
        code, out, _ = run(capsys, "tt", "--expr", "x&y", "--kind", "both")
        lines = out.strip().splitlines()
        assert lines[0] == "x\ty\tbool\text"
        assert lines[4] == "1\t1\t1\t1"
        feats = lines[-1].split("\t")[1].split()
        assert len(feats) == 32

    def test_json_lines_style_no_banner(self, capsys):
        code, out, _ = run(capsys, "tt", "--expr", "x", "--json-lines-style")
        lines = out.strip().splitlines()
        assert lines[0] == "0\t0"
        assert lines[1] == "1\t1"

    def test_parse_error_exit_1(self, capsys):
        code, out, err = run(capsys, "tt", "--expr", "x+(")
        assert code == 1
        assert "error:" in err


class TestVerify:
    def test_equivalent_exit_0(self, capsys):
        code, out, _ = run(capsys, "verify", "--lhs", "x+y", "--rhs", "(x^y)+2*(x&y)")
        assert code == 0
        assert out.startswith("EQUIVALENT")
        assert "256 randomized trials" in out
        assert "width 8" in out

    def test_not_equivalent_exit_1_with_witness(self, capsys):
        code, out, _ = run(capsys, "verify", "--lhs", "x&y", "--rhs", "x|y")
        assert code == 1
        assert out.startswith("NOT-EQUIVALENT")
        assert "witness:" in out

    def test_usage_error_exit_2(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["verify", "--lhs", "x"])
        assert e.value.code == 2


class TestObfuscate:
    def test_deterministic_and_longer(self, capsys):
        code, out1, _ = run(capsys, "obfuscate", "--expr", "x+y", "--steps", "2", "--seed", "5")
        code2, out2, _ = run(capsys, "obfuscate", "--expr", "x+y", "--steps", "2", "--seed", "5")
        assert code == code2 == 0
        assert out1 == out2
        assert len(out1.strip()) > len("x+y")

    def test_output_verifies(self, capsys):
        _, out, _ = run(capsys, "obfuscate", "--expr", "x+y", "--steps", "3", "--seed", "1")
        code, vout, _ = run(capsys, "verify", "--lhs", "x+y", "--rhs", out.strip())
        assert code == 0


class TestGenStats:
    def test_gen_writes_loadable_file(self, capsys, tmp_path):
        out_path = tmp_path / "pairs.csv"
        code, out, _ = run(capsys, "gen", "--n", "12", "--out", str(out_path))
        assert code == 0
        assert "wrote 12 pairs" in out
        assert len(load_pairs(out_path)) == 12

    def test_stats_table_and_kv(self, capsys, tmp_path):
        out_path = tmp_path / "pairs.csv"
        run(capsys, "gen", "--n", "8", "--out", str(out_path))
        code, out, _ = run(capsys, "stats", "--data", str(out_path))
        assert code == 0
        assert "+/-" in out
        code, out, _ = run(capsys, "stats", "--data", str(out_path), "--kv")
        assert code == 0
        assert "count=8" in out

    def test_missing_file_exit_1(self, capsys):
        code, _, err = run(capsys, "stats", "--data", "/nonexistent/x.csv")
        assert code == 1
        assert "error:" in err

    def test_gen_bad_steps_exit_1(self, capsys):
        code, _, err = run(capsys, "gen", "--n", "2", "--out", "/tmp/x.csv",
                           "--min-steps", "3", "--max-steps", "1")
        assert code == 1

    def test_gen_target_pool(self, capsys, tmp_path):
        out_path = tmp_path / "pooled.csv"
        code, _, _ = run(capsys, "gen", "--n", "30", "--out", str(out_path),
                         "--target-pool", "3", "--seed", "5")
        assert code == 0
        assert len({p.trg for p in load_pairs(out_path)}) == 3

    def test_gen_bad_target_pool_exit_1(self, capsys):
        code, _, err = run(capsys, "gen", "--n", "2", "--out", "/tmp/x.csv",
                           "--target-pool", "0")
        assert code == 1
        assert "error:" in err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A tiny checkpoint plus train/val files, shared across CLI tests."""
    base = tmp_path_factory.mktemp("cli")
    train_csv, ckpt = base / "train.csv", base / "model.ckpt"
    capsys = None  # main() prints; harmless in a fixture
    assert main(["gen", "--n", "24", "--out", str(train_csv), "--seed", "7",
                 "--max-steps", "2"]) == 0
    assert main([
        "train", "--train", str(train_csv), "--out", str(ckpt),
        "--mode", "token_concat", "--semantics", "ext", "--sep",
        "--epochs", "2", "--batch-size", "8", "--d-model", "16",
        "--n-heads", "2", "--layers", "1", "--ffn-dim", "32",
    ]) == 0
    return train_csv, ckpt


class TestTrainEvalSimplify:
    def test_eval_reports_metrics(self, capsys, trained):
        train_csv, ckpt = trained
        code, out, _ = run(capsys, "eval", "--checkpoint", str(ckpt),
                           "--data", str(train_csv), "--show-errors", "2")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0].startswith("acc ")
        assert lines[1].startswith("bleu ")
        assert lines[2].startswith("equivalent ")

    def test_simplify_output_shape(self, capsys, trained):
        _, ckpt = trained
        code, out, _ = run(capsys, "simplify", "--expr", "(x^y)+2*(x&y)",
                           "--checkpoint", str(ckpt))
        assert code == 0
        assert out.startswith("PRED ")
        assert out.strip().split()[-1] in ("VERIFIED", "UNVERIFIED", "INVALID")

    def test_missing_checkpoint_exit_1(self, capsys):
        code, _, err = run(capsys, "eval", "--checkpoint", "/nonexistent.ckpt",
                           "--data", "/also/nonexistent.csv")
        assert code == 1


class TestGridCommand:
    def test_grid_smoke(self, capsys, tmp_path):
        train_csv = tmp_path / "train.csv"
        out_csv = tmp_path / "grid.csv"
        assert main(["gen", "--n", "12", "--out", str(train_csv), "--seed", "3",
                     "--max-steps", "1"]) == 0
        # tiny model, single epoch: exercises the plumbing, not the science
        code, out, _ = run(
            capsys, "grid", "--train", str(train_csv), "--test", str(train_csv),
            "--out", str(out_csv), "--epochs", "1", "--batch-size", "8",
            "--d-model", "16", "--n-heads", "2", "--layers", "1", "--ffn-dim", "32",
        )
        assert code == 0
        lines = out_csv.read_text().strip().splitlines()
        assert lines[0] == "semantics,position,sep,acc,bleu"
        assert len(lines) == 20
        assert lines[1].startswith("vanilla,-,-")
