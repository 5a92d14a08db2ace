import json

import pytest

from srb import cli

SMALL = ["--embed_dim=8", "--hidden_dim=10", "--gate_hidden_dim=6", "--batch_size=8"]


@pytest.fixture
def toy_file(tmp_path):
    path = tmp_path / "toy.tsv"
    assert cli.main(["make-toy", f"--output_path={path}", "--toy_size=24", "--seed=1"]) == 0
    return path


def train(tmp_path, toy_file, name="run", *extra):
    out = tmp_path / name
    code = cli.main(["train", f"--train_path={toy_file}", f"--out_dir={out}", "--max_epochs=2", *SMALL, *extra])
    assert code == 0
    return out


class TestMakeToy:
    def test_record_format(self, toy_file):
        lines = toy_file.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 24
        for line in lines:
            source, target = line.split("\t")
            assert source == target

    @pytest.mark.parametrize("task", ["synonym-map", "truncate"])
    def test_other_tasks(self, tmp_path, task):
        path = tmp_path / f"{task}.tsv"
        assert cli.main(["make-toy", f"--output_path={path}", f"--toy_task={task}", "--toy_size=5"]) == 0
        for line in path.read_text(encoding="utf-8").splitlines():
            source, target = (s.split() for s in line.split("\t"))
            if task == "truncate":
                assert target == source[: (len(source) + 1) // 2]
            else:
                assert len(target) == len(source)


class TestTrain:
    def test_outputs(self, tmp_path, toy_file, capsys):
        out = train(tmp_path, toy_file)
        assert {p.name for p in out.iterdir()} == {"loss.tsv", "config.txt", "vocab.txt", "last.srb", "best.srb"}
        assert "epoch 2" in capsys.readouterr().out

    def test_deterministic(self, tmp_path, toy_file):
        a = train(tmp_path, toy_file, "a", "--dropout_rate=0.3")
        b = train(tmp_path, toy_file, "b", "--dropout_rate=0.3")
        assert (a / "loss.tsv").read_bytes() == (b / "loss.tsv").read_bytes()

    def test_config_file(self, tmp_path, toy_file):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"train_path = {toy_file}\nmax_epochs = 1\nembed_dim = 8\nhidden_dim = 10\n"
                       "gate_hidden_dim = 6\n", encoding="utf-8")
        out = tmp_path / "viafile"
        assert cli.main(["train", "--config", str(cfg), f"--out_dir={out}"]) == 0
        assert "embed_dim = 8" in (out / "config.txt").read_text(encoding="utf-8")

    def test_resume_from_checkpoint(self, tmp_path, toy_file):
        first = train(tmp_path, toy_file, "first")
        code = cli.main(["train", f"--train_path={toy_file}", f"--out_dir={tmp_path / 'second'}", "--max_epochs=1",
                         f"--checkpoint={first / 'last.srb'}", f"--vocab_path={first / 'vocab.txt'}", *SMALL])
        assert code == 0


def attention_blocks(text):
    blocks, current = [], []
    for line in text.splitlines():
        if line:
            current.append(line)
        else:
            blocks.append(current)
            current = []
    return blocks


class TestGenerate:
    def test_line_per_input_and_repeatable(self, tmp_path, toy_file):
        out = train(tmp_path, toy_file)
        src = tmp_path / "in.txt"
        src.write_text("3 4 5\n\n6 7 8 9\n", encoding="utf-8")
        outputs = []
        for name in ("o1.txt", "o2.txt"):
            args = ["generate", f"--out_dir={out}", f"--input_path={src}", f"--output_path={tmp_path / name}",
                    f"--attention_path={tmp_path / (name + '.attn')}", *SMALL]
            assert cli.main(args) == 0
            outputs.append((tmp_path / name).read_text(encoding="utf-8"))
        lines = outputs[0].split("\n")
        assert len(lines) == 4 and lines[1] == "" and lines[3] == ""
        assert outputs[0] == outputs[1]
        blocks = attention_blocks((tmp_path / "o1.txt.attn").read_text(encoding="utf-8"))
        assert len(blocks) == 3 and blocks[1] == []
        assert all(len(row.split()) == 3 for row in blocks[0])
        assert all(len(row.split()) == 4 for row in blocks[2])

    def test_empty_input(self, tmp_path, toy_file):
        out = train(tmp_path, toy_file)
        (tmp_path / "empty.txt").write_text("", encoding="utf-8")
        args = ["generate", f"--out_dir={out}", f"--input_path={tmp_path / 'empty.txt'}",
                f"--output_path={tmp_path / 'o.txt'}", *SMALL]
        assert cli.main(args) == 0
        assert (tmp_path / "o.txt").read_text(encoding="utf-8") == ""


class TestEval:
    def test_gold_against_itself(self, tmp_path, toy_file, capsys):
        gold = tmp_path / "gold.txt"
        gold.write_text("".join(line.split("\t")[1] + "\n"
                                for line in toy_file.read_text(encoding="utf-8").splitlines()), encoding="utf-8")
        report = tmp_path / "report.jsonl"
        code = cli.main(["eval", f"--test_path={toy_file}", f"--decoded_path={gold}", f"--report_path={report}"])
        assert code == 0
        rows = [json.loads(line) for line in report.read_text(encoding="utf-8").splitlines()]
        summary = rows[0]
        assert summary["rouge1_f"] == summary["rouge2_f"] == summary["rougeL_f"] == 1.0
        assert summary["bleu"] == pytest.approx(1.0, abs=1e-12)
        assert "ROUGE-1 F" in capsys.readouterr().out

    def test_untrained_model_scores_low(self, tmp_path, toy_file):
        out = train(tmp_path, toy_file, "untrained", "--max_epochs=1", "--learning_rate=1e-9")
        report = tmp_path / "report.jsonl"
        assert cli.main(["eval", f"--test_path={toy_file}", f"--out_dir={out}", f"--report_path={report}",
                         *SMALL]) == 0
        assert json.loads(report.read_text(encoding="utf-8").splitlines()[0])["bleu"] < 0.05

    def test_misaligned_references(self, tmp_path, toy_file):
        (tmp_path / "short.txt").write_text("x\n", encoding="utf-8")
        code = cli.main(["eval", f"--test_path={toy_file}", f"--decoded_path={tmp_path / 'short.txt'}"])
        assert code == 2

    def test_needs_references(self):
        assert cli.main(["eval"]) == 1


class TestGradcheck:
    def test_refuses_dropout(self, capsys):
        assert cli.main(["gradcheck", "--dropout_rate=0.1"]) == 1
        assert "dropout" in capsys.readouterr().err

    @pytest.mark.parametrize("worst,code", [(1e-7, 0), (1e-2, 3)])
    def test_exit_code_follows_tolerance(self, monkeypatch, capsys, worst, code):
        monkeypatch.setattr(cli, "check_model_gradients", lambda lam, seed: (worst, {"embed": worst}))
        assert cli.main(["gradcheck", "--lambda_sr=0.1"]) == code
        assert "lambda=0.1" in capsys.readouterr().out


class TestExitCodes:
    @pytest.mark.parametrize("argv", [["train", "--no_such_key=1"], ["fly"], ["train", "--seed=abc"], []])
    def test_usage(self, argv):
        assert cli.main(argv) == 1

    def test_missing_training_file(self, tmp_path):
        assert cli.main(["train", f"--train_path={tmp_path / 'nope.tsv'}", f"--out_dir={tmp_path}"]) == 2

    def test_missing_checkpoint(self, tmp_path):
        (tmp_path / "in.txt").write_text("a\n", encoding="utf-8")
        args = ["generate", f"--out_dir={tmp_path}", f"--input_path={tmp_path / 'in.txt'}",
                f"--output_path={tmp_path / 'o.txt'}"]
        assert cli.main(args) == 2

    def test_help(self):
        assert cli.main(["--help"]) == 0
