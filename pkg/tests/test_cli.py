import pytest

from conftest import make_mapped_task
from mnmt.cli import RunConfig, main
from mnmt.checkpoint import checkpoint_checksum


@pytest.fixture
def workdir(tmp_path):
    task = make_mapped_task(n_common=8, n_train=24, seed=3)
    src = tmp_path / "train.src"
    tgt = tmp_path / "train.tgt"
    src.write_text("\n".join(" ".join(s) for s, _ in task.train_pairs) + "\n", encoding="utf-8")
    tgt.write_text("\n".join(" ".join(t) for _, t in task.train_pairs) + "\n", encoding="utf-8")
    cfg = tmp_path / "desk.cfg"
    cfg.write_text(
        "src_vocab_size = 40\n"
        "tgt_vocab_size = 40\n"
        "embed_dim = 8\n"
        "hidden_dim = 10\n"
        "batch_size = 8\n"
        "lr = 0.01\n"
        "train_steps = 12\n"
        "beam_size = 2\n",
        encoding="utf-8",
    )
    return tmp_path, task


class TestRunConfig:
    def test_unknown_key_rejected(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("no_such_key = 3\n", encoding="utf-8")
        with pytest.raises(ValueError, match="no_such_key"):
            RunConfig.from_file(str(bad))

    def test_comments_and_types(self, tmp_path):
        good = tmp_path / "good.cfg"
        good.write_text("# comment\nlr = 0.25\nbeam_size = 7\n", encoding="utf-8")
        cfg = RunConfig.from_file(str(good))
        assert cfg.lr == 0.25 and cfg.beam_size == 7


class TestCommands:
    # a 12-step model may emit hypotheses too short for 4-gram scoring
    @pytest.mark.filterwarnings("ignore:hypotheses too short")
    def test_full_pipeline(self, workdir, capsys):
        d, task = workdir
        assert main(["build-vocab", "--src", str(d / "train.src"),
                     "--max-size", "40", "--out", str(d / "vocab.src")]) == 0
        assert main(["build-vocab", "--src", str(d / "train.tgt"),
                     "--max-size", "40", "--out", str(d / "vocab.tgt")]) == 0
        assert main(["train-lexicon", "--src", str(d / "train.src"),
                     "--tgt", str(d / "train.tgt"), "--iters", "5",
                     "--floor", "0.05", "--out", str(d / "lex.tsv")]) == 0
        assert main(["train", "--config", str(d / "desk.cfg"),
                     "--src", str(d / "train.src"), "--tgt", str(d / "train.tgt"),
                     "--vocab-src", str(d / "vocab.src"), "--vocab-tgt", str(d / "vocab.tgt"),
                     "--ckpt", str(d / "model.ckpt"), "--seed", "1"]) == 0
        assert main(["train-memory", "--config", str(d / "desk.cfg"),
                     "--src", str(d / "train.src"), "--tgt", str(d / "train.tgt"),
                     "--vocab-src", str(d / "vocab.src"), "--vocab-tgt", str(d / "vocab.tgt"),
                     "--lexicon", str(d / "lex.tsv"), "--ckpt", str(d / "model.ckpt"),
                     "--mem-ckpt", str(d / "mem.ckpt"), "--epochs", "2", "--seed", "1"]) == 0

        test_src = d / "test.src"
        test_src.write_text("\n".join(" ".join(s) for s, _ in task.train_pairs[:4]) + "\n",
                            encoding="utf-8")
        assert main(["translate", "--config", str(d / "desk.cfg"),
                     "--src", str(test_src),
                     "--vocab-src", str(d / "vocab.src"), "--vocab-tgt", str(d / "vocab.tgt"),
                     "--ckpt", str(d / "model.ckpt"), "--beam", "2",
                     "--out", str(d / "plain.out")]) == 0
        lines = (d / "plain.out").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 4

        ref = d / "test.ref"
        ref.write_text("\n".join(" ".join(t) for _, t in task.train_pairs[:4]) + "\n",
                       encoding="utf-8")
        assert main(["score", "--hyp", str(d / "plain.out"), "--ref", str(ref),
                     "--breakdown"]) == 0
        out = capsys.readouterr().out
        assert "BLEU:" in out
        for key in ("p1:", "p2:", "p3:", "p4:", "BP:", "hyp_length:", "ref_length:",
                    "recalled_words:"):
            assert key in out

    def test_translate_beta_zero_matches_no_memory(self, workdir):
        d, task = workdir
        for name in ("vocab.src", "vocab.tgt"):
            side = "train.src" if name.endswith("src") else "train.tgt"
            main(["build-vocab", "--src", str(d / side), "--max-size", "40",
                  "--out", str(d / name)])
        main(["train-lexicon", "--src", str(d / "train.src"), "--tgt", str(d / "train.tgt"),
              "--iters", "5", "--out", str(d / "lex.tsv")])
        main(["train", "--config", str(d / "desk.cfg"),
              "--src", str(d / "train.src"), "--tgt", str(d / "train.tgt"),
              "--vocab-src", str(d / "vocab.src"), "--vocab-tgt", str(d / "vocab.tgt"),
              "--ckpt", str(d / "model.ckpt"), "--seed", "2"])
        main(["train-memory", "--config", str(d / "desk.cfg"),
              "--src", str(d / "train.src"), "--tgt", str(d / "train.tgt"),
              "--vocab-src", str(d / "vocab.src"), "--vocab-tgt", str(d / "vocab.tgt"),
              "--lexicon", str(d / "lex.tsv"), "--ckpt", str(d / "model.ckpt"),
              "--mem-ckpt", str(d / "mem.ckpt"), "--epochs", "2", "--seed", "2"])
        test_src = d / "test.src"
        test_src.write_text("\n".join(" ".join(s) for s, _ in task.train_pairs[:5]) + "\n",
                            encoding="utf-8")
        base = ["--config", str(d / "desk.cfg"), "--src", str(test_src),
                "--vocab-src", str(d / "vocab.src"), "--vocab-tgt", str(d / "vocab.tgt"),
                "--ckpt", str(d / "model.ckpt"), "--beam", "2"]
        main(["translate", *base, "--out", str(d / "no_mem.out")])
        main(["translate", *base, "--lexicon", str(d / "lex.tsv"),
              "--mem-ckpt", str(d / "mem.ckpt"), "--beta", "0.0",
              "--out", str(d / "beta0.out")])
        assert (d / "no_mem.out").read_bytes() == (d / "beta0.out").read_bytes()

    def test_train_is_deterministic(self, workdir):
        d, _ = workdir
        for name in ("vocab.src", "vocab.tgt"):
            side = "train.src" if name.endswith("src") else "train.tgt"
            main(["build-vocab", "--src", str(d / side), "--max-size", "40",
                  "--out", str(d / name)])
        args = ["train", "--config", str(d / "desk.cfg"),
                "--src", str(d / "train.src"), "--tgt", str(d / "train.tgt"),
                "--vocab-src", str(d / "vocab.src"), "--vocab-tgt", str(d / "vocab.tgt"),
                "--seed", "7"]
        main([*args, "--ckpt", str(d / "a.ckpt")])
        main([*args, "--ckpt", str(d / "b.ckpt")])
        assert checkpoint_checksum(str(d / "a.ckpt")) == checkpoint_checksum(str(d / "b.ckpt"))

    def test_unknown_subcommand_exits_nonzero(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code != 0

    def test_gradcheck_command(self, capsys):
        assert main(["gradcheck"]) == 0
        assert "PASS" in capsys.readouterr().out
