import csv
import subprocess
import sys
from pathlib import Path

import pytest

from sotvae import Config
from sotvae.cli import main

GOLDEN = Path(__file__).resolve().parent / "golden"


def _files(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_synth_data_is_deterministic(tmp_path):
    for run in ("a", "b"):
        assert main(["synth-data", "--seed", "7", "--samples", "100", "--out", str(tmp_path / run)]) == 0
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a and a == b
    other = tmp_path / "c"
    main(["synth-data", "--seed", "8", "--samples", "100", "--out", str(other)])
    assert _files(other) != a


def test_synth_header_records_the_configuration(tmp_path):
    main(["synth-data", "--seed", "3", "--samples", "20", "--mixture", "0.2,0.4,0.4", "--out", str(tmp_path)])
    text = "".join(p.read_text(encoding="utf-8") for p in tmp_path.iterdir())
    assert "seed" in text and "0.2" in text


def test_unknown_flag_prints_usage_and_fails(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_missing_command_fails(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_file_names_the_path(tmp_path, capsys):
    missing = tmp_path / "nowhere.ckpt"
    code = main(["evaluate", "--checkpoint", str(missing), "--data", str(GOLDEN / "evalset"),
                 "--out", str(tmp_path / "o")])
    assert code == 1
    assert str(missing) in capsys.readouterr().err
    assert main(["train", "--data", str(tmp_path / "nodata"), "--out", str(tmp_path / "o")]) == 1


def test_dump_config(capsys):
    assert main(["--dump-config"]) == 0
    assert capsys.readouterr().out == Config().dump()
    assert main(["dump-config", "--paper-scale", "--variant", "send", "--beta", "1.5"]) == 0
    cfg = Config().update_from_text(capsys.readouterr().out)
    assert cfg.d_model == 512 and cfg.diversity == "send" and cfg.beta == 1.5


def test_sentiments_flag_must_match_corpus(tmp_path, capsys):
    code = main(["train", "--data", str(GOLDEN / "evalset"), "--config", str(GOLDEN / "tiny_model.cfg"),
                 "--sentiments", "5", "--out", str(tmp_path)])
    assert code == 1 and "sentiments" in capsys.readouterr().err


def test_evaluate_golden_report_is_byte_identical(tmp_path):
    out = tmp_path / "report"
    assert main(["evaluate", "--checkpoint", str(GOLDEN / "tiny_model.ckpt"), "--data", str(GOLDEN / "evalset"),
                 "--out", str(out)]) == 0
    assert _files(out) == _files(GOLDEN / "eval_report")
    assert "# d_model=16" in (out / "report.txt").read_text(encoding="utf-8")


def test_train_then_generate(tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--data", str(GOLDEN / "evalset"), "--config", str(GOLDEN / "tiny_model.cfg"),
                 "--epochs", "1", "--out", str(run)]) == 0
    assert (run / "model.ckpt").exists() and (run / "loss.csv").exists()
    assert "epochs=1" in (run / "config.txt").read_text(encoding="utf-8")
    out = tmp_path / "gen.tsv"
    assert main(["generate", "--checkpoint", str(run / "model.ckpt"), "--data", str(GOLDEN / "evalset"),
                 "--out", str(out)]) == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    rows = [ln.split("\t") for ln in lines if not ln.startswith("#")]
    assert "# epochs=1" in header
    # 16 test samples, one comment per sentiment class
    assert len(rows) == 16 * 3
    assert [r[1] for r in rows[:3]] == ["0", "1", "2"]
    again = tmp_path / "gen2.tsv"
    main(["generate", "--checkpoint", str(run / "model.ckpt"), "--data", str(GOLDEN / "evalset"),
          "--out", str(again)])
    assert again.read_bytes() == out.read_bytes()


def test_ablate_mask_grid(tmp_path):
    out = tmp_path / "ablate"
    assert main(["ablate", "--grid", "mask", "--data", str(GOLDEN / "evalset"),
                 "--config", str(GOLDEN / "tiny_model.cfg"), "--epochs", "1", "--max-ranked", "2",
                 "--out", str(out)]) == 0
    text = (out / "comparison.csv").read_text(encoding="utf-8")
    rows = list(csv.DictReader(ln for ln in text.splitlines() if not ln.startswith("#")))
    assert [r["variant"] for r in rows] == ["lambda=0.00", "lambda=0.15", "lambda=0.30", "lambda=0.45"]
    for ratio, run_dir in zip((0.0, 0.15, 0.3, 0.45), sorted(p for p in out.iterdir() if p.is_dir())):
        assert f"mask_ratio={ratio!r}" in (run_dir / "config.txt").read_text(encoding="utf-8")
        assert (run_dir / "report.txt").exists()


def test_console_entry_point_runs():
    res = subprocess.run([sys.executable, "-m", "sotvae.cli", "--dump-config"], capture_output=True, text=True)
    assert res.returncode == 0 and "d_model=128" in res.stdout


def test_nan_anywhere_gives_nonzero_exit(tmp_path, capsys):
    import numpy as np
    from sotvae import SynthConfig, synth_corpus
    from sotvae.data import save_corpus_dir
    corpus, _, lexicon = synth_corpus(SynthConfig(vocab_size=60, n_samples=40, d_in=6, seed=2))
    corpus.samples[0].frames[:] = np.nan
    save_corpus_dir(tmp_path / "data", corpus, lexicon, {})
    with np.errstate(invalid="ignore"):
        code = main(["train", "--data", str(tmp_path / "data"), "--config", str(GOLDEN / "tiny_model.cfg"),
                     "--batch-size", "40", "--out", str(tmp_path / "run")])
    assert code != 0
    assert "non-finite" in capsys.readouterr().err
