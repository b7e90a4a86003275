import json

import numpy as np
import pytest

from lengthbias.cli import main
from lengthbias.diagnostics import (
    gradcheck,
    read_table,
    recount_clips,
    relative_error,
    report,
    summarize,
    window_size,
)
from lengthbias.metrics import MetricsWriter, StepMetrics, read_metrics, write_metrics
from lengthbias.policy import load_params
from lengthbias.tasks import generate_dataset, save_dataset

TINY = dict(
    prompts_per_batch=4,
    group_size=4,
    mini_batch=2,
    max_len=48,
    l_buffer=8,
    total_steps=3,
    n_train=16,
    n_val=4,
    eval_every=2,
    eval_samples=1,
    init_mean_filler=4.0,
)


def write_cfg(tmp_path, **kw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(dict(TINY, **kw)))
    return path


def metric(step, length=10.0):
    return StepMetrics(step, length, int(length) + 5, 0.5, 0.0, 1, 2, 0.1, 1e-3)


# --- metrics files --------------------------------------------------------


def test_metrics_round_trip(tmp_path):
    hist = [metric(0), metric(1, 12.5)]
    hist[1].val_accuracy = 0.25
    path = tmp_path / "m.jsonl"
    write_metrics(hist, path)
    assert read_metrics(path) == hist
    rec = json.loads(path.read_text().splitlines()[0])
    assert rec["mean_len"] == 10.0 and rec["max_len"] == 15
    assert not (tmp_path / "m.jsonl.part").exists()


def test_metrics_reader_names_bad_line(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps(metric(0).to_record()) + "\n{not json\n")
    with pytest.raises(ValueError, match=":2:"):
        read_metrics(path)


def test_metrics_writer_abort_leaves_nothing(tmp_path):
    path = tmp_path / "m.jsonl"
    with pytest.raises(RuntimeError):
        with MetricsWriter(path) as w:
            w.write(metric(0))
            raise RuntimeError("boom")
    assert not path.exists()
    assert not (tmp_path / "m.jsonl.part").exists()


# --- diagnostics helpers --------------------------------------------------


def test_relative_error_examples():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.002])) == pytest.approx(0.002 / 2.002)


def test_window_size():
    assert window_size(5) == 5
    assert window_size(20) == 10
    assert window_size(200) == 40


def test_recount_clips():
    log = [{"ratios": [1.01, 0.99, 1.0, 0.99], "advantages": [1.0, -1.0, 1.0, 1.0]}]
    assert recount_clips(log, 2e-3, 2.5e-3) == (1, 1)


def test_summarize_flags_short_runs():
    s = summarize({"gspo": [metric(i) for i in range(3)], "luspo": [metric(i, 11.0) for i in range(3)]})
    assert s["insufficient_steps"] and s["n_steps"] == 3 and s["window"] == 3
    assert s["luspo_longer"] and not s["gspo_collapsed"]


@pytest.mark.parametrize("alg", ["grpo", "gspo", "luspo"])
def test_gradcheck_small(alg):
    res = gradcheck(alg, 5, seed=1)
    assert res.passed and res.trials == 5


def test_gradcheck_clip_heavy_really_clips():
    res = gradcheck("gspo", 5, seed=0, clip_heavy=True)
    assert res.passed and res.clipped_items > res.total_items // 4


# --- report tables --------------------------------------------------------


def test_report_single_run(tmp_path):
    p = tmp_path / "a.jsonl"
    write_metrics([metric(0), metric(1, 11.0)], p)
    report([p], tmp_path / "out")
    table = read_table(tmp_path / "out" / "mean_len.tsv")
    assert table == {"a": {0: 10.0, 1: 11.0}}


def test_report_pads_shorter_run(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_metrics([metric(i, 10.0 + i) for i in range(4)], a)
    write_metrics([metric(i, 20.0 + i) for i in range(2)], b)
    report([a, b], tmp_path / "out")
    text = (tmp_path / "out" / "mean_len.tsv").read_text().splitlines()
    assert text[0] == "step\ta\tb"
    assert text[-1] == "3\t13.0\tNA"
    table = read_table(tmp_path / "out" / "mean_len.tsv")
    assert table["b"][3] is None and table["a"][3] == 13.0
    # a field absent everywhere is NA too
    assert read_table(tmp_path / "out" / "val_accuracy.tsv")["a"][0] is None


def test_report_round_trips_float_repr(tmp_path):
    p = tmp_path / "a.jsonl"
    x = 0.1 + 0.2
    write_metrics([metric(0, x)], p)
    report([p], tmp_path / "out")
    assert read_table(tmp_path / "out" / "mean_len.tsv")["a"][0] == x


# --- command line ---------------------------------------------------------


def test_cli_train_writes_outputs(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    hist = read_metrics(out / "metrics.jsonl")
    assert [m.step for m in hist] == [0, 1, 2]
    assert hist[0].val_accuracy is not None
    assert load_params(out / "policy.txt").vocab_size == 10
    assert json.loads((out / "manifest.json").read_text())["rng_seed"] == 0


def test_cli_train_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path)
    for d in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / d), "--seed", "4"]) == 0
    for f in ("metrics.jsonl", "policy.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_cli_train_with_dataset_file(tmp_path):
    data = tmp_path / "train.jsonl"
    save_dataset(generate_dataset("copy_answer", 8, 10, rng_seed=3), data)
    cfg = write_cfg(tmp_path, dataset=str(data), n_val=0, total_steps=1)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0


def test_cli_missing_dataset(tmp_path, capsys):
    cfg = write_cfg(tmp_path, dataset=str(tmp_path / "nope.jsonl"))
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) != 0
    assert not (out / "metrics.jsonl").exists()
    assert "nope.jsonl" in capsys.readouterr().err


def test_cli_bad_key(tmp_path, capsys):
    cfg = write_cfg(tmp_path, learnin_rate=0.1)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 1
    assert "learnin_rate" in capsys.readouterr().err


def test_cli_bad_value(tmp_path, capsys):
    cfg = write_cfg(tmp_path, mini_batch=3)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 1
    assert "mini_batch" in capsys.readouterr().err


def test_cli_usage_errors(capsys):
    assert main([]) == 1
    assert main(["gradcheck", "--algorithm", "ppo"]) == 1
    assert main(["gradcheck", "--algorithm", "gspo", "--trials", "0"]) == 1


def test_cli_gradcheck(capsys):
    assert main(["gradcheck", "--algorithm", "luspo", "--trials", "3"]) == 0
    assert "ok" in capsys.readouterr().out


def test_cli_biasdemo_flags_short_run(tmp_path, capsys):
    out = tmp_path / "demo"
    assert main(["biasdemo", "--out", str(out), "--steps", "1"]) == 0
    assert "insufficient steps for trend" in capsys.readouterr().out
    summary = json.loads((out / "summary.json").read_text())
    assert summary["insufficient_steps"]
    assert all(r["recount_matches"] for r in summary["runs"].values())
    assert (out / "gspo" / "metrics.jsonl").exists() and (out / "luspo" / "ratios.jsonl").exists()


def test_cli_report(tmp_path):
    p = tmp_path / "a.jsonl"
    write_metrics([metric(0)], p)
    assert main(["report", str(p), "--out", str(tmp_path / "t")]) == 0
    assert (tmp_path / "t" / "grad_norm.tsv").exists()
    assert main(["report", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "t")]) == 3
