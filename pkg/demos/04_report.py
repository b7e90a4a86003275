"""Turn metrics files into per-metric curve tables.

Run: python3 demos/04_report.py
"""

# %% Two short training runs with different seeds
import tempfile
from pathlib import Path

from lengthbias.diagnostics import read_table, report, run_logged
from lengthbias.trainer import TrainConfig

root = Path(tempfile.mkdtemp(prefix="lengthbias-report-"))
for seed, steps in ((0, 6), (1, 4)):
    cfg = TrainConfig(total_steps=steps, rng_seed=seed, prompts_per_batch=8, mini_batch=4, n_val=0)
    run_logged(cfg, root / f"seed{seed}")

# %% One table per metric; the shorter run is padded with NA
paths = [root / "seed0" / "metrics.jsonl", root / "seed1" / "metrics.jsonl"]
report(paths, root / "tables")
print((root / "tables" / "mean_len.tsv").read_text())
print(read_table(root / "tables" / "clipped_neg.tsv"))
