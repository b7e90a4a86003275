"""Matched-seed GSPO and LUSPO runs on the length-neutral copy task.

Both runs start from the same policy and see identical first rollouts. With
the asymmetric clip band, GSPO clips more negative samples than positive ones
and its responses shrink; LUSPO keeps them longer. Takes about half a minute.

Run: python3 demos/03_length_bias.py [out_dir]
"""

# %%
import sys
import tempfile

from lengthbias.diagnostics import biasdemo

out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="lengthbias-demo-")
summary = biasdemo(out, seed=0)

# %% Initial vs final 20% window
for name, run in summary["runs"].items():
    print(
        f"{name:5s} mean length {run['initial_mean_len']:6.2f} -> {run['final_mean_len']:6.2f}   "
        f"final accuracy {run['final_accuracy']:.3f}   clipped +{run['clipped_pos']} / -{run['clipped_neg']}"
    )
print(f"LUSPO / GSPO final length ratio: {summary['luspo_over_gspo_length']:.3f}")
print("outputs in", out)
