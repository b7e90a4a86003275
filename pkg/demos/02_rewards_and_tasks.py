"""Synthetic tasks, the length-free verifier and the composite reward.

Run: python3 demos/02_rewards_and_tasks.py
"""

# %% A copy task: the answer sits in the prompt, any amount of filler is allowed
from lengthbias.rewards import LengthPenaltyConfig, total_reward
from lengthbias.tasks import EOS, FILL, MARK, generate_dataset

inst = generate_dataset("copy_answer", 1, vocab_size=10, rng_seed=0)[0]
print("prompt:", inst.query.prompt_tokens, "answer:", inst.answer_tokens)

# %% Short and long correct responses score the same until the soft length cap
cfg = LengthPenaltyConfig(l_max=64, l_buffer=16)
a = inst.answer_tokens[0]
for n_fill in (0, 10, 40, 50, 61):
    resp = [FILL] * n_fill + [MARK, a, EOS]
    r = total_reward(inst.query, resp, cfg)
    print(f"len {len(resp):3d}: accuracy {r.accuracy} format {r.format} overlong {r.overlong:+.4f} total {r.total:.4f}")

# %% Malformed responses lose the format bonus
for resp in ([FILL, a, EOS], [MARK, a, MARK, a, EOS], [MARK, a]):
    print(resp, total_reward(inst.query, resp, cfg))

# %% A modular-sum task
from lengthbias.tasks import RESERVED

for inst in generate_dataset("modular_sum", 3, vocab_size=14, rng_seed=1):
    digits = [t - RESERVED for t in inst.query.prompt_tokens[:-1]]
    print(digits, "->", inst.answer_tokens[0] - RESERVED)
