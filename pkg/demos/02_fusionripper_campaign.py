# %% [markdown]
# # FusionRipper against a random spoofer
#
# FusionRipper does not know when the LiDAR locator will become unconfident.
# It pushes gently with a constant offset `d` and waits; once the estimate
# wanders past the lane-line trigger it switches to an exponentially growing
# offset `d * f**i`. Here we run it from many start times and compare against
# an attacker who just spoofs random offsets.

# %%
import numpy as np

from msfspoof import config as C
from msfspoof.analysis import goal_thresholds, LOCAL, random_success_rate, success_metrics
from msfspoof.attack import AttackConfig, fusion_ripper
from msfspoof.experiments import eligible_starts, random_baseline, ripper_grid, unconfident_trace
from msfspoof.replay import Replay

replay = Replay(unconfident_trace(), C.kf_config())
goal = goal_thresholds(LOCAL).off_road
starts = eligible_starts(replay, 120.0)[::6]
print(f"{len(starts)} start times, off-road goal {goal} m")

# %% [markdown]
# ## One attack up close

# %%
one = fusion_ripper(replay, 12.0, AttackConfig(0.5, 1.1))
print("stage 2 began at", one.stage2_time, "s")
print("reached the off-road goal at", one.success_time(goal), "s after the start")
print("largest deviation", round(one.max_deviation, 1), "m")

# %% [markdown]
# ## A small parameter grid

# %%
outs = ripper_grid(replay, starts, [0.3, 0.5, 0.7], [1.1, 1.3, 1.5], max_duration=120.0)
report = success_metrics(outs, goal, 120.0)
print(report.to_csv())
print("best:", report.best)

# %% [markdown]
# ## Random spoofing for comparison
#
# Ten seeded trials, each drawing every offset uniformly from 0 to 10 m.

# %%
rnd = random_baseline(replay, starts, 10.0, trials=10, max_duration=120.0)
mean, per_trial = random_success_rate(rnd, goal, 120.0)
print(f"random spoofing succeeds {mean:.1%} of the time (worst trial {max(per_trial):.1%})")

# %% [markdown]
# Big random jumps are caught by the gate. FusionRipper's slow push stays
# under it until the filter is ready to be taken over.
