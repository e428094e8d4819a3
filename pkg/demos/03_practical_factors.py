# %% [markdown]
# # Imperfect spoofing and a car that steers back
#
# Two things the open-loop campaign glosses over. The attacker cannot place a
# spoofed fix exactly where intended, and a real car's controller reacts to
# the wrong position estimate by steering, which changes what the sensors see.

# %%
import numpy as np

from msfspoof import config as C
from msfspoof.attack import AttackConfig, Side, SpoofErrorModel, closed_loop_attack, fusion_ripper_batch
from msfspoof.experiments import unconfident_trace
from msfspoof.replay import Replay

replay = Replay(unconfident_trace(), C.kf_config())

# %% [markdown]
# ## Spoofing inaccuracy
#
# Each spoofed fix is nudged by a normally distributed distance in a uniformly
# random direction, and its reported variance is jittered too. Scale the
# error up and watch how often the attack from t = 12 s still leaves the road.

# %%
for mult in (0.0, 1.0, 2.0, 3.0):
    hits = 0
    for seed in range(20):
        err = SpoofErrorModel(multiplier=mult, seed=seed) if mult else None
        o = fusion_ripper_batch(replay, 12.0, 0.5, [1.1], side=Side.LEFT, spoof_error=err, seed=seed,
                                stop_deviation=0.895)[0]
        hits += o.success_time(0.895) is not None
    print(f"{mult:g}x error: {hits}/20 seeds reach the off-road goal")

# %% [markdown]
# ## Closing the loop
#
# With the controller in the loop the estimate drifts left while the car
# itself drifts right, by about the same amount.

# %%
out, (times, physical) = closed_loop_attack(replay, 12.0, AttackConfig(0.5, 1.1), C.controller_config())
k = np.searchsorted(times, times[0] + np.array([5, 10, 15, 20]))
k = k[k < len(times)]
print("lateral offsets from the lane centre, left positive")
for t, est, phys in zip(times[k], out.deviations[k], physical[k]):
    print(f"t={t:6.1f} s  estimate {est:+7.2f} m, car {phys:+7.2f} m")
