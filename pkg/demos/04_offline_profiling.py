# %% [markdown]
# # Picking d and f without crashing anyone
#
# An attacker cannot try the real attack over and over to tune it. Profiling
# trials instead spoof only until the victim's estimate is 0.45 m off and then
# hand GPS back, so the car recovers. The profiler walks the grid and keeps
# the first cell where at least half the trials reach that safe threshold.

# %%
from msfspoof import config as C
from msfspoof.experiments import unconfident_trace
from msfspoof.profiler import ProfilingConfig, offline_profile, safe_trial, trace_trial_runner
from msfspoof.replay import Replay

replay = Replay(unconfident_trace(), C.kf_config())

# %% [markdown]
# ## One safe trial

# %%
reached, out = safe_trial(replay, 20.0, 0.5, 1.1, return_outcome=True)
print("reached the safe threshold:", reached)
print("largest deviation:", round(out.max_deviation, 3), "m")
print("deviation when the trial ended:", round(abs(out.deviations[-1]), 4), "m")

# %% [markdown]
# ## A short profiling session
#
# Twenty trials per round keeps the demo quick.

# %%
cfg = ProfilingConfig(grid_d=(0.2, 0.3, 0.4, 0.5), grid_f=(1.1, 1.2), trials_per_round=20)
result = offline_profile(trace_trial_runner([replay], cfg, seed=1), cfg)
print(result.session_csv())
print(f"chosen d={result.d:g}, f={result.f:g} after {result.cost} trials")
