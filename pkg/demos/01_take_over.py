# %% [markdown]
# # When does the filter stop trusting LiDAR?
#
# A fusion filter that sees GPS, IMU and a LiDAR locator should shrug off a
# spoofed GPS fix: the LiDAR keeps pulling the estimate back. This walk-through
# shows that it does on a clean drive, and that it stops doing so once the
# LiDAR locator goes through a stretch of low confidence.

# %%
import numpy as np

from msfspoof import config as C
from msfspoof.analysis import fit_exponential
from msfspoof.attack import exhaustive_window_search
from msfspoof.experiments import unconfident_trace
from msfspoof.replay import Replay
from msfspoof.trace import NoiseModel, generate_synthetic_trace

kf = C.kf_config()

# %% [markdown]
# ## A clean, confident drive
#
# Sixty seconds straight down a lane at 45 mph with perfect sensors. The
# attacker searches, epoch by epoch, for the spoofed offset that drags the
# estimate furthest sideways.

# %%
clean = Replay(generate_synthetic_trace(60.0, C.scenario(), NoiseModel()), kf)
devs, deltas = exhaustive_window_search(clean, 20.0, 10)
print("clean drive, best lateral deviation per epoch (m):")
print(np.round(devs, 4))
print("fitted growth base:", fit_exponential(devs).a)

# %% [markdown]
# The deviation never gets near a lane line (0.295 m away). LiDAR wins every
# argument.
#
# ## The same search inside an unconfident period
#
# The campaign trace inflates the LiDAR locator's reported variance a
# hundredfold for 12 s out of every minute and adds a slowly wandering bias.
# Start the search just after one of those periods begins.

# %%
shaky = Replay(unconfident_trace(), kf)
devs, deltas, log = exhaustive_window_search(shaky, 15.0, 10, return_log=True)
print("unconfident period, best lateral deviation per epoch (m):")
print(np.round(devs, 3))
print("chosen spoof offsets (m):", np.round(deltas, 2))
print("fitted growth base:", round(fit_exponential(devs).a, 3))
print("LiDAR variance seen by the filter:", np.round(log.r_lidar, 3))

# %% [markdown]
# Now the deviation grows geometrically. Once the spoofed GPS has moved the
# estimate, the honest LiDAR fixes look like outliers to the chi-squared gate
# and get thrown away, so GPS alone steers the filter. That is the take-over.
