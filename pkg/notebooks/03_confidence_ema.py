"""
Confidence weights
==================

Each network's wild-sample weights follow an EMA of the other network's
unknown-probability.  Continuous updates track p; discrete ones track 1[p >= tau].
"""

# %%
import numpy as np

from openpu.confidence import CONTINUOUS, DISCRETE, ConfidenceState

s = ConfidenceState(3, 1, alpha=0.9, mode_c=CONTINUOUS, mode_e=DISCRETE)
p = np.array([[0.2], [0.97], [0.6]])
for epoch in range(20):
    s.update(np.arange(3), p_c=p, p_e=p)
print("w_c", s.w_c.ravel().round(4))
print("w_e", s.w_e.ravel().round(4))

# %% closed form after k continuous steps from 1
k = 20
print(0.9 ** k * (1 - p.ravel()) + p.ravel())
