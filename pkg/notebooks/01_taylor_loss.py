"""
Truncated BCE on wild samples
=============================

The negative branch of BCE is -log(1 - f).  Cutting its series after t terms
caps both the loss and the per-sample gradient weight.
"""

# %%
import numpy as np

from openpu.evaluate import gradient_weight_sweep
from openpu.losses import bce_loss, harmonic_number, tbce_loss

f = np.linspace(0.0, 0.999, 1000)
for t in (1, 2, 4, 6):
    loss = tbce_loss(f, 0, t)[0]
    print(f"t={t}: max loss {loss.max():.4f}  cap N_t={harmonic_number(t):.4f}")

# %% the BCE weight explodes near f=1, the truncated one stays below t
for row in gradient_weight_sweep([2, 6], [0.5, 0.9, 0.99]):
    print(row)

# %% ratio of weights is 1 - f^t (f=0 is skipped: BCE clamps it to 1e-7)
g = f[1:]
print(np.max(np.abs(tbce_loss(g, 0, 2)[1] / bce_loss(g, 0)[1] - (1 - g ** 2))))
