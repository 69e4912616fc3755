# %% [markdown]
# # Loss kernels
# Balanced posterior, balanced softmax cross-entropy, self-distillation and
# the BIB / MBIB compositions on a tiny hand-made batch.

# %%
import numpy as np

from mbib.losses import (BibLossConfig, MbibConfig, RebalanceParams, balanced_posterior, bib_loss,
                         bsc_loss, mbib_loss, vsd_loss)
from mbib.metrics import finite_difference_gradient

counts = np.array([500.0, 60.0, 7.0])        # head, medium, tail
logits = np.array([[0.0, 0.0, 0.0],
                   [2.0, 1.0, 0.5]])
labels = np.array([2, 0])

# %% [markdown]
# Equal raw logits become a posterior proportional to the class counts once
# the log-count shift is applied; inference keeps the raw logits.

# %%
print(balanced_posterior(logits, counts))

# %%
rb = RebalanceParams(m=0.1, gamma=0.5)
print("weights", rb.weights(counts), "sum", rb.weights(counts).sum())
print("temperatures", rb.temperatures(counts))
bsc = bsc_loss(logits, labels, rb, counts)
print("bsc", bsc.value)
print(bsc.grads[0])

# %% [markdown]
# The analytic gradient agrees with central differences.

# %%
num = finite_difference_gradient(lambda x: bsc_loss(x, labels, rb, counts).value, logits)
print(np.abs(num - bsc.grads[0]).max())

# %% [markdown]
# Self-distillation: the teacher is detached, so its gradient is zero.

# %%
student = logits + np.array([[0.3, -0.2, 0.1], [0.0, 0.5, -0.5]])
vsd = vsd_loss(logits, student, rb, counts)
print("vsd", vsd.value, "teacher grad", vsd.grads[0].any())

cfg = BibLossConfig(beta=5.0, rebalance=rb)
print("bib", bib_loss(logits, student, labels, counts, cfg).value)

# %% [markdown]
# MBIB with three taps; ``a = b = 0`` falls back to plain BIB on the last tap.

# %%
rng = np.random.default_rng(0)
taps = [rng.normal(size=(2, 3)) for _ in range(3)]
z = rng.normal(size=(2, 3))
for topology in ("star", "sequential", "all_pairs"):
    res = mbib_loss(taps, z, labels, counts, MbibConfig(cfg, (0.1, 0.3), topology))
    print(topology, res.value)
deg = mbib_loss(taps, z, labels, counts, MbibConfig(cfg, (0.0, 0.0)))
print(deg.value == bib_loss(taps[2], z, labels, counts, cfg).value)
