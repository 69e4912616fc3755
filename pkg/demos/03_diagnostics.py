# %% [markdown]
# # Diagnostics
# Mean positive posterior, the intra/inter-class distance ratio and plug-in
# mutual information along a processing chain.

# %%
import numpy as np

from mbib.experiment import ExperimentConfig, run
from mbib.metrics import plugin_mutual_information, quantize

rep = run(ExperimentConfig().replace(train={"epochs": 20, "milestones": (15,)}))
print("mean positive posterior per class:", np.round(rep.mean_positive_posterior, 3))
print("rho on v:", rep.representation_v.rho, "rho on z:", rep.representation_z.rho)

# %% [markdown]
# Every deterministic post-processing step can only lose information about
# the label.  Quantising the first z coordinate and then merging bins shows
# the plug-in estimate shrinking.

# %%
from mbib.experiment import make_data
from mbib.model import forward

_, test = make_data(rep.config)
z = forward(rep.net, test.features).z[:, 0]
fine = quantize(z, np.quantile(z, np.linspace(0, 1, 17)[1:-1]))
coarse = fine // 4
binary = coarse // 2
for name, sym in (("16 bins", fine), ("4 bins", coarse), ("2 bins", binary)):
    print(name, plugin_mutual_information(sym, test.labels))
