# %% [markdown]
# # Ablations
# Beta sweep, an (a, b) grid, tap-count and topology sweeps, and a method
# comparison.  Two seeds and 30 epochs keep this quick; the CLI runs the same
# thing from a config file, e.g.
#
#     mbib sweep configs/default.json --axis beta=0,1,2,3,4,5 --seeds 0,1,2,3,4 --out runs/beta

# %%
from mbib.experiment import ExperimentConfig, compare, sweep

cfg = ExperimentConfig().replace(train={"epochs": 30, "milestones": (24, 27)})
seeds = [0, 1]

for axis, points in (("beta", [0.0, 1.0, 5.0]),
                     ("ab_grid", [(a, b) for a in (0.0, 0.1, 0.3) for b in (0.0, 0.3)]),
                     ("taps", [2, 3, 4]),
                     ("topology", ["star", "sequential", "all_pairs"])):
    print(f"--- {axis}")
    for row in sweep(cfg, axis, points, seeds):
        if row["seed"] == "mean":
            print(f"{row['point']:14s} acc {row['acc_all']:.3f} few {row['acc_few']:.3f} rho_z {row['rho_z']:.3f}")

# %%
table = compare(["ce", "bsce", "bib", "mbib"], cfg, seeds)
for method, stats in table.items():
    print(f"{method:5s} {stats['acc_all_mean']:.3f} +- {stats['acc_all_sd']:.3f}  rho {stats['rho_primary_mean']:.3f}")
