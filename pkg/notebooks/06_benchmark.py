# %% [markdown]
# # Naive versus separable max pooling
#
# The naive filter compares all `(2d+1)^3` offsets; the separable one makes
# three 1D passes whose cost is independent of `d`.  At d=1 the 27 vectorised
# numpy comparisons are still competitive; the gap opens from d=2 on.

# %%
from contourreg.bench import benchmark_maxpool, rows_to_csv

rows = benchmark_maxpool((64, 64, 64), (0, 1, 2, 3), reps=5)
print(rows_to_csv(rows))
by_key = {(r["impl"], r["d"]): r["median_ns"] for r in rows}
for d in (1, 2, 3):
    print(f"d={d}: naive / separable time = {by_key['naive', d] / by_key['separable', d]:.1f}")
