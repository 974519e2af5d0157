# %% [markdown]
# # Segmentation metrics
#
# Per class: Dice, Hausdorff distance and average Hausdorff distance in mm,
# and the number of 26-connected components.

# %%
import numpy as np

from contourreg import LabelVolume, avg_hausdorff, connected_components, dsc, evaluate, hausdorff

a = np.zeros((1, 1, 6), bool)
b = np.zeros_like(a)
a[0, 0, 0] = b[0, 0, 4] = True
print("two points 4 voxels apart, 0.75 mm along x:", hausdorff(a, b, spacing=(0.75, 1.0, 1.0)), "mm")

# %% [markdown]
# A ball and the same ball with two stray voxels: Dice barely moves, the
# Hausdorff distance jumps and the component count shows the strays.

# %%
zz, yy, xx = np.indices((24, 24, 24))
ball = (zz - 12) ** 2 + (yy - 12) ** 2 + (xx - 12) ** 2 <= 36
noisy = ball.copy()
noisy[2, 2, 2] = noisy[21, 3, 20] = True
print(f"DSC {dsc(noisy, ball):.4f}  HD {hausdorff(noisy, ball):.2f}  AVD {avg_hausdorff(noisy, ball):.3f}")
print("components:", connected_components(noisy)[0])

# %%
gt = np.zeros((24, 24, 24), np.uint8)
gt[ball] = 1
gt[(zz - 12) ** 2 + (yy - 12) ** 2 + (xx - 15) ** 2 <= 4] = 2
pred = gt.copy()
pred[noisy & ~ball] = 2
report = evaluate(LabelVolume.from_array(pred), LabelVolume.from_array(gt), classes=[1, 2, 3])
print(report.to_text())
