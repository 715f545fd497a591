"""Grid checks of the curvature hypothesis for the power family.

A correctly declared constant passes; inflating it by 25% is caught.
"""
from slmc.klcheck import KLParams, check_hkl, make_grid
from slmc.potential import power_potential

grid = make_grid(2, 500, seed=0)
for p in (0.75, 1.0):
    c = 2 * p * (2 * p - 1)
    for scale in (1.0, 1.25):
        rep = check_hkl(power_potential(p, 2), KLParams(c * scale, (1 - p) / p, 2 * p), grid,
                        1e-8, relative=True)
        print(f"p={p:.2f} c x {scale:4.2f}: passed={rep.passed} worst margin={rep.worst_margin:+.3e}")
