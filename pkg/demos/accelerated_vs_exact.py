"""Exact Wasserstein dual versus the accelerated bound.

First on a fixed max-affine loss, where both are plain numbers, then inside
the stage-2 scheduling LP, where the accelerated form keeps the constraint
count fixed whatever the number of RES samples.
"""
from wdrmpc.datasets import case3, res_samples_for
from wdrmpc.dro import MaxAffineLoss, accelerated, exact_dual, saa_value
from wdrmpc.scheduler import RiskWeights, build_stage2_problem
from wdrmpc.uncertainty import SampleSet, WassersteinBall, make_rng

rng = make_rng(3)
loss = MaxAffineLoss.from_arrays(rng.normal(size=(4, 2)), rng.normal(size=4))
pool = rng.uniform(-1, 1, (200, 2))
print("  N      SAA    exact    accel")
for n in (10, 50, 200):
    ball = WassersteinBall(SampleSet(pool[:n], -1, 1), 0.05)
    print(f"{n:3d}  {saa_value(loss, pool[:n]):7.4f}  {exact_dual(loss, ball)[0].objective:7.4f}"
          f"  {accelerated(loss, ball)[0].objective:7.4f}")

net = case3()
res = res_samples_for(net, 100, seed=4)
print("\n  N  constraints(exact)  constraints(accel)")
for n in (10, 30, 100):
    counts = [build_stage2_problem(net, None, res.head(n), RiskWeights(), 0, 12, method=m)
              .lp.constraint_count for m in ("exact", "accelerated")]
    print(f"{n:3d}  {counts[0]:18d}  {counts[1]:18d}")
