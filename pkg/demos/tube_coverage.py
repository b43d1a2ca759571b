"""Stage-1 ambiguity tube for one charging station and its held-out coverage."""
from wdrmpc.datasets import case38, disturbances_for
from wdrmpc.tube import (ClosedLoopSystem, error_support, propagate_error_samples,
                         stage1_tube_bounds)

net = case38()
system = ClosedLoopSystem.integrator(1, rho=0.5)
train = disturbances_for(net, 500, seed=1)
test = disturbances_for(net, 5000, seed=2)

lo, hi = error_support(system, train.support_lo, train.support_hi)
e_train = propagate_error_samples(system, train)
e_test = propagate_error_samples(system, test)
for mu in (1.0, 10.0, 1e3):
    tube = stage1_tube_bounds(e_train, lo, hi, epsilon=1e-3, mu=mu, beta=0.95)
    print(f"mu {mu:7.1f}  radius {tube.radius():.4f}  "
          f"coverage (12 slots) {tube.contains(e_test[:, :13]).mean():.3f}")
