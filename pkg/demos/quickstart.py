"""Run the two-stage scheduler on the bundled 38-bus feeder and test it out of sample."""
from wdrmpc.harness import ExperimentSpec, evaluate_run, prepare, run_method

spec = ExperimentSpec(network="case38", rounds=5, tests_per_round=500)
data = prepare(spec)

for method in ("WdrMpc", "SaaMpc", "NormalMpc"):
    run = run_method(spec, data, method)
    rep = evaluate_run(spec, data, run)
    cost = run.schedule.costs["total"]
    print(f"{method:10s} tube radius {run.tube.radius():.4f}  cost {cost:9.2f}  "
          f"reliability {rep.mean:.3f}")
