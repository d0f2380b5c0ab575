"""How the test-loss upper bound moves with the distillation coefficient.

Sweeps the coefficient over a grid for the three worked weight scenarios
and prints the landscape: the bound decreases until the turning point,
then goes exactly flat. Run with:  python3 demos/bound_landscape.py
"""

import numpy as np

from cclab import ScenarioSpec, scenario_train_losses, scenario_weights
from cclab.bounds import theorem1_lower, theorem1_upper, turning_point

SCENARIOS = [
    ScenarioSpec(T=5, weight_rule="example1"),
    ScenarioSpec(T=5, weight_rule="example2", rho=0.95),
    ScenarioSpec(T=5, weight_rule="example3"),
]


def describe(spec: ScenarioSpec) -> None:
    weights = scenario_weights(spec)
    losses = scenario_train_losses(spec)
    lam_star = turning_point(weights)
    label = spec.weight_rule + (f" (rho={spec.rho})" if spec.weight_rule == "example2" else "")
    print(f"\n{label}: turning point lambda* = {lam_star:g}")
    print(f"{'lambda':>8}  {'upper':>10}  {'lower':>10}")
    for lam in np.geomspace(0.1, 4 * lam_star, 9):
        up = theorem1_upper(losses, weights, lam).value
        lo = theorem1_lower(losses, weights, lam).value
        marker = "  <- flat from lambda*" if lam >= lam_star else ""
        print(f"{lam:8.3f}  {up:10.4f}  {lo:10.4f}{marker}")
    at_star = theorem1_upper(losses, weights, lam_star).value
    far = theorem1_upper(losses, weights, 100 * lam_star).value
    print(f"bound at lambda* vs 100x lambda*: {at_star:.12f} vs {far:.12f}")


if __name__ == "__main__":
    for spec in SCENARIOS:
        describe(spec)
