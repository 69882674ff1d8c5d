"""Compare a deterministic plan with a risk-aware plan on a small service case.

Run with ``python3 demos/risk_vs_deterministic.py``.  Each task needs three
units of two capabilities and every agent supplies one unit on average, so a
team that only meets the expected requirement succeeds about half the time
per capability.
"""

from ctas.distributions import Gaussian, PointMass
from ctas.model import And, Atom, CapabilityType, Problem, Species, Task, build_graph
from ctas.pipeline import plan
from ctas.scenario import success_probability, synthetic_cost_matrix


def build(C_h: float = 5.0) -> Problem:
    caps = [CapabilityType("deliver"), CapabilityType("spray")]
    species = [Species("van", 4, {"deliver": Gaussian(1.0, 0.1)}),
               Species("sprayer", 4, {"spray": Gaussian(1.0, 0.1)})]
    ids = [f"m{i + 1}" for i in range(4)]
    tasks = [Task(t, And(Atom("deliver", PointMass(3.0)), Atom("spray", PointMass(3.0)))) for t in ids]
    costs = synthetic_cost_matrix(["van", "sprayer"], ids, seed=5)
    return Problem(species, tasks, caps, build_graph(species, tasks, costs),
                   C_e=1.0, C_q=0.1, C_h=C_h, n_samples=200, seed=11)


def main():
    problem = build()
    print(f"{'mode':<14}{'status':<10}{'energy':>10}{'P(success)':>12}  teams")
    for mode in ("deterministic", "lshaped"):
        p = plan(problem, mode)
        prob = success_probability(p, problem).mean
        teams = ", ".join(f"{t}={sum(team.values())}" for t, team in p.teams.items())
        print(f"{mode:<14}{p.status:<10}{p.rounded_energy:>10.2f}{prob:>12.3f}  {teams}")


if __name__ == "__main__":
    main()
