"""Write sample CLI inputs next to this script.

Produces ``problem.json`` (a small random teaming instance), ``grid.json``
(two bench cases) and ``costs.csv`` (a synthetic matrix for those cases).
"""

import json
from pathlib import Path

from ctas.model import problem_to_dict
from ctas.scenario import (
    PANDEMIC_SPECIES,
    BenchCase,
    dump_bench_cases,
    random_teaming_problem,
    synthetic_cost_matrix,
    write_cost_csv,
)

HERE = Path(__file__).resolve().parent


def main():
    problem = random_teaming_problem(3, 4, seed=2024, n_samples=100)
    (HERE / "problem.json").write_text(json.dumps(problem_to_dict(problem), indent=2))
    dump_bench_cases([BenchCase("t8-a14-g1", 8, 14, 1.0, 0), BenchCase("t16-a21-g1", 16, 21, 1.0, 0)],
                     HERE / "grid.json")
    write_cost_csv(synthetic_cost_matrix(list(PANDEMIC_SPECIES), [f"m{i + 1}" for i in range(16)], 0),
                   HERE / "costs.csv")
    print("wrote problem.json, grid.json, costs.csv")


if __name__ == "__main__":
    main()
