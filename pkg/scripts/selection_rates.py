"""Estimate edge-case keep rates per parameter position by Monte Carlo.

    python3 scripts/selection_rates.py --trials 10000
"""

import argparse

from edgefuzz.analyzer import ContextEdgeCase
from edgefuzz.catalog import ApiSignature
from edgefuzz.corpus import standardize
from edgefuzz.miner import CheckSite
from edgefuzz.mutator import SelectionPolicy, select_edge_cases
from edgefuzz.types import BaseType


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--trials", type=int, default=10_000)
    parser.add_argument("--params", type=int, default=6, help="tensor parameters in the probe API")
    args = parser.parse_args(argv)

    site = CheckSite("probe.cpp", 1, "TORCH_CHECK", "", "probe")
    single = standardize(ContextEdgeCase(site, (("x", BaseType.TENSOR),), "Tensor x is empty", "Other", ("x",)))
    pair = standardize(ContextEdgeCase(site, (("x", BaseType.TENSOR), ("y", BaseType.TENSOR)),
                                       "Tensor x and Tensor y differ in shape", "Other", ("x", "y")))
    api = ApiSignature.build("probe.many", [(f"t{k}", "Tensor") for k in range(1, args.params + 1)])
    default = SelectionPolicy()
    kept = {str(k): 0 for k in range(1, args.params + 1)} | {"compound": 0}
    for seed in range(args.trials):
        for task in select_edge_cases([single, pair], api, SelectionPolicy(rng_seed=seed)):
            key = "compound" if task.edge_case.kind == "compound" else str(task.instantiation.positions[0])
            kept[key] += 1
    print(f"{'position':>9}  {'target':>6}  {'observed':>8}")
    for key, count in kept.items():
        target = default.compound_rate if key == "compound" else default.rate_for(int(key))
        print(f"{key:>9}  {target:>6.3f}  {count / args.trials:>8.4f}")


if __name__ == "__main__":
    main()
