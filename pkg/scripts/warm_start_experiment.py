"""Compare warm and cold starts of the second bound-contraction round.

Runs two rounds on the reference case with fixed penalties, once with warm
starting and once without, and prints the inner iteration count per round.

    python scripts/warm_start_experiment.py [rho gamma tau phi]
"""

import dataclasses
import sys
import time

from jointmarket.coordinator import run
from jointmarket.scenario import load_scenario


def main(argv):
    pen = dict(zip(("rho", "gamma", "tau", "phi"), map(float, argv))) if argv else \
        dict(rho=0.5, gamma=0.0625, tau=0.5, phi=0.004)
    cfg = load_scenario("ref")
    for warm in (True, False):
        algo = dataclasses.replace(cfg.algo, adaptive_penalty=False, warm_start=warm, max_rounds=2, **pen)
        started = time.perf_counter()
        out = run(cfg.replace(algo=algo))
        iters = [r.iterations for r in out.rounds]
        print(f"warm_start={warm!s:<5} welfare {out.welfare:.6f}  iterations per round {iters}  "
              f"{time.perf_counter() - started:.0f} s", flush=True)


if __name__ == "__main__":
    main(sys.argv[1:])
