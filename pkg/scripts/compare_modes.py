"""Clear a scenario in both modes and print welfare, gap, carbon price and timing.

    python scripts/compare_modes.py [scenario.toml | ref]
"""

import sys
import time

from jointmarket.coordinator import run
from jointmarket.scenario import load_scenario
from jointmarket.validation import solve_centralized, welfare_gap


def main(name):
    cfg = load_scenario(name)
    started = time.perf_counter()
    dec = run(cfg)
    elapsed = time.perf_counter() - started
    cen = solve_centralized(cfg)
    print(f"decentralized {dec.welfare:.6f} $ (converged {dec.converged}, "
          f"{sum(r.iterations for r in dec.rounds)} iterations in {len(dec.rounds)} rounds, {elapsed:.0f} s)")
    print(f"centralized   {cen.welfare:.6f} $")
    print(f"relative gap  {welfare_gap(dec, cen):.2e}")
    print(f"carbon price  {dec.duals.theta:.7f} $/kg")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "ref")
