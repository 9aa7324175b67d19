import dataclasses

import numpy as np
import pytest

from jointmarket.scenario import load_scenario, sub_scenario
from jointmarket.uncertainty import build_uncertainty

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def ref():
    return load_scenario("ref")


@pytest.fixture(scope="session")
def ref_unc(ref):
    return build_uncertainty(ref)


def tiny(ref, cgs=(0,), users=(0,), res=(0,), hours=(12,), **algo):
    """Slice of the reference case, optionally with algorithm overrides."""
    cfg = sub_scenario(ref, cgs=cgs, users=users, res=res, hours=hours)
    if algo:
        cfg = cfg.replace(algo=dataclasses.replace(cfg.algo, **algo))
    return cfg


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
