"""Quick end-to-end check of the Python bindings on the two worked examples."""

import math

import pyupkeep

EXAMPLE_ONE = [("L", 3.0, 3.0, 1.0), ("M", 4.0, 2.0, 1.0), ("H", 10.0, 1.25, 1.0)]
EXAMPLE_TWO = [("H", 5.0, 1.0, 1 / 3), ("M", 1.0, 1.0, 1 / 3), ("L", 0.1, 1.0, 1 / 3)]


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} != {b}"


def main():
    fb = pyupkeep.first_best(EXAMPLE_ONE, 5.5)
    close(fb["y"], 2.7, 1e-6)
    close(fb["welfare"], 2.15, 1e-6)

    part = pyupkeep.participation(EXAMPLE_ONE, 5.5)
    close(part["y"], 45 / 14, 1e-6)
    close(part["uptime"], 2 / 7, 1e-6)
    assert part["classes"][:2] == ["BOUND", "BOUND"], part["classes"]
    assert part["y"] >= fb["y"]

    ic = pyupkeep.screening(EXAMPLE_TWO, 1.0)
    close(ic["uptime"], 0.3, 1e-3)
    close(ic["welfare"], 0.8 / 3, 1e-4)
    assert ic["classes"] == ["TIER2", "TIER1", "OUT"], ic["classes"]
    assert pyupkeep.infeasible(EXAMPLE_TWO, 1.0, ic["uptime"], ic["usage"], ic["contribution"]) == []
    assert "balance" in pyupkeep.infeasible(EXAMPLE_TWO, 1.0, 0.5, [0.5] * 3, [0.0] * 3)
    close(pyupkeep.oracle_welfare(EXAMPLE_TWO, 1.0, "ic", q_points=101), ic["welfare"], 1e-4)

    sim = pyupkeep.simulate_mechanism(
        EXAMPLE_ONE, 5.5, part["uptime"], part["usage"], part["contribution"], horizon=2000.0, seed=1
    )
    assert sim["admissible"] and sim["passes"], sim
    q, ci = sim["uptime"]
    assert math.isfinite(ci) and abs(q - part["uptime"]) <= 4 * ci

    try:
        pyupkeep.first_best([("L", 1.0, 1.0, 0.0)], 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("zero mass accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
