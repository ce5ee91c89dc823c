"""Smoke test for the leadfield_py extension module.

Builds the cdylib if needed, imports it from a scratch directory, and runs a
few independent spot checks with hand-computed expectations.

Usage: python3 python/smoke_test.py
"""

import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def locate_or_build():
    names = ["libleadfield_py.so", "leadfield_py.dll", "libleadfield_py.dylib"]
    for profile in ("release", "debug"):
        for name in names:
            cand = ROOT / "target" / profile / name
            if cand.exists():
                return cand
    subprocess.run(
        ["cargo", "build", "-p", "leadfield-py", "--release"], cwd=ROOT, check=True
    )
    return ROOT / "target" / "release" / names[0]


def main():
    lib = locate_or_build()
    scratch = Path(tempfile.mkdtemp(prefix="leadfield_py_"))
    shutil.copy(lib, scratch / "leadfield_py.so")
    sys.path.insert(0, str(scratch))
    import leadfield_py as lf

    # Averaged collision kernel, constant kernels, hand value:
    # (1-p)^2*2 + p(1-p)*1*1 + p*3 = 0.5 + 0.25 + 1.5 at p = 0.5.
    k = lf.limit_kernel([0.5], [0.0], [3.0], [1.0], 0.5, "constant:2.0", ["constant:1.0"])
    assert abs(k[0] - 2.25) < 1e-15, k

    # Degenerate probabilities collapse to the surviving term exactly.
    assert lf.limit_kernel([0.5], [0.0], [3.0], [1.0], 0.0, "constant:2.0", ["constant:1.0"]) == [2.0]
    assert lf.limit_kernel([0.5], [0.0], [3.0], [1.0], 1.0, "constant:2.0", ["constant:1.0"]) == [3.0]

    # Expectation over the two collision bits equals x + alpha * limit kernel.
    x, y, u, us, p, a = [0.4, -0.2], [1.0, 0.3], [0.7, 0.1], [-0.5, 0.2], 0.3, 0.25
    kern = ("attraction_repulsion:0.9", ["constant:0.8"])
    mean = [0.0, 0.0]
    for ti in (False, True):
        for tj in (False, True):
            w = (p if ti else 1 - p) * (p if tj else 1 - p)
            post = lf.binary_interaction(x, y, ti, tj, u, us, a, *kern)
            mean = [m + w * v for m, v in zip(mean, post)]
    limit = lf.limit_kernel(x, y, u, us, p, *kern)
    for c in range(2):
        assert abs(mean[c] - (x[c] + a * limit[c])) < 1e-14

    # Zero kernels and zero control freeze the crowd.
    run = lf.simulate(
        [[1.0, 1.0]],
        [[0.0, 0.5], [0.5, 0.0]],
        [[[0.0, 0.0]]],
        "zero",
        ["zero"],
        0.5,
        0.1,
    )
    assert run["followers"][0] == run["followers"][-1]
    assert len(run["times"]) == 6

    # Two point masses one unit apart.
    assert abs(lf.wasserstein1([[0.0]], [[1.0]]) - 1.0) < 1e-15

    # Cloud sampling is deterministic in the seed.
    a1 = lf.sample_cloud(7, [0.0, 0.0], 1.0, 50)
    a2 = lf.sample_cloud(7, [0.0, 0.0], 1.0, 50)
    assert a1 == a2 and len(a1) == 50

    # The crowd solver reproduces the particle run on the same atoms.
    atoms = lf.sample_cloud(3, [0.0], 1.0, 30)
    mf = lf.solve_meanfield(atoms, [[1.5]], [[[0.3]]], "attraction_repulsion", ["constant"], 1.0, 0.05)
    sim = lf.simulate([[1.5]], atoms, [[[0.3]]], "attraction_repulsion", ["constant"], 1.0, 0.05)
    assert mf["atoms"][-1] == sim["followers"][-1]
    assert abs(sum(mf["weights"]) - 1.0) < 1e-12

    # A short tracking solve reaches its stated optimality tolerance.
    res = lf.optimize_control(
        [[0.0]],
        lf.sample_cloud(9, [0.8], 0.3, 5),
        [0.0],
        "zero",
        ["constant"],
        0.5,
        0.05,
        control_weight=0.5,
        pieces=2,
        u_max=2.0,
        tol=1e-6,
        max_iter=500,
    )
    assert res["converged"] and res["optimality_residual"] <= 1e-6

    # Feedback spends control and reports a positive realized cost.
    fb = lf.feedback_run(
        lf.sample_cloud(5, [-0.5], 0.4, 60),
        [0.6],
        0.05,
        0.95,
        0.2,
        0.5,
        5.0,
        "zero",
        ["constant"],
        1.0,
        77,
    )
    assert fb["realized_cost"] > 0.0 and fb["control_energy"] > 0.0
    assert len(fb["times"]) == len(fb["state_costs"])

    # Catalog kernels satisfy their own growth certificates.
    cert = lf.certify_kernel("attraction_repulsion:1.0", 2)
    assert cert["pass"] and cert["max_ratio"] <= cert["constant"]

    print("smoke test passed")


if __name__ == "__main__":
    main()
