"""Smoke test for the extension module.

Build and install with `maturin develop -m crates/python/Cargo.toml`, or point
HYPOPARAM_LIB at a built libhypoparam_py.so.
"""

import importlib.machinery
import importlib.util
import math
import os
import sys
import tempfile


def load():
    path = os.environ.get("HYPOPARAM_LIB")
    if not path:
        import hypoparam

        return hypoparam
    loader = importlib.machinery.ExtensionFileLoader("hypoparam", path)
    spec = importlib.util.spec_from_loader("hypoparam", loader)
    module = importlib.util.module_from_spec(spec)
    loader.exec_module(module)
    sys.modules["hypoparam"] = module
    return module


def main():
    hp = load()

    kol = hp.Coefficients.kolmogorov(1.0)
    assert kol.dim == 1
    assert abs(hp.kolmogorov_density(1.0, 1.0, [0.0, 0.0], [0.0, 0.0]) - math.sqrt(3) / math.pi) < 1e-14
    cov = hp.kolmogorov_covariance(1.0, 1.0)
    assert abs(cov[0][0] - 1.0) < 1e-15 and abs(cov[1][1] - 1.0 / 3.0) < 1e-15

    frame = hp.FrozenFrame(kol, 0.0, [0.3, -0.2], 1.0)
    fc = frame.covariance(0.0, 1.0)
    assert all(abs(a - b) < 1e-9 for r, s in zip(fc, cov) for a, b in zip(r, s))
    q = frame.density(0.0, [0.0, 0.0], 1.0, [0.0, 0.0])
    assert abs(q - math.sqrt(3) / math.pi) < 1e-6
    dx2 = frame.derivative(0.0, [0.1, 0.2], 0.5, [0.3, -0.1], (0, 1, 0))[0]
    dy2 = frame.grad_y(0.0, [0.1, 0.2], 0.5, [0.3, -0.1])[1]
    assert abs(dx2 + dy2) < 1e-12 * max(1.0, abs(dx2))

    holder = hp.Coefficients.preset("holder", beta=0.8)
    report = holder.check_assumptions(count=200)
    assert report["all_pass"], report

    end = hp.euler_terminal(holder, [0.0, 0.0], 0.0, 1.0, 64, 7)
    assert end == hp.euler_terminal(holder, [0.0, 0.0], 0.0, 1.0, 64, 7)

    rows = hp.dual_refinement(hp.Coefficients.lipschitz(), [0.0, 0.0], levels=3, n_paths=200)
    assert len(rows) == 3 and rows[0]["mean_sq_sup_dist"] > rows[-1]["mean_sq_sup_dist"]

    sol = hp.picard_solve(holder, 0.05, nodes=9, half_width=3.0)
    assert sol.report["converged"]
    last = len(sol.times) - 1
    assert all(sol.value(last, i, j) == 0.0 for i in range(9) for j in range(9))
    assert sol.diagnostics()["sup_d1u"] > 0.0
    assert sol.csv().startswith("t,")

    cen = hp.experiment("centering")
    assert cen["pass"], cen["checks"]

    with tempfile.TemporaryDirectory() as out:
        assert hp.run_cli(["centering", "--out", out]) == 0
        assert os.path.exists(os.path.join(out, "centering.summary.json"))
    assert hp.run_cli(["nope"]) == 2

    print("smoke test ok")


if __name__ == "__main__":
    main()
