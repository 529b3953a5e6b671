"""Smoke test for the mimo_sim_py extension module.

Build first with `cargo build --release -p mimo-sim-py` (or install a wheel
built with maturin). Set MIMO_SIM_PY_LIB to point at the shared library if
it is not under target/.
"""

import importlib.util
import json
import math
import os
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    try:
        import mimo_sim_py  # installed wheel

        return mimo_sim_py
    except ImportError:
        pass
    candidates = [os.environ.get("MIMO_SIM_PY_LIB")] + [
        str(ROOT / "target" / profile / name)
        for profile in ("release", "debug")
        for name in ("libmimo_sim_py.so", "libmimo_sim_py.dylib", "mimo_sim_py.dll")
    ]
    lib = next((c for c in candidates if c and os.path.exists(c)), None)
    if lib is None:
        sys.exit("mimo_sim_py not found; run `cargo build --release -p mimo-sim-py` first")
    suffix = ".pyd" if lib.endswith(".dll") else ".so"
    tmp = pathlib.Path(tempfile.mkdtemp()) / ("mimo_sim_py" + suffix)
    shutil.copy(lib, tmp)
    spec = importlib.util.spec_from_file_location("mimo_sim_py", tmp)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    m = load_module()

    delta, t, _ = m.scalar_fixed_point([1.0], 1.0, 1)
    golden = (math.sqrt(5) - 1) / 2
    assert abs(delta[0] - golden) < 1e-10 and abs(t - golden) < 1e-10

    params = m.SystemParams(antennas=32, users_per_cell=3, beta=3)
    assert params.pilot_length == 9
    sc = m.Scenario.generate(params, 7)
    assert (sc.cells, sc.users_per_cell, sc.pilot_length) == (19, 3, 9)
    assert len(sc.gains()) == 19 and len(sc.pilots()[0]) == 3
    assert json.loads(sc.allocation_json())["pilot_length"] == 9
    assert len(json.loads(sc.geometry_json())["bs_positions"]) == 19

    reports = sc.evaluate(["mf", "m-mmse"], realizations=50, seed=1)
    mf, mmse = (r.mean_sum_se() for r in reports)
    assert 0 < mf < mmse, (mf, mmse)
    de = sc.large_scale_sinr().mean_sum_se()
    assert abs(de - mmse) / mmse < 0.2, (de, mmse)
    assert len(reports[1].user_se_quantiles()) == 3

    for bad in (lambda: m.SystemParams(beta=2), lambda: sc.evaluate(["zf"])):
        try:
            bad()
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")
    assert issubclass(m.NumericalError, ArithmeticError)

    with tempfile.TemporaryDirectory() as out:
        cfg = {"M": [20], "K": [2], "beta": [1, 3], "schemes": ["m-mmse", "m-mmse-de"], "n_drops": 2, "n_realizations": 20}
        m.validate_config(json.dumps(cfg))
        rows = m.run_experiment(json.dumps(cfg), out)
        assert rows == 2 * 2 * 2
        best = m.best_beta(os.path.join(out, "results.csv"))
        assert {b[0] for b in best} == {"m-mmse", "m-mmse-de"}

    checks = m.run_suite(seed=1, realizations=100)
    assert any(c[0] == "zf-nulling" and c[3] for c in checks)

    print(f"ok: MF {mf:.2f}, M-MMSE {mmse:.2f}, DE {de:.2f} bit/s/Hz per cell; {len(checks)} oracle checks run")


if __name__ == "__main__":
    main()
