"""Smoke test for the attn_margin_py extension.

Build it first, either with `maturin develop -m crates/python/Cargo.toml` or
`cargo build --release -p attn-margin-python --features extension-module`
followed by copying target/release/libattn_margin_py.so to attn_margin_py.so
somewhere on PYTHONPATH. With no importable module the script does the copy
itself from the default target directory.
"""

import json
import math
import os
import shutil
import sys
import tempfile


def import_module():
    try:
        import attn_margin_py

        return attn_margin_py
    except ImportError:
        pass
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    built = os.path.join(root, "target", "release", "libattn_margin_py.so")
    if not os.path.exists(built):
        sys.exit("attn_margin_py not importable and %s missing; build the extension first" % built)
    stage = tempfile.mkdtemp(prefix="attn_margin_py_")
    shutil.copy(built, os.path.join(stage, "attn_margin_py.so"))
    sys.path.insert(0, stage)
    import attn_margin_py

    return attn_margin_py


def close(a, b, tol):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    am = import_module()

    # ATT-SVM on a single input: tokens (0,0), (1,0), (-0.1,1), select the last.
    keys = [[[0.0, 0.0], [1.0, 0.0], [-0.1, 1.0]]]
    sol = am.att_svm(keys, [2])
    assert sol.is_optimal(), sol
    assert close(sol.solution, [-0.09901, 0.99010], 1e-4), sol.solution
    assert sol.active == [(0, 0)], sol.active
    oracle = am.qp_oracle(keys, [2])
    assert close(sol.solution, oracle.solution, 1e-9)
    assert json.loads(sol.to_json())["status"] == "optimal"

    # Dataset round trip and model evaluation.
    ds, v = am.builtin("fig1a")
    again = am.Dataset.from_json(ds.to_json())
    assert len(again) == len(ds) and again.d == ds.d == 3
    p = [0.5, -0.2, 0.0]
    l0 = am.loss(ds, p, v)
    g = am.grad_p(ds, p, v)
    h = 1e-6
    for k in range(3):
        q = list(p)
        q[k] += h
        fd = (am.loss(ds, q, v) - l0) / h
        assert abs(fd - g[k]) <= 1e-4 * max(1.0, abs(g[k])), (k, fd, g[k])

    # Normalized GD saturates attention on the reference instance.
    run = am.gradient_descent(ds, v, [0.0, 0.0, 0.0], 0.1, 500, normalized=True)
    assert len(run["norm"]) == 501
    assert run["norm"][-1] > run["norm"][0]
    avg_max, _ = am.saturation(ds, run["final"])
    assert avg_max > 0.9, avg_max

    # Random generator is deterministic and lands on the sphere.
    a, va = am.random_dataset(3, 4, 5, 7)
    b, vb = am.random_dataset(3, 4, 5, 7)
    assert a.to_json() == b.to_json() and va == vb
    assert all(abs(math.sqrt(sum(x * x for x in row)) - 1.0) < 1e-12 for m in a.keys() for row in m)

    # Errors surface as ValueError.
    try:
        am.att_svm(keys, [5])
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-range selection accepted")

    # One scenario end to end and one check.
    with tempfile.TemporaryDirectory() as out:
        summary = json.loads(am.run_scenario("lemma2_equivalence", out))
        assert summary["passed"], summary
        assert os.path.exists(os.path.join(out, "summary.json"))
    (cid, name, passed, detail), = am.run_checks([1])
    assert cid == 1 and passed, detail

    assert "fig4_census" in am.scenarios()
    print("python smoke test passed")


if __name__ == "__main__":
    main()
