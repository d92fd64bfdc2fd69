"""Smoke test for the Python extension.

Build and install first, e.g.

    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/podscale-*.whl

then run ``python python/smoke_test.py`` (or under pytest).
"""

import tempfile

import podscale_py as ps


def test_scenarios():
    names = ps.scenario_names()
    assert "load" in names and "scalability" in names
    assert "horizon" in ps.scenario_toml("load")


def test_reward_terms():
    # Inside the band: rho = 1 + 45/30; omega = 0.01 makes the shared term 1.
    rho, shared, total = ps.reward_terms(45.0, 12.0, [(0, 0.01)])
    assert abs(rho - 2.5) < 1e-12
    assert abs(shared - 1.0) < 1e-12
    assert abs(total - (0.5 * 2.5 + 1.0)) < 1e-12


def test_heuristic_evaluation_is_deterministic():
    a = ps.evaluate("load", seed=7, iterations=2)
    b = ps.evaluate("load", seed=7, iterations=2)
    assert a == b
    assert a["policy"] == "heuristic"
    assert len(a["services"]) == 3
    for s in a["services"]:
        assert 0.0 <= s["violation_pct"]["mean"] <= 100.0


def test_train_then_evaluate():
    with tempfile.TemporaryDirectory() as d:
        manifest = ps.train_models(d, seed=1, policy="discrete", episodes=2)
        assert manifest["policy"] == "discrete"
        assert len(manifest["summaries"]) == 2
        report = ps.evaluate("idle", seed=3, iterations=1, models_dir=d)
        assert report["policy"] == "discrete"


def test_bad_input_raises_value_error():
    for call in (
        lambda: ps.scenario_toml("no-such-scenario"),
        lambda: ps.default_config("magic"),
        lambda: ps.evaluate("load", seed=0, policy="continuous"),
    ):
        try:
            call()
        except ValueError:
            continue
        raise AssertionError("expected ValueError")


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"ok {name}")
