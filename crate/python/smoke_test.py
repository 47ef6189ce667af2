"""Smoke test for the Python bindings.

Build and install first:
    (cd crates/py && maturin build --release -o dist) && pip install crates/py/dist/*.whl
"""

import json
import math

import batchbound_py as bb


def check_geometry():
    h = bb.Subspace.from_basis([[1.0, 0.0, 0.0]])
    assert h.dim == 1 and h.ambient_dim == 3
    assert h.sector_contains(0.9, [1.0, 0.1, 0.0])
    assert not h.sector_contains(0.9, [0.5, 0.5, 0.5])
    a = bb.Subspace.random(6, 2, seed=1)
    assert bb.Subspace.from_json(a.to_json()).basis() == a.basis()
    assert abs(a.chordal_distance(a)) < 1e-12


def check_packing():
    p = bb.Packing.search(6, 1, 4, 0.9, seed=3)
    assert len(p) == 4
    verdict = p.verify(0.0)
    assert verdict["ok"], verdict
    idx = p.pigeonhole_select([m.basis()[0] for m in p.members()[:3]])
    assert idx == 3


def check_instance():
    inst = bb.HardInstance.sample("PE", 5, [3, 1], gamma=0.9, sign=-1, seed=2)
    assert inst.sign == -1.0 and len(inst.w) == 5
    rep = inst.verify_realizability(samples=500, seed=1)
    assert rep["pass"] and rep["max_residual"] <= 1e-9
    sol = inst.solve()
    assert sol["queries"] == 5
    assert max(abs(t + w) for t, w in zip(sol["theta"], inst.w)) <= 1e-9
    assert abs(inst.reward(inst.w) + 0.1) < 1e-12
    assert bb.HardInstance.from_json(inst.to_json()).w == inst.w


def check_games():
    cfg = {
        "d": 16, "gamma": 0.9, "K": 2, "n_per_round": [10, 10], "problem": "PE",
        "learner_kind": "coordinate", "adversary_mode": "multi_batch", "seed": 1,
    }
    out = bb.simulate(json.dumps(cfg))
    assert out["report"]["outcome"] == "indistinguishable"
    assert out["certificate"]["q_gap"] == 2.0
    assert len(out["transcript"].splitlines()) == 20

    grid = {
        "d": [4, 8], "K": [1, 2], "n_per_round": 3, "learners": ["random_unit"],
        "adversary_modes": ["multi_batch"], "gamma": 0.9, "problem": "PE", "seed": 5,
    }
    rows = bb.sweep(json.dumps(grid), jobs=2)
    assert len(rows) == 4

    b = bb.bounds(256, 1, math.sqrt(0.75))
    assert abs(b["W"] - math.exp(0.25)) <= 1e-12
    assert bb.multi_batch_schedule(256, 2) == [4, 2]
    assert bb.verify("geometry", [3], trials=200)["pass"]


if __name__ == "__main__":
    check_geometry()
    check_packing()
    check_instance()
    check_games()
    print("python smoke test: ok")
