"""Smoke test for the crowdlabel_py extension.

Build first:  pip install --no-build-isolation -e crates/py
Run:          python python/smoke_test.py
"""

import json
import os
import tempfile

import crowdlabel_py as cl


def check_money():
    a = cl.Money("10.00")
    b = cl.Money("2.69")
    assert str(a - b) == "7.31"
    assert (a + b).micros == 12_690_000
    assert cl.Money.from_micros(740_000) == cl.Money("0.74")
    try:
        cl.Money("ten")
    except ValueError:
        pass
    else:
        raise AssertionError("bad amount accepted")


def check_aggregation():
    post = cl.bayesian_update([0.5, 0.5], [[0.9, 0.1], [0.2, 0.8]], 0)
    assert abs(post[0] - 0.9 / 1.1) < 1e-9, post
    assert cl.majority_vote([2, 1, 2, 0]) == 2
    rows = [(f"s{i}", f"a{a}", i % 2) for i in range(20) for a in range(3)]
    out = cl.dawid_skene(rows, 2)
    assert set(out["beliefs"]) == {f"s{i}" for i in range(20)}
    for probs in out["beliefs"].values():
        assert abs(sum(probs) - 1.0) < 1e-9
    objective = out["objective"]
    assert all(b >= a - 1e-9 for a, b in zip(objective, objective[1:]))


def check_selection():
    picks = cl.coreset([("a", [10.0], 0.5), ("b", [11.0], 0.5)], [[0.0]], 1)
    assert picks == ["b"], picks
    mask = cl.gmm_clean_mask([0.1] * 20 + [3.0] * 5)
    assert mask[:20] == [True] * 20 and not any(mask[20:]), mask


def check_engine():
    sc = cl.Scenario(samples=200, seed=11)
    engine = sc.engine()
    assert engine.round == 0
    first = engine.step()
    assert first["status"] == "completed"
    outcomes = engine.run()
    assert outcomes[-1]["status"] == "terminated"
    history = engine.history()
    converged = [h["converged"] for h in history]
    assert converged == sorted(converged)
    budget, spent, remaining = engine.budget()
    assert spent + remaining == budget
    assert "Round" in engine.round_table()

    export = engine.export()
    lines = [json.loads(l) for l in export.splitlines()]
    assert len(lines) == 200
    assert [l["sample_id"] for l in lines] == sorted(l["sample_id"] for l in lines)
    assert engine.export() == export

    flagged = engine.flag_final_verification(count=3)
    assert len(flagged) == 3

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "snap.json")
        engine.save_snapshot(path)
        again = cl.Engine.from_snapshot(path)
        assert again.export() == engine.export()
        assert again.round == engine.round


if __name__ == "__main__":
    check_money()
    check_aggregation()
    check_selection()
    check_engine()
    print("smoke test passed")
