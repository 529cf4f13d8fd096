import math
import os
import subprocess

import pytest

import mmd


def test_cox_loss_matches_hand_value():
    f, t, e = [0.5, -0.2, 0.3], [2.0, 5.0, 9.0], [1, 1, 0]
    expect = -(0.5 - math.log(math.exp(0.5) + math.exp(-0.2) + math.exp(0.3)))
    expect += -(-0.2 - math.log(math.exp(-0.2) + math.exp(0.3)))
    assert mmd.cox_loss(f, t, e) == pytest.approx(expect, abs=1e-14)
    g = mmd.cox_loss_grad(f, t, e)
    assert len(g) == 3
    assert sum(g) == pytest.approx(0.0, abs=1e-12)


def test_cindex_and_errors():
    t, e = [1, 2, 3, 4], [1, 1, 1, 1]
    assert mmd.concordance_index([4, 3, 2, 1], t, e) == 1.0
    assert mmd.concordance_index([5, 5, 5, 5], t, e) == 0.5
    with pytest.raises(mmd.NumericalError):
        mmd.concordance_index([1, 2], [1, 2], [0, 0])
    with pytest.raises(mmd.Error):
        mmd.cox_loss([0.1], [-1.0], [1])


def test_synthetic_is_seeded_and_oracle_is_strong():
    a = mmd.generate_synthetic(n=300, seed=4)
    b = mmd.generate_synthetic(n=300, seed=4)
    assert a["csv"] == b["csv"]
    assert a["csv"] != mmd.generate_synthetic(n=300, seed=5)["csv"]
    assert len(a["time"]) == 300
    assert all(m != "0000" for m in a["mask"])
    assert mmd.concordance_index(a["true_risk"], a["time"], a["event"]) > 0.8


def test_dropout_never_empty():
    masks = mmd.modality_dropout("1111", rate=0.5, seed=3, draws=20000)
    assert "0000" not in masks
    kept = sum(m[0] == "1" for m in masks) / len(masks)
    assert kept == pytest.approx(8 / 15, abs=0.015)
    with pytest.raises(mmd.UsageError):
        mmd.modality_dropout("11", seed=1)


def test_footprint_ordering():
    tensor = mmd.footprint("tensor")["total"]
    mean = mmd.footprint("mean-vector")["total"]
    concat = mmd.footprint("concat")["total"]
    assert (tensor, mean, concat) == (421089, 50049, 8321)


def test_gradcheck_small():
    results = mmd.gradcheck(seed=1, instances=3)
    assert results and all(r["passed"] for r in results)


def test_cli_in_process_and_binary(tmp_path):
    out = tmp_path / "c.csv"
    code, stdout, _ = mmd.run_cli(["synth", "--n", "80", "--seed", "2", "--out", str(out)])
    assert code == 0
    assert "resolved configuration" in stdout
    assert out.exists() and (tmp_path / "c.csv.schema").exists()
    assert mmd.run_cli(["frobnicate"])[0] == 1

    exe = os.environ.get("MMD_CLI")
    if exe:
        out2 = tmp_path / "d.csv"
        subprocess.run([exe, "-q", "synth", "--n", "80", "--seed", "2", "--out", str(out2)], check=True)
        assert out2.read_bytes() == out.read_bytes()
