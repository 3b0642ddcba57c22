import math

import numpy as np
import pytest

import eyemod


def test_scheme_table():
    names = eyemod.schemes()
    assert len(names) == 14
    assert names[0] == "BFM"
    assert names[-1] == "PAM4"


def test_modulate_unit_power_and_determinism():
    x = eyemod.modulate("qpsk", seed=3)
    assert x.shape == (1024,)
    assert x.dtype == np.complex128
    assert np.mean(np.abs(x) ** 2) == pytest.approx(1.0, rel=1e-9)
    assert np.array_equal(x, eyemod.modulate("QPSK", seed=3))
    assert not np.array_equal(x, eyemod.modulate("QPSK", seed=4))


def test_impair_sets_the_noise_level():
    x = eyemod.modulate("qam16", seed=1)
    y = eyemod.impair("qam16", x, 0.0, fading_seed=2)
    assert y.shape == x.shape
    clean = eyemod.impair("qam16", x, math.inf, fading_seed=2)
    noise = np.mean(np.abs(y - clean) ** 2)
    assert noise == pytest.approx(np.mean(np.abs(clean) ** 2), rel=0.15)


def test_tensor_contract():
    x = eyemod.impair("bpsk", eyemod.modulate("bpsk"), 10.0)
    t = eyemod.frame_to_tensor("bpsk", x)
    assert t.shape == (299, 699, 2)
    assert t.dtype == np.float32
    assert t.min() >= 0.0 and t.max() <= 1.0
    small = eyemod.frame_to_tensor("bpsk", x, height=64, width=128)
    assert small.shape == (64, 128, 2)


def test_unknown_scheme_raises():
    with pytest.raises(ValueError):
        eyemod.modulate("bogus")


def test_cli_dataset_round_trip(tmp_path):
    out = tmp_path / "d.eyeamc"
    code, stdout, _ = eyemod.run_cli(
        ["dataset", "--classes", "bpsk,pam4", "--snrs", "10", "--frames", "10",
         "--height", "16", "--width", "32", "--out", str(out)])
    assert code == 0
    assert "plan.records = 20" in stdout
    d = eyemod.read_dataset(out)
    assert d["pixels"].shape == (20, 16, 32, 2)
    assert d["class_names"] == ["BPSK", "PAM4"]
    assert len(d["train"]) + len(d["val"]) + len(d["test"]) == 20
    code, _, err = eyemod.run_cli(["synth", "--scheme", "bogus"])
    assert code == 2
    assert "PAM4" in err
