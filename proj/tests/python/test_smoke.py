import json

import numpy as np
import pytest

import icl_lab


def test_closed_form_reference():
    s = icl_lab.closed_form_value_matrix(0.15, 10, 10)
    w = s["value"]
    assert w.shape == (22, 22)
    assert w[1, 1] == pytest.approx(1.1485332919, abs=1e-9)
    assert s["u"] < 0 and s["q"] < 0
    assert np.all(w[0] == 0)


def test_encode_columns_are_two_hot():
    z = icl_lab.encode(3, 2, [(1, 2), (3, 1), (2, 2)], [1])
    assert z.shape == (7, 3)
    assert np.allclose(z.sum(axis=0), 2.0)
    assert z[0, 1] == 1 and z[4, 1] == 1


def test_uniform_forward_is_column_mean():
    z = icl_lab.encode(2, 2, [(1, 1), (2, 2), (1, 2)])
    w = np.eye(6)
    out = icl_lab.forward(w, z)
    assert np.allclose(out, np.repeat(z.mean(axis=1, keepdims=True), 3, axis=1))


def test_position_weights_sum_to_one():
    w = icl_lab.position_weights(1, 0.5)
    assert list(w) == pytest.approx([1 / 3, 2 / 3])


def test_sequence_sampling_is_deterministic():
    a = icl_lab.sample_train_sequence(5, 10, 10, 3, 50)
    b = icl_lab.sample_train_sequence(5, 10, 10, 3, 50)
    assert a == b and len(a) == 50
    assert all(1 <= t <= 10 and 1 <= k <= 10 for t, k in a)


def test_parse_sequence_line():
    tokens, mask = icl_lab.parse_sequence_line("1:2 3:4 2:2 |π=2,3")
    assert tokens == [(1, 2), (3, 4), (2, 2)]
    assert mask == [1, 2]  # zero-based; the line format is one-based


def test_config_validation():
    text = icl_lab.canonical_config("topics = 4\ntau = 4\n")
    assert "topics = 4" in text
    assert len(text.strip().splitlines()) == len(icl_lab.config_keys())
    with pytest.raises(icl_lab.ConfigError):
        icl_lab.canonical_config("mask_prob = 1.5\n")


def test_kl_divergence():
    kl = icl_lab.kl_divergence([[0.1, 0.9]], [[0.5, 0.5]])
    assert kl == pytest.approx(0.1 * np.log(0.2) + 0.9 * np.log(1.8))
    with pytest.raises(icl_lab.InfiniteDivergence):
        icl_lab.kl_divergence([[0.5, 0.5]], [[1.0, 0.0]])


def test_exact_posterior_normalized():
    family = "alphabet 2\nlength 2\nconcept a\nrepeat 2 0.2 0.8\nconcept b\nrepeat 2 0.7 0.3\nquery a\npretrain a\n"
    r = icl_lab.exact_posterior(family, [[[1, 1]]], [[1, 0]], [1, 1])
    assert sum(r["posterior"]) == pytest.approx(1.0)
    assert sum(r["concept_weights"]) == pytest.approx(1.0)


def test_run_solve_command(tmp_path):
    assert "solve" in icl_lab.command_names()
    code, summary = icl_lab.run_command("solve", "", 0, tmp_path)
    assert code == 0
    assert json.loads(summary)["command"] == "solve"
    assert (tmp_path / "model.json").exists()
