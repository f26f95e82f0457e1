import itertools
import math
import random

import pytest

import loccal


def test_tokenize_round_trip():
    tokens, spans = loccal.tokenize("x = 1\nprint(x)\n")
    assert "".join(tokens) == "x = 1\nprint(x)\n"
    assert spans == [(0, 6), (6, 11)]


def test_align_probs_min():
    gen = [("pri", 0.9), ("nt", 0.8), ("(", 0.99)]
    assert loccal.align_probs(gen, ["print", "("], "min") == [0.8, 0.99]


def test_kept_labels_rules():
    kept = loccal.kept_labels(["a", "b", "c"], [(0, 3)], ["a", "x", "c"])
    assert kept["token_kept"] == [True, False, True]
    assert not kept["problem_kept"]
    kept = loccal.kept_labels(["a", "c"], [(0, 2)], ["a", "b", "c"])
    assert kept["token_kept"] == [True, False]


def test_token_diff_ops():
    ops = loccal.token_diff(["a", "b", "c"], ["a", "x", "c"])
    assert [op[0] for op in ops] == ["equal", "replace", "equal"]


def test_multisample_three_of_five():
    s = ["a", "t", "b"]
    variants = [s, s, s, ["a", "u", "b"], ["a", "b"]]
    assert loccal.multisample_token_confidence(s, variants)[1] == 0.6


def test_reflective_round_trip():
    prompt = loccal.build_reflective_prompt("x = 1\ny = 2\n", ["x = 1", "y = 2"])
    assert "length 2" in prompt
    conf, ok = loccal.parse_reflective_response("```\n[0.9, 0.8]\n```", 2, 0.3)
    assert ok and conf == [0.9, 0.8]
    conf, ok = loccal.parse_reflective_response("```\n[0.9, 1.7]\n```", 2, 0.3)
    assert not ok and conf == [0.3, 0.3]


def _pair_auc(p, y):
    pos = [a for a, t in zip(p, y) if t]
    neg = [a for a, t in zip(p, y) if not t]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_metrics_against_python():
    rng = random.Random(3)
    p = [round(rng.random(), 1) for _ in range(200)]
    y = [rng.random() < 0.4 for _ in range(200)]
    brier = sum((a - b) ** 2 for a, b in zip(p, y)) / len(p)
    assert loccal.brier(p, y) == pytest.approx(brier, abs=1e-12)
    assert loccal.auc_roc(p, y) == pytest.approx(_pair_auc(p, y), abs=1e-12)
    rate = sum(y) / len(y)
    assert loccal.ece(p, y, 1) == pytest.approx(abs(sum(p) / len(p) - rate), abs=1e-12)
    assert loccal.brier_ref(0.25) == 0.1875
    assert loccal.skill_score(0.15, 0.1875) == pytest.approx(0.2)


def test_platt_identity_and_constant():
    assert loccal.apply_platt(1.0, 0.0, [0.3])[0] == pytest.approx(0.3)
    out = loccal.apply_platt(0.0, 0.4, [0.1, 0.9])
    assert out[0] == out[1] == pytest.approx(1 / (1 + math.exp(-0.4)))


def test_eta_squared_hand_anova():
    cells = [({"f": "a"}, 1.0), ({"f": "a"}, 2.0), ({"f": "b"}, 3.0), ({"f": "b"}, 4.0)]
    assert loccal.eta_squared(cells, "f") == pytest.approx(0.8)


def test_errors_map_to_python_exceptions():
    with pytest.raises(loccal.DataError):
        loccal.skill_score(0.1, 0.0)
    with pytest.raises(loccal.DataError):
        loccal.auc_roc([0.2, 0.3], [True, True])
    assert issubclass(loccal.ConfigError, loccal.Error)
