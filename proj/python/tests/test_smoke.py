import math

import pytest

import dpnmt


def test_bleu_identity_and_worked_example():
    refs = ["the cat sat on the mat", "It is not that bad"]
    assert dpnmt.bleu(refs, [r.lower() for r in refs]).score == 100.0
    r = dpnmt.bleu(["a b c d e"], ["a b c d f"])
    assert abs(r.score - 100 * (4 / 5 * 3 / 4 * 2 / 3 * 1 / 2) ** 0.25) < 1e-9
    assert str(r).startswith("BLEU = 66.87")


def test_sign_test():
    refs = [f"w{i} x y z" for i in range(10)]
    a = list(refs)
    b = [f"q{i} x y z" for i in range(10)]
    r = dpnmt.sign_test(a, b, refs)
    assert (r.wins, r.losses, r.ties) == (10, 0, 0)
    assert math.isclose(r.p_value, 2 * 0.5**10)
    assert dpnmt.sign_test(a, a, refs).all_ties


def test_synth_corpus_is_reproducible_and_consistent():
    a = dpnmt.synth_corpus(50, drop_rate=0.5, seed=3)
    assert a == dpnmt.synth_corpus(50, drop_rate=0.5, seed=3)
    for row in a:
        src = row["source"].split()
        labelled = row["labelled"].split()
        assert len(labelled) == len(src) + len(row["drops"])
    assert all(not row["drops"] for row in dpnmt.synth_corpus(20, drop_rate=0.0))


def test_label_parallel_worked_example():
    x_hat, insertions = dpnmt.label_parallel(
        "根本 没 那么 严重",
        "It is not that bad",
        "1-2 2-3 3-4",
        ["我", "你", "他", "她", "它", "我们"],
        ["i", "you", "he", "she", "it", "we"],
        [("it", "它", 0.9)],
    )
    assert x_hat == "它 根本 没 那么 严重"
    assert insertions == [(0, "它", 0)]


def test_em_align_recovers_a_dictionary():
    src = ["a b", "b c", "c a", "a b c"] * 5
    tgt = ["A B", "B C", "C A", "A B C"] * 5
    links = dpnmt.em_align(src, tgt, 10)
    assert links[0] == [(0, 0), (1, 1)]


def test_errors_map_to_python_exceptions():
    with pytest.raises(ValueError):
        dpnmt.bleu(["a"], ["a", "b"])
    code, out, err = dpnmt.run_cli(["evaluate", "--hyp", "/nonexistent", "--ref", "/nonexistent"])
    assert code == 3 and "does not exist" in err
    code, out, _ = dpnmt.run_cli(["--help"])
    assert code == 0 and "synth" in out
