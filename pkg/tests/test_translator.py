import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from segtran import numerics as nx
from segtran.numerics import Adam, Tape
from segtran.translator import (
    derangement,
    discriminator_scores,
    mi_objective,
    mi_param_init,
    readout,
    translate,
    translation_loss,
    translator_param_init,
)


def test_readout_examples():
    H, P = np.array([[1.0, 2.0]]), np.array([[3.0]])
    np.testing.assert_array_equal(readout(nx.constant(H), nx.constant(P)).data, [[1, 2, 3]])
    two = readout(nx.constant([[1.0, 2.0]] * 2), nx.constant([[3.0]] * 2)).data
    np.testing.assert_array_equal(two, [[1, 2, 3]])
    with pytest.raises(ValueError):
        readout(nx.constant(np.ones((2, 1))), nx.constant(np.ones((3, 1))))


def test_readout_scalar_loop_oracle():
    rng = np.random.default_rng(0)
    H, P = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    E = np.hstack([H, P])
    expected = [sum(E[i][j] for i in range(5)) / 5 for j in range(5)]
    np.testing.assert_allclose(readout(nx.constant(H), nx.constant(P)).data[0], expected, rtol=1e-15)
    np.testing.assert_allclose(readout(nx.constant(H), nx.constant(P), "sum").data[0], E.sum(axis=0), rtol=1e-14)


def test_zero_translator_outputs_zeros():
    params = translator_param_init(3, 2, np.random.default_rng(0))
    for lyr in params.layers:
        for t in lyr.values():
            t.data[...] = 0.0
    h, p = translate(nx.constant(np.ones((4, 3))), nx.constant(np.ones((4, 2))), params)
    assert h.shape == (4, 3) and p.shape == (4, 2)
    assert not h.data.any() and not p.data.any()


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_translate_permutation_and_duplication(n, seed):
    rng = np.random.default_rng(seed)
    params = translator_param_init(3, 2, rng, hidden=8)
    H, P = rng.normal(size=(n, 3)), rng.normal(size=(n, 2))
    h, p = translate(nx.constant(H), nx.constant(P), params)
    perm = rng.permutation(n)
    hp, pp = translate(nx.constant(H[perm]), nx.constant(P[perm]), params)
    np.testing.assert_allclose(hp.data, h.data[perm], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(pp.data, p.data[perm], rtol=1e-12, atol=1e-12)
    hd, pd = translate(nx.constant(np.vstack([H, H])), nx.constant(np.vstack([P, P])), params)
    np.testing.assert_allclose(hd.data, np.vstack([h.data, h.data]), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(pd.data, np.vstack([p.data, p.data]), rtol=1e-12, atol=1e-12)


def test_translate_width_error():
    params = translator_param_init(3, 2, np.random.default_rng(0))
    with pytest.raises(ValueError, match="widths"):
        translate(nx.constant(np.ones((2, 4))), nx.constant(np.ones((2, 2))), params)


def test_translation_loss_examples():
    P = nx.constant(np.ones((2, 2)))
    assert translation_loss((nx.constant(np.ones((2, 2))), P), (nx.constant(np.zeros((2, 2))), P)).item() == 1.0
    assert translation_loss((P, P), (P, P)).item() == 0.0
    with pytest.raises(ValueError):
        translation_loss((P, P), (nx.constant(np.ones((3, 2))), P))


def test_translation_loss_scalar_oracle_and_symmetry():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(1, 10))
        Hp, Pp, Ht, Pt = (rng.normal(size=(n, w)) for w in (4, 3, 4, 3))
        got = translation_loss((nx.constant(Hp), nx.constant(Pp)), (nx.constant(Ht), nx.constant(Pt))).item()
        assert got == pytest.approx(oracles.translation_loss(Hp, Pp, Ht, Pt), rel=1e-12)
        back = translation_loss((nx.constant(Ht), nx.constant(Pt)), (nx.constant(Hp), nx.constant(Pp))).item()
        assert back == got


def test_derangement_has_no_fixed_points():
    rng = np.random.default_rng(2)
    for n in range(2, 12):
        for _ in range(50):
            perm = derangement(n, rng)
            assert sorted(perm) == list(range(n)) and not np.any(perm == np.arange(n))
    with pytest.raises(ValueError):
        derangement(1, rng)


def _pairs(rng, m, w):
    return [(nx.constant(rng.normal(size=(1, w))), nx.constant(rng.normal(size=(1, w)))) for _ in range(m)]


def test_mi_score_at_zero_discriminator():
    rng = np.random.default_rng(3)
    params = mi_param_init(4, rng, hidden=5)
    params.W2.data[...] = 0.0
    est, mi = mi_objective(_pairs(rng, 4, 4), params, rng)
    assert mi.item() == pytest.approx(-2 * math.log(2), abs=1e-15)
    assert est.item() == -mi.item()


def test_mi_needs_two_pairs():
    rng = np.random.default_rng(4)
    with pytest.raises(ValueError):
        mi_objective(_pairs(rng, 1, 3), mi_param_init(3, rng), rng)


def test_mi_estimator_gradients():
    rng = np.random.default_rng(5)
    params = mi_param_init(3, rng, hidden=6)
    pairs = _pairs(rng, 3, 3)
    perm = derangement(3, rng)
    build = lambda: mi_objective(pairs, params, rng, perm)[0]  # noqa: E731
    assert nx.check_gradients(build, list(params.named_parameters().values())) < 1e-5
    est, mi = mi_objective(pairs, params, rng, perm)
    assert math.isfinite(mi.item())


def test_mi_estimator_learns_correlated_pairs():
    """Train T where g_t = g_s + fixed offset; matched pairs should then outscore deranged ones."""
    rng = np.random.default_rng(6)
    offset = rng.normal(size=(1, 4))
    params = mi_param_init(4, rng, hidden=32)
    opt = Adam(params.named_parameters(), 0.01)

    def draw(m):
        out = []
        for _ in range(m):
            g = rng.normal(size=(1, 4))
            out.append((nx.constant(g), nx.constant(g + offset)))
        return out

    for _ in range(300):
        pairs = draw(8)
        opt.zero_grad()
        with Tape() as tape:
            loss, _ = mi_objective(pairs, params, rng)
        tape.backward(loss)
        opt.step()
        tape.clear()
    held = draw(200)
    pos, neg = discriminator_scores(held, params, derangement(200, rng))
    assert pos.mean() > neg.mean()
