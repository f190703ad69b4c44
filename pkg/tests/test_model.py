import pytest

from cavmem import model


def test_derived_lossless():
    d = model.derived(model.MemoryParams(g_sqrtN=1.0, kappa_in=2.0))
    assert d.Gamma == pytest.approx(0.5)
    assert d.lossless_atoms and d.cooperativity is None


def test_derived_lossy():
    d = model.derived(model.MemoryParams(g_sqrtN=1.0, kappa_in=1.0, gamma=1.0))
    assert d.cooperativity == pytest.approx(1.0)
    assert d.Gamma_tilde == pytest.approx(2.0)


def test_no_input_port():
    with pytest.raises(ValueError):
        model.MemoryParams(g_sqrtN=1.0, kappa_in=0.0)


def test_regime_check():
    p = model.MemoryParams.for_rate(0.5, kappa_in=100.0)
    r = model.regime_check(p, 1.0)
    assert r.atom_limited == pytest.approx(100.0) and not r.adiabatic
    assert model.regime_check(model.MemoryParams.for_rate(100.0, kappa_in=100.0), 1.0).adiabatic
    assert model.regime_check(model.MemoryParams.for_rate(6.0, kappa_in=6.0), 1.0, threshold=5.0).adiabatic


def test_loss_rescale():
    assert model.loss_rescale(1.0, model.MemoryParams(g_sqrtN=1.0, kappa_in=1.0)) == 1.0
    assert model.loss_rescale(1.0, model.MemoryParams(g_sqrtN=1.0, kappa_in=1.0, gamma=1.0)) == pytest.approx(0.5)
    # C = 4 with kappa_in = kappa_loss
    p = model.MemoryParams(g_sqrtN=2.0, kappa_in=0.5, kappa_loss=0.5, gamma=1.0)
    assert model.loss_rescale(0.8, p) == pytest.approx(0.32)


def test_loss_rescale_monotone_in_cooperativity():
    vals = [model.loss_rescale(0.9, model.MemoryParams(g_sqrtN=g, kappa_in=1.0, gamma=1.0))
            for g in (0.5, 1.0, 2.0, 5.0)]
    assert vals == sorted(vals)


def test_loss_rescale_rejects_bad_eta():
    with pytest.raises(ValueError):
        model.loss_rescale(1.2, model.MemoryParams(g_sqrtN=1.0, kappa_in=1.0))


def test_params_roundtrip(tmp_path):
    p = model.MemoryParams(g_sqrtN=3.0, kappa_in=1.5, kappa_loss=0.25, gamma=0.1, delta=-0.5)
    f = tmp_path / "p.txt"
    model.write_params(p, f)
    assert model.read_params(f) == p


def test_params_file_errors(tmp_path):
    f = tmp_path / "bad.txt"
    f.write_text("g_sqrtN = 1\nfoo = 2\n")
    with pytest.raises(ValueError):
        model.read_params(f)
    f.write_text("g_sqrtN = 1\n")
    with pytest.raises(ValueError):
        model.read_params(f)
