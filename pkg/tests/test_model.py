import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from spherical_condensate import SphericalModel
from spherical_condensate.dispersion import Acoustic, DoubledSine
from spherical_condensate.split import LemmaPreconditionError


def test_params_roundtrip():
    m = SphericalModel(L=9, kappa=0.3)
    assert m.get_params()["L"] == 9
    c = clone(m.set_params(L=16))
    assert c.L == 16 and c.kappa == 0.3 and not hasattr(c, "split_")


def test_fit_nn():
    m = SphericalModel(L=16).fit()
    assert m.split_.V0 == 1 and m.split_.delta == 0.0 and m.split_note_ is None
    assert m.assumptions_.supercritical and m.assumptions_.ok
    assert np.isfinite(m.bounds_.w2_bound)


def test_auto_fallback():
    m = SphericalModel(dispersion=Acoustic(), L=8, rho=3.0).fit()
    assert m.split_.construction["kind"] == "threshold" and "threshold" in m.split_note_
    with pytest.raises(LemmaPreconditionError):
        SphericalModel(L=8, split="lemma").fit()


def test_doubled_sine_counts():
    for L, V0 in ((8, 8), (9, 1)):
        m = SphericalModel(dispersion=DoubledSine(), L=L, enforce_l0=False).fit()
        assert m.split_.V0 == V0


def test_sample_and_transform():
    m = SphericalModel(L=8, enforce_l0=False).fit()
    X = m.sample(50, "mu0", random_state=0)
    F = m.transform(X)
    assert F.shape == (50, 4) and np.all(F >= 0)
    np.testing.assert_allclose(F[:, 0] + F[:, 1], m.rho_, rtol=1e-9)
    assert m.sample(3, "mu_plus", random_state=1).shape == (3, 512)
    np.testing.assert_allclose(m.transform(m.sample(5, "mu1prime", 2))[:, 0], m.rho_ - m.split_.rho_c)
    assert m.transform(X[0]).shape == (1, 4)


def test_validation():
    m = SphericalModel(L=8, enforce_l0=False)
    with pytest.raises(NotFittedError):
        m.sample(1)
    m.fit()
    with pytest.raises(ValueError):
        m.transform(np.zeros((2, 7)))
    with pytest.raises(ValueError):
        m.transform(np.full((1, 512), np.nan))
    with pytest.raises(TypeError):
        m.transform(np.array([["a"] * 512]))
    with pytest.raises(ValueError):
        m.sample(1, "nope")
    with pytest.raises(ValueError):
        SphericalModel(split="weird").fit()
