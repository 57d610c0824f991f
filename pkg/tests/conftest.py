"""Shared fixtures: fixed generic parameter sets and admissible samplers."""

import numpy as np
import pytest

from utilsens import (
    HestonParams,
    KimOmbergParams,
    OUCompleteParams,
    Preferences,
    ValidationError,
    validate,
)

# comfortably admissible reference sets used across the suite
KO_SET = dict(mu=0.5, varsigma=0.2, k=1.0, m_bar=0.1, sigma=0.3, rho=-0.5, chi=0.2)
HESTON_SET = dict(mu=0.5, varsigma=0.25, k=2.0, m_bar=0.09, sigma=0.3, rho=-0.7,
                  chi=0.09)
OU_SET = dict(mu=0.3, b=0.8, varsigma=0.4, s0=0.5)


@pytest.fixture
def ko_model():
    return validate(KimOmbergParams(**KO_SET), Preferences(p=-1.0))


@pytest.fixture
def heston_model():
    return validate(HestonParams(**HESTON_SET), Preferences(p=-1.0))


@pytest.fixture
def ou_model():
    return validate(OUCompleteParams(**OU_SET), Preferences(p=-3.0))


def draw_ko(rng: np.random.Generator, mixing_floor: float = 0.0,
            margin: float = 0.05):
    """Random admissible Kim-Omberg model, rejection-sampled with margin."""
    while True:
        params = KimOmbergParams(
            mu=rng.uniform(-0.8, 0.8),
            varsigma=rng.uniform(0.15, 0.5),
            k=rng.uniform(0.5, 2.0),
            m_bar=rng.uniform(-0.2, 0.4),
            sigma=rng.uniform(0.1, 0.5),
            rho=rng.uniform(-0.85, 0.85),
            chi=rng.uniform(-0.4, 0.6),
        )
        prefs = Preferences(p=float(rng.uniform(-4.0, -0.3)))
        try:
            model = validate(params, prefs)
        except ValidationError:
            continue
        c = model.constants
        rev = c.alpha1 + (c.alpha4 - c.alpha1) / c.alpha2 * params.sigma**2 / 2.0
        if rev < margin:
            continue
        if c.alpha4 < mixing_floor:
            continue
        return model


def draw_heston(rng: np.random.Generator, mixing_floor: float = 0.0,
                margin: float = 0.05):
    """Random admissible Heston model, rejection-sampled with margin."""
    while True:
        k = rng.uniform(0.5, 2.5)
        m_bar = rng.uniform(0.03, 0.2)
        sigma = rng.uniform(0.1, 0.95 * np.sqrt(2.0 * k * m_bar))
        params = HestonParams(
            mu=rng.uniform(-0.8, 0.8),
            varsigma=rng.uniform(0.15, 0.5),
            k=k,
            m_bar=m_bar,
            sigma=sigma,
            rho=rng.uniform(-0.85, 0.85),
            chi=rng.uniform(0.02, 0.3),
        )
        prefs = Preferences(p=float(rng.uniform(-4.0, -0.3)))
        try:
            model = validate(params, prefs)
        except ValidationError:
            continue
        if model.constants.beta1 < margin:
            continue
        if model.constants.beta2 < mixing_floor:
            continue
        return model


def draw_model(kind: str, rng: np.random.Generator, **kw):
    return draw_ko(rng, **kw) if kind == "kim_omberg" else draw_heston(rng, **kw)
