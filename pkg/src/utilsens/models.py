"""Parameter containers, derived constants and admissibility checks.

Three closed-form market models are supported:

* ``ou_complete`` -- a single risky asset following a mean-reverting
  Ornstein-Uhlenbeck price (complete market),
* ``kim_omberg``  -- stochastic excess returns driven by an OU factor,
* ``heston``      -- stochastic variance driven by a CIR factor.

The investor has power utility x**p / p with risk exponent p < 0; the dual
exponent q = -p/(1-p) in (0, 1) shows up throughout the closed forms.

Parameter sets are immutable.  ``validate`` is the single entry point that
turns raw parameters into a :class:`Model` bundle carrying the derived
constants; everything downstream takes the bundle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace

import numpy as np

OU_COMPLETE = "ou_complete"
KIM_OMBERG = "kim_omberg"
HESTON = "heston"

MODEL_KINDS = (OU_COMPLETE, KIM_OMBERG, HESTON)

# Strict inequalities (Feller, mean-reversion) are enforced with a margin:
# the exponential-moment formulas downstream blow up at the boundary.
ADMISSIBILITY_MARGIN = 1e-12


class ValidationError(ValueError):
    """Parameter rejection; ``condition`` names the violated constraint."""

    def __init__(self, condition: str, message: str):
        super().__init__(f"{condition}: {message}")
        self.condition = condition


class ConfigError(ValueError):
    """Malformed configuration input (unknown keys, wrong types, ...)."""


class DomainError(ValueError):
    """State argument outside the model's domain (e.g. negative variance)."""


class UnsupportedModelError(ValueError):
    """Operation not available for this model kind."""


def dual_exponent(p: float) -> float:
    """Dual exponent q = -p/(1-p) of the risk exponent p < 0."""
    if not p < 0:
        raise ValidationError("risk_exponent", f"p must be < 0, got {p}")
    return -p / (1.0 - p)


@dataclass(frozen=True)
class Preferences:
    """Power-utility preferences; q is derived, never user-set."""

    p: float

    def __post_init__(self) -> None:
        dual_exponent(self.p)  # rejects p >= 0

    @property
    def q(self) -> float:
        return -self.p / (1.0 - self.p)


@dataclass(frozen=True)
class OUCompleteParams:
    """Asset price dS = (mu - b*S) dt + varsigma dW, S_0 = s0."""

    mu: float
    b: float
    varsigma: float
    s0: float


@dataclass(frozen=True)
class KimOmbergParams:
    """Excess-return factor dX = k(m_bar - X) dt + sigma dZ, corr(W1, Z) = rho."""

    mu: float
    varsigma: float
    k: float
    m_bar: float
    sigma: float
    rho: float
    chi: float


@dataclass(frozen=True)
class HestonParams:
    """Variance factor dX = k(m_bar - X) dt + sigma sqrt(X) dZ, corr rho."""

    mu: float
    varsigma: float
    k: float
    m_bar: float
    sigma: float
    rho: float
    chi: float


Params = OUCompleteParams | KimOmbergParams | HestonParams


@dataclass(frozen=True)
class DerivedConstants:
    """Model-dependent constants computed once at validation time.

    ``sigma1``/``sigma2`` are the correlated/orthogonal factor loadings
    rho*sigma and sqrt(1-rho^2)*sigma.  The Kim-Omberg block is
    (alpha1..alpha4), the Heston block (beta1, beta2), the complete-market
    block alpha_cm = -p / (2(1-p)^2).  Fields not applicable to the model
    are None.
    """

    sigma1: float | None = None
    sigma2: float | None = None
    alpha1: float | None = None
    alpha2: float | None = None
    alpha3: float | None = None
    alpha4: float | None = None
    beta1: float | None = None
    beta2: float | None = None
    alpha_cm: float | None = None

    def as_dict(self) -> dict:
        return {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if getattr(self, f.name) is not None
        }


def _basic_field_checks(params: Params) -> None:
    if isinstance(params, OUCompleteParams):
        if not params.varsigma > 0:
            raise ValidationError("sign_range", "varsigma must be > 0")
        if not params.b > 0:
            raise ValidationError("sign_range", "b must be > 0")
        return
    if not params.varsigma > 0:
        raise ValidationError("sign_range", "varsigma must be > 0")
    if not params.k > 0:
        raise ValidationError("sign_range", "k must be > 0")
    if not params.sigma > 0:
        raise ValidationError("sign_range", "sigma must be > 0")
    # rho = +-1 is rejected: the factor code path needs sigma2 > 0 because
    # the dual control acts through the orthogonal Brownian motion.
    if not abs(params.rho) < 1:
        raise ValidationError("sign_range", "rho must lie strictly in (-1, 1)")
    if isinstance(params, HestonParams):
        if not params.m_bar > 0:
            raise ValidationError("sign_range", "m_bar must be > 0")
        if not params.chi > 0:
            raise ValidationError("sign_range", "chi must be > 0 for heston")


def derive_constants(params: Params, prefs: Preferences) -> DerivedConstants:
    """Populate the derived-constant block for the given model."""
    _basic_field_checks(params)
    q = prefs.q
    if isinstance(params, OUCompleteParams):
        p = prefs.p
        return DerivedConstants(alpha_cm=-p / (2.0 * (1.0 - p) ** 2))

    sigma1 = params.rho * params.sigma
    sigma2 = math.sqrt(1.0 - params.rho**2) * params.sigma
    if isinstance(params, KimOmbergParams):
        a1 = params.k + q * params.mu * sigma1 / params.varsigma
        a2 = sigma1**2 + sigma2**2 / (1.0 - q)
        a3 = params.k * params.m_bar
        a4 = math.sqrt(a1**2 + q * (1.0 - q) * a2 * (params.mu / params.varsigma) ** 2)
        return DerivedConstants(
            sigma1=sigma1, sigma2=sigma2, alpha1=a1, alpha2=a2, alpha3=a3, alpha4=a4
        )
    b1 = params.k + q * params.mu * sigma1 / params.varsigma
    b2 = math.sqrt(
        b1**2
        + q
        * (1.0 - q * params.rho**2)
        * (params.mu * params.sigma / params.varsigma) ** 2
    )
    return DerivedConstants(sigma1=sigma1, sigma2=sigma2, beta1=b1, beta2=b2)


@dataclass(frozen=True)
class Model:
    """Validated parameter bundle; construct only through :func:`validate`."""

    kind: str
    params: Params
    prefs: Preferences
    constants: DerivedConstants

    @property
    def q(self) -> float:
        return self.prefs.q

    @property
    def p(self) -> float:
        return self.prefs.p

    def content_key(self) -> tuple:
        """Hashable identity used as a cache key."""
        pf = tuple(getattr(self.params, f.name) for f in fields(self.params))
        return (self.kind, pf, self.prefs.p)


def kim_omberg_eigen_slope(params: KimOmbergParams, prefs: Preferences) -> float:
    """Eigen-coefficient B = (alpha4 - alpha1)/alpha2 of the quadratic exponent."""
    c = derive_constants(params, prefs)
    return (c.alpha4 - c.alpha1) / c.alpha2


def validate(params: Params, prefs: Preferences) -> Model:
    """Accept iff every invariant, including admissibility, holds.

    Raises :class:`ValidationError` naming the violated condition.  Strict
    inequalities are enforced with margin ``ADMISSIBILITY_MARGIN``.
    """
    _basic_field_checks(params)
    eps = ADMISSIBILITY_MARGIN
    if isinstance(params, HestonParams):
        feller = 2.0 * params.k * params.m_bar - params.sigma**2
        if not feller > eps:
            raise ValidationError(
                "feller",
                f"2*k*m_bar = {2 * params.k * params.m_bar} must exceed "
                f"sigma^2 = {params.sigma ** 2}",
            )
        rev = params.k + prefs.q * params.mu * params.rho * params.sigma / params.varsigma
        if not rev > eps:
            raise ValidationError(
                "mean_reversion",
                f"k + q*mu*rho*sigma/varsigma = {rev} must be positive",
            )
    elif isinstance(params, KimOmbergParams):
        # checked after deriving B: the condition involves the eigen-coefficient
        B = kim_omberg_eigen_slope(params, prefs)
        rev = (
            params.k
            + prefs.q * params.mu * params.rho * params.sigma / params.varsigma
            + B * params.sigma**2 / 2.0
        )
        if not rev > eps:
            raise ValidationError(
                "mean_reversion",
                f"k + q*mu*rho*sigma/varsigma + B*sigma^2/2 = {rev} must be positive",
            )
    kind = {
        OUCompleteParams: OU_COMPLETE,
        KimOmbergParams: KIM_OMBERG,
        HestonParams: HESTON,
    }[type(params)]
    return Model(kind=kind, params=params, prefs=prefs,
                 constants=derive_constants(params, prefs))


def initial_state(model: Model) -> float:
    """Initial factor value (initial asset price for the complete-market model)."""
    if model.kind == OU_COMPLETE:
        return model.params.s0
    return model.params.chi


def market_price_of_risk(model: Model, x) -> float:
    """Drift-to-volatility ratio theta at factor value (or asset price) x."""
    pa = model.params
    if model.kind == OU_COMPLETE:
        return (pa.mu - pa.b * x) / pa.varsigma
    if model.kind == KIM_OMBERG:
        return pa.mu * x / pa.varsigma
    if np.any(np.asarray(x) < 0):
        raise DomainError("heston market price of risk needs x >= 0")
    return pa.mu * np.sqrt(x) / pa.varsigma


def bump_params(params: Params, name: str, h: float) -> Params:
    """Return a copy of ``params`` with ``name`` shifted by ``h``.

    ``chi`` is accepted as an alias for the complete-market initial price.
    """
    if isinstance(params, OUCompleteParams) and name == "chi":
        name = "s0"
    if name not in {f.name for f in fields(params)}:
        raise ConfigError(f"unknown parameter '{name}' for {type(params).__name__}")
    return replace(params, **{name: getattr(params, name) + h})


def sensitivity_parameters(kind: str) -> list[str]:
    """Drift/volatility parameters with a long-term sensitivity row."""
    if kind == OU_COMPLETE:
        return ["mu", "b", "varsigma"]
    return ["k", "m_bar", "mu", "varsigma", "rho", "sigma"]


# --- configuration ----------------------------------------------------------

_MODEL_FIELDS = {
    OU_COMPLETE: ("mu", "b", "varsigma", "s0"),
    KIM_OMBERG: ("mu", "varsigma", "k", "m_bar", "sigma", "rho", "chi"),
    HESTON: ("mu", "varsigma", "k", "m_bar", "sigma", "rho", "chi"),
}
_MODEL_TYPES = {
    OU_COMPLETE: OUCompleteParams,
    KIM_OMBERG: KimOmbergParams,
    HESTON: HestonParams,
}


def _require_keys(block: dict, allowed: tuple, where: str) -> None:
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key '{unknown[0]}' in {where} block")


def parse_model_block(kind: str, block: dict) -> Params:
    """Build a parameter set from a JSON object; unknown keys are an error."""
    if kind not in _MODEL_FIELDS:
        raise ConfigError(f"unknown model kind '{kind}'")
    if not isinstance(block, dict):
        raise ConfigError(f"{kind} block must be an object")
    allowed = _MODEL_FIELDS[kind]
    _require_keys(block, allowed, kind)
    missing = [k for k in allowed if k not in block]
    if missing:
        raise ConfigError(f"missing key '{missing[0]}' in {kind} block")
    vals = {}
    for key in allowed:
        v = block[key]
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"{kind}.{key} must be a number")
        vals[key] = float(v)
    return _MODEL_TYPES[kind](**vals)


def parse_preferences(block: dict) -> Preferences:
    if not isinstance(block, dict):
        raise ConfigError("preferences block must be an object")
    _require_keys(block, ("p",), "preferences")
    if "p" not in block:
        raise ConfigError("missing key 'p' in preferences block")
    return Preferences(p=float(block["p"]))


def model_from_config(cfg: dict) -> Model:
    """Validate the single model block of a parsed JSON config."""
    present = [k for k in MODEL_KINDS if k in cfg]
    if len(present) != 1:
        raise ConfigError(
            f"config must contain exactly one model block, found {present or 'none'}"
        )
    kind = present[0]
    if "preferences" not in cfg:
        raise ConfigError("missing preferences block")
    prefs = parse_preferences(cfg["preferences"])
    params = parse_model_block(kind, cfg[kind])
    return validate(params, prefs)


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("top-level config must be a JSON object")
    return cfg
