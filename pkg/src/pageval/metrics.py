"""Closed-form rule scores.

All scores live on a 0-5 scale. The balance score is computed from the
weighted layout deviation D, the efficiency score from the ratio of page
text length to a reference median, connectivity from saturating link
counts, and the quiz verbosity penalty reuses the efficiency machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class BalanceParams:
    """Scale and interpretation of the image-text balance score.

    ``as_written`` keeps the inverted reading (score = 5 - zeta, so
    perfect balance scores 0); ``monotone`` returns zeta itself so that
    balanced pages score 5. Both are exposed because the two readings
    circulate and they disagree about which end of the scale is good.
    """

    gamma: float = 1.0
    mode: str = "monotone"

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.mode not in ("as_written", "monotone"):
            raise ValueError(f"unknown balance mode: {self.mode!r}")


@dataclass(frozen=True)
class EfficiencyParams:
    """Decay rate and reference median for the text-efficiency score."""

    beta: float = 0.6
    reference_length: float = 8000.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.reference_length <= 0:
            raise ValueError("reference_length must be positive")


@dataclass(frozen=True)
class ConnectivitySaturation:
    """Link counts at which each connectivity sub-score reaches 5."""

    sat_external: int = 12
    sat_internal: int = 8

    def __post_init__(self):
        if self.sat_external < 1 or self.sat_internal < 1:
            raise ValueError("saturation counts must be >= 1")


@dataclass(frozen=True)
class RuleScores:
    """All rule-metric outputs for one page."""

    zeta: float
    image_text_score: float
    length_ratio: float
    efficiency_score: float
    completeness_score: float
    connectivity_score: float
    verbosity_penalty: float
    balance_mode: str = "monotone"
    deviation: float = 0.0
    visible_text_length: int = 0
    warnings: tuple = field(default_factory=tuple)


def image_text_score(deviation: float, params: BalanceParams) -> tuple[float, float]:
    """Return (zeta, score) for a layout deviation in [0, inf).

    zeta = 5 / (1 + gamma * D). Mode selects whether the score is 5 - zeta
    (as written) or zeta itself (monotone in balance quality).
    """
    if deviation < 0:
        raise ValueError("deviation must be >= 0")
    zeta = 5.0 / (1.0 + params.gamma * deviation)
    if params.mode == "as_written":
        score = 5.0 - zeta
    else:
        score = zeta
    return zeta, score


def info_efficiency(text_length: float, params: EfficiencyParams) -> tuple[float, float]:
    """Return (r, p) where r = L/W and p = 5 / (1 + beta * max(0, r - 1)).

    Pages at or below the reference length score the full 5; longer pages
    decay hyperbolically at rate beta.
    """
    if text_length < 0:
        raise ValueError("text length must be >= 0")
    ratio = text_length / params.reference_length
    score = 5.0 / (1.0 + params.beta * max(0.0, ratio - 1.0))
    return ratio, score


def completeness_rule(balance_score: float, efficiency_score: float) -> float:
    """Mean of the balance and efficiency scores."""
    return (balance_score + efficiency_score) / 2.0


def _saturating_subscore(count: int, saturation: int) -> float:
    return 5.0 * min(1.0, math.log1p(count) / math.log1p(saturation))


def connectivity_rule(n_external_valid: int, n_internal_valid: int,
                      sat: ConnectivitySaturation) -> float:
    """Combine the two validated link counts into one 0-5 score.

    Each count maps through a log-saturating sub-score that reaches 5 at
    its saturation point; the result is the mean of the two sub-scores.
    """
    if n_external_valid < 0 or n_internal_valid < 0:
        raise ValueError("link counts must be >= 0")
    s_ext = _saturating_subscore(n_external_valid, sat.sat_external)
    s_int = _saturating_subscore(n_internal_valid, sat.sat_internal)
    return (s_ext + s_int) / 2.0


def verbosity_penalty(ratio: float, beta: float) -> float:
    """Deduction applied to quiz scores for pages longer than the reference.

    Defined as 5 - p(r): zero for r <= 1, asymptotically approaching 5 as
    the page grows without bound.
    """
    if ratio < 0:
        raise ValueError("ratio must be >= 0")
    if beta <= 0:
        raise ValueError("beta must be positive")
    excess = max(0.0, ratio - 1.0)
    return 5.0 * beta * excess / (1.0 + beta * excess)


def compute_rule_scores(deviation: float, text_length: int,
                        n_external_valid: int, n_internal_valid: int,
                        balance: BalanceParams, efficiency: EfficiencyParams,
                        saturation: ConnectivitySaturation) -> RuleScores:
    """Evaluate every rule metric for one page."""
    zeta, s_img = image_text_score(deviation, balance)
    ratio, p = info_efficiency(text_length, efficiency)
    return RuleScores(
        zeta=zeta,
        image_text_score=s_img,
        length_ratio=ratio,
        efficiency_score=p,
        completeness_score=completeness_rule(s_img, p),
        connectivity_score=connectivity_rule(n_external_valid, n_internal_valid, saturation),
        verbosity_penalty=verbosity_penalty(ratio, efficiency.beta),
        balance_mode=balance.mode,
        deviation=deviation,
        visible_text_length=text_length,
    )
