"""Photon-flux bookkeeping from emitted photons to detector counts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

__all__ = [
    "BudgetStage",
    "Budget",
    "chain_efficiency",
    "overall_system_efficiency",
    "infer_extraction",
    "signal_background_split",
    "budget_report",
]


@dataclass(frozen=True)
class BudgetStage:
    name: str
    efficiency: float  # in (0, 1]

    def __post_init__(self):
        if not (np.isfinite(self.efficiency) and 0.0 < self.efficiency <= 1.0):
            raise ParameterError(f"stage {self.name!r}: efficiency must be in (0, 1]")


@dataclass(frozen=True)
class Budget:
    stages: tuple
    rep_rate: float       # pulses per second
    detected_rate: float  # counts per second

    def __post_init__(self):
        if not (np.isfinite(self.rep_rate) and self.rep_rate > 0):
            raise ParameterError("rep_rate must be > 0")
        if not (np.isfinite(self.detected_rate) and self.detected_rate >= 0):
            raise ParameterError("detected_rate must be >= 0")


def chain_efficiency(stages) -> float:
    """Product of stage efficiencies (1.0 for an empty chain)."""
    eff = 1.0
    for st in stages:
        if not isinstance(st, BudgetStage):
            st = BudgetStage(*st)
        eff *= st.efficiency
    return eff


def overall_system_efficiency(budget: Budget) -> float:
    """Detected counts per excitation pulse."""
    return budget.detected_rate / budget.rep_rate


def infer_extraction(budget: Budget, known_stages) -> float:
    """Extraction efficiency left over once all calibrated stages are divided out."""
    known = chain_efficiency(known_stages)
    if known <= 0.0:
        raise ParameterError("known stage chain must have nonzero efficiency")
    return overall_system_efficiency(budget) / known


def signal_background_split(total_rate: float, snr: float):
    """Split a total count rate into (signal, background) given signal:background = snr.

    snr -> inf sends the background to zero; snr = 1 splits evenly.
    """
    if not (np.isfinite(snr) and snr > 0) and snr != np.inf:
        raise ParameterError("snr must be > 0")
    if snr == np.inf:
        return total_rate, 0.0
    background = total_rate / (snr + 1.0)
    return total_rate - background, background


def budget_report(budget: Budget) -> dict:
    """JSON-ready summary: stages, running product, overall and inferred extraction."""
    running = []
    acc = 1.0
    for st in budget.stages:
        acc *= st.efficiency
        running.append({"name": st.name, "efficiency": st.efficiency, "product_so_far": acc})
    overall = overall_system_efficiency(budget)
    return {
        "stages": running,
        "chain_efficiency": acc,
        "rep_rate_hz": budget.rep_rate,
        "detected_rate_hz": budget.detected_rate,
        "overall_system_efficiency": overall,
        "inferred_extraction": infer_extraction(budget, budget.stages),
    }
