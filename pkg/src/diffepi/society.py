"""Temporal horizon, facility map, and the household economy.

Days are labelled weekday/weekend and grouped into 30-day months through
the relaxed periodic indicator. Each agent consumes one supply quota per
day, can restock only by shopping, receives a monthly salary (cut after
too many absences) and pays a monthly bill.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import (
    DTensor,
    XI_DEFAULT,
    as_dtensor,
    minimum,
    periodic_value,
    relax_precise,
)

WEEKEND_RESIDUES = (6, 0)
WEEK_LENGTH = 7
MONTH_LENGTH = 30


def weekend_indicator(t: int, xi: float = XI_DEFAULT) -> float:
    """Relaxed weekend label: rho(t;6,7) + rho(t;0,7); rounds to {0,1}."""
    return periodic_value(t, WEEKEND_RESIDUES[0], WEEK_LENGTH, xi) + periodic_value(
        t, WEEKEND_RESIDUES[1], WEEK_LENGTH, xi
    )


def month_end_indicator(t: int, xi: float = XI_DEFAULT) -> float:
    """Relaxed month-end label: rho(t;0,30)."""
    return periodic_value(t, 0, MONTH_LENGTH, xi)


@dataclass(frozen=True)
class Calendar:
    """Precomputed day labels for t in [0, horizon]."""

    horizon: int
    weekend: np.ndarray
    month_end: np.ndarray
    weekend_exact: np.ndarray
    month_end_exact: np.ndarray

    @classmethod
    def build(cls, horizon: int, xi: float = XI_DEFAULT) -> "Calendar":
        ts = np.arange(horizon + 1)
        weekend = np.array([weekend_indicator(t, xi) for t in ts])
        month_end = np.array([month_end_indicator(t, xi) for t in ts])
        weekend_exact = ((ts % WEEK_LENGTH == 6) | (ts % WEEK_LENGTH == 0)).astype(int)
        month_end_exact = (ts % MONTH_LENGTH == 0).astype(int)
        return cls(horizon, weekend, month_end, weekend_exact, month_end_exact)


@dataclass(frozen=True)
class FacilityMap:
    """Clusters of facilities; cluster c holds office 3c, market 3c+1, hospital 3c+2."""

    n_clusters: int

    OFFICE = 0
    MARKET = 1
    HOSPITAL = 2

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError("at least one facility cluster is required")

    @property
    def n_facilities(self) -> int:
        return 3 * self.n_clusters

    def facility_id(self, cluster: int, kind: int) -> int:
        return 3 * cluster + kind


@dataclass
class EconomyState:
    """Per-agent supplies (daily quotas), savings (currency), absence days."""

    supplies: DTensor
    savings: DTensor
    absent: DTensor


def update_supplies(supplies, shop_mass, purchase, cap: float = np.inf) -> DTensor:
    """One day of consumption plus the (possibly fractional) purchase.

    supplies' = supplies + shop_mass * min(purchase, cap) - 1. Supplies may
    go negative; the shortage drives the supply judgment to its top level.
    """
    bought = minimum(purchase, cap) if np.isfinite(cap) else as_dtensor(purchase)
    return as_dtensor(supplies) + as_dtensor(shop_mass) * bought - 1.0


def update_finances(
    savings,
    absent,
    shop_mass,
    work_mass,
    purchase,
    price,
    salary,
    salary_cut_factor,
    absence_limit,
    bill,
    weekend_value: float,
    month_end_value: float,
    xi: float = XI_DEFAULT,
    purchase_cap: float = np.inf,
) -> tuple[DTensor, DTensor]:
    """Month-aware cash flow and absenteeism update.

    Savings lose the day's purchase cost; at month end the salary arrives
    (scaled by the cut factor once absences exceed the employer limit,
    realised with the precise relaxation) and the bill is paid. Absences
    grow on weekdays not worked and reset after month end.
    """
    savings = as_dtensor(savings)
    absent = as_dtensor(absent)
    bought = minimum(purchase, purchase_cap) if np.isfinite(purchase_cap) else as_dtensor(purchase)
    spend = as_dtensor(shop_mass) * bought * price

    cut = relax_precise(absent, absence_limit, 1.0, xi)
    pay = as_dtensor(salary) * (as_dtensor(salary_cut_factor) * cut + (1.0 - cut))
    new_savings = savings - spend + month_end_value * (pay - bill)

    new_absent = (absent + (1.0 - weekend_value) * (1.0 - as_dtensor(work_mass))) * (
        1.0 - month_end_value
    )
    return new_savings, new_absent
