"""Observation interfaces, drives, plausibility ranking, decision sampling.

Observations (shared epidemic aggregates plus per-agent internal state)
are judged against two thresholds per aspect, yielding drive levels 1-3.
The three epidemic aspects combine through a fixed 27-entry table. The
four decisions (stay home, work, shop, hospital) take their drives from
the matching aspects; sorting by drive with the survival tie order
(shopping, hospital, home, work) gives a plausibility ranking, the top
drive sets the emergency level, and the emergency level's probability
masses are dealt out along the ranking.

Differentiability: judgment gates use the fuzzy relaxation, so drive
values are smooth in observations and thresholds; the emergency level
selects probability rows through piecewise-linear interpolation. The
ranking itself is a hard index computation (identical to the discrete
reference) and carries no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import (
    DTensor,
    K_DEFAULT,
    as_dtensor,
    clip,
    make_op,
    maximum,
    minimum,
    relax_fuzzy,
    reshape,
    stack,
    take_along,
    values_of,
)

# decision indices
HOME, WORK, SHOP, HOSPITAL = 0, 1, 2, 3
N_DECISIONS = 4
# ties resolve by survival priority: shopping, hospital, staying home, working
TIE_PRIORITY = np.array([2, 3, 0, 1])  # priority rank per decision index

# drive levels from the three epidemic aspects (infected proportion, death
# rate, asymptomatic proportion), indexed [tau-1, zeta-1, delta-1] -> level
EPIDEMIC_DRIVE_TABLE = np.zeros((3, 3, 3), dtype=int)
_TABLE_ROWS = {
    1: [(1, 1, 1), (1, 1, 2), (1, 2, 1), (2, 1, 1), (1, 2, 2), (2, 1, 2), (2, 2, 1), (1, 1, 3), (1, 3, 1)],
    2: [(3, 1, 1), (1, 2, 3), (1, 3, 2), (2, 1, 3), (2, 2, 2), (2, 3, 1), (3, 1, 2), (3, 2, 1), (1, 3, 3)],
    3: [(2, 2, 3), (2, 3, 2), (3, 1, 3), (3, 2, 2), (3, 3, 1), (2, 3, 3), (3, 2, 3), (3, 3, 2), (3, 3, 3)],
}
for _level, _cells in _TABLE_ROWS.items():
    for _a, _b, _c in _cells:
        EPIDEMIC_DRIVE_TABLE[_a - 1, _b - 1, _c - 1] = _level

SEVERITY_THRESHOLDS = (1.0, 4.0)
SUPPLY_LOWER_THRESHOLD = 0.0


@dataclass
class Observation:
    """External epidemic aggregates plus per-agent internal state."""

    infected_prop: DTensor  # cumulative infections / population
    death_rate: DTensor  # cumulative deaths / cumulative infections
    asymptomatic_prop: DTensor  # asymptomatic / currently infectious
    severity: DTensor
    supplies: DTensor
    savings: DTensor
    absent: DTensor


_SAFE = 1e-9


def observe(
    cumulative_infections,
    deceased_total,
    asymptomatic_total,
    symptomatic_total,
    population: int,
    severity,
    supplies,
    savings,
    absent,
) -> Observation:
    """Aggregate the external interface and bundle internal state.

    Ratios with empty denominators (no infections yet, nobody currently
    infectious) are defined as 0, the lowest-alarm reading.
    """
    cum = as_dtensor(cumulative_infections)
    infected_prop = cum * (1.0 / population)
    death_rate = as_dtensor(deceased_total) / (cum + _SAFE)
    infectious = as_dtensor(asymptomatic_total) + as_dtensor(symptomatic_total)
    asym_prop = as_dtensor(asymptomatic_total) / (infectious + _SAFE)
    return Observation(
        infected_prop, death_rate, asym_prop,
        as_dtensor(severity), as_dtensor(supplies), as_dtensor(savings), as_dtensor(absent),
    )


# -- perspective drives ------------------------------------------------------


def aspect_drive_soft(value, thr1, thr2, k: float = K_DEFAULT, increasing: bool = True):
    """Fuzzy drive for one aspect: value plus level weights (w1, w2, w3).

    Increasing aspects alarm above their thresholds; the supply aspect is
    decreasing (shortage alarms), so its gates flip sign. The weights lie
    on the 3-simplex and the value equals 1*w1 + 2*w2 + 3*w3.
    """
    if increasing:
        f1 = relax_fuzzy(value, thr1, 1.0, k)
        f2 = relax_fuzzy(value, thr2, 1.0, k)
    else:
        f1 = relax_fuzzy(thr2, value, 1.0, k)
        f2 = relax_fuzzy(thr1, value, 1.0, k)
    value_out = 1.0 + f1 + f2
    return value_out, (1.0 - f1, f1 - f2, f2)


def aspect_drive_hard(value, thr1, thr2, increasing: bool = True) -> np.ndarray:
    """Discrete drive level in {1,2,3} by two-threshold comparison."""
    v = values_of(value)
    t1, t2 = values_of(thr1), values_of(thr2)
    if increasing:
        return (1 + (v >= t1).astype(int) + (v >= t2).astype(int))
    return 1 + (v < t2).astype(int) + (v < t1).astype(int)


def finance_drive_soft(savings, bill, absent, absence_alert, weekend_value, k: float = K_DEFAULT):
    """Work drive: 1 on weekends, else 1 + bill breach + absence breach."""
    bill_breach = relax_fuzzy(bill, savings, 1.0, k)
    absent_breach = relax_fuzzy(absent, absence_alert, 1.0, k)
    return 1.0 + (1.0 - weekend_value) * (bill_breach + absent_breach)


def finance_drive_hard(savings, bill, absent, absence_alert, weekend: int) -> np.ndarray:
    sv, bl = values_of(savings), values_of(bill)
    ab, al = values_of(absent), values_of(absence_alert)
    breaches = (sv < bl).astype(int) + (ab >= al).astype(int)
    if weekend:
        return np.ones_like(breaches)
    return 1 + breaches


def epidemic_severity_drive(tau_level, zeta_level, delta_level):
    """Exact 27-entry table lookup; inputs are integer levels in {1,2,3}."""
    tau = np.asarray(tau_level) - 1
    zeta = np.asarray(zeta_level) - 1
    delta = np.asarray(delta_level) - 1
    return EPIDEMIC_DRIVE_TABLE[tau, zeta, delta]


def epidemic_drive_soft(w_tau, w_zeta, w_delta) -> DTensor:
    """Tensorised table combination: expected drive under soft level weights.

    Each weight argument is (P, 3) on the simplex; the result is the
    table value averaged over the product distribution, restoring the
    exact lookup when the weights are one-hot.
    """
    wa, wb, wc = as_dtensor(w_tau), as_dtensor(w_zeta), as_dtensor(w_delta)
    T = EPIDEMIC_DRIVE_TABLE.astype(np.float64)
    out = np.einsum("pa,pb,pc,abc->p", wa.values, wb.values, wc.values, T)

    def _bw(g):
        wa._accumulate(np.einsum("p,pb,pc,abc->pa", g, wb.values, wc.values, T))
        wb._accumulate(np.einsum("p,pa,pc,abc->pb", g, wa.values, wc.values, T))
        wc._accumulate(np.einsum("p,pa,pb,abc->pc", g, wa.values, wb.values, T))

    return make_op(out, (wa, wb, wc), _bw)


# -- emergency level, ranking, decision distribution -------------------------


def perspective_drives(obs: Observation, thresholds: dict, weekend: float, k: float = K_DEFAULT):
    """All aspect drives for one step (fuzzy path).

    `thresholds` holds per-agent pairs under keys "infected", "death",
    "asymptomatic", plus "supply_upper", "bill" and "absence_alert".
    Returns a dict of drive values; epidemic aspects also carry their
    level weights for the table combination.
    """
    inf_v, inf_w = aspect_drive_soft(obs.infected_prop, *thresholds["infected"], k=k)
    death_v, death_w = aspect_drive_soft(obs.death_rate, *thresholds["death"], k=k)
    asym_v, asym_w = aspect_drive_soft(obs.asymptomatic_prop, *thresholds["asymptomatic"], k=k)
    health_v, _ = aspect_drive_soft(obs.severity, *SEVERITY_THRESHOLDS, k=k)
    supply_v, _ = aspect_drive_soft(
        obs.supplies, SUPPLY_LOWER_THRESHOLD, thresholds["supply_upper"], k=k, increasing=False
    )
    finance_v = finance_drive_soft(
        obs.savings, thresholds["bill"], obs.absent, thresholds["absence_alert"], weekend, k=k
    )
    return {
        "infected": (inf_v, inf_w),
        "death": (death_v, death_w),
        "asymptomatic": (asym_v, asym_w),
        "health": health_v,
        "supply": supply_v,
        "finance": finance_v,
    }


def emergency_and_plausibility(hard_drives: np.ndarray):
    """Emergency level (top drive) and plausibility ranking, hard path."""
    ranking = plausibility_ranking(hard_drives)
    return emergency_level_hard(hard_drives), ranking


def decision_drives_soft(epidemic_value, finance_value, supply_value, health_value):
    """Assemble the four decision drives from aspect drives (soft path)."""
    home = minimum(as_dtensor(epidemic_value) + minimum(as_dtensor(health_value), 1.0), 3.0)
    return home, as_dtensor(finance_value), as_dtensor(supply_value), as_dtensor(health_value)


def decision_drives_hard(epidemic, finance, supply, health) -> np.ndarray:
    """(P, 4) integer drives ordered (home, work, shop, hospital)."""
    epidemic = np.asarray(epidemic)
    home = np.minimum(epidemic + np.minimum(health, 1), 3)
    return np.stack([home, np.asarray(finance), np.asarray(supply), np.asarray(health)], axis=-1)


def plausibility_ranking(hard_drives: np.ndarray) -> np.ndarray:
    """Decisions ordered by descending drive with the survival tie order.

    Returns (P, 4) decision indices, most plausible first. Deterministic:
    equal drives resolve as shopping, hospital, staying home, working.
    """
    key = TIE_PRIORITY[None, :] - 10 * np.asarray(hard_drives)
    return np.argsort(key, axis=-1, kind="stable")


def emergency_level_hard(hard_drives: np.ndarray) -> np.ndarray:
    """Top of the sorted decision drives."""
    return np.asarray(hard_drives).max(axis=-1)


def emergency_level_soft(home, work, shop, hospital) -> DTensor:
    return maximum(maximum(home, work), maximum(shop, hospital))


def decision_mass_row(top_prob) -> list:
    """Closed-form mass split (top, 1/2, 3/10, 1/5 of the remainder)."""
    top = as_dtensor(top_prob)
    rest = 1.0 - top
    return [top, rest * 0.5, rest * 0.3, rest * 0.2]


def decision_distribution(emergency_soft, ranking: np.ndarray, mass_rows) -> DTensor:
    """Probabilities over the four decisions.

    `mass_rows[level-1]` holds the four rank masses for emergency level
    1..3 (higher level, more skewed). The emergency level interpolates
    between adjacent rows piecewise-linearly (exact row selection at
    integer levels), and the masses land on decisions by rank.
    """
    e = as_dtensor(emergency_soft)
    w3 = clip(e - 2.0, 0.0, 1.0)
    w1 = clip(2.0 - e, 0.0, 1.0)
    w2 = 1.0 - w1 - w3
    weights = (w1, w2, w3)
    by_rank = []
    for rank in range(N_DECISIONS):
        mixed = weights[0] * mass_rows[0][rank]
        mixed = mixed + weights[1] * mass_rows[1][rank]
        mixed = mixed + weights[2] * mass_rows[2][rank]
        by_rank.append(mixed)
    rank_matrix = stack(by_rank, axis=-1)
    decision_to_rank = np.argsort(ranking, axis=-1)
    return take_along(rank_matrix, decision_to_rank)


def select_location(decision, preference_onehots: np.ndarray) -> DTensor:
    """Contract the decision vector with per-decision facility preferences.

    `preference_onehots` has shape (3, P, F): one-hot facility rows for
    work, shop and hospital. Staying home contributes nothing, so a pure
    home decision yields an all-zero location row.
    """
    d = as_dtensor(decision)
    P = d.shape[0]
    cols = [reshape(d[:, idx], (P, 1)) for idx in (WORK, SHOP, HOSPITAL)]
    out = cols[0] * preference_onehots[0]
    out = out + cols[1] * preference_onehots[1]
    out = out + cols[2] * preference_onehots[2]
    return out
