"""Discrete, non-differentiable reference implementation.

One Python object per agent, hard if-then rules, true modulo calendar
arithmetic, and sampled (not expected) transmissions. Semantics mirror the
tensorised engine; this module is deliberately agent-loop structured and
unoptimised because it doubles as the runtime baseline the speedup claim
is measured against.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from .behaviour import EPIDEMIC_DRIVE_TABLE
from .engine import ModelParams, SimulationOutput
from .epidemic import (
    CRITICAL_THRESHOLD,
    INCUBATION_LOG_MEAN,
    INCUBATION_LOG_SD,
    LETHAL_THRESHOLD,
    REMISSION_THRESHOLD,
    SYMPTOM_THRESHOLD,
    SYMPTOMATIC_AGE_SCALE,
    SYMPTOMATIC_MEAN,
    SYMPTOMATIC_SD,
)
from .errors import ConfigurationError

_DRIVE_TABLE = EPIDEMIC_DRIVE_TABLE.tolist()
_TIE_PRIORITY = [2, 3, 0, 1]  # home, work, shop, hospital
_SEVERITY_BANDS = (1.0, 4.0)

S, A, I, D = 0, 1, 2, 3
HOME, WORK, SHOP, HOSPITAL = 0, 1, 2, 3


class Agent:
    """A single simulated person with explicit scalar state."""

    def __init__(self):
        self.health = S
        self.severity = 0.0
        self.immunity = 1.0
        self.initiations = 0.0
        self.infection_start = 0.0
        self.incubation = 0.0
        self.symptomatic_len = 0.0
        self.remission_flag = False

        self.age = 0.0
        self.age_impact = 0.0
        self.salary = 0.0
        self.salary_cut = 0.0
        self.bill = 0.0
        self.absence_limit = 0.0
        self.absence_alert = 0.0
        self.thr_inf = (0.0, 0.0)
        self.thr_death = (0.0, 0.0)
        self.thr_asym = (0.0, 0.0)
        self.supply_upper = 0.0
        self.mass_rows = None  # [level-1][rank] -> mass

        self.office = 0
        self.market = 0
        self.hospital = 0

        self.supplies = 0.0
        self.savings = 0.0
        self.absent = 0.0

        self.location = None
        self.decision = None


def _aspect_level(value, thr1, thr2):
    return 1 + (value >= thr1) + (value >= thr2)


def _supply_level(value, lower, upper):
    return 1 + (value < upper) + (value < lower)


def _finance_level(savings, bill, absent, alert, weekend):
    if weekend:
        return 1
    return 1 + (savings < bill) + (absent >= alert)


def _epidemic_level(tau_level, zeta_level, delta_level):
    return _DRIVE_TABLE[tau_level - 1][zeta_level - 1][delta_level - 1]


def _rank_decisions(drives):
    return sorted(range(4), key=lambda d: (-drives[d], _TIE_PRIORITY[d]))


@dataclass
class DiscreteState:
    """Bookkeeping for one discrete replicate."""

    agents: list
    rng: random.Random
    sev_mean: float
    sev_sd: float
    cumulative_infections: float


def _draw_durations(agent: Agent, rng: random.Random):
    agent.incubation = math.exp(rng.gauss(INCUBATION_LOG_MEAN, INCUBATION_LOG_SD))
    raw = rng.gauss(SYMPTOMATIC_MEAN, SYMPTOMATIC_SD)
    scale = agent.age / (SYMPTOMATIC_AGE_SCALE * agent.immunity)
    agent.symptomatic_len = max(scale * raw, 0.0)


def _init_agents(mp: ModelParams, rng: random.Random) -> DiscreteState:
    mp.validate()
    P = mp.population
    agents = [Agent() for _ in range(P)]

    for ag in agents:
        ag.salary = max(rng.gauss(mp.salary_mean, mp.salary_sd), 0.0)
        ag.salary_cut = rng.random()
        if mp.age_mode == "normal":
            ag.age = min(max(rng.gauss(mp.age_mean, mp.age_sd), 1.0), 100.0)
        else:
            ag.age = rng.uniform(18.0, 65.0)
        ag.age_impact = mp.age_impact * ag.age
        ag.bill = max(rng.gauss(mp.bill_mean, mp.bill_sd), 0.0)
        ag.absence_limit = max(rng.gauss(mp.absence_limit_mean, mp.absence_limit_sd), 0.0)
        ag.absence_alert = ag.absence_limit * rng.random()

        def _thr(mean, ratio):
            upper = min(max(rng.gauss(mean, mp.judgment_sd), 1e-4), 1.0)
            return (upper * ratio, upper)

        ag.thr_inf = _thr(mp.infected_threshold, mp.infected_threshold_ratio)
        ag.thr_death = _thr(mp.death_threshold, mp.death_threshold_ratio)
        ag.thr_asym = _thr(mp.asymp_threshold, mp.asymp_threshold_ratio)
        ag.supply_upper = mp.supply_mean

        top3 = min(max(rng.gauss(mp.top_prob, mp.top_prob_sd), 1e-3), 1.0 - 1e-3)
        top2 = top3 * mp.top_prob_decay
        top1 = top2 * mp.top_prob_decay2
        ag.mass_rows = [
            [t, 0.5 * (1 - t), 0.3 * (1 - t), 0.2 * (1 - t)] for t in (top1, top2, top3)
        ]

        ag.supplies = rng.gauss(mp.supply_mean, mp.supply_sd)
        ag.savings = rng.gauss(mp.savings_mean, mp.savings_sd)

        ag.office = 3 * rng.randrange(mp.clusters)
        ag.market = 3 * rng.randrange(mp.clusters) + 1
        ag.hospital = 3 * rng.randrange(mp.clusters) + 2

    s0, a0, i0, d0 = mp.counts()
    idx = 0
    for _ in range(s0):
        agents[idx].health = S
        idx += 1
    for _ in range(a0):
        ag = agents[idx]
        ag.health = A
        ag.infection_start = 0.0
        _draw_durations(ag, rng)
        idx += 1
    for _ in range(i0):
        ag = agents[idx]
        ag.health = I
        _draw_durations(ag, rng)
        ag.infection_start = -ag.incubation
        ag.severity = 2.0
        idx += 1
    for _ in range(d0):
        agents[idx].health = D
        agents[idx].severity = 7.0
        idx += 1

    return DiscreteState(
        agents=agents,
        rng=rng,
        sev_mean=mp.severity_mean,
        sev_sd=mp.severity_sd,
        cumulative_infections=float(a0 + i0),
    )


def run_discrete(mp: ModelParams, seed: int, horizon: int | None = None) -> SimulationOutput:
    """Simulate the discrete reference model over the full horizon."""
    if horizon is not None:
        mp = mp.with_values(horizon=int(horizon))
    if mp.horizon < 1:
        raise ConfigurationError("horizon must be at least 1 day")
    rng = random.Random(seed)
    state = _init_agents(mp, rng)
    agents = state.agents
    P = mp.population
    m = mp.encounter_prob
    beta = mp.transmission_prob
    cap = mp.purchase_cap
    lo = min(mp.supply_mean, mp.supply_sd)
    hi = max(mp.supply_mean, mp.supply_sd)

    days = []
    for t in range(1, mp.horizon + 1):
        weekend = 1 if t % 7 in (6, 0) else 0
        month_end = 1 if t % 30 == 0 else 0

        # external observation interface
        deaths_total = sum(1 for ag in agents if ag.health == D)
        asym_total = sum(1 for ag in agents if ag.health == A)
        sym_total = sum(1 for ag in agents if ag.health == I)
        infected_prop = state.cumulative_infections / P
        death_rate = (
            deaths_total / state.cumulative_infections
            if state.cumulative_infections > 0
            else 0.0
        )
        asym_prop = (
            asym_total / (asym_total + sym_total) if asym_total + sym_total > 0 else 0.0
        )

        # behavioural rule, one agent at a time
        decision_counts = [0, 0, 0, 0]
        for ag in agents:
            if ag.health == D:
                ag.location = None
                ag.decision = None
                continue
            tau_lvl = _aspect_level(infected_prop, ag.thr_inf[0], ag.thr_inf[1])
            zeta_lvl = _aspect_level(death_rate, ag.thr_death[0], ag.thr_death[1])
            delta_lvl = _aspect_level(asym_prop, ag.thr_asym[0], ag.thr_asym[1])
            epi = _epidemic_level(tau_lvl, zeta_lvl, delta_lvl)
            health = _aspect_level(ag.severity, _SEVERITY_BANDS[0], _SEVERITY_BANDS[1])
            supply = _supply_level(ag.supplies, 0.0, ag.supply_upper)
            finance = _finance_level(ag.savings, ag.bill, ag.absent, ag.absence_alert, weekend)
            drives = [
                min(3, epi + min(1, health)),
                finance,
                supply,
                health,
            ]
            ranking = _rank_decisions(drives)
            emergency = drives[ranking[0]]
            row = ag.mass_rows[emergency - 1]
            r = state.rng.random()
            acc = 0.0
            choice = ranking[-1]
            for rank_pos, dec in enumerate(ranking):
                acc += row[rank_pos]
                if r < acc:
                    choice = dec
                    break
            ag.decision = choice
            if choice == HOME:
                ag.location = None
            elif choice == WORK:
                ag.location = ag.office
            elif choice == SHOP:
                ag.location = ag.market
            else:
                ag.location = ag.hospital
            decision_counts[choice] += 1

        # encounters: every pair is checked, as the dense formulation does
        rng_local = state.rng
        for i in range(P):
            agent_i = agents[i]
            for j in range(i + 1, P):
                agent_j = agents[j]
                if agent_i.location is None or agent_j.location is None:
                    continue
                if agent_i.location != agent_j.location:
                    continue
                if rng_local.random() >= m:
                    continue
                if agent_i.health == S and agent_j.health in (A, I):
                    if rng_local.random() < beta:
                        agent_i.initiations += 1.0
                elif agent_j.health == S and agent_i.health in (A, I):
                    if rng_local.random() < beta:
                        agent_j.initiations += 1.0

        # progression for previously infected, then new infections
        new_infections = 0
        for ag in agents:
            if ag.health in (A, I):
                if t - ag.infection_start > ag.incubation:
                    ag.severity += (
                        ag.age_impact
                        * rng_local.gauss(state.sev_mean, state.sev_sd)
                        / ag.immunity
                    )
                if ag.severity > LETHAL_THRESHOLD:
                    ag.health = D
                    continue
                below = ag.severity < REMISSION_THRESHOLD
                if ag.remission_flag:
                    recovered = below
                else:
                    recovered = t - ag.infection_start > ag.incubation + ag.symptomatic_len
                if recovered:
                    ag.health = S
                    ag.severity = 0.0
                    ag.immunity += 1.0
                    ag.remission_flag = False
                    ag.initiations = 0.0
                else:
                    ag.remission_flag = below and not ag.remission_flag
                    ag.health = I if ag.severity > SYMPTOM_THRESHOLD else A
            elif ag.health == S and ag.initiations > ag.immunity:
                ag.health = A
                ag.infection_start = float(t)
                _draw_durations(ag, rng_local)
                ag.initiations = 0.0
                ag.severity = 0.0
                new_infections += 1
        state.cumulative_infections += new_infections

        # mutation
        if rng_local.random() < mp.mutation_prob:
            for ag in agents:
                if rng_local.random() < mp.escape_prob:
                    ag.immunity = max(ag.immunity - 1.0, 1.0)
            state.sev_mean *= rng_local.uniform(0.5, 1.5)
            state.sev_sd *= rng_local.uniform(0.5, 1.5)

        # economy
        for ag in agents:
            if ag.health == D:
                continue
            if ag.decision == SHOP:
                purchase = min(rng_local.uniform(lo, hi), cap)
                ag.supplies += purchase
                ag.savings -= purchase * mp.price
            ag.supplies -= 1.0
            if month_end:
                if ag.absent > ag.absence_limit:
                    ag.savings += ag.salary * ag.salary_cut - ag.bill
                else:
                    ag.savings += ag.salary - ag.bill
                ag.absent = 0.0
            elif not weekend and ag.decision != WORK:
                ag.absent += 1.0

        deaths_total = sum(1 for ag in agents if ag.health == D)
        critical = sum(
            1 for ag in agents if ag.health in (A, I) and ag.severity > CRITICAL_THRESHOLD
        )
        days.append(
            {
                "new_infections": float(new_infections),
                "cumulative_infections": state.cumulative_infections,
                "cumulative_deaths": float(deaths_total),
                "critical": float(critical),
                "decisions": list(decision_counts),
                "classes": [
                    sum(1 for ag in agents if ag.health == h) for h in (S, A, I, D)
                ],
            }
        )

    deaths = np.array([d["cumulative_deaths"] for d in days])
    return SimulationOutput(
        day=np.arange(1, mp.horizon + 1),
        new_infections=np.array([d["new_infections"] for d in days]),
        cumulative_infections=np.array([d["cumulative_infections"] for d in days]),
        new_deaths=np.diff(deaths, prepend=float(mp.counts()[3])),
        cumulative_deaths=deaths,
        critical=np.array([d["critical"] for d in days]),
        decision_counts=np.array([d["decisions"] for d in days], dtype=float),
        class_counts=np.array([d["classes"] for d in days], dtype=float),
    )


@dataclass
class ObservableComparison:
    name: str
    discrete_mean: float
    discrete_se: float
    engine_mean: float
    engine_se: float
    z_score: float
    within_band: bool


@dataclass
class EquivalenceReport:
    comparisons: list
    replicates_discrete: int
    replicates_engine: int

    def passed(self) -> bool:
        return all(c.within_band for c in self.comparisons)


def equivalence_report(
    mp: ModelParams,
    seeds,
    horizon: int | None = None,
    engine_replicates: int | None = None,
    observables=("cumulative_infections", "cumulative_deaths"),
    band_se: float = 3.0,
    engine_params: ModelParams | None = None,
    engine_seed0: int = 10_000_019,
) -> EquivalenceReport:
    """Compare discrete replicates against the relaxed engine statistically.

    Final-day means of each observable must agree within `band_se`
    combined standard errors. Expected-value semantics differ from the
    Bernoulli realisations per trajectory, so the comparison is between
    replicate distributions, never paths. `engine_params` lets the harness
    be pointed at a deliberately mismatched engine configuration.
    """
    from .engine import run as engine_run

    seeds = list(seeds)
    if len(seeds) < 30:
        raise ConfigurationError("equivalence requires at least 30 replicates")
    n_engine = engine_replicates or max(30, len(seeds) // 2)
    engine_params = engine_params or mp

    discrete_final = {name: [] for name in observables}
    for s in seeds:
        out = run_discrete(mp, s, horizon)
        for name in observables:
            discrete_final[name].append(out.series(name)[-1])

    engine_final = {name: [] for name in observables}
    for i in range(n_engine):
        out = engine_run(engine_params, seed=engine_seed0 + i, horizon=horizon)
        for name in observables:
            engine_final[name].append(out.series(name)[-1])

    comparisons = []
    for name in observables:
        d = np.asarray(discrete_final[name])
        e = np.asarray(engine_final[name])
        d_se = d.std(ddof=1) / np.sqrt(len(d))
        e_se = e.std(ddof=1) / np.sqrt(len(e))
        combined = float(np.hypot(d_se, e_se))
        diff = float(d.mean() - e.mean())
        z = diff / combined if combined > 0 else (0.0 if diff == 0 else np.inf)
        comparisons.append(
            ObservableComparison(
                name=name,
                discrete_mean=float(d.mean()),
                discrete_se=float(d_se),
                engine_mean=float(e.mean()),
                engine_se=float(e_se),
                z_score=float(z),
                within_band=abs(z) <= band_se,
            )
        )
    return EquivalenceReport(
        comparisons=comparisons,
        replicates_discrete=len(seeds),
        replicates_engine=n_engine,
    )
