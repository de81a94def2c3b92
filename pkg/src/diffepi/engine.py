"""Model assembly: parameter set, initialisation, per-step workflow, outputs.

Each step runs the same pipeline: observe -> behave -> select locations ->
encounters -> exposures -> infections -> durations/severity/recovery/
mutation -> economy -> aggregation. All per-agent quantities are (P,)
tensors, so one simulation is a single differentiable graph from the
learnable parameter scalars to the daily output series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import behaviour, epidemic, society
from .behaviour import HOME, HOSPITAL, N_DECISIONS, SHOP, WORK
from .diffcore import (
    DTensor,
    NoiseStream,
    RelaxConfig,
    as_dtensor,
    clip,
    maximum,
    minimum,
    no_grad,
    relax_precise,
    reshape,
    sample_categorical_reparam,
    sample_normal_reparam,
    sample_uniform_reparam,
    stack,
)
from .errors import ConfigurationError

# learnable parameter names with their natural domains; "unit" squashes to
# (0,1), "positive" to (0, inf) during calibration
LEARNABLE_SPECS: tuple[tuple[str, str], ...] = (
    ("price", "positive"),
    ("supply_mean", "positive"),
    ("supply_sd", "positive"),
    ("savings_mean", "positive"),
    ("savings_sd", "positive"),
    ("bill_mean", "positive"),
    ("bill_sd", "positive"),
    ("absence_limit_mean", "positive"),
    ("absence_limit_sd", "positive"),
    ("top_prob", "unit"),
    ("top_prob_decay", "unit"),
    ("top_prob_decay2", "unit"),
    ("top_prob_sd", "positive"),
    ("salary_mean", "positive"),
    ("salary_sd", "positive"),
    ("encounter_prob", "unit"),
    ("transmission_prob", "unit"),
    ("age_impact", "positive"),
    ("age_mean", "positive"),
    ("age_sd", "positive"),
    ("mutation_prob", "unit"),
    ("escape_prob", "unit"),
    ("severity_sd", "positive"),
    ("severity_mean", "positive"),
    ("infected_threshold", "unit"),
    ("infected_threshold_ratio", "unit"),
    ("death_threshold", "unit"),
    ("death_threshold_ratio", "unit"),
    ("asymp_threshold", "unit"),
    ("asymp_threshold_ratio", "unit"),
    ("judgment_sd", "positive"),
)

LEARNABLE_NAMES = tuple(name for name, _ in LEARNABLE_SPECS)
AGE_RANGE = (18.0, 65.0)


@dataclass
class ModelParams:
    """Non-learnable structure plus the learnable parameter set."""

    population: int = 500
    initial_counts: Optional[tuple] = None  # (S0, A0, I0, D0); default 2% asymptomatic
    horizon: int = 100
    clusters: int = 3
    steepness: float = 10.0
    relax: RelaxConfig = field(default_factory=RelaxConfig)
    purchase_cap: float = math.inf
    age_mode: str = "uniform"  # "uniform" U(18,65) or "normal" N(age_mean, age_sd)

    price: float = 4.0
    supply_mean: float = 14.0
    supply_sd: float = 3.0
    savings_mean: float = 800.0
    savings_sd: float = 200.0
    bill_mean: float = 300.0
    bill_sd: float = 60.0
    absence_limit_mean: float = 5.0
    absence_limit_sd: float = 1.0
    top_prob: float = 0.7
    top_prob_decay: float = 0.9
    top_prob_decay2: float = 0.9
    top_prob_sd: float = 0.05
    salary_mean: float = 600.0
    salary_sd: float = 120.0
    encounter_prob: float = 0.5
    transmission_prob: float = 0.4
    age_impact: float = 0.023
    age_mean: float = 41.5
    age_sd: float = 13.6
    mutation_prob: float = 0.01
    escape_prob: float = 0.5
    severity_sd: float = 0.8
    severity_mean: float = 0.25
    infected_threshold: float = 0.25
    infected_threshold_ratio: float = 0.4
    death_threshold: float = 0.1
    death_threshold_ratio: float = 0.3
    asymp_threshold: float = 0.7
    asymp_threshold_ratio: float = 0.7
    judgment_sd: float = 0.02

    def counts(self) -> tuple:
        if self.initial_counts is not None:
            return tuple(int(c) for c in self.initial_counts)
        seeded = max(1, round(0.02 * self.population))
        return (self.population - seeded, seeded, 0, 0)

    def validate(self) -> None:
        counts = self.counts()
        if len(counts) != 4 or any(c < 0 for c in counts):
            raise ConfigurationError(f"invalid initial class counts {counts}")
        if sum(counts) != self.population:
            raise ConfigurationError(
                f"initial class counts {counts} must sum to population {self.population}"
            )
        if self.population < 1:
            raise ConfigurationError("population must be at least 1")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be at least 1 day")
        if self.clusters < 1:
            raise ConfigurationError("at least one facility cluster is required")
        if self.age_mode not in ("uniform", "normal"):
            raise ConfigurationError(f"unknown age_mode {self.age_mode!r}")
        for name, domain in LEARNABLE_SPECS:
            v = getattr(self, name)
            if domain == "unit" and not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0,1], got {v}")
            if domain == "positive" and v <= 0.0:
                raise ConfigurationError(f"{name} must be positive, got {v}")

    def learnables(self) -> dict:
        return {name: getattr(self, name) for name in LEARNABLE_NAMES}

    def with_values(self, **kwargs) -> "ModelParams":
        return replace(self, **kwargs)


@dataclass
class SimState:
    """Everything a step needs: parameters, static config, dynamic tensors."""

    mp: ModelParams
    params: dict
    noise: NoiseStream
    calendar: society.Calendar
    fmap: society.FacilityMap
    t: int

    # static agent configuration
    age: np.ndarray
    age_impact_agent: DTensor
    salary: DTensor
    salary_cut: np.ndarray
    bill: DTensor
    absence_limit: DTensor
    absence_alert: DTensor
    thr_inf1: DTensor
    thr_inf2: DTensor
    thr_death1: DTensor
    thr_death2: DTensor
    thr_asym1: DTensor
    thr_asym2: DTensor
    supply_upper: DTensor
    mass_rows: list
    pref_onehots: np.ndarray

    # dynamic health state
    susceptible: DTensor
    asymptomatic: DTensor
    symptomatic: DTensor
    deceased: DTensor
    severity: DTensor
    immunity: DTensor
    initiations: DTensor
    infection_start: DTensor
    incubation: DTensor
    symptomatic_len: DTensor
    remission_flag: DTensor

    # dynamic economy and epidemic law
    supplies: DTensor
    savings: DTensor
    absent: DTensor
    sev_mean: DTensor
    sev_sd: DTensor
    cumulative_infections: DTensor


@dataclass
class SimulationOutput:
    """Daily aggregate series; tensor views retained for gradient runs."""

    day: np.ndarray
    new_infections: np.ndarray
    cumulative_infections: np.ndarray
    new_deaths: np.ndarray
    cumulative_deaths: np.ndarray
    critical: np.ndarray
    decision_counts: np.ndarray  # (T, 4) home/work/shop/hospital
    class_counts: np.ndarray  # (T, 4) S/A/I/D
    tensors: Optional[dict] = None

    SERIES = (
        "new_infections",
        "cumulative_infections",
        "new_deaths",
        "cumulative_deaths",
        "critical",
    )

    def series(self, name: str) -> np.ndarray:
        if name in self.SERIES:
            return getattr(self, name)
        if name in ("home", "work", "shop", "hospital"):
            return self.decision_counts[:, (HOME, WORK, SHOP, HOSPITAL)[("home", "work", "shop", "hospital").index(name)]]
        raise ConfigurationError(f"unknown observable {name!r}")

    def tensor_series(self, name: str) -> DTensor:
        if self.tensors is None or name not in self.tensors:
            raise ConfigurationError(
                f"tensor series {name!r} not collected; run with gradients enabled"
            )
        return stack(self.tensors[name])


def _param_tensors(mp: ModelParams, overrides: Optional[dict]) -> dict:
    params = {name: as_dtensor(getattr(mp, name)) for name in LEARNABLE_NAMES}
    if overrides:
        for name, value in overrides.items():
            if name not in params:
                raise ConfigurationError(f"unknown learnable parameter {name!r}")
            params[name] = as_dtensor(value)
    return params


def init_model(mp: ModelParams, seed: int, param_overrides: Optional[dict] = None) -> SimState:
    """Draw the agent population and initial state from the parameter set."""
    mp.validate()
    params = _param_tensors(mp, param_overrides)
    P = mp.population
    noise = NoiseStream(seed)
    fmap = society.FacilityMap(mp.clusters)
    calendar = society.Calendar.build(mp.horizon, mp.relax.xi)

    zeros = np.zeros(P)

    salary = maximum(sample_normal_reparam(params["salary_mean"] + zeros, params["salary_sd"], noise), 0.0)
    salary_cut = noise.uniform((P,))
    if mp.age_mode == "normal":
        age_t = clip(sample_normal_reparam(params["age_mean"] + zeros, params["age_sd"], noise), 1.0, 100.0)
        age = age_t.values
    else:
        age_t = None
        age = AGE_RANGE[0] + (AGE_RANGE[1] - AGE_RANGE[0]) * noise.uniform((P,))
    age_impact_agent = params["age_impact"] * (age_t if age_t is not None else age)
    bill = maximum(sample_normal_reparam(params["bill_mean"] + zeros, params["bill_sd"], noise), 0.0)
    absence_limit = maximum(
        sample_normal_reparam(params["absence_limit_mean"] + zeros, params["absence_limit_sd"], noise), 0.0
    )
    absence_alert = absence_limit * noise.uniform((P,))

    j_sd = params["judgment_sd"]
    thr_inf2 = clip(sample_normal_reparam(params["infected_threshold"] + zeros, j_sd, noise), 1e-4, 1.0)
    thr_inf1 = thr_inf2 * params["infected_threshold_ratio"]
    thr_death2 = clip(sample_normal_reparam(params["death_threshold"] + zeros, j_sd, noise), 1e-4, 1.0)
    thr_death1 = thr_death2 * params["death_threshold_ratio"]
    thr_asym2 = clip(sample_normal_reparam(params["asymp_threshold"] + zeros, j_sd, noise), 1e-4, 1.0)
    thr_asym1 = thr_asym2 * params["asymp_threshold_ratio"]

    top3 = clip(sample_normal_reparam(params["top_prob"] + zeros, params["top_prob_sd"], noise), 1e-3, 1.0 - 1e-3)
    top2 = top3 * params["top_prob_decay"]
    top1 = top2 * params["top_prob_decay2"]
    mass_rows = [behaviour.decision_mass_row(top) for top in (top1, top2, top3)]

    supplies = sample_normal_reparam(params["supply_mean"] + zeros, params["supply_sd"], noise)
    savings = sample_normal_reparam(params["savings_mean"] + zeros, params["savings_sd"], noise)

    pref_onehots = np.zeros((3, P, fmap.n_facilities))
    for slot, kind in enumerate((fmap.OFFICE, fmap.MARKET, fmap.HOSPITAL)):
        cluster = noise.integers(0, fmap.n_clusters, (P,))
        pref_onehots[slot, np.arange(P), 3 * cluster + kind] = 1.0

    s0, a0, i0, d0 = mp.counts()
    class_of = np.repeat(np.arange(4), [s0, a0, i0, d0])
    sus = (class_of == 0).astype(float)
    asym = (class_of == 1).astype(float)
    sym = (class_of == 2).astype(float)
    dec = (class_of == 3).astype(float)

    immunity = DTensor(np.ones(P))
    incubation, symptomatic_len = epidemic.sample_durations(age, immunity, noise)
    # initially symptomatic agents are already past incubation
    infection_start = as_dtensor(-sym) * incubation
    severity = DTensor(2.0 * sym + 7.0 * dec)

    return SimState(
        mp=mp,
        params=params,
        noise=noise,
        calendar=calendar,
        fmap=fmap,
        t=0,
        age=age,
        age_impact_agent=age_impact_agent,
        salary=salary,
        salary_cut=salary_cut,
        bill=bill,
        absence_limit=absence_limit,
        absence_alert=absence_alert,
        thr_inf1=thr_inf1,
        thr_inf2=thr_inf2,
        thr_death1=thr_death1,
        thr_death2=thr_death2,
        thr_asym1=thr_asym1,
        thr_asym2=thr_asym2,
        supply_upper=params["supply_mean"],
        mass_rows=mass_rows,
        pref_onehots=pref_onehots,
        susceptible=DTensor(sus),
        asymptomatic=DTensor(asym),
        symptomatic=DTensor(sym),
        deceased=DTensor(dec),
        severity=severity,
        immunity=immunity,
        initiations=DTensor(np.zeros(P)),
        infection_start=infection_start,
        incubation=incubation,
        symptomatic_len=symptomatic_len,
        remission_flag=DTensor(np.zeros(P)),
        supplies=supplies,
        savings=savings,
        absent=DTensor(np.zeros(P)),
        sev_mean=params["severity_mean"],
        sev_sd=params["severity_sd"],
        cumulative_infections=DTensor(float(a0 + i0)),
    )


def step(state: SimState, t: int) -> dict:
    """Advance one day; mutates the state and returns the day's aggregates."""
    mp = state.mp
    if t > mp.horizon:
        raise ConfigurationError(f"step {t} beyond horizon {mp.horizon}")
    P = mp.population
    xi = mp.relax.xi
    k = mp.steepness
    temp = mp.relax.temperature
    noise = state.noise

    weekend = float(state.calendar.weekend[t])
    weekend_exact = int(state.calendar.weekend_exact[t])
    month_end = float(state.calendar.month_end[t])

    # observe
    obs = behaviour.observe(
        state.cumulative_infections,
        state.deceased.sum(),
        state.asymptomatic.sum(),
        state.symptomatic.sum(),
        P,
        state.severity,
        state.supplies,
        state.savings,
        state.absent,
    )

    # judge: fuzzy drives for the gradient path
    _, w_inf = behaviour.aspect_drive_soft(obs.infected_prop, state.thr_inf1, state.thr_inf2, k)
    _, w_death = behaviour.aspect_drive_soft(obs.death_rate, state.thr_death1, state.thr_death2, k)
    _, w_asym = behaviour.aspect_drive_soft(obs.asymptomatic_prop, state.thr_asym1, state.thr_asym2, k)
    epi_soft = behaviour.epidemic_drive_soft(
        stack(list(w_inf), axis=-1), stack(list(w_death), axis=-1), stack(list(w_asym), axis=-1)
    )
    health_soft, _ = behaviour.aspect_drive_soft(
        state.severity, behaviour.SEVERITY_THRESHOLDS[0], behaviour.SEVERITY_THRESHOLDS[1], k
    )
    supply_soft, _ = behaviour.aspect_drive_soft(
        state.supplies, behaviour.SUPPLY_LOWER_THRESHOLD, state.supply_upper, k, increasing=False
    )
    finance_soft = behaviour.finance_drive_soft(
        state.savings, state.bill, state.absent, state.absence_alert, weekend, k
    )
    home_d, work_d, shop_d, hospital_d = behaviour.decision_drives_soft(
        epi_soft, finance_soft, supply_soft, health_soft
    )

    # rank: hard drives, identical to the discrete reference
    inf_h = behaviour.aspect_drive_hard(obs.infected_prop.values, state.thr_inf1.values, state.thr_inf2.values)
    death_h = behaviour.aspect_drive_hard(obs.death_rate.values, state.thr_death1.values, state.thr_death2.values)
    asym_h = behaviour.aspect_drive_hard(obs.asymptomatic_prop.values, state.thr_asym1.values, state.thr_asym2.values)
    epi_h = behaviour.epidemic_severity_drive(inf_h + np.zeros(P, dtype=int), death_h, asym_h)
    health_h = behaviour.aspect_drive_hard(state.severity.values, *behaviour.SEVERITY_THRESHOLDS)
    supply_h = behaviour.aspect_drive_hard(
        state.supplies.values, behaviour.SUPPLY_LOWER_THRESHOLD, state.supply_upper.values, increasing=False
    )
    finance_h = behaviour.finance_drive_hard(
        state.savings.values, state.bill.values, state.absent.values, state.absence_alert.values, weekend_exact
    )
    drives_h = behaviour.decision_drives_hard(epi_h, finance_h, supply_h, health_h)
    ranking = behaviour.plausibility_ranking(drives_h)

    emergency = behaviour.emergency_level_soft(home_d, work_d, shop_d, hospital_d)
    probs = behaviour.decision_distribution(emergency, ranking, state.mass_rows)
    decision = sample_categorical_reparam(probs, temp, noise)
    alive = 1.0 - state.deceased
    decision = decision * reshape(alive, (P, 1))

    # move
    locations = behaviour.select_location(decision, state.pref_onehots)

    # transmit
    exposures = epidemic.colocated_exposures(
        locations,
        state.susceptible,
        state.asymptomatic,
        state.symptomatic,
        state.params["encounter_prob"],
        state.params["transmission_prob"],
    )
    infect, initiations = epidemic.establish_infections(
        state.initiations, exposures, state.immunity, state.susceptible, xi
    )

    # commit infection clocks for the newly infected
    new_inc, new_sym = epidemic.sample_durations(state.age, state.immunity, noise)
    keep = 1.0 - infect
    incubation = state.incubation * keep + new_inc * infect
    symptomatic_len = state.symptomatic_len * keep + new_sym * infect
    infection_start = state.infection_start * keep + float(t) * infect

    # progress
    infected_prev = state.asymptomatic + state.symptomatic
    severity = epidemic.severity_step(
        state.severity, infected_prev, t, infection_start, incubation,
        state.sev_mean, state.sev_sd, state.age_impact_agent, state.immunity, noise,
    )
    death_ind = relax_precise(severity, epidemic.LETHAL_THRESHOLD, 1.0, xi)
    newly_dead = infected_prev * death_ind
    alive_infected = infected_prev * (1.0 - death_ind)
    recovery, rec_flag, remission_flag = epidemic.recovery_step(
        severity, state.remission_flag, alive_infected, t,
        infection_start, incubation, symptomatic_len, xi,
    )
    remaining = alive_infected * (1.0 - rec_flag)
    sus, asym, sym, dec = epidemic.health_update(
        state.susceptible, state.asymptomatic, state.symptomatic, state.deceased,
        infect, recovery, remaining, severity, newly_dead, xi,
    )
    severity = severity * (1.0 - rec_flag * (1.0 - death_ind))
    immunity = state.immunity + recovery

    _, immunity, sev_mean, sev_sd = epidemic.mutation_step(
        immunity, state.sev_mean, state.sev_sd,
        state.params["mutation_prob"], state.params["escape_prob"], noise, temp, P,
    )

    # economy
    lo = minimum(state.params["supply_mean"], state.params["supply_sd"]) + np.zeros(P)
    hi = maximum(state.params["supply_mean"], state.params["supply_sd"]) + np.zeros(P)
    purchase = sample_uniform_reparam(lo, hi, noise)
    shop_mass = decision[:, SHOP]
    work_mass = decision[:, WORK]
    supplies = society.update_supplies(state.supplies, shop_mass, purchase, mp.purchase_cap)
    savings, absent = society.update_finances(
        state.savings, state.absent, shop_mass, work_mass, purchase,
        state.params["price"], state.salary, state.salary_cut,
        state.absence_limit, state.bill, weekend, month_end, xi, mp.purchase_cap,
    )

    # aggregate
    new_infections = infect.sum()
    cumulative_infections = state.cumulative_infections + new_infections
    prev_deaths = state.deceased.sum()
    deaths_total = dec.sum()
    new_deaths = deaths_total - prev_deaths
    critical = ((asym + sym) * relax_precise(severity, epidemic.CRITICAL_THRESHOLD, 1.0, xi)).sum()
    decision_counts = decision.sum(axis=0)
    class_counts = stack([sus.sum(), asym.sum(), sym.sum(), dec.sum()])

    state.susceptible, state.asymptomatic, state.symptomatic, state.deceased = sus, asym, sym, dec
    state.severity = severity
    state.immunity = immunity
    state.initiations = initiations
    state.infection_start = infection_start
    state.incubation = incubation
    state.symptomatic_len = symptomatic_len
    state.remission_flag = remission_flag
    state.supplies = supplies
    state.savings = savings
    state.absent = absent
    state.sev_mean = sev_mean
    state.sev_sd = sev_sd
    state.cumulative_infections = cumulative_infections
    state.t = t

    return {
        "new_infections": new_infections,
        "cumulative_infections": cumulative_infections,
        "new_deaths": new_deaths,
        "cumulative_deaths": deaths_total,
        "critical": critical,
        "decision_counts": decision_counts,
        "class_counts": class_counts,
    }


def run(
    mp: ModelParams,
    seed: int,
    horizon: Optional[int] = None,
    param_overrides: Optional[dict] = None,
    collect_tensors: bool = False,
) -> SimulationOutput:
    """Simulate the full horizon and aggregate daily output series."""
    if horizon is not None:
        mp = mp.with_values(horizon=int(horizon))
    if mp.horizon < 1:
        raise ConfigurationError("horizon must be at least 1 day")

    needs_grad = collect_tensors or (
        param_overrides is not None
        and any(isinstance(v, DTensor) and v.requires_grad for v in param_overrides.values())
    )

    def _run() -> SimulationOutput:
        state = init_model(mp, seed, param_overrides)
        days = []
        for t in range(1, mp.horizon + 1):
            days.append(step(state, t))
        out = SimulationOutput(
            day=np.arange(1, mp.horizon + 1),
            new_infections=np.array([d["new_infections"].item() for d in days]),
            cumulative_infections=np.array([d["cumulative_infections"].item() for d in days]),
            new_deaths=np.array([d["new_deaths"].item() for d in days]),
            cumulative_deaths=np.array([d["cumulative_deaths"].item() for d in days]),
            critical=np.array([d["critical"].item() for d in days]),
            decision_counts=np.stack([d["decision_counts"].values for d in days]),
            class_counts=np.stack([d["class_counts"].values for d in days]),
        )
        if needs_grad:
            out.tensors = {
                name: [d[name] for d in days] for name in SimulationOutput.SERIES
            }
        return out

    if needs_grad:
        return _run()
    with no_grad():
        return _run()
