"""Tensorised SAID health dynamics.

Agents carry relaxed one-hot class masses (susceptible, asymptomatic,
symptomatic, deceased). Encounters arise from co-location, transmission
accumulates expected infection initiations against each host's immune
tolerance, severity follows an age-scaled random walk after incubation,
and mutations erode partial immunity while rescaling the severity law.

Every transition is expressed as mask * source-mass with masks in [0, 1],
so per-agent class masses sum to one by construction and the deceased row
is absorbing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import (
    DTensor,
    NoiseStream,
    XI_DEFAULT,
    as_dtensor,
    make_op,
    matmul,
    maximum,
    relax_precise,
    relu,
    reshape,
    sample_bernoulli_reparam,
    sample_lognormal_reparam,
    sample_normal_reparam,
    sample_uniform_reparam,
    sqrt0,
    transpose,
)
from .errors import ConfigurationError

# class row indices
SUSCEPTIBLE, ASYMPTOMATIC, SYMPTOMATIC, DECEASED = 0, 1, 2, 3

# severity bands: below SYMPTOM_THRESHOLD the agent is asymptomatic, above
# LETHAL_THRESHOLD it dies; early recovery needs severity strictly below
# REMISSION_THRESHOLD on two consecutive days
SYMPTOM_THRESHOLD = 1.0
LETHAL_THRESHOLD = 6.0
REMISSION_THRESHOLD = 0.0
CRITICAL_THRESHOLD = 4.0

# incubation ~ logN(1.63, 0.5); symptomatic ~ age/(43.11*immunity) * N(7.86, 6.46)
INCUBATION_LOG_MEAN = 1.63
INCUBATION_LOG_SD = 0.5
SYMPTOMATIC_MEAN = 7.86
SYMPTOMATIC_SD = 6.46
SYMPTOMATIC_AGE_SCALE = 43.11

IMMUNITY_FLOOR = 1.0
MUTATION_RESCALE_LO = 0.5
MUTATION_RESCALE_HI = 1.5


@dataclass
class HealthState:
    """Relaxed per-agent health: class masses plus progression state."""

    susceptible: DTensor
    asymptomatic: DTensor
    symptomatic: DTensor
    deceased: DTensor
    severity: DTensor
    immunity: DTensor
    initiations: DTensor  # cumulative expected infection initiations
    infection_start: DTensor
    incubation: DTensor
    symptomatic_len: DTensor
    remission_flag: DTensor  # first sub-threshold day marker (conditional)

    def infected(self) -> DTensor:
        return self.asymptomatic + self.symptomatic

    def class_matrix(self) -> np.ndarray:
        return np.stack(
            [
                self.susceptible.values,
                self.asymptomatic.values,
                self.symptomatic.values,
                self.deceased.values,
            ]
        )


@dataclass(frozen=True)
class EpidemicParams:
    """Transmission/mutation/severity knobs, all probabilities in [0,1]."""

    transmission_prob: float
    encounter_prob: float
    mutation_prob: float
    escape_prob: float
    severity_mean: float
    severity_sd: float
    age_impact: float

    def __post_init__(self):
        for name in ("transmission_prob", "encounter_prob", "mutation_prob", "escape_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0,1], got {v}")
        if self.severity_sd <= 0:
            raise ConfigurationError("severity_sd must be positive")


def encounter_matrix(locations, encounter_prob) -> DTensor:
    """Pairwise encounter probabilities from per-agent location one-hots.

    `locations` is (P, F) with each row a (relaxed) one-hot over
    facilities; an all-zero row means the agent stayed home. The entry for
    two agents sharing a facility is exactly the encounter probability;
    the diagonal and pairs involving a home-stayer are exactly zero.
    """
    locations = as_dtensor(locations)
    P = locations.shape[0]
    out_mass = locations.sum(axis=1)
    sq = (locations * locations).sum(axis=1)
    gram = matmul(locations, transpose(locations))
    dist_sq = relu(reshape(sq, (P, 1)) + reshape(sq, (1, P)) - 2.0 * gram)
    dissim = sqrt0(dist_sq) * (1.0 / np.sqrt(2.0))
    off_diag = 1.0 - np.eye(P)
    pair_out = reshape(out_mass, (P, 1)) * reshape(out_mass, (1, P))
    return pair_out * (1.0 - dissim) * off_diag * encounter_prob


def expected_exposures(encounters, susceptible, asymptomatic, symptomatic, transmission_prob) -> DTensor:
    """Expected infection-initiation events per susceptible agent."""
    encounters = as_dtensor(encounters)
    P = encounters.shape[0]
    sus_rows = encounters * reshape(as_dtensor(susceptible), (P, 1))
    infectious = as_dtensor(asymptomatic) + as_dtensor(symptomatic)
    return matmul(sus_rows, infectious) * transmission_prob


def colocated_exposures(
    locations, susceptible, asymptomatic, symptomatic, encounter_prob, transmission_prob
) -> DTensor:
    """Fused encounter_matrix + expected_exposures with checkpointing.

    Numerically identical to composing the two public ops, but the P x P
    intermediates are recomputed during backward instead of being stored
    in the graph, which keeps long-horizon gradient runs in memory.
    """
    loc = as_dtensor(locations)
    sus = as_dtensor(susceptible)
    inf_a, inf_s = as_dtensor(asymptomatic), as_dtensor(symptomatic)
    m, beta = as_dtensor(encounter_prob), as_dtensor(transmission_prob)

    L = loc.values
    P = L.shape[0]
    o = L.sum(axis=1)
    sq = (L * L).sum(axis=1)
    w = o * (inf_a.values + inf_s.values)

    def _pair_factor(keep_dist: bool = False):
        # pair factor (1 - ||l_i - l_j||_F / sqrt(2)) with zero diagonal
        buf = L @ L.T
        buf *= -2.0
        buf += sq[:, None]
        buf += sq[None, :]
        np.maximum(buf, 0.0, out=buf)
        dist_sq = buf.copy() if keep_dist else None
        buf *= 0.5
        np.sqrt(buf, out=buf)
        np.subtract(1.0, buf, out=buf)
        np.fill_diagonal(buf, 0.0)
        return buf, dist_sq

    # v_i = sum_j S_ij w_j with S the pair factor; expanding the complement
    # (sum w - w_i - dissim row dot w) saves whole-matrix passes, and large
    # populations run in row blocks that stay cache-resident
    W = w.sum()
    block = 1024
    if P <= 2 * block:
        S, _ = _pair_factor()
        v = S @ w
    else:
        v = np.empty(P)
        Lt = L.T.copy()
        for start in range(0, P, block):
            sl = slice(start, min(start + block, P))
            buf = L[sl] @ Lt
            buf *= -2.0
            buf += sq[sl, None]
            buf += sq[None, :]
            np.maximum(buf, 0.0, out=buf)
            buf *= 0.5
            np.sqrt(buf, out=buf)
            v[sl] = (W - w[sl]) - buf @ w
    scale = float(m.values) * float(beta.values)
    out = sus.values * o * v * scale

    def _bw(g):
        S2, dist_sq = _pair_factor(keep_dist=True)
        v2 = S2 @ w
        base = sus.values * o * v2
        m._accumulate(np.sum(g * base) * float(beta.values))
        beta._accumulate(np.sum(g * base) * float(m.values))
        gs = g * scale
        sus._accumulate(gs * o * v2)
        # row side of o, plus its appearance inside w
        row = gs * sus.values * v2
        col = S2.T @ (gs * sus.values * o)
        inf_grad = col * o
        inf_a._accumulate(inf_grad)
        inf_s._accumulate(inf_grad)
        do = row + col * (inf_a.values + inf_s.values)
        # gradient through the pair factor; zero subgradient at zero distance
        inv = np.zeros_like(dist_sq)
        pos = dist_sq > 0.0
        inv[pos] = 1.0 / (2.0 * np.sqrt(2.0 * dist_sq[pos]))
        dq = np.outer(-gs * sus.values * o, w)
        np.fill_diagonal(dq, 0.0)
        dq *= inv
        dsq = dq.sum(axis=1) + dq.sum(axis=0)
        dG = -2.0 * dq
        dL = (dG + dG.T) @ L + 2.0 * dsq[:, None] * L + do[:, None]
        loc._accumulate(dL)

    return make_op(out, (loc, sus, inf_a, inf_s, m, beta), _bw)


def establish_infections(initiations, exposures, immunity, susceptible, xi: float = XI_DEFAULT):
    """Accumulate initiations and trigger infection past the immune tolerance.

    Returns (infect mass in [0,1], updated initiations). Newly infected
    agents have their accumulator reset; the caller commits infection
    start time and freshly sampled durations against the infect mass.
    """
    initiations = as_dtensor(initiations)
    sus = as_dtensor(susceptible)
    grown = initiations + as_dtensor(exposures) * sus
    infect = relax_precise(grown, immunity, 1.0, xi) * sus
    return infect, grown * (1.0 - infect)


def sample_durations(age: np.ndarray, immunity, noise: NoiseStream):
    """Fresh incubation/symptomatic durations for this step's infections."""
    P = len(age)
    incubation = sample_lognormal_reparam(
        INCUBATION_LOG_MEAN, INCUBATION_LOG_SD, noise, shape=(P,)
    )
    raw = sample_normal_reparam(np.full(P, SYMPTOMATIC_MEAN), SYMPTOMATIC_SD, noise)
    scale = as_dtensor(age) / (SYMPTOMATIC_AGE_SCALE * as_dtensor(immunity))
    symptomatic_len = relu(scale * raw)
    return incubation, symptomatic_len


def severity_step(
    severity,
    infected_mass,
    t: int,
    infection_start,
    incubation,
    sev_mean,
    sev_sd,
    age_impact_per_agent,
    immunity,
    noise: NoiseStream,
    xi: float = XI_DEFAULT,
) -> DTensor:
    """Random-walk severity increment for infected agents past incubation.

    The incubation-end switch is a health-state transition, so it uses the
    precision-critical gate; increments then carry full weight from the
    first symptomatic day, matching the discrete reference.
    """
    severity = as_dtensor(severity)
    P = severity.shape[0]
    gate = relax_precise(float(t) - as_dtensor(infection_start), incubation, 1.0, xi)
    ds = sample_normal_reparam(
        as_dtensor(sev_mean) + np.zeros(P), maximum(as_dtensor(sev_sd), 0.0) + np.zeros(P), noise
    )
    step = as_dtensor(infected_mass) * gate * as_dtensor(age_impact_per_agent) * ds / as_dtensor(immunity)
    return severity + step


def recovery_step(
    severity,
    remission_flag,
    alive_infected,
    t: int,
    infection_start,
    incubation,
    symptomatic_len,
    xi: float = XI_DEFAULT,
):
    """Early recovery after two consecutive non-positive severity days, or
    natural recovery once incubation + symptomatic durations elapse.

    Returns (recovery mass, recovery flag in [0,1], new remission flag).
    """
    severity = as_dtensor(severity)
    alive = as_dtensor(alive_infected)
    flag = as_dtensor(remission_flag)

    below = relax_precise(REMISSION_THRESHOLD - severity, 0.0, 1.0, xi)
    elapsed = relax_precise(
        float(t) - as_dtensor(infection_start),
        as_dtensor(incubation) + as_dtensor(symptomatic_len),
        1.0,
        xi,
    )
    # conditional recovery intensity; closure recovery <= alive is exact
    recovery_flag = below * flag + elapsed * (1.0 - flag)
    recovery = alive * recovery_flag
    new_flag = below * (1.0 - flag)
    return recovery, recovery_flag, new_flag


def health_update(
    susceptible,
    asymptomatic,
    symptomatic,
    deceased,
    infect,
    recovery,
    remaining_infected,
    severity,
    newly_dead,
    xi: float = XI_DEFAULT,
):
    """Route class masses: infections leave S, recoveries return to S,
    severity bands split the continuing infected, deaths accumulate."""
    infect = as_dtensor(infect)
    recovery = as_dtensor(recovery)
    remaining = as_dtensor(remaining_infected)
    sym_ind = relax_precise(severity, SYMPTOM_THRESHOLD, 1.0, xi)
    new_s = as_dtensor(susceptible) - infect + recovery
    new_a = infect + remaining * (1.0 - sym_ind)
    new_i = remaining * sym_ind
    new_d = as_dtensor(deceased) + as_dtensor(newly_dead)
    return new_s, new_a, new_i, new_d


def mutation_step(
    immunity,
    sev_mean,
    sev_sd,
    mutation_prob,
    escape_prob,
    noise: NoiseStream,
    temperature: float,
    n_agents: int,
):
    """Pathogen mutation: immunity escape plus severity-law rescaling.

    On mutation each agent loses one protection level with the escape
    probability (floored at the base tolerance), and the severity mean/sd
    are independently rescaled by U(0.5, 1.5) factors.
    """
    mutate = sample_bernoulli_reparam(mutation_prob, temperature, noise)
    escape = sample_bernoulli_reparam(
        as_dtensor(escape_prob) + np.zeros(n_agents), temperature, noise
    )
    new_immunity = maximum(as_dtensor(immunity) - mutate * escape, IMMUNITY_FLOOR)
    f_mean = sample_uniform_reparam(MUTATION_RESCALE_LO, MUTATION_RESCALE_HI, noise)
    f_sd = sample_uniform_reparam(MUTATION_RESCALE_LO, MUTATION_RESCALE_HI, noise)
    new_mean = as_dtensor(sev_mean) * (1.0 + mutate * (f_mean - 1.0))
    new_sd = as_dtensor(sev_sd) * (1.0 + mutate * (f_sd - 1.0))
    return mutate, new_immunity, new_mean, new_sd
