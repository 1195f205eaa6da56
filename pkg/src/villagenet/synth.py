"""Synthetic two-wave study generator with analytically known planted effects.

Villages, households, and wave-1 directed layers are sampled from a small
configurable model; treatment follows the two-stage design. Wave 3 evolves by
independent per-dyad Bernoulli transitions whose keep/form probabilities
depend only on the dyad's category, which makes the dyadic logistic model
exactly correctly specified and gives closed-form expectations for every
degree-based estimate conditional on wave 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import (
    ALLOWED_DOSAGES,
    BASE_LAYERS,
    Individual,
    StudyPanel,
    TreatmentDesign,
    treated_household_count,
)
from .effects import EffectError, enumerate_specs, evaluate_contrast
from .metrics import MetricTable
from .networks import LayerNetwork

log = logging.getLogger(__name__)

REFINEMENTS = ("Uh", "U1", "To", "T1")
FINE_NAMES = ("UoUo",) + tuple(a + b for a in REFINEMENTS for b in REFINEMENTS)
_FINE_TO_COARSE = {f: ("UoUo" if f == "UoUo" else
                       ("T" if f[:2] in ("To", "T1") else "U")
                       + ("T" if f[2:] in ("To", "T1") else "U"))
                   for f in FINE_NAMES}

DEFAULT_DENSITIES = {"health": 0.020, "friendship": 0.050, "financial": 0.018}


class ScenarioError(ValueError):
    """Invalid synthetic scenario configuration."""


@dataclass(frozen=True)
class SyntheticScenario:
    """Generator configuration; probabilities are planted oracle truth.

    ``p_keep``/``p_form`` map dyad categories to persistence / formation
    probabilities. Lookup falls back fine -> coarse -> UoUo, and control
    villages always use the UoUo probabilities.
    """

    seed: int = 0
    name: str = "scenario"
    arms: tuple[tuple[float, int], ...] = ((0.0, 4), (0.3, 4))
    village_size: tuple[int, int] = (30, 40)
    household_size: tuple[int, int] = (1, 6)
    layers: tuple[str, ...] = ("health",)
    edge_density: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_DENSITIES))
    layer_overlap: float = 0.0
    p_keep: Mapping[str, float] = field(default_factory=lambda: {"UoUo": 0.6444})
    p_form: Mapping[str, float] = field(default_factory=lambda: {"UoUo": 0.0077})

    def __post_init__(self):
        for alpha, count in self.arms:
            if alpha not in ALLOWED_DOSAGES:
                raise ScenarioError(f"dosage {alpha} is not an allowed arm")
            if count < 0:
                raise ScenarioError("arm village counts must be nonnegative")
        for layer in self.layers:
            if layer not in BASE_LAYERS:
                raise ScenarioError(f"unknown layer {layer}")
            if layer not in self.edge_density:
                raise ScenarioError(f"no edge density for layer {layer}")
        for mapping, what in ((self.p_keep, "p_keep"), (self.p_form, "p_form")):
            if "UoUo" not in mapping:
                raise ScenarioError(f"{what} must define the UoUo baseline")
            for cat, p in mapping.items():
                if not 0.0 <= p <= 1.0:
                    raise ScenarioError(f"{what}[{cat}]={p} outside [0, 1]")
        if not 0.0 <= self.layer_overlap <= 1.0:
            raise ScenarioError("layer_overlap must be in [0, 1]")
        lo, hi = self.village_size
        if not 2 <= lo <= hi:
            raise ScenarioError("village_size must satisfy 2 <= min <= max")
        lo, hi = self.household_size
        if not 1 <= lo <= hi:
            raise ScenarioError("household_size must satisfy 1 <= min <= max")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "name": self.name,
            "arms": [[alpha, count] for alpha, count in self.arms],
            "village_size": list(self.village_size),
            "household_size": list(self.household_size),
            "layers": list(self.layers),
            "edge_density": dict(self.edge_density),
            "layer_overlap": self.layer_overlap,
            "p_keep": dict(self.p_keep),
            "p_form": dict(self.p_form),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticScenario":
        base = cls()
        return cls(
            seed=int(d.get("seed", base.seed)),
            name=str(d.get("name", base.name)),
            arms=tuple((float(a), int(c)) for a, c in d.get("arms", base.arms)),
            village_size=tuple(int(x) for x in d.get("village_size", base.village_size)),
            household_size=tuple(int(x) for x in d.get("household_size", base.household_size)),
            layers=tuple(d.get("layers", base.layers)),
            edge_density={k: float(v) for k, v in
                          dict(d.get("edge_density", DEFAULT_DENSITIES)).items()},
            layer_overlap=float(d.get("layer_overlap", base.layer_overlap)),
            p_keep={k: float(v) for k, v in dict(d.get("p_keep", base.p_keep)).items()},
            p_form={k: float(v) for k, v in dict(d.get("p_form", base.p_form)).items()},
        )

    def resolve_probability(self, mapping: Mapping[str, float], fine_label: str) -> float:
        """Fine -> coarse -> UoUo fallback for a planted probability."""
        if fine_label in mapping:
            return mapping[fine_label]
        coarse = _FINE_TO_COARSE[fine_label]
        if coarse in mapping:
            return mapping[coarse]
        return mapping["UoUo"]


def _logit(p: float) -> float:
    if p <= 0.0:
        return float("-inf")
    if p >= 1.0:
        return float("inf")
    return math.log(p / (1.0 - p))


@dataclass
class OracleTruth:
    """Planted truth attached to a generated panel.

    Log-odds contrasts are exact functions of the scenario; expected
    percentage effects are exact expectations over wave-3 transitions
    conditional on the realized wave-1 panel and assignment.
    """

    dissolution_logodds: dict[str, float]
    formation_logodds: dict[str, float]
    expected_pct: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "dissolution_logodds": dict(self.dissolution_logodds),
            "formation_logodds": dict(self.formation_logodds),
            "expected_pct": dict(self.expected_pct),
        }


@dataclass
class Wave1State:
    """Realized wave-1 panel plus per-dyad transition probabilities."""

    scenario: SyntheticScenario
    individuals: dict[str, Individual]
    design: TreatmentDesign
    members: dict[str, tuple[str, ...]]
    adjacency_w1: dict[tuple[str, str], np.ndarray]
    keep_prob: dict[tuple[str, str], np.ndarray]
    form_prob: dict[tuple[str, str], np.ndarray]

    @property
    def villages(self) -> tuple[str, ...]:
        return tuple(sorted(self.members))


def generate_wave1_state(scenario: SyntheticScenario) -> Wave1State:
    """Sample villages, assignment, and wave-1 layers; attach planted probs."""
    rng = np.random.default_rng(scenario.seed)
    individuals: dict[str, Individual] = {}
    dosages: dict[str, float] = {}
    assignments: dict[str, dict[str, bool]] = {}
    members: dict[str, tuple[str, ...]] = {}

    v_counter = 0
    for alpha, count in scenario.arms:
        for _ in range(count):
            village = f"v{v_counter:03d}"
            v_counter += 1
            size = int(rng.integers(scenario.village_size[0], scenario.village_size[1] + 1))
            # Partition individuals into households of bounded size.
            household_sizes: list[int] = []
            remaining = size
            while remaining > 0:
                s = int(rng.integers(scenario.household_size[0],
                                     scenario.household_size[1] + 1))
                household_sizes.append(min(s, remaining))
                remaining -= household_sizes[-1]
            households = [f"{village}_h{k:03d}" for k in range(len(household_sizes))]
            n_treated = treated_household_count(alpha, len(households))
            chosen = rng.choice(len(households), size=n_treated, replace=False)
            treated_households = {households[int(c)] for c in chosen}
            assignments[village] = {h: (h in treated_households) for h in households}
            dosages[village] = alpha

            ids = []
            k = 0
            for h, h_size in zip(households, household_sizes):
                for _ in range(h_size):
                    iid = f"{village}_i{k:04d}"
                    k += 1
                    ids.append(iid)
                    individuals[iid] = Individual(
                        id=iid, household_id=h, village_id=village,
                        treated=(h in treated_households),
                    )
            members[village] = tuple(sorted(ids))

    design = TreatmentDesign(dosages, assignments)
    keep_lookup, form_lookup = _probability_lookups(scenario)

    adjacency: dict[tuple[str, str], np.ndarray] = {}
    keep_prob: dict[tuple[str, str], np.ndarray] = {}
    form_prob: dict[tuple[str, str], np.ndarray] = {}
    for village in sorted(members):
        mem = members[village]
        n = len(mem)
        off = ~np.eye(n, dtype=bool)
        treated = np.array([individuals[m].treated for m in mem])
        health_key = (village, "health")
        for layer in scenario.layers:
            p_edge = scenario.edge_density[layer]
            a1 = (rng.random((n, n)) < p_edge) & off
            if layer != "health" and scenario.layer_overlap > 0.0 and health_key in adjacency:
                copied = adjacency[health_key] & (rng.random((n, n)) < scenario.layer_overlap)
                a1 |= copied & off
            adjacency[(village, layer)] = a1

            if design.village_dosages[village] == 0.0:
                fine_code = np.zeros((n, n), dtype=np.int8)
            else:
                exposed = (a1 | a1.T)[:, treated].any(axis=1)
                rcode = np.where(treated, np.where(exposed, 3, 2),
                                 np.where(exposed, 1, 0)).astype(np.int8)
                fine_code = (rcode[:, None] * 4 + rcode[None, :] + 1).astype(np.int8)
            keep_prob[(village, layer)] = keep_lookup[fine_code]
            form_prob[(village, layer)] = form_lookup[fine_code]

    return Wave1State(scenario, individuals, design, members,
                      adjacency, keep_prob, form_prob)


def _probability_lookups(scenario: SyntheticScenario) -> tuple[np.ndarray, np.ndarray]:
    keep = np.array([scenario.resolve_probability(scenario.p_keep, f) for f in FINE_NAMES])
    form = np.array([scenario.resolve_probability(scenario.p_form, f) for f in FINE_NAMES])
    return keep, form


def sample_wave3(state: Wave1State, rng: np.random.Generator) -> dict[tuple[str, str], np.ndarray]:
    """Independent per-dyad transitions from the realized wave 1."""
    out: dict[tuple[str, str], np.ndarray] = {}
    for village in state.villages:
        n = len(state.members[village])
        off = ~np.eye(n, dtype=bool)
        for layer in state.scenario.layers:
            a1 = state.adjacency_w1[(village, layer)]
            prob = np.where(a1, state.keep_prob[(village, layer)],
                            state.form_prob[(village, layer)])
            out[(village, layer)] = (rng.random((n, n)) < prob) & off
    return out


def _networks_from_matrices(state: Wave1State, wave: int,
                            matrices: Mapping[tuple[str, str], np.ndarray]
                            ) -> dict[tuple[str, int, str], LayerNetwork]:
    nets = {}
    for (village, layer), mat in matrices.items():
        mem = state.members[village]
        ii, jj = np.nonzero(mat)
        edges = frozenset((mem[i], mem[j]) for i, j in zip(ii.tolist(), jj.tolist()))
        nets[(village, wave, layer)] = LayerNetwork(village, wave, layer, mem, edges)
    return nets


def panel_from_state(state: Wave1State,
                     wave3: Mapping[tuple[str, str], np.ndarray]) -> StudyPanel:
    """Assemble a StudyPanel; absent layers get empty networks for closure."""
    networks = _networks_from_matrices(state, 1, state.adjacency_w1)
    networks.update(_networks_from_matrices(state, 3, wave3))
    for village in state.villages:
        mem = state.members[village]
        for layer in BASE_LAYERS:
            for wave in (1, 3):
                networks.setdefault((village, wave, layer),
                                    LayerNetwork(village, wave, layer, mem, frozenset()))
    return StudyPanel(dict(state.individuals), state.design, networks)


def expected_degree_table(state: Wave1State, layer: str) -> MetricTable:
    """Degree metrics with wave-3 values replaced by exact expectations.

    E[wave-3 out-degree of i] = sum_j (A1_ij * p_keep_ij + (1 - A1_ij) *
    p_form_ij); in-degree transposes, total adds. Wave-1 values are realized.
    """
    individuals = tuple(sorted(state.individuals))
    index = {ind: i for i, ind in enumerate(individuals)}
    villages = tuple(state.individuals[i].village_id for i in individuals)
    n = len(individuals)
    values = {(w, m): np.full(n, np.nan)
              for w in (1, 3) for m in ("degree", "in_degree", "out_degree")}
    for village in state.villages:
        mem = state.members[village]
        a1 = state.adjacency_w1[(village, layer)].astype(float)
        np.fill_diagonal(a1, 0.0)
        expected = np.where(state.adjacency_w1[(village, layer)],
                            state.keep_prob[(village, layer)],
                            state.form_prob[(village, layer)])
        np.fill_diagonal(expected, 0.0)
        out1, in1 = a1.sum(axis=1), a1.sum(axis=0)
        out3, in3 = expected.sum(axis=1), expected.sum(axis=0)
        for k, node in enumerate(mem):
            i = index[node]
            values[(1, "out_degree")][i] = out1[k]
            values[(1, "in_degree")][i] = in1[k]
            values[(1, "degree")][i] = out1[k] + in1[k]
            values[(3, "out_degree")][i] = out3[k]
            values[(3, "in_degree")][i] = in3[k]
            values[(3, "degree")][i] = out3[k] + in3[k]
    return MetricTable(layer=layer, variants=(), directed=True,
                       individuals=individuals, villages=villages, values=values)


def compute_oracle(state: Wave1State,
                   scopes: Sequence[str] = ("all",),
                   kinds: Sequence[str] = ("overall", "total", "spillover", "direct"),
                   ) -> OracleTruth:
    """Planted log-odds plus exact expected percentage effects."""
    sc = state.scenario
    keep0 = sc.p_keep["UoUo"]
    form0 = sc.p_form["UoUo"]
    categories = sorted(set(list(sc.p_keep) + list(sc.p_form)) - {"UoUo"})
    dissolution = {"(Intercept)": _logit(1.0 - keep0)}
    formation = {"(Intercept)": _logit(form0)}
    for cat in categories:
        pk = sc.p_keep.get(cat, keep0)
        pf = sc.p_form.get(cat, form0)
        dissolution[cat] = _logit(1.0 - pk) - _logit(1.0 - keep0)
        formation[cat] = _logit(pf) - _logit(form0)

    # Group classification only reads wave-1 networks and the assignment,
    # so an empty wave 3 is sufficient here.
    panel = panel_from_state(state, {})
    expected_pct: dict[str, float] = {}
    for layer in sc.layers:
        table = expected_degree_table(state, layer)
        for spec in enumerate_specs([layer], ["degree", "in_degree", "out_degree"],
                                    scopes, kinds):
            try:
                est = evaluate_contrast(panel, table, spec)
            except EffectError:
                continue
            expected_pct[spec.label()] = est.pct_effect
    return OracleTruth(dissolution, formation, expected_pct)


def generate_panel(scenario: SyntheticScenario,
                   scopes: Sequence[str] = ("all",),
                   ) -> tuple[StudyPanel, OracleTruth]:
    """One synthetic study: panel plus its planted oracle truth.

    Wave-3 sampling uses an RNG stream separate from wave-1 generation so the
    wave-1 state (and hence the oracle) is reproducible independently.
    """
    state = generate_wave1_state(scenario)
    w3_rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=scenario.seed, spawn_key=(1,))))
    panel = panel_from_state(state, sample_wave3(state, w3_rng))
    oracle = compute_oracle(state, scopes=scopes)
    return panel, oracle


# ---------------------------------------------------------------------------
# Replication / calibration harness.

def ks_uniform(values: Sequence[float]) -> float:
    """Kolmogorov-Smirnov distance of a sample from U(0, 1)."""
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    if n == 0:
        raise ScenarioError("ks_uniform needs at least one value")
    grid_hi = np.arange(1, n + 1) / n
    grid_lo = np.arange(0, n) / n
    return float(max(np.max(grid_hi - x), np.max(x - grid_lo)))


@dataclass
class CalibrationRow:
    replicate: int
    spec_label: str
    estimate_pct: float
    oracle_pct: float
    p_value: float | None


@dataclass
class CalibrationReport:
    rows: list[CalibrationRow]
    summary: dict[str, dict[str, float]]


def replicate_study(
    scenario: SyntheticScenario,
    n_replicates: int,
    layers: Sequence[str] = ("health",),
    metrics: Sequence[str] = ("degree",),
    scopes: Sequence[str] = ("all",),
    kinds: Sequence[str] = ("total",),
    permutations: int = 0,
    threads: int = 1,
) -> CalibrationReport:
    """Run the estimation pipeline on fresh panels and compare with oracle.

    Replicate seeds derive from the scenario seed, so reports are reproducible
    and insensitive to evaluation order.
    """
    from .metrics import metric_table
    from .randomization import permutation_suite

    if n_replicates < 1:
        raise ScenarioError("n_replicates must be >= 1")
    rows: list[CalibrationRow] = []
    for rep in range(n_replicates):
        rep_entropy = np.random.SeedSequence(entropy=scenario.seed, spawn_key=(rep, 17))
        rep_seed = int(rep_entropy.generate_state(1)[0])
        rep_scenario = SyntheticScenario.from_dict(
            {**scenario.to_dict(), "seed": rep_seed})
        panel, oracle = generate_panel(rep_scenario, scopes=scopes)
        for layer in layers:
            table = metric_table(panel, layer)
            wanted = [m for m in metrics if m in table.metrics]
            specs = enumerate_specs([layer], wanted, scopes, kinds)
            if permutations > 0:
                ests = permutation_suite(panel, table, specs, permutations,
                                         master_seed=rep_seed + 1, threads=threads)
            else:
                ests = [evaluate_contrast(panel, table, s) for s in specs]
            for est in ests:
                rows.append(CalibrationRow(
                    replicate=rep,
                    spec_label=est.spec.label(),
                    estimate_pct=est.pct_effect,
                    oracle_pct=oracle.expected_pct.get(est.spec.label(), float("nan")),
                    p_value=est.p_value,
                ))

    summary: dict[str, dict[str, float]] = {}
    for label in sorted({r.spec_label for r in rows}):
        sub = [r for r in rows if r.spec_label == label]
        estimates = np.array([r.estimate_pct for r in sub])
        oracles = np.array([r.oracle_pct for r in sub])
        entry: dict[str, float] = {
            "replicates": float(len(sub)),
            "mean_estimate": float(estimates.mean()),
            "mean_oracle": float(np.nanmean(oracles)),
            "bias": float(estimates.mean() - np.nanmean(oracles)),
        }
        signed = [(e, o) for e, o in zip(estimates, oracles)
                  if not math.isnan(o) and o != 0.0]
        if signed:
            entry["sign_coverage"] = float(np.mean(
                [math.copysign(1, e) == math.copysign(1, o) for e, o in signed]))
        pvals = [r.p_value for r in sub if r.p_value is not None]
        if pvals:
            entry["p_ks_uniform"] = ks_uniform(pvals)
        summary[label] = entry
    return CalibrationReport(rows=rows, summary=summary)
