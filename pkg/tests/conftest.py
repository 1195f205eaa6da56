"""Shared builders for hand-constructed study panels."""

from __future__ import annotations

import pytest

from villagenet.core import Individual, StudyPanel, TreatmentDesign, BASE_LAYERS, WAVES
from villagenet.networks import LayerNetwork


def make_panel(villages: dict, edges: dict | None = None) -> StudyPanel:
    """Build a StudyPanel from a compact description.

    villages: {village_id: {"dosage": float,
                            "households": {hid: [individual ids]},
                            "treated": [hid, ...]}}
    edges: {(village, wave, layer): [(u, v), ...]}; unspecified cells are empty.
    """
    individuals: dict[str, Individual] = {}
    dosages: dict[str, float] = {}
    assignments: dict[str, dict[str, bool]] = {}
    members: dict[str, list[str]] = {}
    for vid, spec in villages.items():
        dosages[vid] = spec["dosage"]
        treated_households = set(spec.get("treated", ()))
        assignments[vid] = {h: (h in treated_households) for h in spec["households"]}
        members[vid] = []
        for hid, ids in spec["households"].items():
            for iid in ids:
                individuals[iid] = Individual(
                    id=iid, household_id=hid, village_id=vid,
                    treated=hid in treated_households,
                )
                members[vid].append(iid)
    design = TreatmentDesign(dosages, assignments)
    networks = {}
    edges = edges or {}
    for vid in villages:
        nodes = tuple(sorted(members[vid]))
        for wave in WAVES:
            for layer in BASE_LAYERS:
                cell = edges.get((vid, wave, layer), ())
                networks[(vid, wave, layer)] = LayerNetwork(
                    vid, wave, layer, nodes, frozenset(cell)
                )
    return StudyPanel(individuals, design, networks)


@pytest.fixture
def two_village_panel() -> StudyPanel:
    """One control village and one 20% village with simple health networks."""
    villages = {
        "c1": {"dosage": 0.0,
               "households": {"c1h1": ["c1a", "c1b"], "c1h2": ["c1c"],
                              "c1h3": ["c1d"], "c1h4": ["c1e"]}},
        "t1": {"dosage": 0.2,
               "households": {"t1h1": ["t1a", "t1b"], "t1h2": ["t1c"],
                              "t1h3": ["t1d"], "t1h4": ["t1e"], "t1h5": ["t1f"]},
               "treated": ["t1h1"]},
    }
    edges = {
        ("c1", 1, "health"): [("c1a", "c1b"), ("c1b", "c1c"), ("c1c", "c1d")],
        ("c1", 3, "health"): [("c1a", "c1b"), ("c1b", "c1c")],
        ("t1", 1, "health"): [("t1a", "t1c"), ("t1c", "t1d"), ("t1d", "t1e")],
        ("t1", 3, "health"): [("t1a", "t1c"), ("t1c", "t1d")],
    }
    return make_panel(villages, edges)
