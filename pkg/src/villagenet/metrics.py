"""Node-level network statistics with the study's normalization conventions.

Betweenness is computed on the directed graph over ordered source/target
pairs and normalized by (n-1)(n-2). Closeness and local clustering use the
undirected skeleton; nodes with no reachable peers (closeness) or fewer than
two neighbors (clustering) are undefined, not zero, and stay out of group
means. Shortest paths are unweighted and path multiplicities are counted
exactly.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import StudyPanel, WAVES
from .networks import LayerNetwork

log = logging.getLogger(__name__)

METRICS = ("degree", "in_degree", "out_degree", "betweenness", "closeness", "clustering")
DIRECTED_ONLY_METRICS = ("in_degree", "out_degree")


def degree_metrics(network: LayerNetwork) -> dict[str, tuple[float, float | None, float | None]]:
    """Per-node (degree, in_degree, out_degree); in/out are None when undirected."""
    if not network.directed:
        return {v: (float(len(network.undirected_neighbors[v])), None, None)
                for v in network.nodes}
    out_n = network.out_neighbors
    in_n = network.in_neighbors
    return {v: (float(len(in_n[v]) + len(out_n[v])), float(len(in_n[v])), float(len(out_n[v])))
            for v in network.nodes}


def betweenness_normalized(network: LayerNetwork) -> dict[str, float]:
    """Shortest-path betweenness B(v)/((n-1)(n-2)) over ordered pairs.

    B(v) = sum over ordered pairs s != t != v with at least one s->t path of
    sigma_st(v)/sigma_st, where sigma counts distinct shortest paths. Directed
    edges with unit weights; undirected networks are treated as symmetric
    directed graphs, which keeps the ordered-pair normalization consistent.
    """
    n = network.n
    if n < 3:
        log.warning("betweenness with n=%d (<3) in %s/%s: all values 0 by convention",
                    n, network.village_id, network.layer)
        return {v: 0.0 for v in network.nodes}
    adj = network.out_neighbors if network.directed else network.undirected_neighbors
    score = {v: 0.0 for v in network.nodes}
    for s in network.nodes:
        # Brandes accumulation: one BFS from s, then dependency back-propagation.
        sigma = {s: 1.0}
        dist = {s: 0}
        preds: dict[str, list[str]] = {s: []}
        order: list[str] = []
        queue: deque[str] = deque([s])
        while queue:
            u = queue.popleft()
            order.append(u)
            for w in adj[u]:
                if w not in dist:
                    dist[w] = dist[u] + 1
                    sigma[w] = 0.0
                    preds[w] = []
                    queue.append(w)
                if dist[w] == dist[u] + 1:
                    sigma[w] += sigma[u]
                    preds[w].append(u)
        delta = {v: 0.0 for v in order}
        for w in reversed(order):
            for p in preds[w]:
                delta[p] += sigma[p] / sigma[w] * (1.0 + delta[w])
            if w != s:
                score[w] += delta[w]
    norm = (n - 1) * (n - 2)
    return {v: score[v] / norm for v in network.nodes}


def closeness_normalized(network: LayerNetwork) -> dict[str, float | None]:
    """Reachable-set closeness on the undirected skeleton.

    For node v with reachable set R(v): (|R(v)| / sum of distances) scaled by
    |R(v)|/(n-1). Isolated nodes are undefined (None) rather than zero.
    """
    adj = network.undirected_neighbors
    n = network.n
    values: dict[str, float | None] = {}
    for v in network.nodes:
        dist = _bfs_from(adj, v)
        reachable = len(dist) - 1
        if reachable == 0:
            values[v] = None
            continue
        total = sum(dist.values())
        values[v] = (reachable / total) * (reachable / (n - 1))
    return values


def local_clustering(network: LayerNetwork) -> dict[str, float | None]:
    """Undirected local clustering; undefined for nodes with degree < 2."""
    adj = network.undirected_neighbors
    neighbor_sets = {v: set(ns) for v, ns in adj.items()}
    values: dict[str, float | None] = {}
    for v in network.nodes:
        neighbors = adj[v]
        k = len(neighbors)
        if k < 2:
            values[v] = None
            continue
        links = 0
        for i, a in enumerate(neighbors):
            a_set = neighbor_sets[a]
            for b in neighbors[i + 1:]:
                if b in a_set:
                    links += 1
        values[v] = links / (k * (k - 1) / 2)
    return values


def _bfs_from(adj: Mapping[str, tuple[str, ...]], source: str) -> dict[str, int]:
    dist = {source: 0}
    queue: deque[str] = deque([source])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


@dataclass
class MetricTable:
    """Metric values for every included individual at both waves.

    Arrays are aligned with ``individuals`` (sorted study-wide); undefined
    values are NaN and are excluded from any group mean computed downstream.
    """

    layer: str
    variants: tuple[str, ...]
    directed: bool
    individuals: tuple[str, ...]
    villages: tuple[str, ...]
    values: dict[tuple[int, str], np.ndarray]
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.index = {ind: i for i, ind in enumerate(self.individuals)}

    @property
    def metrics(self) -> tuple[str, ...]:
        if self.directed:
            return METRICS
        return tuple(m for m in METRICS if m not in DIRECTED_ONLY_METRICS)

    def column(self, wave: int, metric: str) -> np.ndarray:
        return self.values[(wave, metric)]

    def group_mean(self, wave: int, metric: str, ids: Sequence[str]) -> tuple[float, int]:
        """Mean over a group excluding undefined entries; returns (mean, n_used)."""
        col = self.values[(wave, metric)]
        idx = [self.index[i] for i in ids]
        vals = col[idx]
        defined = vals[~np.isnan(vals)]
        if defined.size == 0:
            return float("nan"), 0
        return float(defined.mean()), int(defined.size)


def metric_table(panel: StudyPanel, layer: str,
                 variant_flags: Sequence[str] = ()) -> MetricTable:
    """All applicable metrics for every individual, both waves, one layer."""
    variants = tuple(sorted(set(variant_flags)))
    individuals = tuple(sorted(panel.individuals))
    villages = tuple(panel.individuals[i].village_id for i in individuals)
    index = {ind: i for i, ind in enumerate(individuals)}
    probe = panel.network(panel.villages[0], 1, layer, variants)
    directed = probe.directed

    n = len(individuals)
    values = {(w, m): np.full(n, np.nan) for w in WAVES for m in METRICS}
    flags: list[str] = []
    for village in panel.villages:
        for wave in WAVES:
            net = panel.network(village, wave, layer, variants)
            if net.n < 3:
                flags.append(f"{village}/wave{wave}: n={net.n} < 3, betweenness 0 by convention")
            deg = degree_metrics(net)
            btw = betweenness_normalized(net)
            clo = closeness_normalized(net)
            clu = local_clustering(net)
            for node in net.nodes:
                i = index[node]
                total, in_d, out_d = deg[node]
                values[(wave, "degree")][i] = total
                if directed:
                    values[(wave, "in_degree")][i] = in_d
                    values[(wave, "out_degree")][i] = out_d
                values[(wave, "betweenness")][i] = btw[node]
                values[(wave, "closeness")][i] = np.nan if clo[node] is None else clo[node]
                values[(wave, "clustering")][i] = np.nan if clu[node] is None else clu[node]
    if not directed:
        for w in WAVES:
            for m in DIRECTED_ONLY_METRICS:
                del values[(w, m)]
    return MetricTable(layer, variants, directed, individuals, villages, values, flags)
