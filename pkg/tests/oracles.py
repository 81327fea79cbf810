"""Independent reference computations used only by the tests.

Nothing here imports the code under test: corpora are read with ``json``
directly and arithmetic is done with ``fractions`` or plain loops.
"""

import json
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import stats


def read_raw_corpus(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def raw_rooms(graph):
    """[(room node id, [object node dicts])] via the edge list."""
    nodes = {n["id"]: n for n in graph["nodes"]}
    rooms = {n["id"]: [] for n in graph["nodes"] if n["layer"] == "Rooms"}
    for p, c in graph["edges"]:
        if p in rooms and nodes[c]["layer"] == "Objects":
            rooms[p].append(nodes[c])
    return sorted(rooms.items())


def exhaustive_eq1(ontology_raw, graphs, alpha=Fraction(1)):
    """Counts, smoothed probabilities and per-node expectation distributions, all in exact fractions.

    Returns {(graph index, node id): [float, ...]}.
    """
    classes = ontology_raw["classes"]
    groups = ontology_raw["groups"]
    slots = [(c, a) for c in classes if c in groups for a in groups[c]]

    rooms = [objs for g in graphs for _, objs in raw_rooms(g)]
    n_rooms = len(rooms)
    present_count = {c: 0 for c in classes}
    joint = {(s, c): Fraction(0) for s in range(len(slots)) for c in classes}
    for objs in rooms:
        present = {"room"} | {o["label"] for o in objs}
        for c in present:
            present_count[c] += 1
        for s, (owner, aff) in enumerate(slots):
            k = groups[owner].index(aff)
            owned = [o for o in objs if o["label"] == owner and "gt" in o]
            if not owned:
                continue
            mean = sum(Fraction(o["gt"][k]) for o in owned) / len(owned)
            for c in present:
                joint[(s, c)] += mean
    p_b = {c: (present_count[c] + alpha) / (n_rooms + 2 * alpha) for c in classes}
    p_ab = {key: (v + alpha) / (n_rooms + 2 * alpha) for key, v in joint.items()}

    out = {}
    for gi, g in enumerate(graphs):
        for _, objs in raw_rooms(g):
            for node in objs:
                if node["label"] not in groups:
                    continue
                context = {"room"} | {o["label"] for o in objs if o["id"] != node["id"]}
                denom = Fraction(1)
                for c in context:
                    denom *= p_b[c]
                own = [s for s, (owner, _) in enumerate(slots) if owner == node["label"]]
                scores = [sum(p_ab[(s, c)] for c in context) / denom for s in own]
                total = sum(scores)
                out[(gi, node["id"])] = [float(x / total) for x in scores]
    return out, p_b, p_ab, slots


def cdf_wasserstein_loop(p, q):
    """Sequential float loop over running CDFs, same summation order as a naive sum."""
    total = 0.0
    cp = cq = 0.0
    for a, b in zip(p, q):
        cp += a
        cq += b
        total += abs(cp - cq)
    return total


def cdf_wasserstein_exact(p, q):
    cp = cq = Fraction(0)
    total = Fraction(0)
    for a, b in zip(p, q):
        cp += Fraction(float(a))
        cq += Fraction(float(b))
        total += abs(cp - cq)
    return total


def energy_monte_carlo(p, q, n, rng):
    """Energy distance between the empirical laws of n draws from p and n draws from q.

    The statistic itself comes from scipy, which works on raw samples through
    their empirical CDFs, so it shares no code with the exact double sum.
    """
    support = np.arange(len(p))
    x = rng.choice(support, size=n, p=p)
    y = rng.choice(support, size=n, p=q)
    return float(stats.energy_distance(x, y))


def central_differences(f, x, eps=1e-5):
    """Numerical gradient of scalar f at array x (x is perturbed in place and restored)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def max_rel_error(a, b, floor=1e-6):
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))) if a.size else 0.0
