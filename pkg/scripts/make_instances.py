"""Write the bundled benchmark instances into src/gasexpand/data/.

The topology imitates the Belgian transmission network (20 nodes, 24 pipes,
3 compressor stations) and the A1/A2/A3 expansion layers reproduce the
published component counts.  Parameter values are synthetic: the original
data set is cited by the source study but not printed in it.
"""

from __future__ import annotations

import json
import math
import pathlib
import sys

DATA = pathlib.Path(__file__).resolve().parents[1] / "src" / "gasexpand" / "data"
BAR = 1e5
SOUND_SPEED = 350.0
FRICTION = 0.012

# id, name, roles, nominal demand (kg/s), supply cap (kg/s), pressure window (bar)
NODES = [
    ("n1", "Zeebrugge", ("receipt", "generation"), 0.0, None, (50, 70)),
    ("n2", "Dudzele", ("receipt",), 0.0, 150.0, (40, 70)),
    ("n3", "Brugge", ("delivery",), 45.0, 0.0, (40, 70)),
    ("n4", "Zomergem", (), 0.0, 0.0, (40, 70)),
    ("n5", "Loenhout", ("receipt",), 0.0, 90.0, (30, 70)),
    ("n6", "Antwerpen", ("delivery",), 120.0, 0.0, (40, 70)),
    ("n7", "Gent", ("delivery",), 90.0, 0.0, (40, 70)),
    ("n8", "Voeren", ("receipt",), 0.0, 220.0, (30, 70)),
    ("n9", "Berneau", (), 0.0, 0.0, (40, 70)),
    ("n10", "Liege", ("delivery",), 105.0, 0.0, (40, 70)),
    ("n11", "Warnand", ("delivery",), 30.0, 0.0, (40, 70)),
    ("n12", "Namur", ("delivery",), 60.0, 0.0, (40, 70)),
    ("n13", "Anderlues", (), 0.0, 0.0, (40, 70)),
    ("n14", "Peronnes", (), 0.0, 0.0, (40, 70)),
    ("n15", "Mons", ("delivery",), 75.0, 0.0, (40, 70)),
    ("n16", "Blaregnies", ("delivery",), 150.0, 0.0, (40, 70)),
    ("n17", "Wanze", (), 0.0, 0.0, (40, 70)),
    ("n18", "Sinsin", (), 0.0, 0.0, (40, 70)),
    ("n19", "Arlon", ("delivery",), 30.0, 0.0, (40, 70)),
    ("n20", "Petange", ("delivery",), 24.0, 0.0, (40, 70)),
]

# id, from, to, length (km), diameter (m)
PIPES = [
    ("p01", "n1", "n2", 4.0, 0.89),
    ("p02", "n1", "n2", 4.0, 0.89),
    ("p03", "n2", "n3", 6.0, 0.89),
    ("p04", "n2", "n3", 6.0, 0.89),
    ("p05", "n3", "n4", 26.0, 0.89),
    ("p06", "n6", "n12", 60.0, 0.6),
    ("p07", "n6", "n7", 29.0, 0.59),
    ("p08", "n7", "n4", 19.0, 0.59),
    ("p09", "n4", "n14", 55.0, 0.89),
    ("p10", "n9", "n10", 5.0, 0.89),
    ("p11", "n9", "n10", 5.0, 0.89),
    ("p12", "n10", "n11", 20.0, 0.89),
    ("p13", "n11", "n12", 25.0, 0.89),
    ("p14", "n12", "n13", 42.0, 0.89),
    ("p15", "n13", "n14", 40.0, 0.89),
    ("p16", "n14", "n15", 5.0, 0.89),
    ("p17", "n15", "n16", 10.0, 0.89),
    ("p18", "n11", "n17", 25.0, 0.4),
    ("p19", "n18", "n19", 98.0, 0.4),
    ("p20", "n19", "n20", 6.0, 0.4),
    ("p21", "n6", "n10", 100.0, 0.6),
    ("p22", "n7", "n13", 70.0, 0.5),
    ("p23", "n12", "n17", 30.0, 0.4),
    ("p24", "n3", "n7", 30.0, 0.6),
]

# id, from, to, ratio range, flow cap (kg/s)
COMPRESSORS = [
    ("c1", "n8", "n9", (1.0, 1.6), 400.0),
    ("c2", "n17", "n18", (1.0, 1.6), 200.0),
    ("c3", "n5", "n6", (1.0, 1.6), 200.0),
]

# expansion layers: each adds nodes, candidate pipes and candidate compressors
LAYERS = {
    "a1": dict(
        nodes=[("n21", "Zomergem-station", (40, 80)), ("n22", "Warnand-station", (40, 80))],
        pipes=[
            ("np01", "n4", "n14", 55.0, 0.6),
            ("np02", "n14", "n15", 5.0, 0.6),
            ("np03", "n21", "n13", 50.0, 0.6),
            ("np04", "n22", "n19", 80.0, 0.5),
        ],
        compressors=[
            ("nc01", "n4", "n21", (1.0, 1.6), 400.0, 0.1, 0.6),
            ("nc02", "n11", "n22", (1.0, 1.6), 200.0, 0.1, 0.5),
        ],
    ),
    "a2": dict(
        nodes=[("n23", "Gent-station", (40, 80)), ("n24", "Hasselt", (40, 70)), ("n25", "Brussel-north", (40, 70))],
        pipes=[
            ("np05", "n23", "n12", 70.0, 0.6),
            ("np06", "n10", "n24", 40.0, 0.5),
            ("np07", "n24", "n25", 45.0, 0.5),
        ],
        compressors=[
            ("nc03", "n7", "n23", (1.0, 1.6), 400.0, 0.1, 0.6),
            ("nc04", "n25", "n6", (1.0, 1.6), 200.0, 0.1, 0.5),
        ],
    ),
    "a3": dict(
        nodes=[
            ("n26", "Aalst", (40, 70)),
            ("n27", "Charleroi", (40, 70)),
            ("n28", "Dinant", (40, 70)),
            ("n29", "Bastogne", (40, 80)),
        ],
        pipes=[
            ("np08", "n7", "n26", 30.0, 0.6),
            ("np09", "n26", "n27", 60.0, 0.6),
            ("np10", "n27", "n15", 35.0, 0.6),
            ("np11", "n12", "n28", 30.0, 0.5),
            ("np12", "n29", "n19", 40.0, 0.5),
        ],
        compressors=[("nc05", "n28", "n29", (1.0, 1.6), 200.0, 0.1, 0.5)],
    ),
}

LAYER_ORDER = {"a1": ["a1"], "a2": ["a1", "a2"], "a3": ["a1", "a2", "a3"]}

# nominal demand growth per benchmark (multiplies base nominal demand)
GROWTH = {
    "base": {},
    "a1": {"n15": 2.1, "n16": 2.1, "n19": 1.5, "n20": 1.5},
    "a2": {"n15": 1.3, "n16": 1.3, "n19": 1.45, "n20": 1.45, "n12": 1.2},
    "a3": {"n15": 1.35, "n16": 1.35, "n19": 1.5, "n20": 1.5, "n12": 1.2, "n10": 1.15},
}
DEMAND_SCALE = {"base": 1.0, "a1": 1.308, "a2": 1.536, "a3": 1.487}


def resistance(length_m: float, diameter: float) -> float:
    return 4 * FRICTION * length_m * SOUND_SPEED**2 / (math.pi**2 * diameter**5)


def pipe_capacity(length_m: float, diameter: float, window: tuple[float, float]) -> float:
    """Flow that consumes the full squared-pressure window, rounded up."""
    lo, hi = window
    return math.ceil(math.sqrt(((hi * BAR) ** 2 - (lo * BAR) ** 2) / resistance(length_m, diameter)))


def node_doc(nid, name, roles, demand, cap, window, scale=1.0):
    lo, hi = window
    doc = {
        "id": nid,
        "pressure_sq_min": (lo * BAR) ** 2,
        "pressure_sq_max": (hi * BAR) ** 2,
        "roles": sorted(roles),
        "nominal_demand": round(demand * scale, 6),
        "supply_min": 0.0,
        "supply_max": cap,
    }
    return doc


def build(name: str) -> dict:
    growth = GROWTH[name]
    scale = DEMAND_SCALE[name]
    nodes = [
        node_doc(nid, nm, roles, demand * growth.get(nid, 1.0), cap, win, scale)
        for nid, nm, roles, demand, cap, win in NODES
    ]
    pipes = []
    for pid, a, b, km, dia in PIPES:
        pipes.append(
            {
                "id": pid,
                "from_node": a,
                "to_node": b,
                "length": km * 1000,
                "diameter": dia,
                "friction_factor": FRICTION,
                "flow_max": float(pipe_capacity(km * 1000, dia, (30, 80))),
                "status": "existing",
            }
        )
    comps = [
        {
            "id": cid,
            "from_node": a,
            "to_node": b,
            "ratio_sq_min": lo**2,
            "ratio_sq_max": hi**2,
            "flow_max": cap,
            "status": "existing",
        }
        for cid, a, b, (lo, hi), cap in COMPRESSORS
    ]
    names = {nid: nm for nid, nm, *_ in NODES}
    for layer in LAYER_ORDER.get(name, []):
        spec = LAYERS[layer]
        for nid, nm, win in spec["nodes"]:
            nodes.append(node_doc(nid, nm, (), 0.0, 0.0, win))
            names[nid] = nm
        for pid, a, b, km, dia in spec["pipes"]:
            pipes.append(
                {
                    "id": pid,
                    "from_node": a,
                    "to_node": b,
                    "length": km * 1000,
                    "diameter": dia,
                    "friction_factor": FRICTION,
                    "flow_max": float(pipe_capacity(km * 1000, dia, (30, 80))),
                    "status": "candidate",
                }
            )
        for cid, a, b, (lo, hi), cap, km, dia in spec["compressors"]:
            comps.append(
                {
                    "id": cid,
                    "from_node": a,
                    "to_node": b,
                    "ratio_sq_min": lo**2,
                    "ratio_sq_max": hi**2,
                    "flow_max": cap,
                    "status": "candidate",
                    # station geometry only feeds the construction cost model
                    "length": km * 1000,
                    "diameter": dia,
                }
            )
    return {
        "meta": {
            "name": f"belgian-like-{name}",
            "units": {"pressure_sq": "Pa^2", "flow": "kg/s", "length": "m", "diameter": "m", "cost": "currency"},
            "provenance": "synthetic network shaped after the Belgian transmission benchmark; "
            "topology and component counts follow the published benchmark table, parameter values are generated",
            "generator": "scripts/make_instances.py",
            "node_names": names,
        },
        "sound_speed": SOUND_SPEED,
        "slack_nodes": ["n1"],
        "nodes": nodes,
        "pipes": pipes,
        "compressors": comps,
    }


def main(argv: list[str]) -> int:
    DATA.mkdir(parents=True, exist_ok=True)
    for name in ("base", "a1", "a2", "a3"):
        doc = build(name)
        (DATA / f"{name}.json").write_text(json.dumps(doc, indent=1) + "\n")
        print(f"wrote {name}: {len(doc['nodes'])} nodes, {len(doc['pipes'])} pipes, {len(doc['compressors'])} compressors")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
