"""Regenerate the bundled network files in src/cuspad/data/.

net18.json is a hand-designed stand-in for the 18-bus PSLF library case
(non-contiguous labels, three weakly tied regions, step-up transformers at
five generator substations).

net118.json is transcribed from the public IEEE 118-bus case as shipped
with PYPOWER (``pip install pypower`` is needed only to rerun this script).
Inertia constants are not part of that dataset; they are assigned by a
size rule so larger units carry more stored energy.
"""

import json
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "src" / "cuspad" / "data"


def net18():
    buses = [1, 2, 3, 5, 7, 9, 11, 12, 14, 16, 18, 20, 23, 25, 27, 29, 31, 33]
    lines = [
        # north region
        (1, 3, 6.0), (1, 5, 5.0), (3, 5, 7.0), (5, 7, 5.0), (1, 7, 4.0),
        # central region
        (9, 11, 6.0), (11, 14, 7.0), (14, 18, 5.0), (9, 18, 4.5), (9, 14, 3.5),
        # south region
        (20, 23, 6.0), (23, 27, 4.5), (27, 29, 5.0), (29, 31, 6.5),
        (20, 31, 4.0), (23, 29, 7.0),
        # ties
        (7, 9, 2.5), (3, 11, 2.0), (18, 20, 2.5), (14, 31, 2.0),
    ]
    transformers = [(1, 2, 20.0), (11, 12, 18.0), (14, 16, 18.0), (23, 25, 20.0), (31, 33, 16.0)]
    gens = [(2, 5.0, 110.0), (7, 4.0, 100.0), (12, 4.5, 160.0), (16, 4.0, 160.0),
            (25, 4.5, 160.0), (27, 4.0, 150.0), (33, 3.5, 160.0)]
    loads = [(1, 20.0, 7.0), (3, 55.0, 18.0), (5, 80.0, 25.0),
             (9, 90.0, 30.0), (11, 40.0, 12.0), (14, 60.0, 20.0), (18, 100.0, 30.0),
             (20, 85.0, 25.0), (23, 70.0, 20.0), (27, 45.0, 12.0), (29, 140.0, 45.0),
             (31, 65.0, 20.0)]
    return {
        "name": "net18",
        "base_frequency_hz": 60.0,
        "base_mva": 100.0,
        "buses": buses,
        "branches": [{"from": a, "to": b, "kind": "line", "b_pu": x} for a, b, x in lines]
        + [{"from": a, "to": b, "kind": "transformer", "b_pu": x} for a, b, x in transformers],
        "generators": [
            {"bus": b, "H_s": h, "rated_mw": p, "inverter_based": False} for b, h, p in gens
        ],
        "loads": [{"bus": b, "p_mw": p, "q_mvar": q} for b, p, q in loads],
    }


def _inertia(rated_mw):
    return round(3.0 + 3.0 * min(1.0, rated_mw / 600.0), 3)


def net118():
    from pypower.case118 import case118

    case = case118()
    buses = [int(b) for b in case["bus"][:, 0]]
    branches = []
    for row in case["branch"]:
        kind = "transformer" if row[8] != 0 else "line"
        branches.append({
            "from": int(row[0]),
            "to": int(row[1]),
            "kind": kind,
            "b_pu": round(1.0 / float(row[3]), 6),
        })
    gens = [
        {"bus": int(g[0]), "H_s": _inertia(float(g[8])), "rated_mw": float(g[8]),
         "inverter_based": False}
        for g in case["gen"]
    ]
    loads = [
        {"bus": int(b[0]), "p_mw": float(b[2]), "q_mvar": float(b[3])}
        for b in case["bus"]
        if b[2] != 0 or b[3] != 0
    ]
    return {
        "name": "net118",
        "base_frequency_hz": 60.0,
        "base_mva": float(case["baseMVA"]),
        "buses": buses,
        "branches": branches,
        "generators": gens,
        "loads": loads,
    }


def _dumps(doc):
    # one record per line keeps diffs of the data files readable
    out = ["{"]
    keys = list(doc)
    for i, key in enumerate(keys):
        value = doc[key]
        end = "," if i < len(keys) - 1 else ""
        if isinstance(value, list) and value and isinstance(value[0], dict):
            rows = ",\n".join("  " + json.dumps(v) for v in value)
            out.append(f" {json.dumps(key)}: [\n{rows}\n ]{end}")
        else:
            out.append(f" {json.dumps(key)}: {json.dumps(value)}{end}")
    out.append("}")
    return "\n".join(out) + "\n"


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    for name, build in (("net18", net18), ("net118", net118)):
        doc = build()
        (DATA / f"{name}.json").write_text(_dumps(doc))
        print(f"{name}: {len(doc['buses'])} buses, {len(doc['branches'])} branches")


if __name__ == "__main__":
    main()
