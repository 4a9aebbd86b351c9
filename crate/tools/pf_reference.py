"""Independent AC power-flow reference for the bundled six-bus case.

Solves the bus equations in rectangular coordinates (e + jf) with SciPy's
hybrid root finder, which shares no code or formulation with the Rust
polar Newton-Raphson solver, and writes the result as a JSON fixture.

Usage: python3 tools/pf_reference.py crates/core/cases/six_bus.json \
           crates/core/tests/fixtures/six_bus_reference.json
"""
import json
import sys

import numpy as np
from scipy.optimize import root

# nominal operating point (MW); must match the Rust acceptance test
GEN_P = [0.0, 150.0, 80.0, 60.0]


def main(case_path, out_path):
    case = json.load(open(case_path))
    s_base = case["s_base"]
    ids = [b["id"] for b in case["buses"]]
    pos = {b: i for i, b in enumerate(ids)}
    n = len(ids)

    y = np.zeros((n, n), dtype=complex)
    for ln in case["lines"]:
        f, t = pos[ln["from_bus"]], pos[ln["to_bus"]]
        ys = 1.0 / complex(ln["r"], ln["x"])
        sh = 1j * ln["b"] / 2.0
        y[f, f] += ys + sh
        y[t, t] += ys + sh
        y[f, t] -= ys
        y[t, f] -= ys

    p_spec = np.zeros(n)
    q_spec = np.zeros(n)
    v_set = {}
    for g, p in zip(case["generators"], GEN_P):
        b = pos[g["bus"]]
        v_set.setdefault(b, g["v_set"])
        if g["kind"] != "balanced":
            p_spec[b] += p / s_base
    for ld in case["loads"]:
        b = pos[ld["bus"]]
        p_spec[b] -= ld["base_p"] / s_base
        q_spec[b] -= ld["base_q"] / s_base

    kinds = [b["kind"] for b in case["buses"]]
    slack = kinds.index("slack")
    others = [i for i in range(n) if i != slack]

    def voltages(x):
        e = np.ones(n)
        f = np.zeros(n)
        e[slack] = v_set[slack]
        for k, i in enumerate(others):
            e[i] = x[2 * k]
            f[i] = x[2 * k + 1]
        return e + 1j * f

    def residual(x):
        v = voltages(x)
        s = v * np.conj(y @ v)
        out = []
        for i in others:
            out.append(s[i].real - p_spec[i])
            if kinds[i] == "pq":
                out.append(s[i].imag - q_spec[i])
            else:
                out.append(abs(v[i]) ** 2 - v_set[i] ** 2)
        return np.array(out)

    x0 = np.array([1.0, 0.0] * len(others))
    sol = root(residual, x0, method="hybr", tol=1e-13)
    assert np.max(np.abs(residual(sol.x))) < 1e-12
    v = voltages(sol.x)
    s = v * np.conj(y @ v)

    rho, flow_p, flow_q = [], [], []
    loss = 0.0
    for ln in case["lines"]:
        f, t = pos[ln["from_bus"]], pos[ln["to_bus"]]
        ys = 1.0 / complex(ln["r"], ln["x"])
        sh = 1j * ln["b"] / 2.0
        i_f = (v[f] - v[t]) * ys + v[f] * sh
        i_t = (v[t] - v[f]) * ys + v[t] * sh
        s_f = v[f] * np.conj(i_f)
        s_t = v[t] * np.conj(i_t)
        rho.append(abs(i_f) / ln["i_max"])
        flow_p.append(s_f.real * s_base)
        flow_q.append(s_f.imag * s_base)
        loss += (s_f.real + s_t.real) * s_base

    load_p_slack = sum(l["base_p"] for l in case["loads"] if pos[l["bus"]] == slack)
    load_q_slack = sum(l["base_q"] for l in case["loads"] if pos[l["bus"]] == slack)
    out = {
        "gen_p": GEN_P,
        "v_mag": np.abs(v).tolist(),
        "v_ang": np.angle(v).tolist(),
        "slack_p": s[slack].real * s_base + load_p_slack,
        "slack_q": s[slack].imag * s_base + load_q_slack,
        "grid_loss": loss,
        "rho": rho,
        "line_flow_p": flow_p,
        "line_flow_q": flow_q,
    }
    json.dump(out, open(out_path, "w"), indent=2)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
