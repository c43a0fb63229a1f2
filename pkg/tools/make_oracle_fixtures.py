"""Regenerate the power-flow oracle fixtures under tests/fixtures.

Runs the independent PYPOWER solver once on the IEEE 14-bus case with the
features this package does not model (tap ratios, phase shifts, bus shunts)
removed, and writes per-meter CSV files (meter id, value) in per-unit.

Dev-only: requires PYPOWER on PYTHONPATH; the package itself never imports it.
"""

import csv
from pathlib import Path

from pypower.api import case14, ppoption, rundcpf, runpf

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def stripped_case14():
    ppc = case14()
    ppc["branch"][:, 8] = 0.0  # tap ratio -> nominal
    ppc["branch"][:, 9] = 0.0  # phase shift
    ppc["bus"][:, 4:6] = 0.0  # bus shunts
    return ppc


def write(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["meter", "value"])
        for name, value in rows:
            w.writerow([name, repr(float(value))])


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    opts = ppoption(VERBOSE=0, OUT_ALL=0, PF_TOL=1e-12)
    base = 100.0

    dc, ok = rundcpf(stripped_case14(), opts)
    assert ok
    rows = [(f"p_flow:{k}", dc["branch"][k, 13] / base) for k in range(dc["branch"].shape[0])]
    rows += [(f"va:{i}", dc["bus"][i, 8]) for i in range(dc["bus"].shape[0])]
    write(OUT / "case14_dc_oracle.csv", rows)

    ac, ok = runpf(stripped_case14(), opts)
    assert ok
    br, bus = ac["branch"], ac["bus"]
    rows = [(f"p_flow:{k}", br[k, 13] / base) for k in range(br.shape[0])]
    rows += [(f"q_flow:{k}", br[k, 14] / base) for k in range(br.shape[0])]
    rows += [(f"vm:{i}", bus[i, 7]) for i in range(bus.shape[0])]
    rows += [(f"va:{i}", bus[i, 8]) for i in range(bus.shape[0])]
    write(OUT / "case14_ac_oracle.csv", rows)


if __name__ == "__main__":
    main()
