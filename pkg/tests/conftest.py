"""
Shared fixtures for bompc tests.

These tests run WITHOUT any output directory or solver state left over from a
previous run. They cover the spline and cell models, the OCP/MPC, the GP and
BO loop, the closed-loop harness and the command-line surface.
"""

import os
import sys

import numpy as np
import pytest

# Add project root to path so we can import modules directly
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

TABLE_HEADER = "soc,ocv_v,r0_ohm,r1_ohm,c1_f\n"


@pytest.fixture
def cell():
    """The shipped synthetic fixture cell."""
    import ecm
    return ecm.default_cell()


@pytest.fixture
def write_table(tmp_path):
    """Write a cell CSV from (soc, ocv, r0, r1, c1) rows and return its path."""
    def _write(rows, name="cell.csv", header=TABLE_HEADER):
        path = tmp_path / name
        body = "".join(",".join(str(v) for v in row) + "\n" for row in rows)
        path.write_text(header + body)
        return str(path)
    return _write


@pytest.fixture
def flat_cell(write_table):
    """Cell with SOC-independent parameters: ocv 3.7 V, r0 30 mΩ, r1 20 mΩ, c1 2000 F (τ = 40 s)."""
    import ecm
    path = write_table([(0.0, 3.7, 0.03, 0.02, 2000.0), (1.0, 3.7, 0.03, 0.02, 2000.0)], "flat.csv")
    return ecm.load_parameter_table(path)


@pytest.fixture
def nominal_cfg(cell):
    """Zero-backoff controller on the exact plant model."""
    from ocp import OcpConfig
    return OcpConfig(model=cell)


@pytest.fixture
def write_config(tmp_path):
    """Write a flat TOML run file; cell_table defaults to the shipped fixture."""
    import config

    def _write(name="run.toml", **keys):
        keys.setdefault("cell_table", config.CELL_TABLE)
        lines = []
        for key, value in keys.items():
            if isinstance(value, bool):
                lines.append(f"{key} = {'true' if value else 'false'}")
            elif isinstance(value, str):
                lines.append(f'{key} = "{value}"')
            elif isinstance(value, list):
                lines.append(f"{key} = [{', '.join(repr(v) for v in value)}]".replace("'", '"'))
            else:
                lines.append(f"{key} = {value!r}")
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n")
        return str(path)
    return _write


def natural_spline_reference(knots, values, x):
    """Textbook natural cubic spline via the second-derivative tridiagonal system."""
    t = np.asarray(knots, dtype=float)
    y = np.asarray(values, dtype=float)
    n = t.size
    h = np.diff(t)
    a = np.zeros((n, n))
    rhs = np.zeros(n)
    a[0, 0] = a[-1, -1] = 1.0
    for i in range(1, n - 1):
        a[i, i - 1] = h[i - 1]
        a[i, i] = 2.0 * (h[i - 1] + h[i])
        a[i, i + 1] = h[i]
        rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1])
    m = np.linalg.solve(a, rhs)

    out = []
    for q in np.atleast_1d(np.asarray(x, dtype=float)):
        q = min(max(q, t[0]), t[-1])
        i = min(int(np.searchsorted(t, q, side='right')) - 1, n - 2)
        hi = h[i]
        dl, dr = q - t[i], t[i + 1] - q
        out.append(m[i] * dr ** 3 / (6 * hi) + m[i + 1] * dl ** 3 / (6 * hi)
                   + (y[i] / hi - m[i] * hi / 6) * dr + (y[i + 1] / hi - m[i + 1] * hi / 6) * dl)
    return np.array(out)


@pytest.fixture
def spline_reference():
    return natural_spline_reference
