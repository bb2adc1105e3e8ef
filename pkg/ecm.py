"""
ecm.py: R-RC equivalent-circuit cell model.

One series resistor R0 plus one R1||C1 pair, every element a function of SOC.
The same model is the simulated plant and (with disturbed curves) the MPC
prediction model. Current is charging-positive and raises terminal voltage:

    z'  = z + (eta * ts / q) * I
    u1' = (u1 - r1 * I) * exp(-ts / (r1 * c1)) + r1 * I
    V_T = ocv(z) + u1 + r0 * I

Parameters are evaluated at the pre-step SOC.
"""

import csv
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

import config
from config import log
from spline import Spline, SplineError, build_spline

TABLE_COLUMNS = ('soc', 'ocv_v', 'r0_ohm', 'r1_ohm', 'c1_f')
CURVES = ('r0', 'r1', 'c1')
_SCAN = np.linspace(0.0, 1.0, 1001)


class EcmError(ValueError):
    """Invalid cell parameters or non-finite step inputs."""


class CellTableError(ValueError):
    """Cell parameter CSV failed ingestion; names the offending row/column."""

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.column = column


class PointParams(NamedTuple):
    ocv: float
    r0: float
    r1: float
    c1: float


@dataclass(frozen=True)
class EcmState:
    z: float
    u1: float = 0.0

    def is_finite(self):
        return math.isfinite(self.z) and math.isfinite(self.u1)


@dataclass(frozen=True, eq=False)
class CellParams:
    soc_grid: np.ndarray
    ocv: Spline
    r0: Spline
    r1: Spline
    c1: Spline
    eta: float = config.ETA
    q: float = config.CAPACITY_AS
    i_max: float = config.I_MAX_A
    v_t_min: float = config.V_T_MIN
    v_t_max: float = config.V_T_MAX

    def curve(self, name):
        return getattr(self, name)

    def with_curve(self, name, spline):
        """Copy with one of r0 / r1 / c1 / ocv replaced, revalidated."""
        cell = replace(self, **{name: spline})
        validate_cell(cell)
        return cell


# ── Validation ───────────────────────────────────────────────────

def validate_cell(cell):
    """Check the CellParams invariants; raises EcmError. Non-monotone OCV only warns."""
    if not (0.0 < cell.eta <= 1.0):
        raise EcmError(f"eta must be in (0, 1], got {cell.eta}")
    if cell.q <= 0:
        raise EcmError(f"capacity q must be positive, got {cell.q}")
    if cell.i_max <= 0:
        raise EcmError(f"i_max must be positive, got {cell.i_max}")
    if not cell.v_t_min < cell.v_t_max:
        raise EcmError(f"voltage bounds out of order: {cell.v_t_min} >= {cell.v_t_max}")
    for name in CURVES:
        scan = cell.curve(name).sample(_SCAN)
        if np.any(scan <= 0):
            z_bad = float(_SCAN[int(np.argmax(scan <= 0))])
            raise EcmError(f"{name} must be positive on [0, 1] (violated at SOC {z_bad:.3f})")
    ocv0, ocv1 = cell.ocv(0.0), cell.ocv(1.0)
    if not (cell.v_t_min < ocv0 < cell.v_t_max):
        raise EcmError(f"ocv(0) = {ocv0} V outside ({cell.v_t_min}, {cell.v_t_max})")
    if ocv1 > cell.v_t_max:
        raise EcmError(f"ocv(1) = {ocv1} V above v_t_max {cell.v_t_max}")
    if np.any(np.diff(cell.ocv.sample(_SCAN)) < 0):
        log.warning("Interpolated OCV is not monotone on [0, 1]")


# ── Parameter table ──────────────────────────────────────────────

def load_parameter_table(path, **constants):
    """Read a cell CSV (soc,ocv_v,r0_ohm,r1_ohm,c1_f) into CellParams.

    `constants` override eta / q / i_max / v_t_min / v_t_max. Row numbers in
    errors are file line numbers.
    """
    try:
        with open(path, encoding='utf-8', newline='') as f:
            lines = [(n, line) for n, line in enumerate(f, start=1)
                     if line.strip() and not line.lstrip().startswith('#')]
    except OSError as e:
        raise CellTableError(f"cannot read cell table {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise CellTableError(f"cell table {path} is not UTF-8 text: {e}") from e
    if not lines:
        raise CellTableError(f"cell table {path} is empty")

    try:
        parsed = list(csv.reader(line for _, line in lines))
    except csv.Error as e:
        raise CellTableError(f"malformed CSV in {path}: {e}") from e
    reader = iter(parsed)
    header = [h.strip() for h in next(reader)]
    header_row = lines[0][0]
    for col in TABLE_COLUMNS:
        if col not in header:
            raise CellTableError("missing column", row=header_row, column=col)

    columns = {col: [] for col in TABLE_COLUMNS}
    row_numbers = []
    for (row_no, _), fields in zip(lines[1:], reader):
        if len(fields) != len(header):
            raise CellTableError(f"expected {len(header)} fields, got {len(fields)}", row=row_no)
        record = dict(zip(header, (x.strip() for x in fields)))
        for col in TABLE_COLUMNS:
            try:
                value = float(record[col])
            except ValueError:
                raise CellTableError(f"not a number: {record[col]!r}", row=row_no, column=col) from None
            if not math.isfinite(value):
                raise CellTableError("value must be finite", row=row_no, column=col)
            if col in ('r0_ohm', 'r1_ohm', 'c1_f') and value <= 0:
                raise CellTableError(f"must be positive, got {value}", row=row_no, column=col)
            columns[col].append(value)
        row_numbers.append(row_no)

    if len(row_numbers) < 2:
        raise CellTableError("need at least 2 data rows", row=header_row)
    soc = np.array(columns['soc'])
    for i in range(1, soc.size):
        if soc[i] <= soc[i - 1]:
            raise CellTableError("SOC must be strictly increasing", row=row_numbers[i], column='soc')
    if soc[0] > 0.0 or soc[-1] < 1.0:
        raise CellTableError(f"SOC range [{soc[0]}, {soc[-1]}] does not cover [0, 1]", column='soc')

    try:
        cell = CellParams(
            soc_grid=soc,
            ocv=build_spline(soc, columns['ocv_v']),
            r0=build_spline(soc, columns['r0_ohm']),
            r1=build_spline(soc, columns['r1_ohm']),
            c1=build_spline(soc, columns['c1_f']),
            **constants,
        )
        validate_cell(cell)
    except (SplineError, EcmError) as e:
        raise CellTableError(str(e)) from e
    log.debug(f"Loaded cell table {path} ({soc.size} rows)")
    return cell


def default_cell(**constants):
    """The shipped synthetic NMC-like fixture."""
    return load_parameter_table(config.CELL_TABLE, **constants)


# ── Dynamics ─────────────────────────────────────────────────────

def params_at(cell, z):
    """OCV, R0, R1, C1 at SOC z (scalar or array; clamped to the table range)."""
    return PointParams(cell.ocv(z), cell.r0(z), cell.r1(z), cell.c1(z))


def step_arrays(cell, z, u1, current, ts):
    """Vectorized one-step update. Returns (z', u1', V_T) for the step just taken."""
    ocv, r0, r1, c1 = params_at(cell, z)
    decay = np.exp(-ts / (r1 * c1))
    z_next = z + (cell.eta * ts / cell.q) * current
    u1_next = (u1 - r1 * current) * decay + r1 * current
    vt = ocv + u1 + r0 * current
    return z_next, u1_next, vt


def step(cell, state, current, ts):
    """Advance the cell one sampling period. Returns (next EcmState, terminal voltage)."""
    if ts <= 0:
        raise EcmError(f"ts must be positive, got {ts}")
    if not (state.is_finite() and math.isfinite(current)):
        raise EcmError(f"non-finite step input: state={state}, current={current}")
    z_next, u1_next, vt = step_arrays(cell, state.z, state.u1, current, ts)
    return EcmState(float(z_next), float(u1_next)), float(vt)


def simulate_open_loop(cell, state, currents, ts):
    """Apply a current sequence. Returns (states incl. initial, voltages)."""
    states = [state]
    voltages = []
    for current in currents:
        state, vt = step(cell, state, float(current), ts)
        states.append(state)
        voltages.append(vt)
    return states, voltages


def ocv_intersection(cell, voltage):
    """SOC at which ocv(z) first reaches `voltage`; 1.0 if it never does on [0, 1]."""
    ocv = cell.ocv.sample(_SCAN)
    above = np.nonzero(ocv >= voltage)[0]
    if above.size == 0:
        return 1.0
    i = int(above[0])
    if i == 0:
        return 0.0
    # linear refine between scan points
    z0, z1 = _SCAN[i - 1], _SCAN[i]
    v0, v1 = ocv[i - 1], ocv[i]
    return float(z0 + (voltage - v0) * (z1 - z0) / (v1 - v0))
