"""Design problem files.

A problem file is a JSON document with four sections::

    {
      "name": "mass spring damper",
      "plant": {"A": ..., "Bp": ..., "Bw": ..., "Bu": ...,
                 "Cq": ..., "Cz": ..., "Cy": ...,
                 "D": {"qp": ..., "qw": ..., ..., "yu": ...}},
      "uncertainty": {"blocks": [1, 2], "ranges": [[0.5, 1.5], [-0.3, 0.3]]},
      "controller": {"order": 1, "A": [["?"]], "B": [["?"]],
                      "C": [["?"]], "D": [[0]], "kappa0": [0, 0, 0]},
      "options": {"eps": 0.01, "seed": 0}
    }

Plant matrices are nested lists; missing ``D`` blocks default to zero; a
flat list is read as a single row.  ``blocks`` gives the repetition count
of each real parameter on the uncertainty diagonal.  ``ranges`` are the
physical parameter intervals: loading rescales the plant so that the
normalized parameter box is ``[-1, 1]^m`` (the affine map is absorbed into
the uncertainty channel by a static star product), so everything downstream
works on the normalized box.  Controller masks mark free entries with
``"?"`` and fixed entries with numbers; omitting the masks leaves every
entry free.  Saving writes the normalized problem together with the
original physical ranges, so a save/load cycle is the identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .lft import (
    ControllerStructure,
    Plant,
    UncertaintyStructure,
    star_product,
    two_port_static,
)

__all__ = [
    "ProblemOptions",
    "ProblemFile",
    "normalize_plant",
    "parse_problem",
    "load_problem",
    "problem_to_dict",
    "save_problem",
]

_D_KEYS = ("qp", "qw", "qu", "zp", "zw", "zu", "yp", "yw", "yu")
_OPTION_KEYS = ("eps", "grid", "starts", "seed", "max_outer")


@dataclass(frozen=True)
class ProblemOptions:
    """Run options carried by a problem file."""

    eps: float = 0.01
    grid: int = 11
    starts: int = 10
    seed: int = 0
    max_outer: int = 25


@dataclass(eq=False)
class ProblemFile:
    """A parsed problem: normalized plant, structures, and options.

    ``physical_ranges`` retains the parameter intervals of the original
    file; ``to_physical`` maps a normalized point back onto them.
    """

    plant: Plant
    structure: UncertaintyStructure
    cstructure: ControllerStructure
    options: ProblemOptions = field(default_factory=ProblemOptions)
    kappa0: Optional[np.ndarray] = None
    name: str = ""
    physical_ranges: Optional[np.ndarray] = None

    def __post_init__(self):
        m = self.structure.n_params
        if self.physical_ranges is None:
            self.physical_ranges = np.column_stack([-np.ones(m), np.ones(m)])
        self.physical_ranges = np.asarray(self.physical_ranges, dtype=float).reshape(m, 2)

    @property
    def range_center(self):
        return 0.5 * (self.physical_ranges[:, 0] + self.physical_ranges[:, 1])

    @property
    def range_scale(self):
        return 0.5 * (self.physical_ranges[:, 1] - self.physical_ranges[:, 0])

    def to_physical(self, delta):
        """Map a normalized parameter point to physical units."""
        return self.range_center + self.range_scale * np.asarray(delta, dtype=float)

    def from_physical(self, values):
        scale = self.range_scale
        if np.any(scale <= 0):
            raise ValueError("degenerate physical range")
        return (np.asarray(values, dtype=float) - self.range_center) / scale


def _as_shape(value, key):
    """Nested-list matrix to array; flat lists are rows, [] is 0 x 0."""
    if value is None:
        return None
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(0, 0) if arr.size == 0 else arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ValueError(f"plant.{key}: expected a matrix, got {arr.ndim} dimensions")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"plant.{key}: entries must be finite numbers")
    return arr


def _resolve_width(name, *candidates):
    vals = sorted({int(v) for v in candidates if v is not None})
    if not vals:
        raise ValueError(f"cannot infer the width of channel '{name}'; "
                         "give at least one matrix touching it")
    if len(vals) > 1:
        raise ValueError(f"inconsistent widths for channel '{name}': {vals}")
    return vals[0]


def _fit(mat, rows, cols, key):
    if mat is None or mat.size == 0:
        if mat is None or rows == 0 or cols == 0:
            return np.zeros((rows, cols))
    if mat.shape != (rows, cols):
        raise ValueError(f"plant.{key}: expected shape {(rows, cols)}, got {mat.shape}")
    return mat


def _parse_plant(data) -> Plant:
    if "plant" not in data:
        raise ValueError("problem file has no 'plant' section")
    p = data["plant"]
    A = _as_shape(p.get("A", []), "A")
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"plant.A must be square, got {A.shape}")
    n = A.shape[0]
    raw = {key: _as_shape(p.get(key), key) for key in ("Bp", "Bw", "Bu", "Cq", "Cz", "Cy")}
    d_raw = p.get("D", {})
    if not isinstance(d_raw, dict):
        raise ValueError("plant.D must be an object with blocks like 'qw'")
    unknown = set(d_raw) - set(_D_KEYS)
    if unknown:
        raise ValueError(f"plant.D has unknown blocks: {sorted(unknown)}")
    D = {key: _as_shape(d_raw.get(key), "D." + key) for key in _D_KEYS}

    def cols(mat):
        return None if mat is None or mat.size == 0 else mat.shape[1]

    def rows(mat):
        return None if mat is None or mat.size == 0 else mat.shape[0]

    nd = _resolve_width(
        "p/q", cols(raw["Bp"]), rows(raw["Cq"]),
        rows(D["qp"]), cols(D["qp"]), rows(D["qw"]), rows(D["qu"]),
        cols(D["zp"]), cols(D["yp"]),
    )
    mw = _resolve_width("w", cols(raw["Bw"]), cols(D["qw"]), cols(D["zw"]), cols(D["yw"]))
    mu = _resolve_width("u", cols(raw["Bu"]), cols(D["qu"]), cols(D["zu"]), cols(D["yu"]))
    pz = _resolve_width("z", rows(raw["Cz"]), rows(D["zp"]), rows(D["zw"]), rows(D["zu"]))
    py = _resolve_width("y", rows(raw["Cy"]), rows(D["yp"]), rows(D["yw"]), rows(D["yu"]))

    return Plant.from_blocks(
        A,
        _fit(raw["Bp"], n, nd, "Bp"),
        _fit(raw["Bw"], n, mw, "Bw"),
        _fit(raw["Bu"], n, mu, "Bu"),
        _fit(raw["Cq"], nd, n, "Cq"),
        _fit(raw["Cz"], pz, n, "Cz"),
        _fit(raw["Cy"], py, n, "Cy"),
        {
            "qp": _fit(D["qp"], nd, nd, "D.qp"),
            "qw": _fit(D["qw"], nd, mw, "D.qw"),
            "qu": _fit(D["qu"], nd, mu, "D.qu"),
            "zp": _fit(D["zp"], pz, nd, "D.zp"),
            "zw": _fit(D["zw"], pz, mw, "D.zw"),
            "zu": _fit(D["zu"], pz, mu, "D.zu"),
            "yp": _fit(D["yp"], py, nd, "D.yp"),
            "yw": _fit(D["yw"], py, mw, "D.yw"),
            "yu": _fit(D["yu"], py, mu, "D.yu"),
        },
    )


def normalize_plant(plant: Plant, structure: UncertaintyStructure, ranges) -> Plant:
    """Absorb physical parameter ranges into the uncertainty channel.

    With ``delta_phys = c + s * delta`` per parameter, the loop
    ``p = Delta_phys q`` becomes ``p = (C + S Delta_norm) q``; the affine
    part is a constant two-port ``[[0, I], [S, C]]`` star-multiplied onto
    the uncertainty channel.  The returned plant sees the normalized box.
    """
    ranges = np.asarray(ranges, dtype=float).reshape(structure.n_params, 2)
    if np.any(ranges[:, 0] >= ranges[:, 1]):
        bad = int(np.nonzero(ranges[:, 0] >= ranges[:, 1])[0][0])
        raise ValueError(
            f"uncertainty range {bad} is empty or a point: {ranges[bad].tolist()}; "
            "fold constant parameters into the plant instead"
        )
    c = 0.5 * (ranges[:, 0] + ranges[:, 1])
    s = 0.5 * (ranges[:, 1] - ranges[:, 0])
    if np.allclose(c, 0.0) and np.allclose(s, 1.0):
        return plant
    C = np.diag(structure.expand(c))
    S = np.diag(structure.expand(s))
    nd = structure.n_delta
    eye = np.eye(nd)
    wrapper = two_port_static(np.zeros((nd, nd)), eye, S, C)
    combined = star_product(wrapper, plant.uncertainty_view())
    return Plant(
        combined.sys, plant.n_delta, plant.n_perf_in, plant.n_ctrl_in,
        plant.n_perf_out, plant.n_meas_out,
    )


def _parse_mask(value, rows, cols, key):
    """Split a mask of '?' and numbers into (free, fixed) arrays."""
    if value is None:
        return np.ones((rows, cols), bool), np.zeros((rows, cols))
    free = np.zeros((rows, cols), bool)
    fixed = np.zeros((rows, cols))
    if rows == 0 or cols == 0:
        if value not in ([], None) and np.asarray(value, dtype=object).size:
            raise ValueError(f"controller.{key}: expected an empty mask")
        return free, fixed
    arr = value
    if not isinstance(arr, list) or len(arr) != rows:
        raise ValueError(f"controller.{key}: expected {rows} rows")
    for i, row in enumerate(arr):
        if not isinstance(row, list) or len(row) != cols:
            raise ValueError(f"controller.{key}: row {i} must have {cols} entries")
        for j, entry in enumerate(row):
            if entry == "?":
                free[i, j] = True
            elif isinstance(entry, (int, float)) and not isinstance(entry, bool):
                fixed[i, j] = float(entry)
            else:
                raise ValueError(
                    f"controller.{key}[{i}][{j}]: entries are '?' or numbers, got {entry!r}"
                )
    return free, fixed


def _parse_controller(data, n_meas, n_ctrl):
    c = data.get("controller", {})
    order = int(c.get("order", 0))
    if order < 0:
        raise ValueError(f"controller.order must be >= 0, got {order}")
    free_A, fixed_A = _parse_mask(c.get("A"), order, order, "A")
    free_B, fixed_B = _parse_mask(c.get("B"), order, n_meas, "B")
    free_C, fixed_C = _parse_mask(c.get("C"), n_ctrl, order, "C")
    free_D, fixed_D = _parse_mask(c.get("D"), n_ctrl, n_meas, "D")
    cstructure = ControllerStructure(
        order, n_meas, n_ctrl,
        free_A, free_B, free_C, free_D,
        fixed_A, fixed_B, fixed_C, fixed_D,
    )
    kappa0 = c.get("kappa0")
    if kappa0 is not None:
        kappa0 = np.asarray(kappa0, dtype=float).reshape(-1)
        if kappa0.shape[0] != cstructure.n_params:
            raise ValueError(
                f"controller.kappa0 has {kappa0.shape[0]} entries, the mask has "
                f"{cstructure.n_params} free entries"
            )
    return cstructure, kappa0


def parse_problem(data: dict) -> ProblemFile:
    """Build a problem from a decoded JSON document (see module docstring)."""
    plant = _parse_plant(data)
    u = data.get("uncertainty", {})
    blocks = u.get("blocks")
    if blocks is None:
        raise ValueError("uncertainty.blocks is required (repetition counts per parameter)")
    structure = UncertaintyStructure(tuple(int(b) for b in blocks))
    if structure.n_delta != plant.n_delta:
        raise ValueError(
            f"uncertainty blocks sum to {structure.n_delta} but the plant's "
            f"p/q channel has width {plant.n_delta}"
        )
    m = structure.n_params
    ranges = np.asarray(u.get("ranges", [[-1.0, 1.0]] * m), dtype=float)
    if ranges.shape != (m, 2):
        raise ValueError(f"uncertainty.ranges must be {m} pairs, got shape {ranges.shape}")
    plant = normalize_plant(plant, structure, ranges)
    physical = u.get("physical_ranges")
    if physical is None:
        physical = ranges
    physical = np.asarray(physical, dtype=float).reshape(m, 2)

    cstructure, kappa0 = _parse_controller(data, plant.n_meas_out, plant.n_ctrl_in)

    opts = data.get("options", {})
    unknown = set(opts) - set(_OPTION_KEYS)
    if unknown:
        raise ValueError(f"options has unknown keys: {sorted(unknown)}")
    options = ProblemOptions(
        eps=float(opts.get("eps", 0.01)),
        grid=int(opts.get("grid", 11)),
        starts=int(opts.get("starts", 10)),
        seed=int(opts.get("seed", 0)),
        max_outer=int(opts.get("max_outer", 25)),
    )
    return ProblemFile(
        plant=plant, structure=structure, cstructure=cstructure,
        options=options, kappa0=kappa0, name=str(data.get("name", "")),
        physical_ranges=physical,
    )


def load_problem(path) -> ProblemFile:
    """Read and parse a problem file."""
    with open(Path(path), "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return parse_problem(data)


def _mask_to_json(free, fixed):
    rows, cols = free.shape
    return [
        ["?" if free[i, j] else float(fixed[i, j]) for j in range(cols)]
        for i in range(rows)
    ]


def problem_to_dict(problem: ProblemFile) -> dict:
    """Serialize a (normalized) problem back into the file schema."""
    plant, cs = problem.plant, problem.cstructure
    ps = plant.sys
    nd, mw = plant.n_delta, plant.n_perf_in
    pz = plant.n_perf_out
    B, C, D = ps.B, ps.C, ps.D
    data = {
        "name": problem.name,
        "plant": {
            "A": ps.A.tolist(),
            "Bp": B[:, :nd].tolist(),
            "Bw": B[:, nd : nd + mw].tolist(),
            "Bu": B[:, nd + mw :].tolist(),
            "Cq": C[:nd, :].tolist(),
            "Cz": C[nd : nd + pz, :].tolist(),
            "Cy": C[nd + pz :, :].tolist(),
            "D": {
                "qp": D[:nd, :nd].tolist(),
                "qw": D[:nd, nd : nd + mw].tolist(),
                "qu": D[:nd, nd + mw :].tolist(),
                "zp": D[nd : nd + pz, :nd].tolist(),
                "zw": D[nd : nd + pz, nd : nd + mw].tolist(),
                "zu": D[nd : nd + pz, nd + mw :].tolist(),
                "yp": D[nd + pz :, :nd].tolist(),
                "yw": D[nd + pz :, nd : nd + mw].tolist(),
                "yu": D[nd + pz :, nd + mw :].tolist(),
            },
        },
        "uncertainty": {
            "blocks": list(problem.structure.block_sizes),
            "ranges": [[-1.0, 1.0]] * problem.structure.n_params,
            "physical_ranges": problem.physical_ranges.tolist(),
        },
        "controller": {
            "order": cs.n_states,
            "A": _mask_to_json(cs.free_A, cs.fixed_A),
            "B": _mask_to_json(cs.free_B, cs.fixed_B),
            "C": _mask_to_json(cs.free_C, cs.fixed_C),
            "D": _mask_to_json(cs.free_D, cs.fixed_D),
        },
        "options": {
            "eps": problem.options.eps,
            "grid": problem.options.grid,
            "starts": problem.options.starts,
            "seed": problem.options.seed,
            "max_outer": problem.options.max_outer,
        },
    }
    if problem.kappa0 is not None:
        data["controller"]["kappa0"] = np.asarray(problem.kappa0).tolist()
    return data


def save_problem(problem: ProblemFile, path):
    """Write a problem file; loading it back reproduces the problem."""
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(problem_to_dict(problem), fh, indent=2, sort_keys=True)
        fh.write("\n")
