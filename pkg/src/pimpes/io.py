"""Legacy VTK output and the plain-text checkpoint format."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import Mesh
from .rt0 import cell_velocity
from .schemes import SimState

CHECKPOINT_VERSION = 1


def _fmt(values) -> str:
    return "\n".join(f"{v:.17g}" for v in np.asarray(values, dtype=float).ravel())


def write_vtk(state: SimState, mesh: Mesh, path, perm=None) -> None:
    """Legacy ASCII unstructured grid with per-cell fields.

    Scalars S_w, S_n, p_w, p_n (and K when ``perm`` is given); vectors u_t
    and xi_c evaluated at the cell centroids.
    """
    m = mesh.n_cells
    lines = ["# vtk DataFile Version 3.0", f"two-phase state t={state.t:.17g} s", "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.n_vertices} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices]
    lines.append(f"CELLS {m} {4 * m}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.cells]
    lines.append(f"CELL_TYPES {m}")
    lines += ["5"] * m
    lines.append(f"CELL_DATA {m}")
    fields = [("S_w", state.s_w), ("S_n", state.s_n), ("p_w", state.p_w), ("p_n", state.p_n)]
    if perm is not None:
        fields.append(("K", np.asarray(perm, dtype=float)))
    for name, vals in fields:
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _fmt(vals)]
    for name, dofs in (("u_t", state.u_t), ("xi_c", state.xi_c)):
        v = cell_velocity(mesh, dofs)
        lines.append(f"VECTORS {name} double")
        lines += [f"{a:.17g} {b:.17g} 0" for a, b in v]
    Path(path).write_text("\n".join(lines) + "\n")


_ARRAYS = ("s_w", "p_w", "p_n", "u_t", "xi_c", "flux_w", "flux_n", "dir_w", "dir_n")


def write_checkpoint(state: SimState, path) -> None:
    """``pimpes-state <version>`` header, scalars, then one block per array."""
    out = [f"pimpes-state {CHECKPOINT_VERSION}", f"t {state.t:.17g}", f"step {state.step}"]
    for name in _ARRAYS:
        arr = getattr(state, name)
        if arr is None:
            continue
        out.append(f"{name} {arr.size}")
        out.append(_fmt(arr))
    Path(path).write_text("\n".join(out) + "\n")


def read_checkpoint(path) -> SimState:
    lines = Path(path).read_text().split("\n")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "pimpes-state":
        raise ValueError(f"{path}: not a checkpoint file")
    if int(head[1]) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {head[1]}")
    t = float(lines[1].split()[1])
    step = int(lines[2].split()[1])
    arrays = {}
    k = 3
    while k < len(lines) and lines[k].strip():
        name, n = lines[k].split()
        n = int(n)
        arrays[name] = np.array(lines[k + 1:k + 1 + n], dtype=float)
        k += n + 1
    missing = [a for a in _ARRAYS[:7] if a not in arrays]
    if missing:
        raise ValueError(f"{path}: missing array {missing[0]}")
    return SimState(t, arrays["s_w"], arrays["p_w"], arrays["p_n"], arrays["u_t"], arrays["xi_c"],
                    arrays["flux_w"], arrays["flux_n"], step, arrays.get("dir_w"), arrays.get("dir_n"))
