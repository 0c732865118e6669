"""Plain-text result files: convergence CSV and legacy ASCII VTK."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .mesh import Mesh

# frozen leading columns; new columns are only ever appended
CSV_COLUMNS = (
    "N",
    "eta",
    "eta_gamma",
    "epsilon",
    "error",
    "effectivity",
    "iteration",
    "n_triangles",
    "n_cut",
    "eta_rt0",
    "error_h",
    "eta_hat",
    "min_hmin_ratio",
    "max_h_gamma_ratio",
    "equilibration",
    "conformity_uncut",
    "conformity_cut",
    "theta_residual",
    "decomposition",
    "rt0_coincidence",
    "rt0_eta_gap",
    "interp_ratio",
    "interp_continuity",
)


def format_value(v) -> str:
    """Deterministic text for a number: integers as is, floats with 17 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if np.isnan(v):
        return "nan"
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def write_convergence_csv(path, records) -> Path:
    """One row per iteration record (objects or dicts) with the frozen column order."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            get = r.get if isinstance(r, dict) else lambda k, r=r: getattr(r, k)
            w.writerow([format_value(get(c)) for c in CSV_COLUMNS])
    return path


def read_convergence_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: float(v) for k, v in row.items()} for row in rows]


def _vtk_array(fh, name: str, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=float)
    values = np.where(np.isfinite(values), values, 0.0)
    if values.ndim == 1:
        fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        fh.writelines(format_value(v) + "\n" for v in values)
    else:
        fh.write(f"VECTORS {name} double\n")
        for row in values:
            vec = list(row) + [0.0] * (3 - len(row))
            fh.write(" ".join(format_value(v) for v in vec) + "\n")


def write_vtk(path, mesh: Mesh, cell_data: dict | None = None, point_data: dict | None = None,
              title: str = "cutflux mesh") -> Path:
    """Legacy ASCII unstructured grid of triangles; non-finite values are written as 0."""
    path = Path(path)
    nv, nt = mesh.n_vertices, mesh.n_triangles
    with path.open("w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title.replace("\n", " ")[:255] + "\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{format_value(x)} {format_value(y)} 0\n")
        fh.write(f"CELLS {nt} {4 * nt}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {nt}\n")
        fh.write("5\n" * nt)
        if cell_data:
            fh.write(f"CELL_DATA {nt}\n")
            for name, v in cell_data.items():
                _vtk_array(fh, name, v)
        if point_data:
            fh.write(f"POINT_DATA {nv}\n")
            for name, v in point_data.items():
                _vtk_array(fh, name, v)
    return path


def read_vtk_mesh(path) -> tuple[np.ndarray, np.ndarray]:
    """Vertices and triangles of a file written by ``write_vtk``."""
    lines = Path(path).read_text().splitlines()
    i = next(k for k, s in enumerate(lines) if s.startswith("POINTS"))
    nv = int(lines[i].split()[1])
    pts = np.array([[float(t) for t in lines[i + 1 + k].split()[:2]] for k in range(nv)])
    j = next(k for k, s in enumerate(lines) if s.startswith("CELLS"))
    nt = int(lines[j].split()[1])
    tri = np.array([[int(t) for t in lines[j + 1 + k].split()[1:4]] for k in range(nt)], dtype=np.int64)
    return pts, tri


def state_fields(state) -> tuple[dict, dict]:
    """Cell and point data of an AMR iteration state for VTK export."""
    rep = state.report
    cut = state.cut
    sol = state.solution
    cells = {
        "region": cut.tri_class.astype(float),
        "eta_T": rep.eta_T,
        "eta_tilde_T": rep.eta_tilde_T,
        "epsilon_T": rep.eps_T,
    }
    if rep.error_T is not None:
        cells["error_T"] = rep.error_T
    ref = state.mesh.centroids
    t = np.arange(state.mesh.n_triangles)
    side = np.where(cut.tri_class == 2, 2, 1)
    cells["sigma"] = state.sigma.evaluate(t, side, ref[:, None, :])[:, 0]
    points = {"u1": sol.nodal(1), "u2": sol.nodal(2)}
    return cells, points
