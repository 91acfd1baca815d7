"""
VTK XML unstructured-grid output of the active mesh.

Points are the global nodes of a NodeLayout (interior and mid-side nodes are
written but unused by the bilinear cells), cells are the active quads.
"""
import logging
import os

import numpy as np
from pyevtk.hl import unstructuredGridToVTK
from pyevtk.vtk import VtkQuad

from adaptopt.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

# corner_nodes() order is LL, LR, UL, UR; VTK wants counter-clockwise
VTK_CORNER_ORDER = [0, 1, 3, 2]


def _strip_extension(path):
    root, ext = os.path.splitext(path)
    return root if ext == '.vtu' else path


def write_vtu(path, layout, cell_data=None, point_vectors=None, point_scalars=None):
    """Write the active mesh with per-cell scalars and per-node vectors

    Returns the path of the written .vtu file.
    """
    n_cells = layout.cell_nodes.shape[0]
    n_nodes = layout.n_nodes

    x = np.ascontiguousarray(layout.coords[:, 0], dtype=np.float64)
    y = np.ascontiguousarray(layout.coords[:, 1], dtype=np.float64)
    z = np.zeros(n_nodes)

    connectivity = np.ascontiguousarray(layout.corner_nodes()[:, VTK_CORNER_ORDER].ravel(), dtype=np.int64)
    offsets = np.arange(4, 4 * n_cells + 1, 4, dtype=np.int64)
    cell_types = np.full(n_cells, VtkQuad.tid, dtype=np.uint8)

    cells = {}
    for name, values in (cell_data or {}).items():
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.shape != (n_cells,):
            raise InvalidArgumentError(f'cell field {name} has shape {values.shape}, expected ({n_cells},)')
        cells[name] = values

    points = {}
    for name, values in (point_scalars or {}).items():
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.shape != (n_nodes,):
            raise InvalidArgumentError(f'point field {name} has shape {values.shape}, expected ({n_nodes},)')
        points[name] = values
    for name, values in (point_vectors or {}).items():
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (n_nodes, 2):
            raise InvalidArgumentError(f'point field {name} has shape {values.shape}, expected ({n_nodes}, 2)')
        points[name] = (np.ascontiguousarray(values[:, 0]), np.ascontiguousarray(values[:, 1]), np.zeros(n_nodes))

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    written = unstructuredGridToVTK(
        _strip_extension(path), x, y, z,
        connectivity=connectivity, offsets=offsets, cell_types=cell_types,
        cellData=cells or None, pointData=points or None
    )
    logger.debug(f"Wrote {written} ({n_cells} cells, fields {sorted(cells) + sorted(points)})")
    return written
