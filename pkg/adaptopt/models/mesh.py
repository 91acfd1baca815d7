"""
Quadtree forest over a structured base grid.

Cells are addressed by integer keys ``(level, i, j)``: cell ``(l, i, j)`` spans
``[i*hx_l, (i+1)*hx_l] x [j*hy_l, (j+1)*hy_l]`` with ``hx_l = hx_0 / 2**l``.
Its parent is ``(l-1, i//2, j//2)`` and its children are
``(l+1, 2i+a, 2j+b)`` for quadrant ``q = a + 2b``. Human-readable path keys
(``"<base index>/<quadrant digits>"``) are used in dumps and snapshots.
"""
import copy
import logging
from enum import Enum

import numpy as np
from scipy import sparse

from adaptopt.errors import InvalidArgumentError, LevelCapError, PreconditionError

logger = logging.getLogger(__name__)

# Face directions: left, right, bottom, top
LEFT, RIGHT, BOTTOM, TOP = 0, 1, 2, 3
DIRECTIONS = ((-1, 0), (1, 0), (0, -1), (0, 1))
OPPOSITE = (RIGHT, LEFT, TOP, BOTTOM)
DIRECTION_NAMES = ('left', 'right', 'bottom', 'top')


class AdaptFlag(Enum):
    KEEP = 'keep'
    REFINE = 'refine'
    COARSEN = 'coarsen'


class Cell:
    __slots__ = ('level', 'i', 'j', 'active')

    def __init__(self, level, i, j, active=True):
        self.level = level
        self.i = i
        self.j = j
        self.active = active

    @property
    def key(self):
        return (self.level, self.i, self.j)

    def __repr__(self):
        return f'<Cell {self.key} {"active" if self.active else "refined"}>'


def child_keys(key):
    l, i, j = key
    return [(l + 1, 2 * i + a, 2 * j + b) for b in (0, 1) for a in (0, 1)]


def parent_key(key):
    l, i, j = key
    if l == 0:
        return None
    return (l - 1, i // 2, j // 2)


class Forest:
    """Multilevel quadrilateral forest with refinement history"""

    def __init__(self, base_nx, base_ny, width, height, max_level=4, excluded=None):
        self.base_nx = int(base_nx)
        self.base_ny = int(base_ny)
        self.width = float(width)
        self.height = float(height)
        self.max_level = int(max_level)
        self.excluded = set(tuple(e) for e in (excluded or ()))
        self.hx0 = self.width / self.base_nx
        self.hy0 = self.height / self.base_ny
        self.cells = {}
        self.last_adaptation = {}

        for j in range(self.base_ny):
            for i in range(self.base_nx):
                if (i, j) not in self.excluded:
                    self.cells[(0, i, j)] = Cell(0, i, j)

        self._invalidate()

    # ------------------------------------------------------------------
    # bookkeeping
    # ------------------------------------------------------------------
    def _invalidate(self):
        self._active = None
        self._index = None

    def active_keys(self):
        """Active cells in depth-first tree order (base cells row-major)"""
        if self._active is None:
            out = []
            for j in range(self.base_ny):
                for i in range(self.base_nx):
                    if (0, i, j) not in self.cells:
                        continue
                    stack = [(0, i, j)]
                    while stack:
                        key = stack.pop()
                        cell = self.cells[key]
                        if cell.active:
                            out.append(key)
                        else:
                            stack.extend(reversed(child_keys(key)))
            self._active = out
        return self._active

    def active_index(self):
        if self._index is None:
            self._index = {key: n for n, key in enumerate(self.active_keys())}
        return self._index

    @property
    def n_active(self):
        return len(self.active_keys())

    def levels(self):
        return np.array([key[0] for key in self.active_keys()], dtype=int)

    def max_active_level(self):
        return max(key[0] for key in self.active_keys())

    def cell_size(self, level):
        scale = 2.0 ** level
        return self.hx0 / scale, self.hy0 / scale

    def cell_bounds(self, key):
        l, i, j = key
        hx, hy = self.cell_size(l)
        return i * hx, j * hy, hx, hy

    def geometry(self):
        """(n_active, 4) array of x0, y0, hx, hy"""
        keys = np.array(self.active_keys(), dtype=np.int64).reshape(-1, 3)
        scale = 2.0 ** keys[:, 0]
        hx = self.hx0 / scale
        hy = self.hy0 / scale
        return np.column_stack([keys[:, 1] * hx, keys[:, 2] * hy, hx, hy])

    def areas(self):
        geom = self.geometry()
        return geom[:, 2] * geom[:, 3]

    def domain_area(self):
        return self.hx0 * self.hy0 * (self.base_nx * self.base_ny - len(self.excluded))

    def path_key(self, key):
        l, i, j = key
        digits = []
        for depth in range(l, 0, -1):
            shift = l - depth
            digits.append(str(((i >> shift) & 1) + 2 * ((j >> shift) & 1)))
        base = (j >> l) * self.base_nx + (i >> l)
        return f'{base}/{"".join(reversed(digits))}'

    def key_from_path(self, path):
        base_text, _, digits = path.partition('/')
        base = int(base_text)
        i, j = base % self.base_nx, base // self.base_nx
        for digit in digits:
            q = int(digit)
            i, j = 2 * i + q % 2, 2 * j + q // 2
        return (len(digits), i, j)

    def copy(self):
        return copy.deepcopy(self)

    # ------------------------------------------------------------------
    # neighbour queries
    # ------------------------------------------------------------------
    def _inside(self, level, i, j):
        n = 1 << level
        if i < 0 or j < 0 or i >= self.base_nx * n or j >= self.base_ny * n:
            return False
        return (i >> level, j >> level) not in self.excluded

    def _covering(self, level, i, j):
        """Deepest existing cell containing lattice cell (level, i, j)"""
        if not self._inside(level, i, j):
            return None
        while level >= 0:
            cell = self.cells.get((level, i, j))
            if cell is not None:
                return cell
            level, i, j = level - 1, i // 2, j // 2
        return None

    def neighbors(self, key, direction):
        """Active cells sharing the given face of an active cell; [] on the boundary"""
        l, i, j = key
        di, dj = DIRECTIONS[direction]
        cell = self._covering(l, i + di, j + dj)
        if cell is None:
            return []
        if cell.active:
            return [cell.key]

        facing = OPPOSITE[direction]
        out = []
        stack = [cell.key]
        while stack:
            current = self.cells[stack.pop()]
            if current.active:
                out.append(current.key)
                continue
            cl, ci, cj = current.key
            for b in (0, 1):
                for a in (0, 1):
                    if facing == LEFT and a != 0:
                        continue
                    if facing == RIGHT and a != 1:
                        continue
                    if facing == BOTTOM and b != 0:
                        continue
                    if facing == TOP and b != 1:
                        continue
                    stack.append((cl + 1, 2 * ci + a, 2 * cj + b))
        return sorted(out)

    def boundary_faces(self):
        """(active key, direction) pairs for faces on the domain boundary"""
        faces = []
        for key in self.active_keys():
            for direction in range(4):
                if not self.neighbors(key, direction):
                    faces.append((key, direction))
        return faces

    def is_balanced(self):
        for key in self.active_keys():
            for direction in range(4):
                for other in self.neighbors(key, direction):
                    if abs(other[0] - key[0]) > 1:
                        return False
        return True

    def islands(self):
        """Active cells below max_level whose neighbours are all finer"""
        found = []
        for key in self.active_keys():
            if key[0] >= self.max_level:
                continue
            faces = 0
            finer = 0
            for direction in range(4):
                others = self.neighbors(key, direction)
                if not others:
                    continue
                faces += 1
                if all(o[0] > key[0] for o in others):
                    finer += 1
            if faces >= 2 and finer == faces:
                found.append(key)
        return found

    def locate(self, x, y, tol=1e-12):
        """Active cell containing point (x, y)"""
        for ox in (0.0, -tol, tol):
            for oy in (0.0, -tol, tol):
                i = int(np.floor((x + ox) / self.hx0))
                j = int(np.floor((y + oy) / self.hy0))
                i = min(max(i, 0), self.base_nx - 1)
                j = min(max(j, 0), self.base_ny - 1)
                if (0, i, j) not in self.cells:
                    continue
                cell = self.cells[(0, i, j)]
                while not cell.active:
                    l, ci, cj = cell.key
                    hx, hy = self.cell_size(l)
                    a = 1 if x >= (ci + 0.5) * hx else 0
                    b = 1 if y >= (cj + 0.5) * hy else 0
                    cell = self.cells[(l + 1, 2 * ci + a, 2 * cj + b)]
                return cell.key
        raise InvalidArgumentError(f'point ({x}, {y}) lies outside the domain')

    def reentrant_corners(self):
        """Coordinates of inner (re-entrant) corners of the base-grid domain"""
        corners = []
        for J in range(1, self.base_ny):
            for I in range(1, self.base_nx):
                around = [(I - 1, J - 1), (I, J - 1), (I - 1, J), (I, J)]
                present = sum(1 for c in around if c not in self.excluded)
                if present == 3:
                    corners.append((I * self.hx0, J * self.hy0))
        return corners

    # ------------------------------------------------------------------
    # mutation
    # ------------------------------------------------------------------
    def _refine(self, key):
        cell = self.cells[key]
        if not cell.active:
            return
        cell.active = False
        for child in child_keys(key):
            self.cells[child] = Cell(*child)
        self._invalidate()

    def _coarsen(self, key):
        for child in child_keys(key):
            del self.cells[child]
        self.cells[key].active = True
        self._invalidate()

    # ------------------------------------------------------------------
    # serialisation
    # ------------------------------------------------------------------
    def dump(self):
        """Plain-text tree dump: one line per cell (path key, level, active)"""
        excluded = ';'.join(f'{i},{j}' for i, j in sorted(self.excluded))
        lines = [
            f'# forest base_nx={self.base_nx} base_ny={self.base_ny} '
            f'width={self.width!r} height={self.height!r} max_level={self.max_level} '
            f'excluded={excluded}'
        ]
        for j in range(self.base_ny):
            for i in range(self.base_nx):
                if (0, i, j) not in self.cells:
                    continue
                stack = [(0, i, j)]
                while stack:
                    key = stack.pop()
                    cell = self.cells[key]
                    lines.append(f'{self.path_key(key)} {key[0]} {int(cell.active)}')
                    if not cell.active:
                        stack.extend(reversed(child_keys(key)))
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_dump(cls, text):
        lines = [line.strip() for line in text.splitlines() if line.strip()]
        if not lines or not lines[0].startswith('# forest'):
            raise InvalidArgumentError('forest dump is missing its header line')

        header = {}
        for token in lines[0].split()[2:]:
            name, _, value = token.partition('=')
            header[name] = value
        excluded = []
        if header.get('excluded'):
            excluded = [tuple(int(v) for v in pair.split(',')) for pair in header['excluded'].split(';')]

        forest = cls(int(header['base_nx']), int(header['base_ny']),
                     float(header['width']), float(header['height']),
                     max_level=int(header['max_level']), excluded=excluded)

        for line in lines[1:]:
            path, level, active = line.split()
            key = forest.key_from_path(path)
            if key[0] != int(level) or key not in forest.cells:
                raise InvalidArgumentError(f'inconsistent forest dump entry: {line}')
            if active == '0':
                forest._refine(key)
        return forest

    def to_dict(self):
        return {
            'base_nx': self.base_nx,
            'base_ny': self.base_ny,
            'width': self.width,
            'height': self.height,
            'max_level': self.max_level,
            'excluded': len(self.excluded),
            'active_cells': self.n_active,
            'max_active_level': self.max_active_level()
        }

    def __repr__(self):
        return f'<Forest {self.base_nx}x{self.base_ny} active={self.n_active}>'


class AdaptFlags:
    """One AdaptFlag per active cell of a forest"""

    def __init__(self, forest, flags=None):
        self.keys = list(forest.active_keys())
        self.flags = {key: AdaptFlag.KEEP for key in self.keys}
        for key, flag in (flags or {}).items():
            if key not in self.flags:
                raise PreconditionError(f'flag given for inactive or unknown cell {key}')
            self.flags[key] = AdaptFlag(flag)

    @classmethod
    def from_masks(cls, forest, refine, coarsen):
        """Build flags from boolean arrays in active order; refine wins"""
        refine = np.asarray(refine, dtype=bool)
        coarsen = np.asarray(coarsen, dtype=bool)
        flags = {}
        for n, key in enumerate(forest.active_keys()):
            if refine[n]:
                flags[key] = AdaptFlag.REFINE
            elif coarsen[n]:
                flags[key] = AdaptFlag.COARSEN
        return cls(forest, flags)

    def matches(self, forest):
        return self.keys == list(forest.active_keys())

    def as_list(self):
        return [self.flags[key] for key in self.keys]

    def count(self, flag):
        return sum(1 for value in self.flags.values() if value == flag)

    def __getitem__(self, key):
        return self.flags[key]

    def __len__(self):
        return len(self.flags)

    def __eq__(self, other):
        return isinstance(other, AdaptFlags) and self.keys == other.keys and self.as_list() == other.as_list()

    def to_dict(self):
        return {flag.value: self.count(flag) for flag in AdaptFlag}

    def __repr__(self):
        counts = self.to_dict()
        return f'<AdaptFlags refine={counts["refine"]} coarsen={counts["coarsen"]} keep={counts["keep"]}>'


# ----------------------------------------------------------------------
# forest operations
# ----------------------------------------------------------------------
def create_base_mesh(nx, ny, width, height, max_level=4, excluded=None):
    """Structured base grid of nx * ny level-0 cells"""
    if int(nx) < 1 or int(ny) < 1:
        raise InvalidArgumentError(f'base grid needs nx, ny >= 1, got {nx}x{ny}')
    if width <= 0 or height <= 0:
        raise InvalidArgumentError(f'domain size must be positive, got {width}x{height}')
    if max_level < 0:
        raise InvalidArgumentError(f'max_level must be >= 0, got {max_level}')

    forest = Forest(nx, ny, width, height, max_level=max_level, excluded=excluded)
    if forest.n_active == 0:
        raise InvalidArgumentError('base grid has no cells left after exclusions')

    logger.debug(f"Created base mesh {forest}")
    return forest


def refine_uniform(forest, times):
    """Quadrisect every active cell `times` times"""
    if times < 0:
        raise InvalidArgumentError(f'times must be >= 0, got {times}')
    if times == 0:
        return forest
    if forest.max_active_level() + times > forest.max_level:
        raise LevelCapError(
            f'uniform refinement by {times} would exceed max_level {forest.max_level}'
        )

    for _ in range(times):
        for key in list(forest.active_keys()):
            forest._refine(key)

    logger.debug(f"Uniform refinement x{times}: {forest.n_active} active cells")
    return forest


def execute_adaptation(forest, flags):
    """Execute refine/coarsen flags, restoring 2:1 balance and removing islands

    Refinement wins over coarsening. Refine flags at max_level and coarsen
    flags that would break balance are dropped.
    """
    if not flags.matches(forest):
        raise PreconditionError('adaptation flags do not match the active cells of the forest')

    stats = {'requested_refine': 0, 'dropped_refine': 0, 'promoted': 0,
             'refined': 0, 'coarsened': 0, 'islands': 0}

    refine = set()
    for key in forest.active_keys():
        if flags[key] == AdaptFlag.REFINE:
            stats['requested_refine'] += 1
            if key[0] < forest.max_level:
                refine.add(key)
            else:
                stats['dropped_refine'] += 1

    # Balance closure: a coarser neighbour of a cell being refined is refined too
    queue = sorted(refine)
    while queue:
        key = queue.pop()
        for direction in range(4):
            for other in forest.neighbors(key, direction):
                if other[0] < key[0] and other not in refine:
                    refine.add(other)
                    queue.append(other)
                    stats['promoted'] += 1

    for key in sorted(refine):
        forest._refine(key)
    stats['refined'] = len(refine)

    # Sibling quartets: all four active and flagged coarsen, none flagged refine
    parents = sorted({parent_key(key) for key, flag in flags.flags.items()
                      if flag == AdaptFlag.COARSEN and key[0] > 0})
    for pkey in parents:
        children = child_keys(pkey)
        if not all(c in forest.cells and forest.cells[c].active for c in children):
            continue
        if not all(flags.flags.get(c) == AdaptFlag.COARSEN for c in children):
            continue
        balanced = all(
            other[0] <= child[0]
            for child in children
            for direction in range(4)
            for other in forest.neighbors(child, direction)
        )
        if balanced:
            forest._coarsen(pkey)
            stats['coarsened'] += 1

    islands = forest.islands()
    for key in islands:
        forest._refine(key)
    stats['islands'] = len(islands)

    forest.last_adaptation = stats
    logger.info(f"Adaptation executed: {stats}, {forest.n_active} active cells")
    return forest


# ----------------------------------------------------------------------
# nodes and constraints
# ----------------------------------------------------------------------
def face_local_nodes(degree):
    """Local node indices on each face, ordered along the face tangent"""
    n = degree + 1
    return (
        [n * b for b in range(n)],              # left, a = 0
        [degree + n * b for b in range(n)],     # right, a = degree
        [a for a in range(n)],                  # bottom, b = 0
        [a + n * degree for a in range(n)],     # top, b = degree
    )


def corner_local_nodes(degree):
    n = degree + 1
    return [0, degree, n * degree, n * degree + degree]


def lagrange_weights(degree, t):
    """Equispaced 1D Lagrange basis on [0, 1] evaluated at t"""
    nodes = np.linspace(0.0, 1.0, degree + 1)
    weights = np.ones(degree + 1)
    for m in range(degree + 1):
        for k in range(degree + 1):
            if k != m:
                weights[m] *= (t - nodes[k]) / (nodes[m] - nodes[k])
    return weights


class ConstraintSet:
    """Affine constraints u[slave] = sum(w * u[master]) + inhomogeneity"""

    def __init__(self):
        self.entries = {}

    def add(self, slave, masters=(), inhomogeneity=0.0):
        """Add a constraint; an already constrained slave is left untouched"""
        if slave in self.entries:
            return False
        combined = {}
        for master, weight in masters:
            combined[master] = combined.get(master, 0.0) + float(weight)
        self.entries[slave] = (combined, float(inhomogeneity))
        return True

    def merge(self, other):
        for slave, (masters, inhomogeneity) in other.entries.items():
            self.add(slave, masters.items(), inhomogeneity)
        return self

    def __contains__(self, slave):
        return slave in self.entries

    def __len__(self):
        return len(self.entries)

    def slaves(self):
        return sorted(self.entries)

    def is_closed(self):
        return not any(m in self.entries for masters, _ in self.entries.values() for m in masters)

    def close(self):
        """Resolve chains so that no slave appears as a master"""
        for _ in range(len(self.entries) + 1):
            if self.is_closed():
                return self
            resolved = {}
            for slave, (masters, inhomogeneity) in self.entries.items():
                combined = {}
                for master, weight in masters.items():
                    if master in self.entries:
                        sub_masters, sub_inhomogeneity = self.entries[master]
                        inhomogeneity += weight * sub_inhomogeneity
                        for sub, sub_weight in sub_masters.items():
                            combined[sub] = combined.get(sub, 0.0) + weight * sub_weight
                    else:
                        combined[master] = combined.get(master, 0.0) + weight
                resolved[slave] = ({m: w for m, w in combined.items() if abs(w) > 1e-15}, inhomogeneity)
            self.entries = resolved
        raise PreconditionError('constraint chains are cyclic')

    def condense(self, n_dofs):
        """Return (C, g, free) with u = C @ u_free + g"""
        if not self.is_closed():
            self.close()
        is_slave = np.zeros(n_dofs, dtype=bool)
        if self.entries:
            is_slave[np.fromiter(self.entries.keys(), dtype=np.int64)] = True
        free = np.flatnonzero(~is_slave)
        column = np.full(n_dofs, -1, dtype=np.int64)
        column[free] = np.arange(free.size)

        rows = [free]
        cols = [np.arange(free.size)]
        vals = [np.ones(free.size)]
        g = np.zeros(n_dofs)
        for slave, (masters, inhomogeneity) in self.entries.items():
            g[slave] = inhomogeneity
            if masters:
                rows.append(np.full(len(masters), slave))
                cols.append(column[np.fromiter(masters.keys(), dtype=np.int64)])
                vals.append(np.fromiter(masters.values(), dtype=float))

        C = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_dofs, free.size)
        ).tocsr()
        return C, g, free

    def distribute(self, u):
        """Overwrite slave entries of u from their masters"""
        u = np.array(u, dtype=float)
        for slave, (masters, inhomogeneity) in self.entries.items():
            u[slave] = inhomogeneity + sum(w * u[m] for m, w in masters.items())
        return u

    def to_list(self):
        return [(slave, sorted(masters.items()), inhomogeneity)
                for slave, (masters, inhomogeneity) in sorted(self.entries.items())]

    def __repr__(self):
        return f'<ConstraintSet {len(self.entries)} constraints>'


class NodeLayout:
    """Global node numbering for Lagrange elements of a given degree

    Coincident nodes share one id; node identity is an integer lattice at the
    finest admissible resolution. Hanging nodes keep their own ids.
    """

    def __init__(self, forest, degree=2, components=2):
        if degree not in (1, 2):
            raise InvalidArgumentError(f'element degree must be 1 or 2, got {degree}')
        self.forest = forest
        self.degree = degree
        self.components = components
        self.nodes_per_cell = (degree + 1) ** 2
        self.keys = list(forest.active_keys())

        keys = np.array(self.keys, dtype=np.int64).reshape(-1, 3)
        span = degree * (1 << forest.max_level)
        scale = (1 << (forest.max_level - keys[:, 0]))[:, None]
        local = np.arange(degree + 1)
        a = np.tile(local, degree + 1)
        b = np.repeat(local, degree + 1)
        X = (keys[:, 1:2] * degree + a[None, :]) * scale
        Y = (keys[:, 2:3] * degree + b[None, :]) * scale

        stride = span * forest.base_ny + 1
        codes = X * stride + Y
        unique, inverse = np.unique(codes, return_inverse=True)
        self.cell_nodes = inverse.reshape(X.shape)
        self.n_nodes = unique.size
        self.lattice = np.column_stack([unique // stride, unique % stride])
        self.coords = np.column_stack([
            self.lattice[:, 0] * (forest.hx0 / span),
            self.lattice[:, 1] * (forest.hy0 / span)
        ])

        self._faces = face_local_nodes(degree)
        self.hanging = self._find_hanging()
        self.is_hanging = np.zeros(self.n_nodes, dtype=bool)
        if self.hanging:
            self.is_hanging[list(self.hanging)] = True
        self.boundary_faces = [(forest.active_index()[key], d) for key, d in forest.boundary_faces()]
        self.is_boundary = np.zeros(self.n_nodes, dtype=bool)
        for cell, direction in self.boundary_faces:
            self.is_boundary[self.cell_nodes[cell, self._faces[direction]]] = True
        self._node_constraints = None

    @property
    def n_dofs(self):
        return self.n_nodes * self.components

    def face_nodes(self, cell, direction):
        return self.cell_nodes[cell, self._faces[direction]]

    def corner_nodes(self):
        return self.cell_nodes[:, corner_local_nodes(self.degree)]

    def cell_dofs(self):
        """(n_cells, nodes_per_cell * components) dof indices, node-major"""
        c = self.components
        return (self.cell_nodes[:, :, None] * c + np.arange(c)[None, None, :]).reshape(len(self.keys), -1)

    def _find_hanging(self):
        forest = self.forest
        index = forest.active_index()
        hanging = {}
        for cell, key in enumerate(self.keys):
            for direction in range(4):
                others = forest.neighbors(key, direction)
                if len(others) != 1 or others[0][0] >= key[0]:
                    continue
                coarse = index[others[0]]
                coarse_face = self.face_nodes(coarse, OPPOSITE[direction])
                axis = 1 if direction in (LEFT, RIGHT) else 0
                start = self.lattice[coarse_face[0], axis]
                length = self.lattice[coarse_face[-1], axis] - start
                coarse_set = set(coarse_face.tolist())
                for node in self.face_nodes(cell, direction):
                    node = int(node)
                    if node in coarse_set or node in hanging:
                        continue
                    t = (self.lattice[node, axis] - start) / length
                    weights = lagrange_weights(self.degree, t)
                    hanging[node] = [(int(m), float(w)) for m, w in zip(coarse_face, weights) if abs(w) > 1e-15]
        return hanging

    def node_constraints(self):
        """Closed hanging-node constraints on node ids"""
        if self._node_constraints is None:
            constraints = ConstraintSet()
            for node, masters in self.hanging.items():
                constraints.add(node, masters)
            self._node_constraints = constraints.close()
        return self._node_constraints

    def __repr__(self):
        return f'<NodeLayout degree={self.degree} nodes={self.n_nodes} hanging={len(self.hanging)}>'


def build_hanging_constraints(forest, layout):
    """Constrain hanging dofs to the coarse neighbour's edge trace"""
    if not forest.is_balanced():
        raise PreconditionError('hanging-node constraints need a 2:1 balanced forest')
    if layout.keys != list(forest.active_keys()):
        raise PreconditionError('node layout is stale for this forest')

    c = layout.components
    constraints = ConstraintSet()
    for node, (masters, _) in layout.node_constraints().entries.items():
        for comp in range(c):
            constraints.add(node * c + comp, [(m * c + comp, w) for m, w in masters.items()])
    return constraints
