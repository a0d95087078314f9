"""Toric-code geometry and classical Ising lattices.

The 2D torus lattice has L*L vertices, 2*L*L edge qubits and periodic
boundaries.  Canonical edge numbering is row-major with horizontal edges
first: the horizontal edge leaving vertex (x, y) in +x is ``y*L + x`` and
the vertical edge leaving it in +y is ``L*L + y*L + x``.

Stabilizer index sets: the star at vertex (x, y) holds the four edges
incident to the vertex; the plaquette at (x, y) holds the four edges that
bound the face with corners (x, y) and (x+1, y+1).  Each edge belongs to
exactly two stars and two plaquettes, so the product of all stars (and of
all plaquettes) is the identity.

Logical loops: ``zlike`` operators live on direct-lattice cycles, ``xlike``
on dual-lattice cycles; ``homology_label`` records the geometric winding
direction of the loop.  A zlike loop anticommutes with the xlike loop of
the complementary label (their supports share exactly one edge) and
commutes with the same-label one - the mod-2 intersection form of the
torus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qmemlab._errors import ParameterError

PLAQUETTE = "plaquette"
STAR = "star"

ZLIKE = "zlike"
XLIKE = "xlike"

HORIZONTAL = "horizontal"
VERTICAL = "vertical"


class TorusLattice:
    """L x L square lattice on the torus with edge qubits.

    Attributes
    ----------
    L : linear size
    n_edges : 2*L*L
    stars, plaquettes : (L*L, 4) int arrays of edge indices
    """

    def __init__(self, L):
        if L < 2:
            raise ParameterError("torus size L must be >= 2")
        self.L = int(L)
        self.n_edges = 2 * L * L
        self.n_cells = L * L
        xs, ys = np.meshgrid(np.arange(L), np.arange(L))
        x = xs.ravel()
        y = ys.ravel()
        h = lambda xx, yy: (yy % L) * L + (xx % L)
        v = lambda xx, yy: L * L + (yy % L) * L + (xx % L)
        self.stars = np.column_stack(
            [h(x, y), h(x - 1, y), v(x, y), v(x, y - 1)]).astype(np.int32)
        self.plaquettes = np.column_stack(
            [h(x, y), h(x, y + 1), v(x, y), v(x + 1, y)]).astype(np.int32)

    def horizontal_edge(self, x, y):
        return (y % self.L) * self.L + (x % self.L)

    def vertical_edge(self, x, y):
        return self.L * self.L + (y % self.L) * self.L + (x % self.L)

    def cell_index(self, x, y):
        return (y % self.L) * self.L + (x % self.L)

    def cell_coords(self, index):
        return index % self.L, index // self.L

    def cells(self, sector):
        if sector == PLAQUETTE:
            return self.plaquettes
        if sector == STAR:
            return self.stars
        raise ParameterError(f"unknown sector {sector!r}")

    def edge_endpoints(self, edge):
        """Vertex coordinates (tail, head) of an edge, for export."""
        L = self.L
        if edge < L * L:
            x, y = edge % L, edge // L
            return (x, y), ((x + 1) % L, y)
        e = edge - L * L
        x, y = e % L, e // L
        return (x, y), (x, (y + 1) % L)

    def to_json_dict(self):
        return {
            "L": self.L,
            "n_edges": self.n_edges,
            "edges": [[list(a), list(b)] for a, b in
                      (self.edge_endpoints(e) for e in range(self.n_edges))],
            "stars": self.stars.tolist(),
            "plaquettes": self.plaquettes.tolist(),
        }


def build_torus(L):
    """Construct the L x L toric lattice (L >= 2)."""
    return TorusLattice(L)


@dataclass(frozen=True)
class IsingLattice:
    """Classical Ising lattice: a 1D ring or a 2D periodic square lattice."""

    dimension: int
    size: int            # N for a ring, L for a torus
    n_sites: int
    neighbors: np.ndarray  # (n_sites, degree)
    bonds: np.ndarray      # (n_bonds, 2)


def build_ising_ring(n):
    if n < 3:
        raise ParameterError("ring size must be >= 3")
    idx = np.arange(n)
    neighbors = np.column_stack([(idx - 1) % n, (idx + 1) % n]).astype(np.int32)
    bonds = np.column_stack([idx, (idx + 1) % n]).astype(np.int32)
    return IsingLattice(dimension=1, size=n, n_sites=n,
                        neighbors=neighbors, bonds=bonds)


def build_ising_torus(L):
    if L < 2:
        raise ParameterError("torus size L must be >= 2")
    n = L * L
    idx = np.arange(n)
    x, y = idx % L, idx // L
    site = lambda xx, yy: (yy % L) * L + (xx % L)
    neighbors = np.column_stack([site(x + 1, y), site(x - 1, y),
                                 site(x, y + 1), site(x, y - 1)]).astype(np.int32)
    bonds = np.concatenate([np.column_stack([idx, site(x + 1, y)]),
                            np.column_stack([idx, site(x, y + 1)])]).astype(np.int32)
    return IsingLattice(dimension=2, size=L, n_sites=n,
                        neighbors=neighbors, bonds=bonds)


def validate_config(lattice, config):
    cfg = np.asarray(config)
    n = lattice.n_edges if isinstance(lattice, TorusLattice) else lattice.n_sites
    if cfg.shape != (n,):
        raise ParameterError(f"config length {cfg.shape} does not match lattice ({n})")
    if not np.all(np.abs(cfg) == 1):
        raise ParameterError("config values must be +-1")
    return cfg


def syndrome(lattice, config, sector=PLAQUETTE):
    """Flag every cell whose 4-edge product is -1.

    Flags always come in even numbers: each edge enters two cells, so the
    product of all cell values is +1.
    """
    cfg = validate_config(lattice, config)
    cells = lattice.cells(sector)
    return np.prod(cfg[cells], axis=1) == -1


@dataclass(frozen=True)
class LogicalOperator:
    """Noncontractible loop supporting an encoded Pauli.

    zlike supports live on direct-lattice cycles, xlike on dual cycles;
    homology_label is the loop's winding direction on the torus.
    """

    support: tuple
    sector: str
    homology_label: str

    @property
    def support_array(self):
        return np.asarray(self.support, dtype=np.int64)


def canonical_logicals(lattice):
    """Straight-line logical representatives, keyed (sector, label).

    zlike-horizontal runs along lattice row 0; zlike-vertical along column
    0.  xlike-horizontal is the dual loop winding in +x (crossing the
    vertical edges of row 0); xlike-vertical winds in +y (crossing the
    horizontal edges of column 0).
    """
    L = lattice.L
    ops = {
        (ZLIKE, HORIZONTAL): tuple(lattice.horizontal_edge(x, 0) for x in range(L)),
        (ZLIKE, VERTICAL): tuple(lattice.vertical_edge(0, y) for y in range(L)),
        (XLIKE, HORIZONTAL): tuple(lattice.vertical_edge(x, 0) for x in range(L)),
        (XLIKE, VERTICAL): tuple(lattice.horizontal_edge(0, y) for y in range(L)),
    }
    return {key: LogicalOperator(support=sup, sector=key[0], homology_label=key[1])
            for key, sup in ops.items()}


def bare_logical_value(config, logical):
    """Product of config values over the logical support."""
    cfg = np.asarray(config)
    return int(np.prod(cfg[logical.support_array]))


def chain_boundary_is_empty(lattice, chain_edges):
    """True iff every vertex touches an even number of chain edges."""
    counts = np.zeros(lattice.n_cells, dtype=np.int64)
    member = np.zeros(lattice.n_edges, dtype=bool)
    member[np.asarray(list(chain_edges), dtype=np.int64)] = True
    for cell in range(lattice.n_cells):
        counts[cell] = int(np.count_nonzero(member[lattice.stars[cell]]))
    return bool(np.all(counts % 2 == 0))


def homology_class(lattice, chain_edges):
    """Winding parities (h, v) of a direct-lattice cycle.

    h counts intersections mod 2 with the transversal cut of horizontal
    edges at column 0; v with the cut of vertical edges at row 0.  Adding
    any plaquette boundary leaves both parities unchanged.
    """
    edges = np.asarray(sorted(set(int(e) for e in chain_edges)), dtype=np.int64)
    if edges.size and (edges[0] < 0 or edges[-1] >= lattice.n_edges):
        raise ParameterError("chain contains out-of-range edge indices")
    if not chain_boundary_is_empty(lattice, edges):
        raise ParameterError("chain has nonempty boundary")
    L = lattice.L
    h_cut = {lattice.horizontal_edge(0, y) for y in range(L)}
    v_cut = {lattice.vertical_edge(x, 0) for x in range(L)}
    es = set(int(e) for e in edges)
    return (len(es & h_cut) % 2, len(es & v_cut) % 2)


def apply_flips(config, edges):
    """Return config with the listed edges/sites sign-flipped."""
    out = np.array(config, copy=True)
    idx = np.asarray(list(edges), dtype=np.int64)
    if idx.size:
        out[idx] *= -1
    return out


def plaquette_boundary_edges(lattice, x, y):
    """Edge set of one plaquette boundary (a contractible cycle)."""
    return tuple(int(e) for e in lattice.plaquettes[lattice.cell_index(x, y)])


def cell_path_edges(lattice, sector, cell_a, cell_b):
    """Edges crossed by a shortest dual (or direct) path between two cells.

    For the plaquette sector the path walks the dual lattice; for the star
    sector it walks the direct lattice.  Steps go along the shorter torus
    direction in x first, then y.  Returns a tuple of edge indices; flipping
    them moves an excitation from cell_a to cell_b.
    """
    L = lattice.L
    x1, y1 = lattice.cell_coords(cell_a)
    x2, y2 = lattice.cell_coords(cell_b)

    def step_x(x, y, direction):
        # plaquette (x,y) and (x+1,y) share vertical edge v(x+1, y);
        # stars (x,y) and (x+1,y) share horizontal edge h(x, y)
        if sector == PLAQUETTE:
            return lattice.vertical_edge(x + 1, y) if direction > 0 else lattice.vertical_edge(x, y)
        return lattice.horizontal_edge(x, y) if direction > 0 else lattice.horizontal_edge(x - 1, y)

    def step_y(x, y, direction):
        if sector == PLAQUETTE:
            return lattice.horizontal_edge(x, y + 1) if direction > 0 else lattice.horizontal_edge(x, y)
        return lattice.vertical_edge(x, y) if direction > 0 else lattice.vertical_edge(x, y - 1)

    edges = []
    dx = (x2 - x1) % L
    step = 1 if dx <= L - dx else -1
    n_steps = dx if dx <= L - dx else L - dx
    x, y = x1, y1
    for _ in range(n_steps):
        edges.append(step_x(x, y, step))
        x = (x + step) % L
    dy = (y2 - y1) % L
    step = 1 if dy <= L - dy else -1
    n_steps = dy if dy <= L - dy else L - dy
    for _ in range(n_steps):
        edges.append(step_y(x, y, step))
        y = (y + step) % L
    return tuple(edges)


def torus_distance(L, cell_a_xy, cell_b_xy):
    """L1 distance on the torus between two cell coordinates."""
    dx = abs(cell_a_xy[0] - cell_b_xy[0])
    dy = abs(cell_a_xy[1] - cell_b_xy[1])
    return min(dx, L - dx) + min(dy, L - dy)
