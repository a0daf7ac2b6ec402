"""Full-order RVE solver used as the ground-truth oracle.

A square unit cell with periodically placed circular fibres is meshed with
constant-strain triangles (each grid square is cut into four triangles by
its centre node). Displacements are split into an affine part driven by
the macroscopic strain and a periodic fluctuation::

    u(x) = eps_macro . x + u_tilde(x)

Periodicity is imposed by master-slave elimination: every boundary node is
numbered with the degrees of freedom of its image on the opposite edge, and
the corner node is pinned to remove the rigid translation. Because a
constant-strain triangle reproduces linear fields exactly, the strain of an
element is ``eps_macro + B @ u_tilde_e``, so the affine jump across the cell
never has to be assembled explicitly.

Fibres are linear elastic and the matrix is J2-plastic. The homogenized
stress is the area-weighted average of the element stresses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from numba import njit

from .constitutive import (
    FIBER_PROPS,
    KIND_ELASTIC,
    KIND_J2,
    MATRIX_HARDENING,
    MATRIX_PROPS,
    N_INTVAR,
    ElasticProps,
    HardeningLaw,
    _pack,
    elastic_stiffness,
    material_kernel,
)

__all__ = [
    "MATRIX",
    "FIBER",
    "PlacementError",
    "NewtonDiverged",
    "PathFailed",
    "RveMesh",
    "PbcMap",
    "SolverSettings",
    "SolverStats",
    "MicroSolution",
    "build_rve",
    "virgin_solution",
    "solve_step",
    "solve_increment",
    "homogenize",
    "label_path",
    "homogenized_stiffness",
    "reuss_voigt_bounds",
    "hill_mandel_gap",
    "average_strain",
]

MATRIX = 0
FIBER = 1


class PlacementError(RuntimeError):
    """Fibres could not be placed without overlap."""


class NewtonDiverged(RuntimeError):
    """The micro equilibrium iterations did not converge."""


class PathFailed(RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass
class RveMesh:
    """Triangulated unit cell.

    Attributes
    ----------
    nodes : (n_nodes, 2) array
        Coordinates in mm; boundary nodes appear on both opposite edges.
    elements : (n_el, 3) int array
        Counter-clockwise node indices.
    phase : (n_el,) int array
        ``MATRIX`` or ``FIBER``.
    length : float
        Edge length of the square cell.
    fiber_centers, fiber_radius
        Geometry used to assign phases.
    target_vf : float
        Requested fibre volume fraction.
    """

    nodes: np.ndarray
    elements: np.ndarray
    phase: np.ndarray
    length: float
    fiber_centers: np.ndarray
    fiber_radius: float
    target_vf: float
    n_div: int

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def volume_fraction(self) -> float:
        a = self.areas
        return float(a[self.phase == FIBER].sum() / a.sum())

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "n_div": self.n_div,
            "target_vf": self.target_vf,
            "volume_fraction": self.volume_fraction,
            "fiber_radius": self.fiber_radius,
            "fiber_centers": self.fiber_centers.tolist(),
            "n_nodes": int(self.nodes.shape[0]),
            "n_elements": self.n_elements,
        }


@dataclass
class PbcMap:
    """Periodic constraint map.

    ``master[i]`` is the independent node whose fluctuation node ``i``
    shares (``master[i] == i`` for independent nodes). ``dof[i]`` holds the
    two reduced equation numbers of node ``i``, ``-1`` for the pinned
    corner. The macroscopic strain enters through the corner-to-corner
    offsets of the cell, i.e. the controlling nodes at ``(L, 0)`` and
    ``(0, L)`` are displaced by ``eps_macro . x`` relative to the origin.
    """

    master: np.ndarray
    dof: np.ndarray
    n_dof: int
    pinned: int
    pairs: list = field(default_factory=list)
    _asm: dict | None = field(default=None, repr=False)


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-8
    max_iter: int = 25
    max_bisections: int = 5
    fiber: ElasticProps = FIBER_PROPS
    matrix: ElasticProps = MATRIX_PROPS
    hardening: HardeningLaw = MATRIX_HARDENING


@dataclass
class SolverStats:
    """Counters accumulated over solves (for benchmarking and logs)."""

    solves: int = 0
    iterations: int = 0
    material_calls: int = 0
    bisections: int = 0
    log: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"solves": self.solves, "iterations": self.iterations,
                "material_calls": self.material_calls, "bisections": self.bisections}


@dataclass
class MicroSolution:
    macro_strain: np.ndarray
    fluctuation: np.ndarray
    alphas: np.ndarray
    strains: np.ndarray
    stresses: np.ndarray
    converged: bool = True
    iterations: int = 0
    residual: float = 0.0

    def nodal_fluctuation(self, pbc: PbcMap) -> np.ndarray:
        out = np.zeros((pbc.dof.shape[0], 2))
        mask = pbc.dof >= 0
        out[mask] = self.fluctuation[pbc.dof[mask]]
        return out

    def displacements(self, mesh: RveMesh, pbc: PbcMap) -> np.ndarray:
        exx, eyy, gxy = self.macro_strain
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        affine = np.column_stack([exx * x + 0.5 * gxy * y, 0.5 * gxy * x + eyy * y])
        return affine + self.nodal_fluctuation(pbc)


# --------------------------------------------------------------------------
# geometry
# --------------------------------------------------------------------------


def _periodic_distance(a, b, length):
    d = np.abs(a - b)
    d = np.minimum(d, length - d)
    return np.hypot(d[..., 0], d[..., 1])


def _place_fibers(n_fibers, radius, length, rng, max_attempts, gap):
    if n_fibers == 1:
        return np.array([[0.5 * length, 0.5 * length]])
    cols = math.ceil(math.sqrt(n_fibers))
    rows = math.ceil(n_fibers / cols)
    cw, ch = length / cols, length / rows
    dmin = 2.0 * radius + gap
    for attempt in range(max_attempts):
        if min(cw, ch) >= dmin:
            # jittered lattice: cannot overlap as long as each fibre stays in its cell margin
            jx = 0.5 * (cw - dmin)
            jy = 0.5 * (ch - dmin)
            cells = [(i, j) for j in range(rows) for i in range(cols)][:n_fibers]
            centers = np.array([[(i + 0.5) * cw + rng.uniform(-jx, jx),
                                 (j + 0.5) * ch + rng.uniform(-jy, jy)] for i, j in cells])
        else:
            centers = rng.uniform(0.0, length, size=(n_fibers, 2))
        dist = _periodic_distance(centers[:, None, :], centers[None, :, :], length)
        np.fill_diagonal(dist, np.inf)
        if dist.min() >= dmin:
            return centers % length
    raise PlacementError(f"could not place {n_fibers} fibres of radius {radius:.4g} "
                         f"after {max_attempts} attempts")


def build_rve(n_fibers: int = 4, vf: float = 0.6, n_div: int = 24, seed: int = 0,
              length: float = 1.0, max_attempts: int = 1000,
              min_gap: float = 0.05) -> tuple[RveMesh, PbcMap]:
    """Mesh a periodic unit cell and build its constraint map.

    Parameters
    ----------
    n_fibers : int
        Number of fibres; 0 gives a homogeneous matrix cell.
    vf : float
        Target fibre area fraction, in ``(0, 0.7]`` when ``n_fibers > 0``.
    n_div : int
        Grid squares per edge; the mesh has ``4 * n_div**2`` triangles.
    seed : int
        Seed for the fibre positions.
    min_gap : float
        Smallest matrix ligament between fibres, as a fraction of the edge.
    """
    if n_fibers < 0 or n_div < 1:
        raise ValueError("n_fibers must be >= 0 and n_div >= 1")
    if n_fibers > 0 and not 0.0 < vf <= 0.7:
        raise ValueError(f"vf must lie in (0, 0.7], got {vf}")
    rng = np.random.default_rng(seed)
    L = float(length)
    if n_fibers:
        radius = L * math.sqrt(vf / (n_fibers * math.pi))
        if 2.0 * radius >= L:
            raise PlacementError("fibre larger than the cell")
        centers = _place_fibers(n_fibers, radius, L, rng, max_attempts, gap=min_gap * L)
    else:
        radius, centers = 0.0, np.zeros((0, 2))
        vf = 0.0

    n = n_div
    h = L / n
    g = np.arange(n + 1) * h
    gx, gy = np.meshgrid(g, g, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])  # node (i, j) -> i * (n+1) + j
    c = (np.arange(n) + 0.5) * h
    cx, cy = np.meshgrid(c, c, indexing="ij")
    centre_nodes = np.column_stack([cx.ravel(), cy.ravel()])
    nodes = np.vstack([grid, centre_nodes])

    def gid(i, j):
        return i * (n + 1) + j

    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    a, b = gid(ii, jj), gid(ii + 1, jj)
    cc, d = gid(ii + 1, jj + 1), gid(ii, jj + 1)
    m = (n + 1) ** 2 + ii * n + jj
    elements = np.vstack([
        np.column_stack([a, b, m]),
        np.column_stack([b, cc, m]),
        np.column_stack([cc, d, m]),
        np.column_stack([d, a, m]),
    ]).astype(np.int64)

    centroids = nodes[elements].mean(axis=1)
    phase = np.full(elements.shape[0], MATRIX, dtype=np.int64)
    for ctr in centers:
        phase[_periodic_distance(centroids, ctr, L) < radius] = FIBER

    mesh = RveMesh(nodes, elements, phase, L, centers, radius, vf, n)

    # periodic map: grid node (i, j) shares its fluctuation with (i mod n, j mod n)
    gi, gj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    master = np.arange(nodes.shape[0])
    master[: (n + 1) ** 2] = gid(gi % n, gj % n).ravel()
    pairs = [(int(gid(n, j)), int(gid(0, j))) for j in range(n + 1)]
    pairs += [(int(gid(i, n)), int(gid(i, 0))) for i in range(n + 1)]

    pinned = gid(0, 0)
    independent = np.unique(master)
    independent = independent[independent != pinned]
    eq = np.full(nodes.shape[0], -1, dtype=np.int64)
    eq[independent] = np.arange(independent.size)
    node_eq = eq[master]
    dof = np.full((nodes.shape[0], 2), -1, dtype=np.int64)
    ok = node_eq >= 0
    dof[ok, 0] = 2 * node_eq[ok]
    dof[ok, 1] = 2 * node_eq[ok] + 1
    pbc = PbcMap(master, dof, 2 * independent.size, pinned, pairs)
    return mesh, pbc


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------


def _strain_displacement(mesh: RveMesh) -> np.ndarray:
    p = mesh.nodes[mesh.elements]
    x, y = p[..., 0], p[..., 1]
    area2 = 2.0 * mesh.areas
    bvec = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    cvec = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    B = np.zeros((mesh.n_elements, 3, 6))
    B[:, 0, 0::2] = bvec
    B[:, 1, 1::2] = cvec
    B[:, 2, 0::2] = cvec
    B[:, 2, 1::2] = bvec
    return B / area2[:, None, None]


def _assembly_data(mesh: RveMesh, pbc: PbcMap, settings: SolverSettings) -> dict:
    key = (id(mesh), settings)
    if pbc._asm is not None and pbc._asm["key"] == key:
        return pbc._asm
    B = _strain_displacement(mesh)
    edofs = pbc.dof[mesh.elements].reshape(mesh.n_elements, 6)
    rows = np.repeat(edofs, 6, axis=1)
    cols = np.tile(edofs, (1, 6))
    mask = ((rows >= 0) & (cols >= 0)).ravel()
    n = pbc.n_dof
    # CSC ordering: column-major keys
    keys = cols.ravel()[mask] * n + rows.ravel()[mask]
    uniq, inverse = np.unique(keys, return_inverse=True)
    ucol, urow = np.divmod(uniq, n)
    indptr = np.searchsorted(ucol, np.arange(n + 1))
    kinds = np.where(mesh.phase == FIBER, KIND_ELASTIC, KIND_J2).astype(np.int64)
    fiber = np.array([settings.fiber.young_modulus, settings.fiber.poisson_ratio, 0.0, 0.0, 1.0])
    matrix = _pack(settings.matrix, settings.hardening)
    mats = np.where((mesh.phase == FIBER)[:, None], fiber[None, :], matrix[None, :]).copy()
    pbc._asm = {
        "key": key, "B": B, "area": mesh.areas, "edofs": edofs, "mask": mask,
        "inverse": inverse, "indices": urow.astype(np.int32), "indptr": indptr.astype(np.int32),
        "nnz": uniq.size, "kinds": kinds, "mats": mats,
    }
    return pbc._asm


@njit(cache=True, nogil=True)
def _element_loop(B, area, edofs, kinds, mats, macro, u, alpha_prev,
                  alpha_new, strains, stresses, f, kdata):
    """Evaluate all elements; returns ``(status, sum of squared element forces)``.

    ``status`` is ``-1`` on success or the index of an element whose
    material update failed.
    """
    ne = B.shape[0]
    for k in range(f.shape[0]):
        f[k] = 0.0
    ref = 0.0
    ue = np.zeros(6)
    eps = np.zeros(3)
    sig = np.zeros(3)
    tan = np.zeros((3, 3))
    db = np.zeros((3, 6))
    fe = np.zeros(6)
    for e in range(ne):
        for a in range(6):
            d = edofs[e, a]
            ue[a] = u[d] if d >= 0 else 0.0
        for i in range(3):
            s = macro[i]
            for a in range(6):
                s += B[e, i, a] * ue[a]
            eps[i] = s
            strains[e, i] = s
        it = material_kernel(kinds[e], mats[e], eps, alpha_prev[e], sig, alpha_new[e], tan, True)
        if it < 0:
            return e, ref
        for i in range(3):
            stresses[e, i] = sig[i]
        A = area[e]
        for a in range(6):
            s = 0.0
            for i in range(3):
                s += B[e, i, a] * sig[i]
            fe[a] = A * s
            ref += fe[a] * fe[a]
            d = edofs[e, a]
            if d >= 0:
                f[d] += fe[a]
        for i in range(3):
            for b in range(6):
                s = 0.0
                for j in range(3):
                    s += tan[i, j] * B[e, j, b]
                db[i, b] = s
        for a in range(6):
            for b in range(6):
                s = 0.0
                for i in range(3):
                    s += B[e, i, a] * db[i, b]
                kdata[e, a * 6 + b] = A * s
    return -1, ref


def virgin_solution(mesh: RveMesh, pbc: PbcMap) -> MicroSolution:
    ne = mesh.n_elements
    return MicroSolution(np.zeros(3), np.zeros(pbc.n_dof), np.zeros((ne, N_INTVAR)),
                         np.zeros((ne, 3)), np.zeros((ne, 3)))


def solve_step(mesh: RveMesh, pbc: PbcMap, macro_strain, prev: MicroSolution | None = None,
               settings: SolverSettings = SolverSettings(),
               stats: SolverStats | None = None) -> MicroSolution:
    """Equilibrate the cell for one macroscopic strain.

    Newton iterations on the fluctuation field, starting from ``prev``.
    Convergence is declared when the norm of the assembled residual drops
    below ``settings.tol`` times the norm of the unassembled element forces.

    Raises
    ------
    NewtonDiverged
        No convergence within ``settings.max_iter`` iterations, a failed
        material update or a non-finite residual.
    """
    prev = prev if prev is not None else virgin_solution(mesh, pbc)
    asm = _assembly_data(mesh, pbc, settings)
    macro = np.asarray(macro_strain, dtype=float).copy()
    ne = mesh.n_elements
    u = prev.fluctuation.copy()
    alpha_new = np.empty_like(prev.alphas)
    strains = np.empty((ne, 3))
    stresses = np.empty((ne, 3))
    f = np.empty(pbc.n_dof)
    kdata = np.empty((ne, 36))
    shape = (pbc.n_dof, pbc.n_dof)
    for it in range(settings.max_iter + 1):
        status, ref = _element_loop(asm["B"], asm["area"], asm["edofs"], asm["kinds"], asm["mats"],
                                    macro, u, prev.alphas, alpha_new, strains, stresses, f, kdata)
        if stats is not None:
            stats.material_calls += ne if status < 0 else status + 1
        if status >= 0:
            raise NewtonDiverged(f"material update failed in element {status}")
        res = float(np.linalg.norm(f))
        if not math.isfinite(res):
            raise NewtonDiverged("non-finite residual")
        if res <= settings.tol * math.sqrt(ref) or res == 0.0:
            if stats is not None:
                stats.solves += 1
                stats.iterations += it
            return MicroSolution(macro, u, alpha_new.copy(), strains, stresses, True, it, res)
        if it == settings.max_iter:
            break
        data = np.bincount(asm["inverse"], weights=kdata.ravel()[asm["mask"]], minlength=asm["nnz"])
        K = scipy.sparse.csc_matrix((data, asm["indices"], asm["indptr"]), shape=shape)
        du = scipy.sparse.linalg.splu(K, permc_spec="MMD_AT_PLUS_A").solve(-f)
        if not np.all(np.isfinite(du)):
            raise NewtonDiverged("singular tangent")
        u += du
    raise NewtonDiverged(f"no convergence in {settings.max_iter} iterations (residual {res:.3e})")


def solve_increment(mesh: RveMesh, pbc: PbcMap, macro_strain, prev: MicroSolution | None = None,
                    settings: SolverSettings = SolverSettings(),
                    stats: SolverStats | None = None, _depth: int = 0) -> MicroSolution:
    """:func:`solve_step` with recursive halving of the strain increment on failure."""
    prev = prev if prev is not None else virgin_solution(mesh, pbc)
    try:
        return solve_step(mesh, pbc, macro_strain, prev, settings, stats)
    except NewtonDiverged:
        if _depth >= settings.max_bisections:
            raise
    if stats is not None:
        stats.bisections += 1
    mid = 0.5 * (prev.macro_strain + np.asarray(macro_strain, dtype=float))
    half = solve_increment(mesh, pbc, mid, prev, settings, stats, _depth + 1)
    return solve_increment(mesh, pbc, macro_strain, half, settings, stats, _depth + 1)


def homogenize(mesh: RveMesh, solution: MicroSolution) -> np.ndarray:
    a = mesh.areas
    return a @ solution.stresses / a.sum()


def average_strain(mesh: RveMesh, solution: MicroSolution) -> np.ndarray:
    a = mesh.areas
    return a @ solution.strains / a.sum()


def label_path(mesh: RveMesh, pbc: PbcMap, path, settings: SolverSettings = SolverSettings(),
               stats: SolverStats | None = None, keep_solutions: bool = False):
    """Homogenized stresses along a strain path (one row per path row).

    Returns the ``(T, 3)`` stress array, or ``(stresses, solutions)`` when
    ``keep_solutions`` is set.

    Raises
    ------
    PathFailed
        When a step fails even after bisection; ``exc.step`` is its index.
    """
    strains = np.asarray(getattr(path, "strains", path), dtype=float)
    sol = virgin_solution(mesh, pbc)
    out = np.zeros((strains.shape[0], 3))
    kept = []
    for t, eps in enumerate(strains):
        try:
            sol = solve_increment(mesh, pbc, eps, sol, settings, stats)
        except NewtonDiverged as exc:
            raise PathFailed(f"step {t}: {exc}", step=t) from exc
        out[t] = homogenize(mesh, sol)
        if stats is not None:
            stats.log.append({"step": t, "iterations": sol.iterations, "residual": sol.residual})
        if keep_solutions:
            kept.append(sol)
    return (out, kept) if keep_solutions else out


# --------------------------------------------------------------------------
# checks
# --------------------------------------------------------------------------


def homogenized_stiffness(mesh: RveMesh, pbc: PbcMap, settings: SolverSettings = SolverSettings(),
                          magnitude: float = 1e-6) -> np.ndarray:
    """Elastic homogenized stiffness from three unit-direction solves."""
    D = np.zeros((3, 3))
    for k in range(3):
        eps = np.zeros(3)
        eps[k] = magnitude
        sol = solve_step(mesh, pbc, eps, None, settings)
        D[:, k] = homogenize(mesh, sol) / magnitude
    return D


def reuss_voigt_bounds(vf: float, settings: SolverSettings = SolverSettings()):
    """Voigt (upper) and Reuss (lower) plane-stress stiffness bounds."""
    Df = elastic_stiffness(settings.fiber)
    Dm = elastic_stiffness(settings.matrix)
    voigt = vf * Df + (1.0 - vf) * Dm
    reuss = np.linalg.inv(vf * np.linalg.inv(Df) + (1.0 - vf) * np.linalg.inv(Dm))
    return reuss, voigt


def hill_mandel_gap(mesh: RveMesh, prev: MicroSolution, new: MicroSolution) -> float:
    """Relative mismatch between macro and averaged micro stress power over a step."""
    a = mesh.areas
    d_macro = new.macro_strain - prev.macro_strain
    macro = homogenize(mesh, new) @ d_macro
    micro = float(np.sum(a[:, None] * new.stresses * (new.strains - prev.strains)) / a.sum())
    scale = max(abs(macro), abs(micro))
    return 0.0 if scale == 0.0 else abs(macro - micro) / scale
