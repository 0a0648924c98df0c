"""Built-in experiment generators and reference baselines.

Provides the ten-dimensional manufactured benchmark function with known
mean and variance, a one-dimensional stochastic diffusion problem whose
log-free coefficient comes from a truncated Karhunen-Loeve expansion of a
squared-exponential covariance, plus Monte Carlo and total-degree
polynomial regression baselines to compare surrogates against.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solveh_banded

from .basis import BasisSpec, Family, eval_basis_batch
from .errors import ConditioningError, PositivityError, ResolutionError
from .model import SampleSet, SeparatedModel

__all__ = [
    "ManufacturedSpec",
    "MANUFACTURED_MEAN",
    "MANUFACTURED_VAR",
    "manufactured_sample",
    "manufactured_model",
    "KLExpansion",
    "kl_decompose",
    "EllipticProblem",
    "elliptic_problem",
    "elliptic_solve",
    "elliptic_solve_batch",
    "elliptic_sample",
    "MCResult",
    "mc_baseline",
    "total_degree_indices",
    "pc_regression_baseline",
]

MANUFACTURED_MEAN = 0.55
MANUFACTURED_VAR = 0.76


@dataclass(frozen=True)
class ManufacturedSpec:
    """Ten-dimensional Gaussian-input benchmark with known statistics.

    The function is a constant plus four orthonormal-Hermite terms; its mean
    is coeffs[0] and its noise-free variance the sum of the squared
    remaining coefficients (0.76 with the defaults).
    """

    coefficients: tuple = (0.55, math.sqrt(2) / 2, -math.sqrt(2) / 4, -math.sqrt(2) / 4, -0.1)
    noise_std: float = 0.0005
    dims: int = 10


def _manufactured_values(spec: ManufacturedSpec, points: np.ndarray) -> np.ndarray:
    basis = BasisSpec(Family.HERMITE, 3)
    psi = eval_basis_batch(basis, points)  # (n, d, 4)
    s = spec.coefficients
    return (
        s[0]
        + s[1] * psi[:, 0, 3] * psi[:, 1, 3]
        + s[2] * psi[:, 2, 2]
        + s[3] * psi[:, 7, 2]
        + s[4] * psi[:, 8, 3]
    )


def manufactured_sample(
    n: int, seed: int, noisy: bool = True, spec: ManufacturedSpec = ManufacturedSpec()
) -> SampleSet:
    """Draw n standard-Gaussian points and evaluate the benchmark function."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    points = rng.standard_normal((n, spec.dims))
    values = _manufactured_values(spec, points)
    if noisy:
        values = values + spec.noise_std * rng.standard_normal(n)
    return SampleSet(points, values, Family.HERMITE)


def manufactured_model(max_degree: int = 3) -> SeparatedModel:
    """The benchmark function written exactly as a rank-5 separated model.

    Negative term coefficients are folded into one factor so all scales stay
    positive.
    """
    if max_degree < 3:
        raise ValueError("the exact encoding needs max_degree >= 3")
    spec = ManufacturedSpec()
    s = spec.coefficients
    d, m1 = spec.dims, max_degree + 1
    coeffs = np.zeros((d, 5, m1))
    coeffs[:, :, 0] = 1.0  # every factor defaults to the constant
    scales = np.empty(5)
    term_dims_degrees = [
        (s[0], []),
        (s[1], [(0, 3), (1, 3)]),
        (s[2], [(2, 2)]),
        (s[3], [(7, 2)]),
        (s[4], [(8, 3)]),
    ]
    for l, (coeff, spots) in enumerate(term_dims_degrees):
        scales[l] = abs(coeff)
        sign = 1.0 if coeff >= 0 else -1.0
        for j, (dim, deg) in enumerate(spots):
            coeffs[dim, l, :] = 0.0
            coeffs[dim, l, deg] = sign if j == 0 else 1.0
        if not spots and coeff < 0:
            coeffs[0, l, 0] = -1.0
    return SeparatedModel(BasisSpec(Family.HERMITE, max_degree), scales, coeffs)


# ---------------------------------------------------------------------------
# Karhunen-Loeve expansion of the squared-exponential covariance on (0, 1)
# ---------------------------------------------------------------------------


def _gauss_legendre_01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass
class KLExpansion:
    """Truncated eigen-expansion of a covariance kernel on (0, 1)."""

    corr_length: float
    eigenvalues: np.ndarray     # (d,), descending
    node_values: np.ndarray     # (n_grid, d) eigenfunctions at quadrature nodes
    nodes: np.ndarray
    weights: np.ndarray
    total_trace: float          # sum over the full discretized spectrum

    @property
    def dims(self) -> int:
        return self.eigenvalues.shape[0]

    def kernel(self, x1, x2) -> np.ndarray:
        diff = np.subtract.outer(np.asarray(x1, float), np.asarray(x2, float))
        return np.exp(-(diff**2) / self.corr_length**2)

    def eigenfunctions(self, x) -> np.ndarray:
        """Eigenfunction values at arbitrary points via Nystrom interpolation."""
        x = np.asarray(x, dtype=float)
        K = self.kernel(x.ravel(), self.nodes)
        vals = (K * self.weights[None, :]) @ self.node_values / self.eigenvalues[None, :]
        return vals.reshape(x.shape + (self.dims,))


def kl_decompose(corr_length: float, d: int, n_grid: int = 512) -> KLExpansion:
    """Nystrom discretization of the covariance eigenproblem on (0, 1).

    The kernel matrix at a Gauss-Legendre grid is symmetrized with sqrt
    weights, diagonalized, and the eigenvectors rescaled so eigenfunctions
    have unit L2(0, 1) norm.
    """
    if n_grid < 4 * d:
        raise ValueError(f"n_grid={n_grid} too small; need at least 4*d={4 * d}")
    x, w = _gauss_legendre_01(n_grid)
    K = np.exp(-np.subtract.outer(x, x) ** 2 / corr_length**2)
    sw = np.sqrt(w)
    sym = sw[:, None] * K * sw[None, :]
    vals, vecs = np.linalg.eigh(0.5 * (sym + sym.T))
    vals = vals[::-1]
    vecs = vecs[:, ::-1]
    resolved = vals > 1e-14 * vals[0]  # positive and clear of eigensolver roundoff
    if not np.all(resolved[:d]):
        raise ResolutionError(
            f"only {int(resolved.sum())} eigenvalues resolved above roundoff, need {d}; "
            "increase n_grid or reduce the truncation"
        )
    return KLExpansion(
        corr_length=corr_length,
        eigenvalues=vals[:d].copy(),
        node_values=vecs[:, :d] / sw[:, None],
        nodes=x,
        weights=w,
        total_trace=float(vals.sum()),
    )


# ---------------------------------------------------------------------------
# 1-D stochastic diffusion with quadratic finite elements
# ---------------------------------------------------------------------------

_GAUSS3_NODES = np.array([-math.sqrt(3.0 / 5.0), 0.0, math.sqrt(3.0 / 5.0)])
_GAUSS3_WEIGHTS = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


def _p2_shapes(xi: np.ndarray):
    N = np.stack([xi * (xi - 1.0) / 2.0, 1.0 - xi**2, xi * (xi + 1.0) / 2.0], axis=-1)
    dN = np.stack([xi - 0.5, -2.0 * xi, xi + 0.5], axis=-1)
    return N, dN


@dataclass
class EllipticProblem:
    """Dirichlet diffusion problem -(a u')' = 1 on (0, 1) with random a.

    The coefficient is mean_coeff plus sigma_a times the truncated KL
    expansion contracted with the input vector; inputs are uniform on
    [-1, 1]^dims. The quantity of interest is u at query_point.
    """

    corr_length: float = 1.0 / 14.0
    dims: int = 40
    mean_coeff: float = 0.1
    sigma_a: float = 0.021
    mesh_elements: int = 128
    query_point: float = 0.5
    kl: KLExpansion = None
    # assembled FEM machinery, built by elliptic_problem()
    _coeff_map: np.ndarray = field(default=None, repr=False)
    _stiff_weights: np.ndarray = field(default=None, repr=False)
    _load: np.ndarray = field(default=None, repr=False)
    _band_rows: np.ndarray = field(default=None, repr=False)
    _band_cols: np.ndarray = field(default=None, repr=False)
    _tri_mask: np.ndarray = field(default=None, repr=False)
    _dofs: np.ndarray = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return 2 * self.mesh_elements + 1


def elliptic_problem(
    corr_length: float = 1.0 / 14.0,
    dims: int = 40,
    mean_coeff: float = 0.1,
    sigma_a: float = 0.021,
    mesh_elements: int = 128,
    kl_grid: int = 512,
    query_point: float = 0.5,
) -> EllipticProblem:
    """Build the problem: KL eigenpairs plus precomputed element machinery."""
    kl = kl_decompose(corr_length, dims, kl_grid)
    prob = EllipticProblem(
        corr_length=corr_length,
        dims=dims,
        mean_coeff=mean_coeff,
        sigma_a=sigma_a,
        mesh_elements=mesh_elements,
        query_point=query_point,
        kl=kl,
    )
    n_el = mesh_elements
    h = 1.0 / n_el
    gauss_x = (np.arange(n_el)[:, None] + 0.5 * (_GAUSS3_NODES[None, :] + 1.0)) * h
    phi = kl.eigenfunctions(gauss_x.reshape(-1))  # (n_el*3, dims)
    prob._coeff_map = sigma_a * np.sqrt(kl.eigenvalues)[None, :] * phi
    N, dN = _p2_shapes(_GAUSS3_NODES)
    prob._stiff_weights = (2.0 / h) * np.einsum("g,gi,gj->gij", _GAUSS3_WEIGHTS, dN, dN)
    fe = (h / 2.0) * np.einsum("g,gi->i", _GAUSS3_WEIGHTS, N)
    dofs = 2 * np.arange(n_el)[:, None] + np.arange(3)[None, :]
    load = np.zeros(prob.n_nodes)
    np.add.at(load, dofs, np.broadcast_to(fe, (n_el, 3)))
    prob._load = load
    prob._dofs = dofs
    ii = np.repeat(dofs, 3, axis=1).reshape(n_el, 3, 3)
    jj = np.tile(dofs, (1, 3)).reshape(n_el, 3, 3)
    tri = ii <= jj
    prob._band_rows = (2 + ii - jj)[tri]
    prob._band_cols = jj[tri]
    prob._tri_mask = tri
    return prob


def coefficient_at_gauss_points(problem: EllipticProblem, points: np.ndarray) -> np.ndarray:
    """Diffusion coefficient at all element Gauss points, shape (n, n_el, 3)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = problem.mean_coeff + pts @ problem._coeff_map.T
    return a.reshape(pts.shape[0], problem.mesh_elements, 3)


def elliptic_solve_batch(problem: EllipticProblem, points: np.ndarray) -> np.ndarray:
    """Solve the diffusion problem for each input row; returns u(query_point).

    Element stiffness blocks are assembled for the whole batch at once; the
    banded SPD systems are then solved sample by sample. Coefficient
    positivity and solution positivity are asserted for every sample.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = coefficient_at_gauss_points(problem, pts)
    if np.any(a <= 0.0):
        bad = int(np.argwhere(np.any(a <= 0.0, axis=(1, 2)))[0, 0])
        raise PositivityError(
            f"diffusion coefficient non-positive at sample {bad} "
            f"(min {a[bad].min():.4e})"
        )
    ke = np.einsum("seg,gij->seij", a, problem._stiff_weights)
    kv = ke[:, problem._tri_mask]
    nn = problem.n_nodes
    x = problem.query_point
    n_el = problem.mesh_elements
    h = 1.0 / n_el
    e = min(int(x / h), n_el - 1)
    xi = 2.0 * (x - e * h) / h - 1.0
    shape_at_x, _ = _p2_shapes(np.array([xi]))
    out = np.empty(pts.shape[0])
    interior = slice(1, nn - 1)
    for s in range(pts.shape[0]):
        band = np.zeros((3, nn))
        np.add.at(band, (problem._band_rows, problem._band_cols), kv[s])
        u_in = solveh_banded(band[:, interior], problem._load[interior])
        u_full = np.zeros(nn)
        u_full[interior] = u_in
        out[s] = shape_at_x[0] @ u_full[problem._dofs[e]]
    if np.any(out <= 0.0):
        bad = int(np.argwhere(out <= 0.0)[0, 0])
        raise PositivityError(
            f"solution non-positive at sample {bad} (u={out[bad]:.4e}); "
            "this violates the maximum principle for unit forcing"
        )
    return out


def elliptic_solve(problem: EllipticProblem, y) -> float:
    """Single-input convenience wrapper around the batched solver."""
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != problem.dims:
        raise ValueError(f"expected a {problem.dims}-vector")
    return float(elliptic_solve_batch(problem, y[None, :])[0])


def elliptic_sample(problem: EllipticProblem, n: int, seed: int) -> SampleSet:
    """Uniform inputs on [-1, 1]^d paired with solver outputs."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    points = rng.uniform(-1.0, 1.0, (n, problem.dims))
    return SampleSet(points, elliptic_solve_batch(problem, points), Family.LEGENDRE)


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MCResult:
    mean: float
    std: float
    stderr_mean: float
    stderr_std: float
    n: int


def mc_baseline(sampler, n: int, seed: int) -> MCResult:
    """Plain Monte Carlo estimates with standard errors.

    `sampler(n, seed)` must return the n output values. The standard error
    of the std estimate uses the delta method with the sample fourth moment,
    so it stays honest for non-Gaussian outputs.
    """
    if n < 2:
        raise ValueError("Monte Carlo baseline needs at least two samples")
    values = np.asarray(sampler(n, seed), dtype=float).ravel()
    m = float(values.mean())
    s = float(values.std(ddof=1))
    centered = values - m
    mu4 = float(np.mean(centered**4))
    stderr_mean = s / math.sqrt(n)
    if s > 0.0:
        var_of_var = max(mu4 - s**4, 0.0) / n
        stderr_std = math.sqrt(var_of_var) / (2.0 * s)
    else:
        stderr_std = 0.0
    return MCResult(m, s, stderr_mean, stderr_std, n)


def total_degree_indices(dims: int, degree: int) -> list:
    """All multi-indices with |alpha|_1 <= degree, graded lexicographic order."""
    out = []
    for total in range(degree + 1):
        for comb in itertools.combinations_with_replacement(range(dims), total):
            alpha = [0] * dims
            for c in comb:
                alpha[c] += 1
            out.append(tuple(alpha))
    return out


def pc_regression_baseline(data: SampleSet, total_degree: int):
    """Least-squares fit of the full total-degree orthonormal tensor basis.

    Returns (coefficients, mean, std): the mean is the constant coefficient
    and the variance the sum of squared non-constant coefficients, by
    orthonormality. Refuses underdetermined problems outright.
    """
    indices = total_degree_indices(data.dims, total_degree)
    n_basis = len(indices)
    if data.n < n_basis:
        raise ConditioningError(
            f"total-degree-{total_degree} basis in {data.dims} dims has {n_basis} "
            f"functions but only {data.n} samples are available; "
            "increase N or reduce the degree"
        )
    if data.n < 2 * n_basis:
        warnings.warn(
            f"near-square regression: {data.n} samples for {n_basis} basis functions",
            stacklevel=2,
        )
    basis = BasisSpec(data.family, total_degree)
    psi = eval_basis_batch(basis, data.inputs)  # (n, d, degree+1)
    design = np.ones((data.n, n_basis))
    for j, alpha in enumerate(indices):
        for k, a in enumerate(alpha):
            if a:
                design[:, j] *= psi[:, k, a]
    coeffs, _, rank, _ = np.linalg.lstsq(design, data.outputs, rcond=None)
    if rank < n_basis:
        raise ConditioningError(
            f"rank-deficient design matrix (rank {rank} of {n_basis} columns)"
        )
    mean = float(coeffs[0])
    var = float(np.sum(coeffs[1:] ** 2))
    return coeffs, mean, math.sqrt(var)
