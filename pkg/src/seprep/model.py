"""Rank-r separated surrogate models and their exact statistics.

A model represents u(y) = sum_l s_l * prod_k u_k^l(y_k) where every factor
u_k^l is expanded in the shared orthonormal basis. Because the basis is
orthonormal under the input density, the mean and second moment reduce to
algebra on the coefficients; higher moments reduce to one-dimensional
Gauss quadratures.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec, Family, eval_basis_batch, gauss_quadrature
from .errors import QuadraturePrecisionError

__all__ = [
    "SampleSet",
    "SeparatedModel",
    "evaluate",
    "evaluate_batch",
    "mean",
    "second_moment",
    "standard_deviation",
    "moment",
    "empirical_norm",
    "term_gram",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
]


@dataclass
class SampleSet:
    """Scattered input/output pairs: N points in d dimensions with scalar outputs."""

    inputs: np.ndarray
    outputs: np.ndarray
    family: Family

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.outputs = np.asarray(self.outputs, dtype=float).ravel()
        self.family = Family(self.family)
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise ValueError(
                f"inputs ({self.inputs.shape[0]} rows) and outputs "
                f"({self.outputs.shape[0]}) disagree on sample count"
            )
        if self.inputs.shape[0] < 1:
            raise ValueError("sample set must contain at least one point")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.outputs))):
            raise ValueError("sample set contains non-finite values")
        if self.family is Family.LEGENDRE and (
            self.inputs.min() < -1.0 or self.inputs.max() > 1.0
        ):
            raise ValueError("legendre-family inputs must lie in [-1, 1]^d")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dims(self) -> int:
        return self.inputs.shape[1]


@dataclass
class SeparatedModel:
    """Separated surrogate: per-term scales and per-dimension spectral coefficients.

    coeffs has shape (dims, rank, max_degree + 1), dimension-major so one
    direction's coefficient slab is contiguous. scales are strictly positive;
    signs live in the coefficients.
    """

    basis: BasisSpec
    scales: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        self.scales = np.asarray(self.scales, dtype=float).ravel()
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 3:
            raise ValueError("coeffs must have shape (dims, rank, max_degree + 1)")
        d, r, m1 = self.coeffs.shape
        if d < 1 or r < 1:
            raise ValueError("model needs dims >= 1 and rank >= 1")
        if m1 != self.basis.size:
            raise ValueError(
                f"coefficient degree axis ({m1}) does not match basis size ({self.basis.size})"
            )
        if self.scales.shape != (r,):
            raise ValueError("scales length must equal the rank")
        if np.any(self.scales <= 0.0):
            raise ValueError("term scales must be strictly positive")

    @property
    def dims(self) -> int:
        return self.coeffs.shape[0]

    @property
    def rank(self) -> int:
        return self.coeffs.shape[1]

    def copy(self) -> "SeparatedModel":
        return SeparatedModel(self.basis, self.scales.copy(), self.coeffs.copy())


def evaluate_batch(model: SeparatedModel, points: np.ndarray) -> np.ndarray:
    """Evaluate the surrogate at each row of an (N, d) array."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != model.dims:
        raise ValueError(f"expected {model.dims}-dimensional points, got {pts.shape[1]}")
    prod = np.ones((pts.shape[0], model.rank))
    for k in range(model.dims):
        psi = eval_basis_batch(model.basis, pts[:, k])
        prod *= psi @ model.coeffs[k].T
    return prod @ model.scales


def evaluate(model: SeparatedModel, y) -> float:
    """Evaluate the surrogate at a single d-vector."""
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != model.dims:
        raise ValueError(f"expected a {model.dims}-vector, got length {y.shape[0]}")
    return float(evaluate_batch(model, y[None, :])[0])


def term_gram(model: SeparatedModel, skip_dim: int | None = None) -> np.ndarray:
    """Rank-by-rank Gram matrix of the terms in L2 of the input density.

    Entry (l, l') is s_l * s_l' * prod_k <u_k^l, u_k^l'>, the product running
    over all dimensions except `skip_dim` when given. By orthonormality each
    one-dimensional inner product is a coefficient dot product.
    """
    G = np.outer(model.scales, model.scales)
    for k in range(model.dims):
        if k == skip_dim:
            continue
        G = G * (model.coeffs[k] @ model.coeffs[k].T)
    return G


def mean(model: SeparatedModel) -> float:
    """Exact mean: only the degree-0 coefficient of each factor survives."""
    return float(np.sum(model.scales * np.prod(model.coeffs[:, :, 0], axis=0)))


def second_moment(model: SeparatedModel) -> float:
    """Exact second moment via pairwise term inner products."""
    return float(term_gram(model).sum())


def standard_deviation(model: SeparatedModel) -> float:
    var = second_moment(model) - mean(model) ** 2
    return math.sqrt(max(var, 0.0))


def moment(model: SeparatedModel, m: int, quad_points: int) -> float:
    """m-th raw moment, computed dimension by dimension with Gauss quadrature.

    Expanding u^m over m term indices turns the d-dimensional integral into a
    product of one-dimensional integrals of m-fold factor products, each a
    polynomial of degree at most m*M. The rule must therefore have at least
    ceil((m*M + 1) / 2) points to be exact.
    """
    if m < 1:
        raise ValueError(f"moment order must be >= 1, got {m}")
    needed = -(-(m * model.basis.max_degree + 1) // 2)
    if quad_points < needed:
        raise QuadraturePrecisionError(
            f"moment of order {m} at degree {model.basis.max_degree} needs at least "
            f"{needed} quadrature points, got {quad_points}"
        )
    nodes, weights = gauss_quadrature(model.basis, quad_points)
    psi = eval_basis_batch(model.basis, nodes)  # (q, M+1)
    r = model.rank
    total = np.ones((r,) * m)
    for k in range(model.dims):
        vals = model.coeffs[k] @ psi.T  # (r, q)
        tk = np.zeros((r,) * m)
        for q in range(quad_points):
            outer = vals[:, q]
            for _ in range(m - 1):
                outer = np.multiply.outer(outer, vals[:, q])
            tk += weights[q] * outer
        total *= tk
    for _ in range(m):
        total = total @ model.scales
    return float(total)


def empirical_norm(values: np.ndarray) -> float:
    """Root mean square over the sample set (the pseudo-norm used for fitting)."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 1:
        raise ValueError("empirical norm needs at least one value")
    return float(np.sqrt(np.mean(v * v)))


def model_to_dict(model: SeparatedModel) -> dict:
    return {
        "dims": model.dims,
        "rank": model.rank,
        "family": model.basis.family.value,
        "max_degree": model.basis.max_degree,
        "scales": model.scales.tolist(),
        "coeffs": model.coeffs.tolist(),
    }


def model_from_dict(doc: dict) -> SeparatedModel:
    basis = BasisSpec(Family(doc["family"]), int(doc["max_degree"]))
    model = SeparatedModel(basis, np.array(doc["scales"]), np.array(doc["coeffs"]))
    if model.dims != int(doc["dims"]) or model.rank != int(doc["rank"]):
        raise ValueError("model document header disagrees with coefficient shapes")
    return model


def save_model(model: SeparatedModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path) -> SeparatedModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
