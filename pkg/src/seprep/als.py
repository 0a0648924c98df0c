"""Alternating least-squares fitting of separated surrogates.

One sweep solves a linear least-squares problem per input dimension while
all other dimensions are frozen, normalizes the updated factors against the
sample set, and moves on. Ranks grow one term at a time: each new term is
drawn from the seeded stream several times and the candidate whose early
sweeps reach the lowest residual is kept, which makes the otherwise
fragile warm-started rank increase reproducible and robust.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from .basis import BasisSpec, eval_basis_batch
from .errors import ConditioningError, DegenerateFactorError, DegenerateModelError
from .model import SampleSet, SeparatedModel, empirical_norm, term_gram
from .regularize import (
    DEFAULT_LAMBDA_FLOOR,
    RegularizationState,
    TikhonovPath,
    error_indicator,
    gcv_select_lambda,
    scale_identity_factor,
)

__all__ = [
    "FitConfig",
    "DirectionSolveResult",
    "RankRecord",
    "FitDiagnostics",
    "factor_table",
    "exclusion_products",
    "assemble_design_matrix",
    "solve_direction",
    "normalize_direction",
    "sweep",
    "fit_fixed",
]

logger = logging.getLogger(__name__)

_MONOTONE_RTOL = 1e-10


def _kron_eye(G: np.ndarray, m: int) -> np.ndarray:
    """np.kron(G, np.eye(m)) without the generic-kron overhead."""
    r = G.shape[0]
    out = np.zeros((r * m, r * m))
    out.reshape(r, m, r, m)[:, np.arange(m), :, np.arange(m)] = G
    return out
_NORMAL_EQ_RTOL = 1e-8


@dataclass
class FitConfig:
    """Knobs for the alternating fit.

    sweep_tol is the relative residual decrease per full sweep below which a
    rank is considered converged; max_sweeps_per_rank caps the loop. The
    candidate fields control the per-rank restart protocol: each new term is
    initialized init_candidates times (unit constant coefficient plus
    init_perturbation-scaled normal noise, normalized per direction), every
    candidate runs candidate_burn_sweeps sweeps, and the lowest-residual one
    is kept and swept to convergence.
    """

    rank_max: int
    degree: int
    max_sweeps_per_rank: int = 600
    sweep_tol: float = 1e-5
    regularize: bool = True
    lambda_grid_size: int = 50
    rng_seed: int = 0
    lambda_floor_rel: float = DEFAULT_LAMBDA_FLOOR
    init_candidates: int = 8
    candidate_burn_sweeps: int = 15
    init_perturbation: float = 0.3
    l_identity: bool = False

    def __post_init__(self):
        if self.rank_max < 1:
            raise ValueError("rank_max must be >= 1")
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        if not 0.0 < self.sweep_tol < 1.0:
            raise ValueError("sweep_tol must lie in (0, 1)")
        for name in ("max_sweeps_per_rank", "lambda_grid_size", "init_candidates",
                     "candidate_burn_sweeps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class DirectionSolveResult:
    coeffs: np.ndarray
    regularization: RegularizationState | None
    residual_norm: float


@dataclass
class RankRecord:
    """Diagnostics for one rank of the growth ladder."""

    rank: int
    residual_trace: list
    reg_states: list
    sweeps: int
    candidate: int
    model: SeparatedModel

    @property
    def residual(self) -> float:
        return self.residual_trace[-1]


@dataclass
class FitDiagnostics:
    per_rank: list
    seed: int
    degree: int
    n_samples: int
    dims: int
    wall_time_s: float = 0.0

    def rank_record(self, r: int) -> RankRecord:
        for rec in self.per_rank:
            if rec.rank == r:
                return rec
        raise KeyError(r)


def factor_table(data: SampleSet, model: SeparatedModel) -> np.ndarray:
    """Factor values u_k^l at every sample: array of shape (dims, N, rank)."""
    out = np.empty((model.dims, data.n, model.rank))
    for k in range(model.dims):
        psi = eval_basis_batch(model.basis, data.inputs[:, k])
        out[k] = psi @ model.coeffs[k].T
    return out


def exclusion_products(table: np.ndarray) -> np.ndarray:
    """All-but-one products over the dimension axis via prefix/suffix scans.

    Entry [k] is prod_{i != k} table[i], computed without dividing by the
    excluded factor so near-zero factor values stay harmless.
    """
    d = table.shape[0]
    pref = np.ones_like(table)
    for k in range(1, d):
        np.multiply(pref[k - 1], table[k - 1], out=pref[k])
    suf = np.ones_like(table[0])
    for k in range(d - 1, -1, -1):
        pref[k] *= suf
        if k:
            suf = suf * table[k]
    return pref


def assemble_design_matrix(
    data: SampleSet, model: SeparatedModel, k: int, table: np.ndarray
) -> np.ndarray:
    """Design matrix for direction k: N rows by rank*(degree+1) columns.

    Column block l holds s_l * psi_a(y_k) scaled by the product of the other
    dimensions' factor values, in term-major column order matching the
    stacked coefficient vector.
    """
    if not 0 <= k < model.dims:
        raise ValueError(f"direction {k} out of range for {model.dims} dims")
    excl = exclusion_products(table)[k]
    psi = eval_basis_batch(model.basis, data.inputs[:, k])
    A = (excl * model.scales[None, :])[:, :, None] * psi[:, None, :]
    A = A.reshape(data.n, model.rank * model.basis.size)
    if not np.all(np.isfinite(A)):
        raise ConditioningError("design matrix contains non-finite entries (factor overflow)")
    return A


def _check_normal_equation(Mm, c, Atu):
    err = np.linalg.norm(Mm @ c - Atu)
    if err > _NORMAL_EQ_RTOL * max(np.linalg.norm(Atu), 1e-300):
        raise ConditioningError(
            f"normal-equation residual {err:.3e} exceeds tolerance; the system is "
            "numerically singular (consider enabling regularization or reducing rank/degree)"
        )


def _solve_spd(Mm: np.ndarray, Atu: np.ndarray) -> np.ndarray:
    """Cholesky solve with an eigendecomposition pseudo-solve fallback."""
    try:
        C = cholesky(Mm, lower=False, check_finite=False)
        return solve_triangular(
            C,
            solve_triangular(C, Atu, trans="T", lower=False, check_finite=False),
            lower=False,
            check_finite=False,
        )
    except LinAlgError:
        w, V = np.linalg.eigh(Mm)
        cut = 1e-12 * np.trace(Mm)
        winv = np.where(w > cut, 1.0 / np.where(w > cut, w, 1.0), 0.0)
        return V @ (winv * (V.T @ Atu))


def _gram_cholesky(G: np.ndarray) -> np.ndarray:
    """Cholesky of the term Gram matrix, with one jitter retry before giving up."""
    try:
        return cholesky(G, lower=False, check_finite=False)
    except LinAlgError:
        jitter = 1e-14 * max(np.trace(G), 1e-300)
        try:
            Rg = cholesky(G + jitter * np.eye(G.shape[0]), lower=False)
            logger.warning("term Gram matrix required jitter %.2e to factor", jitter)
            return Rg
        except LinAlgError:
            w = np.linalg.eigvalsh(G)
            raise DegenerateModelError(
                f"surrogate second moment is numerically zero "
                f"(min Gram eigenvalue {w[0]:.3e})"
            ) from None


def _regularized_direction(A, u, G, basis_size, config):
    """Solve one direction with penalty factor L = chol(G) (x) I.

    Returns (coefficients, RegularizationState, squared residual norm).
    """
    n_samples = u.shape[0]
    Rg = _gram_cholesky(G)
    L = _kron_eye(Rg, basis_size)
    path = TikhonovPath(A, u, L)
    sel = gcv_select_lambda(
        A, u, L, config.lambda_grid_size, floor_rel=config.lambda_floor_rel, path=path
    )
    lam = sel.lambda_
    Mm = path.AtA + (lam * lam) * _kron_eye(G, basis_size)
    c = _solve_spd(Mm, path.Atu)
    _check_normal_equation(Mm, c, path.Atu)
    res = A @ c - u
    rn2 = float(res @ res)
    sig = np.sqrt(rn2 / (n_samples - sel.hat_trace)) if n_samples > sel.hat_trace else float("inf")
    wmin = float(np.linalg.eigvalsh(G)[0])
    norm_c = float(np.linalg.norm(c))
    if lam > 0.0 and norm_c > 0.0 and np.isfinite(sig) and wmin > 0.0:
        # |L^-1|_2 = 1/sqrt(min eig of G) for the Kronecker-structured factor
        ei = float(np.sqrt(n_samples) / lam / np.sqrt(wmin) * sig / norm_c)
    else:
        # routine on deliberately over-ranked fits, so keep the log quiet; the
        # sentinel itself is preserved in the diagnostics record
        logger.debug(
            "error indicator undefined (lambda=%.3g, |c|=%.3g, sigma=%.3g, "
            "min gram eig=%.3g); using +inf", lam, norm_c, sig, wmin,
        )
        ei = float("inf")
    state = RegularizationState(
        cholesky_L=L, lambda_=lam, sigma_hat=float(sig), error_indicator=ei,
        hat_trace=sel.hat_trace,
    )
    return c, state, rn2


def solve_direction(
    A: np.ndarray, u: np.ndarray, model: SeparatedModel, k: int, config: FitConfig
) -> DirectionSolveResult:
    """Solve the direction-k normal equation, regularized when configured.

    The regularized path solves (A^T A + lambda^2 L^T L) c = A^T u with L the
    second-moment factor (or the diag-scale comparison factor when
    config.l_identity is set) and lambda picked by GCV; the plain path sets
    lambda to zero and solves A^T A c = A^T u.
    """
    u = np.asarray(u, dtype=float).ravel()
    n_samples = u.shape[0]
    if not config.regularize:
        AtA = A.T @ A
        Atu = A.T @ u
        c = _solve_spd(AtA, Atu)
        _check_normal_equation(AtA, c, Atu)
        res = A @ c - u
        rn2 = float(res @ res)
        return DirectionSolveResult(c, None, float(np.sqrt(rn2 / n_samples)))
    if config.l_identity:
        L = scale_identity_factor(model.scales, model.basis.size)
        path = TikhonovPath(A, u, L)
        sel = gcv_select_lambda(
            A, u, L, config.lambda_grid_size, floor_rel=config.lambda_floor_rel, path=path
        )
        lam = sel.lambda_
        Mm = path.AtA + (lam * lam) * (L.T @ L)
        c = _solve_spd(Mm, path.Atu)
        _check_normal_equation(Mm, c, path.Atu)
        res = A @ c - u
        rn2 = float(res @ res)
        sig = np.sqrt(rn2 / (n_samples - sel.hat_trace)) if n_samples > sel.hat_trace else float("inf")
        ei = error_indicator(lam, L, sig, c, n_samples)
        state = RegularizationState(L, lam, float(sig), ei, sel.hat_trace)
        return DirectionSolveResult(c, state, float(np.sqrt(rn2 / n_samples)))
    G = term_gram(model, skip_dim=k)
    c, state, rn2 = _regularized_direction(A, u, G, model.basis.size, config)
    return DirectionSolveResult(c, state, float(np.sqrt(rn2 / n_samples)))


def normalize_direction(model: SeparatedModel, k: int, data: SampleSet) -> SeparatedModel:
    """Push direction k's empirical factor norms into the term scales.

    Returns a model that evaluates identically but whose direction-k factors
    have unit empirical norm on the sample set.
    """
    psi = eval_basis_batch(model.basis, data.inputs[:, k])
    vals = psi @ model.coeffs[k].T
    norms = np.sqrt(np.mean(vals * vals, axis=0))
    if np.any(norms == 0.0):
        dead = np.flatnonzero(norms == 0.0).tolist()
        raise DegenerateFactorError(
            f"terms {dead} have zero empirical norm in direction {k}"
        )
    out = model.copy()
    out.scales = model.scales * norms
    out.coeffs[k] = model.coeffs[k] / norms[:, None]
    return out


class _Fitter:
    """Workspace for one fit: cached basis values and the mutable model state."""

    def __init__(self, data: SampleSet, config: FitConfig, rng: np.random.Generator):
        self.data = data
        self.config = config
        self.rng = rng
        self.basis = BasisSpec(data.family, config.degree)
        self.n = data.n
        self.d = data.dims
        self.m1 = config.degree + 1
        self.psi = np.ascontiguousarray(
            np.swapaxes(eval_basis_batch(self.basis, data.inputs), 0, 1)
        )  # (d, N, M+1)
        self.u = data.outputs
        self.u_norm = empirical_norm(data.outputs) if np.any(data.outputs) else 1.0
        self.coeffs = np.zeros((self.d, 0, self.m1))
        self.scales = np.zeros(0)
        self.factors = np.zeros((self.d, self.n, 0))
        self._monotone_prev = None

    # -- state management -------------------------------------------------

    def snapshot(self):
        return self.coeffs.copy(), self.scales.copy(), self.factors.copy()

    def restore(self, state):
        self.coeffs, self.scales, self.factors = (a.copy() for a in state)
        self._monotone_prev = None

    def model(self) -> SeparatedModel:
        return SeparatedModel(self.basis, self.scales.copy(), self.coeffs.copy())

    def set_model(self, model: SeparatedModel):
        self.coeffs = model.coeffs.copy()
        self.scales = model.scales.copy()
        self.factors = np.einsum("knm,krm->knr", self.psi, self.coeffs)
        self._monotone_prev = None

    def add_term(self):
        """Draw one new term from the stream: unit constant plus scaled noise."""
        new = self.config.init_perturbation * self.rng.standard_normal((self.d, 1, self.m1))
        new[:, 0, 0] += 1.0
        self.coeffs = np.concatenate([self.coeffs, new], axis=1)
        self.scales = np.append(self.scales, 1.0)
        r = self.coeffs.shape[1]
        for k in range(self.d):
            v = self.psi[k] @ self.coeffs[k, r - 1]
            nrm = empirical_norm(v)
            if nrm == 0.0:
                raise DegenerateFactorError("drawn initial factor has zero empirical norm")
            self.coeffs[k, r - 1] /= nrm
        self.factors = np.einsum("knm,krm->knr", self.psi, self.coeffs)

    def _reinit_dead_terms(self, k: int, dead: np.ndarray):
        """Redraw direction-k coefficients of zero-norm terms from the stream."""
        logger.warning(
            "terms %s collapsed to zero norm in direction %d; reinitializing them",
            dead.tolist(), k,
        )
        for l in dead:
            while True:
                draw = self.config.init_perturbation * self.rng.standard_normal(self.m1)
                draw[0] += 1.0
                v = self.psi[k] @ draw
                nrm = empirical_norm(v)
                if nrm > 0.0:
                    self.coeffs[k, l] = draw / nrm
                    break
        self._monotone_prev = None

    # -- sweeps ------------------------------------------------------------

    def sweep_once(self):
        """One full pass over all directions; returns (residual, states)."""
        cfg = self.config
        d, n, r = self.d, self.n, self.coeffs.shape[1]
        grams = [self.coeffs[i] @ self.coeffs[i].T for i in range(d)]
        suf_f = np.ones((d, n, r))
        suf_g = [None] * d
        suf_g[d - 1] = np.ones((r, r))
        for k in range(d - 2, -1, -1):
            np.multiply(suf_f[k + 1], self.factors[k + 1], out=suf_f[k])
            suf_g[k] = suf_g[k + 1] * grams[k + 1]
        left_f = np.ones((n, r))
        left_g = np.ones((r, r))
        states = []
        rn2 = 0.0
        for k in range(d):
            excl = left_f * suf_f[k]
            A = (excl * self.scales[None, :])[:, :, None] * self.psi[k][:, None, :]
            A = A.reshape(n, r * self.m1)
            if cfg.regularize:
                if cfg.l_identity:
                    G = np.diag(self.scales**2)
                else:
                    G = np.outer(self.scales, self.scales) * left_g * suf_g[k]
                c, state, rn2 = _regularized_direction(A, self.u, G, self.m1, cfg)
                states.append(state)
            else:
                AtA = A.T @ A
                Atu = A.T @ self.u
                c = _solve_spd(AtA, Atu)
                _check_normal_equation(AtA, c, Atu)
                res = A @ c - self.u
                rn2 = float(res @ res)
                resid = np.sqrt(rn2 / n)
                prev = self._monotone_prev
                slack = prev * _MONOTONE_RTOL + 1e-12 * self.u_norm if prev is not None else 0.0
                if prev is not None and resid > prev + slack:
                    raise AssertionError(
                        f"residual increased across an unregularized direction solve "
                        f"({prev:.6e} -> {resid:.6e})"
                    )
                self._monotone_prev = resid
                states.append(None)
            cmat = c.reshape(r, self.m1)
            vals = self.psi[k] @ cmat.T
            norms = np.sqrt(np.mean(vals * vals, axis=0))
            dead = np.flatnonzero(norms == 0.0)
            if dead.size:
                alive = norms > 0.0
                self.scales[alive] = self.scales[alive] * norms[alive]
                self.coeffs[k][alive] = cmat[alive] / norms[alive, None]
                self._reinit_dead_terms(k, dead)
            else:
                self.scales *= norms
                self.coeffs[k] = cmat / norms[:, None]
            self.factors[k] = self.psi[k] @ self.coeffs[k].T
            grams[k] = self.coeffs[k] @ self.coeffs[k].T
            left_g = left_g * grams[k]
            left_f = left_f * self.factors[k]
        return float(np.sqrt(rn2 / n)), states

    def run_rank(self) -> RankRecord:
        """Grow by one term, race seeded candidates, converge the winner."""
        cfg = self.config
        base = self.snapshot()
        candidates = []
        for idx in range(cfg.init_candidates):
            self.restore(base)
            self.add_term()
            trace = []
            states = None
            converged = False
            for _ in range(min(cfg.candidate_burn_sweeps, cfg.max_sweeps_per_rank)):
                resid, states = self.sweep_once()
                trace.append(resid)
                if len(trace) > 1 and trace[-2] > 0.0 and (
                    (trace[-2] - trace[-1]) / trace[-2] < cfg.sweep_tol
                ):
                    converged = True
                    break
            candidates.append(
                (trace[-1], idx, self.snapshot(), trace, states, converged, self._monotone_prev)
            )
        candidates.sort(key=lambda t: (t[0], t[1]))
        resid, idx, state, trace, states, converged, mono = candidates[0]
        self.restore(state)
        self._monotone_prev = mono
        if not converged:
            while len(trace) < cfg.max_sweeps_per_rank:
                resid, states = self.sweep_once()
                trace.append(resid)
                if trace[-2] > 0.0 and (trace[-2] - trace[-1]) / trace[-2] < cfg.sweep_tol:
                    break
        return RankRecord(
            rank=self.coeffs.shape[1],
            residual_trace=trace,
            reg_states=states,
            sweeps=len(trace),
            candidate=idx,
            model=self.model(),
        )


def sweep(data: SampleSet, model: SeparatedModel, config: FitConfig):
    """One full alternation pass starting from `model`.

    Returns (updated model, empirical residual norm, per-direction
    regularization records; entries are None when unregularized).
    """
    if model.basis.max_degree != config.degree:
        raise ValueError("model degree disagrees with config degree")
    if model.dims != data.dims:
        raise ValueError("model dims disagree with data dims")
    fitter = _Fitter(data, config, np.random.default_rng(config.rng_seed))
    fitter.set_model(model)
    resid, states = fitter.sweep_once()
    return fitter.model(), resid, states


def fit_fixed(data: SampleSet, r: int, config: FitConfig, init_seed: int):
    """Fit with ranks growing 1..r; returns (model, diagnostics).

    Each rank keeps sweeping until the relative residual decrease over a full
    sweep falls below config.sweep_tol or the sweep cap is reached. The
    per-rank diagnostics carry the final sweep's regularization records,
    which rank/degree selection consumes.
    """
    t0 = time.perf_counter()
    n_unknowns = r * (config.degree + 1)
    if data.n < n_unknowns:
        warnings.warn(
            f"sample count {data.n} is below the direction-solve unknown count "
            f"{n_unknowns}; expect an underdetermined fit",
            stacklevel=2,
        )
    fitter = _Fitter(data, config, np.random.default_rng(init_seed))
    records = []
    for _ in range(r):
        records.append(fitter.run_rank())
    diag = FitDiagnostics(
        per_rank=records,
        seed=init_seed,
        degree=config.degree,
        n_samples=data.n,
        dims=data.dims,
        wall_time_s=time.perf_counter() - t0,
    )
    return fitter.model(), diag
