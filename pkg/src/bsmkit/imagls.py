"""Joint-frequency filter optimization trading magnitude error against ILD.

The loss is ``0.5 (mag_left + mag_right) + lambda * ild_term``: the first
part is the magnitude mismatch averaged over directions and bins (each bin
normalized by its weighted target power), the second the mean absolute
difference between target and rendered interaural level differences,
gammatone-band-integrated on the horizontal plane.  Band powers integrate
over frequency, so bins cannot be solved independently — the optimizer works
on one stacked real vector holding every coefficient of every bin.

Minimization uses a limited-memory quasi-Newton method (strong Wolfe line
search) with an analytic gradient.  Every |.| and every power inside a log
ratio is smoothed by a tiny eps so the loss is differentiable everywhere.

There is no randomness anywhere in this module: identical problem and
config produce identical filters, bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .bsm_core import DesignProblem, FilterBank, apply_covariance_constraint
from .bsm_core import magls_filters, mse_filters
from .errors import DataError, DegeneratePower, DomainError
from .gammatone import IldSpec, gammatone_weight
from .hrtf import exact_direction_indices

_LN10 = math.log(10.0)

INIT_CHOICES = ("magls", "mse", "zeros")

HISTORY_FIELDS = ("iter", "total", "mag_l", "mag_r", "ild", "grad_norm", "step")


@dataclass(frozen=True)
class ImaglsConfig:
    """Knobs of the joint optimization.

    ``lam`` is the ILD weight (0 recovers a pure magnitude fit), ``init``
    selects the warm start, and ``covariance_constraint`` optionally applies
    the diffuse-field correction to the result (off by default; the
    magnitude/ILD trade-off is already explicit in the loss).
    """

    lam: float
    ild_spec: IldSpec
    smoothing_eps: float = 1e-12
    max_iter: int = 500
    grad_tol: float = 1e-6
    lbfgs_memory: int = 10
    init: str = "magls"
    covariance_constraint: bool = False

    def __post_init__(self):
        if math.isnan(self.lam) or self.lam < 0:
            raise DomainError(f"lam must be >= 0, got {self.lam!r}")
        if not self.smoothing_eps > 0:
            raise DomainError(f"smoothing_eps must be > 0, got {self.smoothing_eps!r}")
        if self.max_iter < 1:
            raise DomainError(f"max_iter must be >= 1, got {self.max_iter!r}")
        if not self.grad_tol > 0:
            raise DomainError(f"grad_tol must be > 0, got {self.grad_tol!r}")
        if self.lbfgs_memory < 1:
            raise DomainError(f"lbfgs_memory must be >= 1, got {self.lbfgs_memory!r}")
        if self.init not in INIT_CHOICES:
            raise DomainError(f"init must be one of {INIT_CHOICES}, got {self.init!r}")


@dataclass
class LossBreakdown:
    """One loss evaluation split into its terms (plus optional history)."""

    total: float
    mag_left: float
    mag_right: float
    ild_term: float
    lam: float
    history: list = field(default_factory=list)


def smooth_abs(x, eps: float):
    """sqrt(|x|^2 + eps): differentiable magnitude surrogate."""
    x = np.asarray(x)
    return np.sqrt(x.real**2 + x.imag**2 + eps)


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    if x.size == 1:
        return np.ones(1)
    w = np.empty_like(x)
    w[1:-1] = (x[2:] - x[:-2]) / 2.0
    w[0] = (x[1] - x[0]) / 2.0
    w[-1] = (x[-1] - x[-2]) / 2.0
    return w


def _band_kernel(spec: IldSpec, freq_grid: np.ndarray):
    """Gammatone-times-trapezoid integration kernel, (centers, band bins)."""
    freq_grid = np.asarray(freq_grid, dtype=float)
    mask = (freq_grid >= spec.band_lo_hz) & (freq_grid <= spec.band_hi_hz)
    band = np.flatnonzero(mask)
    if band.size == 0:
        raise DataError(
            f"frequency grid has no bins inside [{spec.band_lo_hz}, {spec.band_hi_hz}] Hz"
        )
    f = freq_grid[band]
    t = _trapezoid_weights(f)
    kernel = gammatone_weight(spec.centers_hz[:, None], f[None, :]) * t[None, :]
    return band, kernel


def ild_curve(
    spectra_left: np.ndarray,
    spectra_right: np.ndarray,
    spec: IldSpec,
    freq_grid,
    smoothing_eps: float = 0.0,
) -> np.ndarray:
    """Band-integrated level difference in dB, one row per direction.

    ``spectra_left``/``spectra_right`` hold per-direction ear spectra on
    ``freq_grid`` (directions x frequencies).  Each entry of the returned
    (directions x centers) matrix is ``10 log10`` of the ratio of
    gammatone-weighted powers integrated over the band.
    """
    left = np.asarray(spectra_left)
    right = np.asarray(spectra_right)
    if left.shape != right.shape or left.ndim != 2:
        raise DataError(f"ear spectra shapes disagree: {left.shape} vs {right.shape}")
    band, kernel = _band_kernel(spec, freq_grid)
    if left.shape[1] != np.asarray(freq_grid).size:
        raise DataError("spectra and frequency grid disagree on bin count")
    p_l = (np.abs(left[:, band]) ** 2 + smoothing_eps) @ kernel.T  # (L, centers)
    p_r = (np.abs(right[:, band]) ** 2 + smoothing_eps) @ kernel.T
    if smoothing_eps == 0.0 and (np.any(p_l <= 0) or np.any(p_r <= 0)):
        i, j = np.argwhere((p_l <= 0) | (p_r <= 0))[0]
        raise DegeneratePower(
            f"zero band power at direction index {i}, center "
            f"{spec.centers_hz[j]:.1f} Hz"
        )
    return 10.0 * np.log10(p_l / p_r)


class _Workspace:
    """Precomputed tensors shared by every loss/gradient evaluation."""

    def __init__(self, problem: DesignProblem, config: ImaglsConfig):
        self.eps = config.smoothing_eps
        self.lam = config.lam
        v = problem.steering_array
        self.n_f, self.n_m, _ = v.shape
        self.v = np.ascontiguousarray(v)
        self.v_t = np.ascontiguousarray(np.swapaxes(v, 1, 2))  # (F, K, M)
        self.w = problem.weights
        self.mag = np.abs(problem.target_array)  # (F, K, 2)
        self.p_norm = np.einsum("k,fke->fe", self.w, self.mag**2)
        if np.any(self.p_norm <= 0):
            raise DegeneratePower("target has zero weighted power in some bin")
        spec = config.ild_spec
        self.hor = self._match_directions(problem, spec)
        self.n_l = self.hor.size
        self.band, kernel = _band_kernel(spec, problem.frequencies_hz)
        self.kernel = np.ascontiguousarray(kernel)  # (Nc, Fb)
        self.kernel_t = np.ascontiguousarray(kernel.T)  # (Fb, Nc)
        self.n_c = kernel.shape[0]
        self.v_hor = np.ascontiguousarray(self.v[np.ix_(self.band, range(self.n_m), self.hor)])
        h_hor = problem.target_array[np.ix_(self.band, self.hor)]  # (Fb, L, 2)
        p2 = np.abs(h_hor) ** 2 + self.eps
        self.ild_target = (10.0 / _LN10) * (
            np.log(self.kernel @ p2[:, :, 0]) - np.log(self.kernel @ p2[:, :, 1])
        )  # (Nc, L)

    @staticmethod
    def _match_directions(problem: DesignProblem, spec: IldSpec) -> np.ndarray:
        return exact_direction_indices(
            problem.hrtf.grid, spec.horizontal_directions
        )

    def evaluate(self, coeffs: np.ndarray):
        """Loss terms and complex gradient (dL/dRe + i dL/dIm), all bins."""
        z = self.v_t @ np.conj(coeffs)  # (F, K, 2)
        s = np.sqrt(z.real**2 + z.imag**2 + self.eps)
        diff = self.mag - s
        mag_terms = (
            np.einsum("k,fke,fe->e", self.w, diff**2, 1.0 / self.p_norm) / self.n_f
        )
        scale = self.w[None, :, None] * diff / s / self.p_norm[:, None, :]
        g_mag = (-2.0 / self.n_f) * (self.v @ (scale * np.conj(z)))  # (F, M, 2)

        z_h = z[np.ix_(self.band, self.hor)]  # (Fb, L, 2)
        p2 = z_h.real**2 + z_h.imag**2 + self.eps
        pow_l = self.kernel @ p2[:, :, 0]  # (Nc, L)
        pow_r = self.kernel @ p2[:, :, 1]
        d = self.ild_target - (10.0 / _LN10) * (np.log(pow_l) - np.log(pow_r))
        e_s = np.sqrt(d**2 + self.eps)
        ild_term = float(e_s.mean())
        coef = d / e_s * (10.0 / _LN10) / (self.n_c * self.n_l)
        s_l = self.kernel_t @ (-coef / pow_l)  # (Fb, L)
        s_r = self.kernel_t @ (coef / pow_r)
        g_band = np.empty_like(z_h)
        g_band[:, :, 0] = s_l * np.conj(z_h[:, :, 0])
        g_band[:, :, 1] = s_r * np.conj(z_h[:, :, 1])
        g_ild = np.zeros_like(coeffs)
        g_ild[self.band] = 2.0 * (self.v_hor @ g_band)

        total = 0.5 * (mag_terms[0] + mag_terms[1]) + self.lam * ild_term
        grad = 0.5 * g_mag + self.lam * g_ild
        breakdown = LossBreakdown(
            total=float(total),
            mag_left=float(mag_terms[0]),
            mag_right=float(mag_terms[1]),
            ild_term=ild_term,
            lam=self.lam,
        )
        return breakdown, grad


def imagls_loss(coeffs: np.ndarray, problem: DesignProblem, config: ImaglsConfig) -> LossBreakdown:
    """Evaluate the combined loss at the given coefficients."""
    breakdown, _ = _Workspace(problem, config).evaluate(np.asarray(coeffs, complex))
    return breakdown


def imagls_gradient(
    coeffs: np.ndarray, problem: DesignProblem, config: ImaglsConfig
) -> np.ndarray:
    """Analytic gradient, one complex number per real/imaginary pair."""
    _, grad = _Workspace(problem, config).evaluate(np.asarray(coeffs, complex))
    return grad


def _pack(coeffs: np.ndarray) -> np.ndarray:
    return np.concatenate([coeffs.real.ravel(), coeffs.imag.ravel()])


def _unpack(x: np.ndarray, shape) -> np.ndarray:
    half = x.size // 2
    return (x[:half] + 1j * x[half:]).reshape(shape)


def optimize_imagls(
    problem: DesignProblem,
    config: ImaglsConfig,
    init_bank: FilterBank | None = None,
) -> FilterBank:
    """Run the joint optimization and return the filters with full history.

    The optimizer never returns anything worse than its starting point: the
    best accepted iterate is tracked throughout, and a line-search breakdown
    triggers one restart from that iterate before giving up with a warning
    flag in the metadata.
    """
    if init_bank is not None:
        coeffs0 = np.asarray(init_bank.coeffs, complex)
        if coeffs0.shape != (problem.hrtf.n_frequencies, problem.n_mics, 2):
            raise DataError("init bank shape does not match the problem")
        init_label = f"bank:{init_bank.design_kind}"
    elif config.init == "magls":
        coeffs0 = magls_filters(problem).coeffs
        init_label = "magls"
    elif config.init == "mse":
        coeffs0 = mse_filters(problem).coeffs
        init_label = "mse"
    else:
        coeffs0 = np.zeros((problem.hrtf.n_frequencies, problem.n_mics, 2), complex)
        init_label = "zeros"

    ws = _Workspace(problem, config)
    shape = coeffs0.shape
    history: list[dict] = []
    state = {
        "last_x": None,
        "last": None,
        "best_f": math.inf,
        "best_x": None,
        "prev_x": None,
        "iter": 0,
    }

    def fun(x):
        breakdown, grad = ws.evaluate(_unpack(x, shape))
        g = _pack(grad)
        state["last_x"] = x.copy()
        state["last"] = (breakdown, float(np.max(np.abs(g))))
        if breakdown.total < state["best_f"]:
            state["best_f"] = breakdown.total
            state["best_x"] = x.copy()
        return breakdown.total, g

    def record(x):
        if state["last_x"] is not None and np.array_equal(x, state["last_x"]):
            breakdown, grad_norm = state["last"]
        else:
            breakdown, grad = ws.evaluate(_unpack(x, shape))
            grad_norm = float(np.max(np.abs(_pack(grad))))
            if breakdown.total < state["best_f"]:
                state["best_f"] = breakdown.total
                state["best_x"] = x.copy()
        step = (
            0.0
            if state["prev_x"] is None
            else float(np.linalg.norm(x - state["prev_x"]))
        )
        state["prev_x"] = x.copy()
        history.append(
            {
                "iter": state["iter"],
                "total": breakdown.total,
                "mag_l": breakdown.mag_left,
                "mag_r": breakdown.mag_right,
                "ild": breakdown.ild_term,
                "grad_norm": grad_norm,
                "step": step,
            }
        )
        state["iter"] += 1

    x0 = _pack(coeffs0)
    record(x0)  # iteration 0 = the warm start itself
    options = dict(
        maxiter=config.max_iter,
        maxcor=config.lbfgs_memory,
        gtol=config.grad_tol,
        ftol=1e-18,
    )
    statuses = []
    x_start = x0
    for attempt in range(2):
        remaining = max(1, config.max_iter - (len(history) - 1))
        res = minimize(
            fun,
            x_start,
            jac=True,
            method="L-BFGS-B",
            callback=record,
            options={**options, "maxiter": remaining},
        )
        statuses.append(int(res.status))
        if res.status != 2:
            break
        # Line search gave up; restart once from the best point seen so far,
        # unless that is where this attempt already started.
        if attempt == 0 and not np.array_equal(state["best_x"], x_start):
            x_start = state["best_x"].copy()
        else:
            break
    warning = statuses[-1] == 2

    best = _unpack(state["best_x"], shape)
    meta = {
        "lam": config.lam,
        "smoothing_eps": config.smoothing_eps,
        "max_iter": config.max_iter,
        "grad_tol": config.grad_tol,
        "lbfgs_memory": config.lbfgs_memory,
        "init": init_label,
        "iterations": len(history) - 1,
        "solver_status": statuses,
        "line_search_warning": warning,
        "history": [[row[k] for k in HISTORY_FIELDS] for row in history],
        "initial_total": history[0]["total"],
        "final_total": state["best_f"],
        "final_breakdown": history[-1]["total"],
    }
    bank = FilterBank(
        frequencies_hz=problem.frequencies_hz.copy(),
        coeffs=best,
        design_kind="imagls",
        crossover_hz=float(problem.frequencies_hz[0]),
        metadata=meta,
    )
    if config.covariance_constraint:
        bank = apply_covariance_constraint(bank, problem)
    return bank


def write_history_csv(bank: FilterBank, path) -> None:
    """Dump the optimizer's iteration history as CSV."""
    rows = bank.metadata.get("history")
    if rows is None:
        raise DataError("bank has no optimization history")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_FIELDS)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
