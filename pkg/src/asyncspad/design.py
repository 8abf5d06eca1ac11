"""Acquisition-design formulas.

Everything here works in bins: dead time ``dead_bins = t_d / Delta``,
acquisition length ``total_bins = T / Delta`` and active time ``m`` bins.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

INV_E = math.exp(-1.0)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _wm1_halley(x):
    # start from the branch-point series near -1/e, the asymptotic guess elsewhere
    if 1.0 + math.e * x < 0.25:
        p = -math.sqrt(2.0 * (1.0 + math.e * x))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    else:
        lx = math.log(-x)
        w = lx - math.log(-lx)
    for _ in range(50):
        ew = math.exp(w)
        f = w * ew - x
        if f == 0.0:
            break
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w_new = min(w - step, -1.0)
        if abs(w_new - w) <= 1e-15 * abs(w_new):
            w = w_new
            break
        w = w_new
    return w


def _wm1_from_log(log_neg_x):
    # solve w + log(-w) = log(-x) when -x underflows
    w = log_neg_x - math.log(-log_neg_x)
    for _ in range(50):
        g = w + math.log(-w) - log_neg_x
        w_new = w - g / (1.0 + 1.0 / w)
        if abs(w_new - w) <= 1e-15 * abs(w_new):
            return w_new
        w = w_new
    return w


def lambert_w_branch_neg1(x: float) -> float:
    """Lower real branch ``W_{-1}(x)`` for ``x`` in ``[-1/e, 0)``.

    Halley iteration; returns ``w <= -1`` with ``w exp(w) = x``.

    >>> lambert_w_branch_neg1(-math.exp(-1.0))
    -1.0
    >>> round(lambert_w_branch_neg1(-0.1), 9)
    -3.577152064
    """
    x = float(x)
    if not (-INV_E * (1.0 + 1e-15) <= x < 0.0):
        raise ValueError(f"W_-1 is real only on [-1/e, 0), got {x}")
    if x <= -INV_E:
        return -1.0
    if x > -1e-290:
        return _wm1_from_log(math.log(-x))
    return _wm1_halley(x)


def _geometric_sum(m, phi):
    """``(1 - e^{-m phi}) / (1 - e^{-phi})``, equal to ``m`` at ``phi = 0``."""
    if phi == 0:
        return m * 1.0
    return np.expm1(-np.asarray(m, dtype=float) * phi) / math.expm1(-phi)


def expected_total_denominator(num_cycles, active_bins, phi_bkg) -> float:
    """Expected sum of the denominator sequence over ``num_cycles`` gated cycles.

    Depends only on the number of cycles and their active time, not on the
    shifts used.
    """
    if num_cycles < 1 or active_bins < 1:
        raise ValueError("num_cycles and active_bins must be at least 1")
    if phi_bkg < 0:
        raise ValueError("phi_bkg must be non-negative")
    return float(num_cycles * _geometric_sum(active_bins, phi_bkg))


def active_time_objective(m, phi_bkg, dead_bins):
    """Per-bin-of-budget total denominator ``(1 - e^{-m phi}) / ((m + n_d)(1 - e^{-phi}))``."""
    m = np.asarray(m, dtype=float)
    if phi_bkg == 0:
        return m / (m + dead_bins)
    return np.expm1(-m * phi_bkg) / np.expm1(-phi_bkg) / (m + dead_bins)


def optimal_active_time(phi_bkg, dead_bins, m_max=None) -> int:
    """Integer active time maximizing the expected total denominator.

    The stationary point of the continuous objective is

        m* = -W_{-1}(-exp(-n_d phi - 1)) / phi - n_d - 1 / phi

    and the better of its floor and ceiling is returned (never below 1).
    Without background the objective grows without bound; ``m_max`` is
    returned with a warning in that case.
    """
    if phi_bkg < 0 or dead_bins < 0:
        raise ValueError("phi_bkg and dead_bins must be non-negative")
    if phi_bkg == 0:
        if m_max is None:
            raise ValueError("active time is unbounded without background; pass m_max")
        warnings.warn("no background flux: optimal active time is unbounded, using m_max",
                      RuntimeWarning, stacklevel=2)
        return int(m_max)
    a = dead_bins * phi_bkg + 1.0
    if a > 700:
        w = _wm1_from_log(-a)
    else:
        w = lambert_w_branch_neg1(-math.exp(-a))
    m_star = -w / phi_bkg - dead_bins - 1.0 / phi_bkg
    lo = max(1, math.floor(m_star))
    hi = max(1, math.ceil(m_star))
    f_lo, f_hi = active_time_objective([lo, hi], phi_bkg, dead_bins)
    m = hi if f_hi > f_lo else lo
    if m_max is not None:
        m = min(m, int(m_max))
    return int(m)


def expected_denominator_uniform(total_bins, num_bins, active_bins, dead_bins, phi_bkg) -> float:
    """Expected per-bin denominator under uniform shifting (cycles of ``m + n_d`` bins)."""
    return total_bins * _geometric_sum(active_bins, phi_bkg) / (num_bins * (active_bins + dead_bins))


def expected_denominator_photon_driven(total_bins, num_bins, dead_bins, phi_bkg) -> float:
    """Expected per-bin denominator of free-running acquisition."""
    return total_bins / (num_bins * (1.0 - math.expm1(-phi_bkg) * dead_bins))


def _attenuation_log_objective(u, phi_sig, phi_bkg, dead_bins):
    u = np.asarray(u, dtype=float)
    return (np.log1p(-dead_bins * np.expm1(-u * phi_bkg)) + u * phi_bkg
            - np.log(-np.expm1(-u * phi_sig)))


def _golden_section(f, a, b, tol):
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def optimal_attenuation_photon_driven(phi_sig, phi_bkg, dead_bins, grid_points=200,
                                      lower=1e-6, tol=1e-6) -> float:
    """Attenuation minimizing the photon-driven error objective

        (1 + n_d (1 - e^{-u phi_bkg})) / (e^{-u phi_bkg} (1 - e^{-u phi_sig}))

    over ``u`` in ``(0, 1]``.  A log-spaced grid brackets the minimum, which
    golden-section search then refines.
    """
    if not phi_sig > 0:
        raise ValueError("objective is undefined without signal flux")
    if phi_bkg < 0 or dead_bins < 0:
        raise ValueError("phi_bkg and dead_bins must be non-negative")
    if phi_bkg == 0:
        return 1.0
    grid = np.geomspace(lower, 1.0, grid_points)
    vals = _attenuation_log_objective(grid, phi_sig, phi_bkg, dead_bins)
    k = int(np.argmin(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, grid_points - 1)]

    def f(u):
        return float(_attenuation_log_objective(u, phi_sig, phi_bkg, dead_bins))

    u = min(1.0, _golden_section(f, a, b, tol))
    return 1.0 if f(1.0) <= f(u) else float(u)


@dataclass(frozen=True)
class DesignPoint:
    phi_sig: float
    phi_bkg: float
    dead_bins: int
    num_bins: int
    total_bins: int
    m_opt: int
    xi: float
    upsilon_opt: float


def design_point(phi_sig, phi_bkg, dead_bins, num_bins, total_bins) -> DesignPoint:
    """Optimal active time, its expected total denominator and attenuation for one setting."""
    m = optimal_active_time(phi_bkg, dead_bins, m_max=num_bins)
    cycles = max(1, total_bins // (m + dead_bins))
    xi = expected_total_denominator(cycles, m, phi_bkg)
    ups = optimal_attenuation_photon_driven(phi_sig, phi_bkg, dead_bins) if phi_sig > 0 else 1.0
    return DesignPoint(phi_sig, phi_bkg, dead_bins, num_bins, total_bins, m, xi, ups)


@dataclass(frozen=True, eq=False)
class AttenuationSearch:
    best: float
    grid: np.ndarray
    rmse_bins: np.ndarray


def grid_search_attenuation(mode, cfg, flux, grid, trials, seed=0) -> AttenuationSearch:
    """Empirical attenuation minimizing modulo RMSE over ``grid``.

    ``flux`` supplies the unattenuated ``signal`` and ``background``; the true
    bin is redrawn every trial.  All grid points reuse the same per-trial
    random substreams, which makes the RMSE curve smoother than independent
    draws would.  Ties go to the smallest attenuation.
    """
    from .model import Mode
    from .pipeline import run_trials

    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid <= 0) or np.any(grid > 1):
        raise ValueError("attenuation grid must be a non-empty list in (0, 1]")
    signal, background = (flux.signal, flux.background) if hasattr(flux, "signal") else flux
    mode = Mode.parse(mode)
    rmse = np.empty(grid.size)
    for k, u in enumerate(grid):
        point_cfg = replace(cfg, mode=mode, attenuation=float(u))
        rmse[k] = run_trials(point_cfg, signal, background, trials, seed=seed).report.rmse_bins
    best = float(grid[int(np.argmin(rmse))])
    return AttenuationSearch(best=best, grid=grid, rmse_bins=rmse)


def fisher_information(denominator, rate, attenuation=1.0):
    """Fisher information ``D u^2 / (e^{u r} - 1)`` of one bin's flux estimate.

    Zero flux carries infinite information (returned as ``inf``).
    """
    d = np.asarray(denominator, dtype=float)
    r = np.asarray(rate, dtype=float)
    u = float(attenuation)
    if np.any(d < 0) or np.any(r < 0) or not u > 0:
        raise ValueError("need D >= 0, r >= 0 and attenuation > 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = d * u * u / np.expm1(u * r)
    out = np.where(r == 0, np.inf, out)
    return float(out) if out.ndim == 0 else out


def _pairwise_terms(q, expected_d, tau):
    var = q * (1.0 - q) / expected_d
    diff = q - q[tau]
    total = var + var[tau]
    with np.errstate(divide="ignore", invalid="ignore"):
        expo = np.where(total > 0, -0.5 * diff * diff / total, np.where(diff == 0, 0.0, -np.inf))
    terms = 0.5 * np.exp(expo)
    terms[tau] = 0.0
    return terms.sum()


def error_probability_bound(q, expected_d, tau=None) -> float:
    """Chernoff-style upper bound on the chance of picking the wrong depth bin.

    For a true bin ``tau`` (1-based) this is the sum over ``i != tau`` of
    ``1/2 exp(-(q_i - q_tau)^2 / (2 (q_i(1-q_i)/E[D_i] + q_tau(1-q_tau)/E[D_tau])))``.
    Without ``tau`` the bound is averaged over every candidate ``tau``.
    """
    q = np.asarray(q, dtype=float)
    d = np.asarray(expected_d, dtype=float)
    if q.shape != d.shape or q.ndim != 1:
        raise ValueError("q and expected_d must be 1-D and of equal length")
    if np.any(d <= 0):
        raise ValueError("expected denominators must be positive")
    if tau is not None:
        if not 1 <= tau <= q.size:
            raise ValueError(f"tau {tau} outside [1, {q.size}]")
        return float(_pairwise_terms(q, d, tau - 1))
    return float(np.mean([_pairwise_terms(q, d, t) for t in range(q.size)]))


def average_error_bound(q_bkg, q_sig, expected_d) -> float:
    """Error bound averaged over a uniformly placed signal bin.

    Every bin sees background ``q_bkg`` except the true bin, which sees
    ``q_sig``; the true bin ranges over all ``B`` positions.
    """
    d = np.asarray(expected_d, dtype=float)
    if d.ndim != 1 or np.any(d <= 0):
        raise ValueError("expected denominators must be positive")
    total = 0.0
    for t in range(d.size):
        q = np.full(d.size, float(q_bkg))
        q[t] = q_sig
        total += _pairwise_terms(q, d, t)
    return total / d.size


def _shift_gap(s, s_next, dead_bins, num_bins):
    return ((np.asarray(s_next) - np.asarray(s)) % num_bins - dead_bins - 1) % num_bins


def markov_transition_density(s, s_next, phi_bkg, dead_bins, num_bins):
    """Probability that a free-running SPAD moves from shift ``s`` to ``s_next``.

    After activating at shift ``s`` the SPAD waits ``g >= 0`` bins for a
    background detection, is dead for ``n_d`` bins, and re-activates at
    ``s + g + n_d + 1``.  Folding the geometric wait modulo ``B`` gives
    ``(1 - e^{-phi}) e^{-g phi} / (1 - e^{-B phi})`` with
    ``g = (s_next - s - n_d - 1) mod B``.
    """
    g = _shift_gap(s, s_next, dead_bins, num_bins)
    if phi_bkg == 0:
        out = np.full(np.shape(g), 1.0 / num_bins)
    else:
        out = np.expm1(-phi_bkg) / np.expm1(-num_bins * phi_bkg) * np.exp(-g * phi_bkg)
    return float(out) if np.ndim(out) == 0 else out


def markov_transition_matrix(phi_bkg, dead_bins, num_bins) -> np.ndarray:
    """Row-stochastic ``B x B`` matrix of :func:`markov_transition_density`."""
    s = np.arange(num_bins)
    return markov_transition_density(s[:, None], s[None, :], phi_bkg, dead_bins, num_bins)
