"""Damped nonlinear least-squares fitting of the double-Gaussian lineshape.

The solver is a Levenberg-Marquardt-style loop: each step solves

    (J'J + lambda * diag(J'J)) delta = J' r

and ``lambda`` is adapted from the gain ratio between the actual and the
predicted reduction of the objective (accepted steps shrink ``lambda``,
rejected ones inflate it).  All spectra of a map are fitted together in a
batched loop over pixel arrays; per-pixel results are independent of how
the batch is partitioned, which is what makes threaded map fitting
bit-reproducible.

Frequencies are shifted and scaled to zero mean / unit variance internally;
raw values near 1e9 Hz would otherwise produce a badly scaled normal
matrix.  Reported parameters and covariances are transformed back to Hz.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .spectral import LineshapeParams

_NPAR = 6  # (f0, a1, sigma1, a2, sigma2, baseline)
MAX_ITERATIONS = 200
STEP_TOL = 1e-10
GRAD_TOL = 1e-12
_INIT_SIGMA1 = 6e6
_INIT_SIGMA2 = 30e6
_LAMBDA_INIT_SCALE = 1e-3
_LAMBDA_MAX = 1e32


@dataclass
class FitResult:
    """Single-spectrum fit output.

    ``covariance`` rows/columns follow the parameter order
    (f0, a1, sigma1, a2, sigma2, baseline); ``se_f0`` is the square root of
    its (0, 0) entry.
    """

    params: LineshapeParams
    se_f0: float
    covariance: np.ndarray
    residual_norm: float
    converged: bool
    iterations: int
    degenerate_widths: bool = False
    singular: bool = False


@dataclass
class BatchFitResult:
    """Array-of-struct results for a batch of spectra (one row per spectrum)."""

    params: np.ndarray        # (B, 6) in physical units, sigma1 <= sigma2
    se_f0: np.ndarray         # (B,)
    covariance: np.ndarray    # (B, 6, 6)
    residual_norm: np.ndarray  # (B,)
    converged: np.ndarray     # (B,) bool
    iterations: np.ndarray    # (B,) int
    degenerate_widths: np.ndarray  # (B,) bool
    singular: np.ndarray      # (B,) bool

    def result(self, k: int) -> FitResult:
        p = self.params[k]
        return FitResult(
            params=LineshapeParams(p[0], p[1], p[2], p[3], p[4], p[5]),
            se_f0=float(self.se_f0[k]),
            covariance=self.covariance[k],
            residual_norm=float(self.residual_norm[k]),
            converged=bool(self.converged[k]),
            iterations=int(self.iterations[k]),
            degenerate_widths=bool(self.degenerate_widths[k]),
            singular=bool(self.singular[k]),
        )


def _model_and_jacobian(x, P, with_jacobian=True):
    """Model values (B, F) and Jacobian (B, F, 6) in scaled coordinates.

    Widths enter through their absolute value so the solver can wander
    across zero without producing NaNs; the sign is stripped at exit.
    """
    t0 = P[:, 0:1]
    a1 = P[:, 1:2]
    s1 = np.abs(P[:, 2:3])
    a2 = P[:, 3:4]
    s2 = np.abs(P[:, 4:5])
    b = P[:, 5:6]

    d = x[None, :] - t0
    tiny = np.finfo(float).tiny
    u1 = d / np.maximum(s1, tiny)
    u2 = d / np.maximum(s2, tiny)
    g1 = np.exp(-0.5 * u1 * u1)
    g2 = np.exp(-0.5 * u2 * u2)
    y = b + a1 * g1 + a2 * g2
    if not with_jacobian:
        return y, None

    J = np.empty(P.shape[:1] + x.shape + (_NPAR,))
    J[..., 0] = (a1 * g1 * u1 / np.maximum(s1, tiny)
                 + a2 * g2 * u2 / np.maximum(s2, tiny))
    J[..., 1] = g1
    J[..., 2] = np.sign(P[:, 2:3]) * a1 * g1 * u1 * u1 / np.maximum(s1, tiny)
    J[..., 3] = g2
    J[..., 4] = np.sign(P[:, 4:5]) * a2 * g2 * u2 * u2 / np.maximum(s2, tiny)
    J[..., 5] = 1.0
    return y, J


def initial_guess(freqs, values) -> np.ndarray:
    """Default starting point: peak from a 5-point moving average, widths
    6/30 MHz, amplitudes split 50/50 from the peak height, baseline from the
    median of the first and last 10% of samples."""
    freqs = np.asarray(freqs, dtype=float)
    values = np.asarray(values, dtype=float)
    smooth = np.convolve(values, np.ones(5) / 5.0, mode="same")
    i0 = int(np.argmax(smooth))
    k = max(1, int(0.1 * len(values)))
    baseline = float(np.median(np.concatenate([values[:k], values[-k:]])))
    peak = smooth[i0] - baseline
    if not peak > 0:
        peak = max(np.ptp(values), np.finfo(float).eps)
    return np.array(
        [freqs[i0], 0.5 * peak, _INIT_SIGMA1, 0.5 * peak, _INIT_SIGMA2, baseline]
    )


def _batch_initial_guess(freqs, values) -> np.ndarray:
    """Vectorized `initial_guess` for a (B, F) value matrix."""
    B, F = values.shape
    kernel = np.ones(5) / 5.0
    pad = np.pad(values, ((0, 0), (2, 2)), mode="constant")
    # moving average along the frequency axis, same-length output
    smooth = np.empty_like(values)
    for s in range(5):
        if s == 0:
            acc = pad[:, s : s + F].copy()
        else:
            acc += pad[:, s : s + F]
    smooth = acc / 5.0
    i0 = np.argmax(smooth, axis=1)
    k = max(1, int(0.1 * F))
    edges = np.concatenate([values[:, :k], values[:, -k:]], axis=1)
    baseline = np.median(edges, axis=1)
    peak = smooth[np.arange(B), i0] - baseline
    span = np.ptp(values, axis=1)
    peak = np.where(peak > 0, peak, np.maximum(span, np.finfo(float).eps))
    P = np.empty((B, _NPAR))
    P[:, 0] = freqs[i0]
    P[:, 1] = 0.5 * peak
    P[:, 2] = _INIT_SIGMA1
    P[:, 3] = 0.5 * peak
    P[:, 4] = _INIT_SIGMA2
    P[:, 5] = baseline
    return P


_SWAP = np.array([0, 3, 4, 1, 2, 5])  # exchanges the two Gaussian components


def fit_spectra(
    freqs,
    values,
    init: np.ndarray | None = None,
    max_iterations: int = MAX_ITERATIONS,
    step_tol: float = STEP_TOL,
    grad_tol: float = GRAD_TOL,
) -> BatchFitResult:
    """Fit the double-Gaussian model to one or many spectra sharing a
    frequency axis.

    Parameters
    ----------
    freqs : (F,) ascending frequencies in Hz.
    values : (F,) or (B, F) spectrum values.
    init : optional (6,) or (B, 6) starting parameters in physical units,
        order (f0, a1, sigma1, a2, sigma2, baseline).

    Spectra containing non-finite values are reported unconverged rather
    than raising.
    """
    freqs = np.asarray(freqs, dtype=float)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    B, F = values.shape
    if freqs.shape != (F,):
        raise UsageError("freqs and values length mismatch")
    if F < 8:
        raise UsageError(f"need at least 8 samples, got {F}")
    if freqs[-1] - freqs[0] <= 4.0 * _INIT_SIGMA2:
        raise UsageError("frequency span must exceed 4x the initial broad width")

    mu = freqs.mean()
    sd = freqs.std()
    x = (freqs - mu) / sd

    usable = np.all(np.isfinite(values), axis=1)
    vals = np.where(usable[:, None], values, 0.0)

    if init is None:
        P = _batch_initial_guess(freqs, vals)
    else:
        P = np.atleast_2d(np.asarray(init, dtype=float)).copy()
        if P.shape == (1, _NPAR) and B > 1:
            P = np.repeat(P, B, axis=0)
        if P.shape != (B, _NPAR):
            raise UsageError(f"init shape {P.shape} incompatible with batch {B}")
    # to scaled coordinates
    scale = np.array([sd, 1.0, sd, 1.0, sd, 1.0])
    P = P / scale
    P[:, 0] -= mu / sd

    y, _ = _model_and_jacobian(x, P, with_jacobian=False)
    r = vals - y
    S = np.einsum("bf,bf->b", r, r)

    lam = np.full(B, np.nan)
    nu = np.full(B, 2.0)
    converged = np.zeros(B, dtype=bool)
    singular = np.zeros(B, dtype=bool)
    iterations = np.zeros(B, dtype=int)
    active = usable.copy()

    it = 0
    while np.any(active) and it < max_iterations:
        it += 1
        idx = np.nonzero(active)[0]
        Pa = P[idx]
        ya, Ja = _model_and_jacobian(x, Pa)
        ra = vals[idx] - ya
        g = np.einsum("bfi,bf->bi", Ja, ra)
        A = np.einsum("bfi,bfj->bij", Ja, Ja)
        D = np.einsum("bii->bi", A).copy()
        D = np.maximum(D, np.finfo(float).tiny)

        first = np.isnan(lam[idx])
        if np.any(first):
            lam[idx[first]] = _LAMBDA_INIT_SCALE * D[first].max(axis=1)

        # gradient-based convergence before stepping
        gsmall = np.max(np.abs(g), axis=1) < grad_tol
        if np.any(gsmall):
            converged[idx[gsmall]] = True
            active[idx[gsmall]] = False
            keep = ~gsmall
            idx, Pa, ra, g, A, D = idx[keep], Pa[keep], ra[keep], g[keep], A[keep], D[keep]
            if idx.size == 0:
                continue

        M = A.copy()
        diag = np.arange(_NPAR)
        M[:, diag, diag] += lam[idx] * D
        with np.errstate(all="ignore"):
            try:
                delta = np.linalg.solve(M, g)
            except np.linalg.LinAlgError:
                delta = np.full_like(g, np.nan)
                for kk in range(len(idx)):
                    try:
                        delta[kk] = np.linalg.solve(M[kk], g[kk])
                    except np.linalg.LinAlgError:
                        pass
        bad = ~np.all(np.isfinite(delta), axis=1)
        if np.any(bad):
            singular[idx[bad]] = True
            active[idx[bad]] = False
            iterations[idx[bad]] = it
            keep = ~bad
            idx, Pa, ra, g, A, D, delta = (
                idx[keep], Pa[keep], ra[keep], g[keep], A[keep], D[keep], delta[keep],
            )
            if idx.size == 0:
                continue

        Pnew = Pa + delta
        ynew, _ = _model_and_jacobian(x, Pnew, with_jacobian=False)
        rnew = vals[idx] - ynew
        Snew = np.einsum("bf,bf->b", rnew, rnew)
        predicted = np.einsum("bi,bi->b", delta, lam[idx][:, None] * D * delta + g)
        with np.errstate(invalid="ignore", divide="ignore"):
            rho = (S[idx] - Snew) / predicted
        accept = np.isfinite(Snew) & (rho > 0) & (predicted > 0)

        # the objective never increases on an accepted step
        assert np.all(Snew[accept] <= S[idx][accept])

        acc_idx = idx[accept]
        if acc_idx.size:
            P[acc_idx] = Pnew[accept]
            S[acc_idx] = Snew[accept]
            factor = 1.0 - (2.0 * rho[accept] - 1.0) ** 3
            lam[acc_idx] *= np.maximum(1.0 / 3.0, factor)
            nu[acc_idx] = 2.0
            stepsize = np.linalg.norm(delta[accept], axis=1)
            psize = np.linalg.norm(Pnew[accept], axis=1)
            done = stepsize < step_tol * (psize + step_tol)
            converged[acc_idx[done]] = True
            active[acc_idx[done]] = False

        rej_idx = idx[~accept]
        if rej_idx.size:
            lam[rej_idx] *= nu[rej_idx]
            nu[rej_idx] *= 2.0
            stuck = lam[rej_idx] > _LAMBDA_MAX
            active[rej_idx[stuck]] = False

        iterations[idx] = it

    # finalize: strip width signs, enforce sigma1 <= sigma2, covariance
    P[:, 2] = np.abs(P[:, 2])
    P[:, 4] = np.abs(P[:, 4])

    _, Jf = _model_and_jacobian(x, P)
    yf, _ = _model_and_jacobian(x, P, with_jacobian=False)
    rf = vals - yf
    Sf = np.einsum("bf,bf->b", rf, rf)
    A = np.einsum("bfi,bfj->bij", Jf, Jf)

    dof = F - _NPAR
    cov = np.full((B, _NPAR, _NPAR), np.nan)
    with np.errstate(all="ignore"):
        evals = np.linalg.eigvalsh(A)
        ok = usable & (evals[:, 0] > evals[:, -1] * 1e-13) & (evals[:, -1] > 0)
        if np.any(ok):
            cov[ok] = np.linalg.inv(A[ok]) * (Sf[ok] / dof)[:, None, None]
    singular |= usable & ~ok
    converged &= ~singular

    # back to physical units
    P = P * scale
    P[:, 0] += mu
    cov *= np.outer(scale, scale)

    swap = P[:, 2] > P[:, 4]
    if np.any(swap):
        P[swap] = P[swap][:, _SWAP]
        cov[swap] = cov[swap][:, _SWAP][:, :, _SWAP]
    degenerate = usable & (P[:, 2] == P[:, 4])

    with np.errstate(invalid="ignore"):
        se_f0 = np.sqrt(cov[:, 0, 0])

    return BatchFitResult(
        params=P,
        se_f0=se_f0,
        covariance=cov,
        residual_norm=np.sqrt(Sf),
        converged=converged,
        iterations=iterations,
        degenerate_widths=degenerate,
        singular=singular,
    )


def fit_double_gaussian(
    freqs, values, init: LineshapeParams | None = None, **kwargs
) -> FitResult:
    """Fit a single spectrum; see `fit_spectra` for the solver contract."""
    init_arr = init.as_array() if init is not None else None
    batch = fit_spectra(freqs, values, init=init_arr, **kwargs)
    return batch.result(0)
