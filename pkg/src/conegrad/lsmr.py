"""Iterative least-squares solver for matrix-free operators.

This is the LSMR method of Fong and Saunders: Golub-Kahan bidiagonalization
with two layers of plane rotations, minimizing ``||A'(b - Ax)||`` over the
Krylov subspace at every step.  Only the features this package needs are
kept — damping is fixed at zero and there is no condition-number stop — but
the recurrences follow the published algorithm so they can be checked
against it line by line.
"""

from dataclasses import dataclass

import numpy as np

from conegrad.errors import NumericalError, ValidationError


@dataclass
class LsmrResult:
    """Outcome of an LSMR solve.

    Attributes:
        solution: least-squares solution estimate.
        iterations: number of bidiagonalization steps taken.
        converged: whether a residual-based stopping rule fired (as opposed
            to hitting the iteration cap).
        residual_norm: recurrence estimate of ``||b - Ax||``.
        atr_norm: recurrence estimate of ``||A'(b - Ax)||``.
    """

    solution: np.ndarray
    iterations: int
    converged: bool
    residual_norm: float
    atr_norm: float


def _sym_ortho(a, b):
    """Stable Givens rotation: returns ``(c, s, r)`` with ``r = hypot(a, b)``."""
    if b == 0:
        return np.sign(a), 0.0, abs(a)
    if a == 0:
        return 0.0, np.sign(b), abs(b)
    if abs(b) > abs(a):
        tau = a / b
        s = np.sign(b) / np.sqrt(1 + tau * tau)
        c = s * tau
        r = b / s
    else:
        tau = b / a
        c = np.sign(a) / np.sqrt(1 + tau * tau)
        s = c * tau
        r = a / c
    return c, s, r


def lsmr(op, rhs, atol=1e-10, btol=1e-10, max_iter=None):
    """Minimize ``||op @ x - rhs||`` and return an :class:`LsmrResult`.

    Stops when the backward-error tests of Fong and Saunders fall below the
    tolerances: ``||r|| / ||b|| <= btol + atol * ||A|| * ||x|| / ||b||`` for
    compatible systems, or ``||A'r|| / (||A|| * ||r||) <= atol`` for
    least-squares ones.  Raises :class:`NumericalError` if the recurrences
    produce a non-finite quantity (the iteration index is attached).
    """
    rhs = np.ascontiguousarray(rhs, dtype=np.float64)
    if rhs.shape != (op.out_dim,):
        raise ValidationError(f"rhs must have length {op.out_dim}, got {rhs.shape}")
    if max_iter is None:
        max_iter = 10 * (op.in_dim + op.out_dim)
    damp = 0.0

    x = np.zeros(op.in_dim)
    beta = float(np.linalg.norm(rhs))
    normb = beta
    if beta > 0:
        u = rhs / beta
        v = op.rmatvec(u)
        alpha = float(np.linalg.norm(v))
    else:
        u = rhs.copy()
        v = np.zeros(op.in_dim)
        alpha = 0.0
    if alpha > 0:
        v = v / alpha

    # With a zero right-hand side or A'b = 0, the zero vector is already the
    # minimum-norm least-squares solution.
    if alpha * beta == 0:
        return LsmrResult(x, 0, True, beta, 0.0)

    # Variables for the rotations and the transformed solution updates.
    itn = 0
    zetabar = alpha * beta
    alphabar = alpha
    rho = rhobar = cbar = 1.0
    sbar = 0.0
    h = v.copy()
    hbar = np.zeros(op.in_dim)

    # Variables for the residual-norm estimates.
    betadd = beta
    betad = 0.0
    rhodold = 1.0
    tautildeold = thetatilde = zeta = d = 0.0
    normA2 = alpha * alpha

    normr = beta
    normar = alpha * beta

    while itn < max_iter:
        itn += 1

        # Next step of the bidiagonalization.
        u = op.matvec(v) - alpha * u
        beta = float(np.linalg.norm(u))
        if beta > 0:
            u = u / beta
            v = op.rmatvec(u) - beta * v
            alpha = float(np.linalg.norm(v))
            if alpha > 0:
                v = v / alpha
        if not (np.isfinite(alpha) and np.isfinite(beta)):
            raise NumericalError("non-finite quantity in bidiagonalization", iteration=itn)

        # Construct and apply the rotations.
        chat, shat, alphahat = _sym_ortho(alphabar, damp)
        rhoold = rho
        c, s, rho = _sym_ortho(alphahat, beta)
        thetanew = s * alpha
        alphabar = c * alpha

        rhobarold = rhobar
        zetaold = zeta
        thetabar = sbar * rho
        rhotemp = cbar * rho
        cbar, sbar, rhobar = _sym_ortho(rhotemp, thetanew)
        zeta = cbar * zetabar
        zetabar = -sbar * zetabar

        # Update the solution estimate.
        hbar = h - (thetabar * rho / (rhoold * rhobarold)) * hbar
        x = x + (zeta / (rho * rhobar)) * hbar
        h = v - (thetanew / rho) * h

        # Update the residual-norm estimates.
        betaacute = chat * betadd
        betacheck = -shat * betadd
        betahat = c * betaacute
        betadd = -s * betaacute

        thetatildeold = thetatilde
        ctildeold, stildeold, rhotildeold = _sym_ortho(rhodold, thetabar)
        thetatilde = stildeold * rhobar
        rhodold = ctildeold * rhobar
        betad = -stildeold * betad + ctildeold * betahat

        tautildeold = (zetaold - thetatildeold * tautildeold) / rhotildeold
        taud = (zeta - thetatilde * tautildeold) / rhodold
        d = d + betacheck * betacheck
        normr = float(np.sqrt(d + (betad - taud) ** 2 + betadd * betadd))

        normA2 = normA2 + beta * beta
        normA = float(np.sqrt(normA2))
        normA2 = normA2 + alpha * alpha

        normar = abs(zetabar)
        normx = float(np.linalg.norm(x))
        if not (np.isfinite(normr) and np.isfinite(normar) and np.isfinite(normx)):
            raise NumericalError("non-finite quantity in LSMR recurrences", iteration=itn)

        # Stopping rules.
        if normar == 0:
            return LsmrResult(x, itn, True, normr, normar)
        test1 = normr / normb
        test2 = normar / (normA * normr) if normr > 0 else 0.0
        rtol = btol + atol * normA * normx / normb
        t1 = test1 / (1 + normA * normx / normb)
        if 1 + test2 <= 1 or 1 + t1 <= 1:
            return LsmrResult(x, itn, True, normr, normar)
        if test2 <= atol or test1 <= rtol:
            return LsmrResult(x, itn, True, normr, normar)

    return LsmrResult(x, itn, False, normr, normar)
