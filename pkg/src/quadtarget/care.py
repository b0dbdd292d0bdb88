"""Continuous-time algebraic Riccati equation and LQR gain synthesis.

Convention: the Riccati equation is

    P A + A^T P - P B Q2^{-1} B^T P + Q1 = 0

and the feedback gain carries its own sign, ``u = K x`` with
``K = -Q2^{-1} B^T P``, so the closed loop is ``A + B K``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from quadtarget.errors import SynthesisError


@dataclass(frozen=True)
class LinearPlant:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError(f"incompatible shapes A{A.shape}, B{B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def controllability_matrix(self) -> np.ndarray:
        blocks = [self.B]
        for _ in range(self.n - 1):
            blocks.append(self.A @ blocks[-1])
        return np.hstack(blocks)

    def is_controllable(self) -> bool:
        return np.linalg.matrix_rank(self.controllability_matrix()) == self.n


def egocentric_plant(full: bool = False) -> LinearPlant:
    """Double integrator in the virtual body frame.

    The reduced form (default) keeps the longitudinal and vertical axes:
    state ``[x_e + r*, z_e, v_xe, v_ze]``, input ``[u_e1, u_e3]``. The full
    form adds the lateral axis: state ``[x_e + r*, y_e, z_e, v_xe, v_ye, v_ze]``.
    """
    k = 3 if full else 2
    A = np.zeros((2 * k, 2 * k))
    A[:k, k:] = np.eye(k)
    B = np.vstack([np.zeros((k, k)), np.eye(k)])
    return LinearPlant(A, B)


def _as_weight(Q, size, name) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 0:
        Q = Q.reshape(1, 1)
    elif Q.ndim == 1:
        Q = np.diag(Q)
    if Q.shape != (size, size):
        raise SynthesisError(f"{name} must be {size}x{size}, got {Q.shape}")
    if not np.allclose(Q, Q.T, atol=1e-12):
        raise SynthesisError(f"{name} must be symmetric")
    return Q


def _check_weights(plant: LinearPlant, Q1, Q2):
    Q1 = _as_weight(Q1, plant.n, "Q1")
    Q2 = _as_weight(Q2, plant.m, "Q2")
    if np.linalg.eigvalsh(Q1).min() < -1e-12:
        raise SynthesisError("Q1 must be positive semi-definite")
    if np.linalg.eigvalsh(Q2).min() <= 0:
        raise SynthesisError("Q2 must be positive definite")
    if not plant.is_controllable():
        raise SynthesisError("(A, B) is not controllable")
    return Q1, Q2


def care_residual(P, A, B, Q1, Q2) -> float:
    """Infinity-norm of the Riccati residual."""
    A = np.atleast_2d(A)
    B = np.asarray(B).reshape(A.shape[0], -1)
    Q1 = _as_weight(Q1, A.shape[0], "Q1")
    Q2 = _as_weight(Q2, B.shape[1], "Q2")
    R = P @ A + A.T @ P - P @ B @ np.linalg.solve(Q2, B.T @ P) + Q1
    return float(np.max(np.abs(R)))


def _solve_hamiltonian(A, B, Q1, Q2) -> np.ndarray:
    n = A.shape[0]
    G = B @ np.linalg.solve(Q2, B.T)
    H = np.block([[A, -G], [-Q1, -A.T]])
    # ordered real Schur form: the first n Schur vectors span the stable subspace
    T, Z, sdim = scipy.linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise SynthesisError(
            f"Hamiltonian has {sdim} stable eigenvalues, expected {n}; "
            "the pair is not stabilizable/detectable for these weights"
        )
    U1, U2 = Z[:n, :n], Z[n:, :n]
    if np.linalg.cond(U1) > 1e12:
        raise SynthesisError("stable invariant subspace is not a graph; no stabilizing solution")
    P = np.linalg.solve(U1.T, U2.T).T
    return 0.5 * (P + P.T)


def newton_kleinman(plant: LinearPlant, Q1, Q2, K0=None, tol=1e-12, max_iter=100) -> np.ndarray:
    """Kleinman's iteration: repeated Lyapunov solves from a stabilizing gain.

    When ``K0`` is omitted a stabilizing seed is obtained by pole placement.
    """
    Q1, Q2 = _check_weights(plant, Q1, Q2)
    A, B = plant.A, plant.B
    if K0 is None:
        from scipy.signal import place_poles  # slow to import; only needed for the seed

        poles = -1.0 - np.arange(plant.n, dtype=float)
        shift = max(0.0, float(np.max(np.linalg.eigvals(A).real))) + 1.0
        placed = place_poles(A, B, shift * poles)
        K = -placed.gain_matrix
    else:
        K = np.asarray(K0, dtype=float)
    if np.max(np.linalg.eigvals(A + B @ K).real) >= 0:
        raise SynthesisError("seed gain is not stabilizing")
    P_prev = None
    for _ in range(max_iter):
        Acl = A + B @ K
        P = scipy.linalg.solve_continuous_lyapunov(Acl.T, -(Q1 + K.T @ Q2 @ K))
        P = 0.5 * (P + P.T)
        K = -np.linalg.solve(Q2, B.T @ P)
        if P_prev is not None and np.max(np.abs(P - P_prev)) <= tol * max(1.0, np.max(np.abs(P))):
            break
        P_prev = P
    return P


def solve_care(plant: LinearPlant, Q1, Q2, method: str = "hamiltonian") -> np.ndarray:
    """Stabilizing solution ``P`` of the Riccati equation.

    ``method="hamiltonian"`` selects the stable invariant subspace of the
    Hamiltonian matrix via an ordered Schur decomposition; ``"kleinman"`` runs
    the Newton-Kleinman iteration (used as an independent cross-check).
    """
    Q1, Q2 = _check_weights(plant, Q1, Q2)
    if method == "hamiltonian":
        P = _solve_hamiltonian(plant.A, plant.B, Q1, Q2)
        # one Newton-Kleinman polish step tightens the residual on stiff weights
        K = -np.linalg.solve(Q2, plant.B.T @ P)
        if np.max(np.linalg.eigvals(plant.A + plant.B @ K).real) < 0:
            P = newton_kleinman(plant, Q1, Q2, K0=K, max_iter=2)
    elif method == "kleinman":
        P = newton_kleinman(plant, Q1, Q2)
    else:
        raise ValueError(f"unknown method {method!r}")
    return P


def lqr_gain(P, B, Q2) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    Q2 = _as_weight(Q2, B.shape[1], "Q2")
    return -np.linalg.solve(Q2, B.T @ np.asarray(P, dtype=float))


def closed_loop_spectrum(plant: LinearPlant, K) -> np.ndarray:
    """Eigenvalues of ``A + B K`` sorted by real part (then imaginary part)."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    eig = np.linalg.eigvals(plant.A + plant.B @ K)
    return eig[np.lexsort((eig.imag, eig.real))]


@dataclass(frozen=True)
class GainSynthesis:
    plant: LinearPlant
    Q1: np.ndarray
    Q2: np.ndarray
    P: np.ndarray
    K: np.ndarray

    @property
    def residual(self) -> float:
        return care_residual(self.P, self.plant.A, self.plant.B, self.Q1, self.Q2)

    @property
    def spectrum(self) -> np.ndarray:
        return closed_loop_spectrum(self.plant, self.K)

    def check(self, residual_tol: float = 1e-9) -> None:
        """Raise :class:`SynthesisError` if any invariant of the synthesis fails."""
        if not np.allclose(self.P, self.P.T, atol=0.0, rtol=0.0):
            raise SynthesisError("P is not symmetric")
        if np.linalg.eigvalsh(self.P).min() <= 0:
            raise SynthesisError("P is not positive definite")
        res = self.residual
        if not res < residual_tol:
            raise SynthesisError(f"CARE residual {res:.3e} exceeds {residual_tol:.1e}")
        if not np.max(self.spectrum.real) < 0:
            raise SynthesisError("closed loop A + B K is not Hurwitz")

    def blocks(self) -> tuple[np.ndarray, np.ndarray]:
        """``K = [K1, K2]``: position and velocity gain blocks."""
        k = self.plant.m
        return self.K[:, :k], self.K[:, k:]


def synthesize(plant: LinearPlant, Q1, Q2, residual_tol: float = 1e-9) -> GainSynthesis:
    """Solve the Riccati equation once and package ``P`` and ``K``."""
    Q1m, Q2m = _check_weights(plant, Q1, Q2)
    P = solve_care(plant, Q1m, Q2m)
    K = lqr_gain(P, plant.B, Q2m)
    gains = GainSynthesis(plant, Q1m, Q2m, P, K)
    gains.check(residual_tol)
    return gains
