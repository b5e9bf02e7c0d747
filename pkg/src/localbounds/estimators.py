"""Slow-rate estimators and their certificates.

All functions take loss matrices: rows are samples, columns hypotheses.  A
surrogate ``psi`` is anything callable as ``psi(r, delta)``;
:class:`~localbounds.numkit.SurrogateSpec` and
:class:`~localbounds.rademacher.EmpiricalPsi` both qualify and carry their
own ``cap_R``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .numkit import fixed_point_bounded, is_sub_root

__all__ = [
    "Certificate",
    "NotSubRootError",
    "erm",
    "certify_loss_rate",
    "moment_penalized",
    "variance_certificate",
    "c_n_variance",
    "c_n_loss",
    "c_r0",
]


class NotSubRootError(ValueError):
    """The surrogate handed to the moment-penalized estimator is not sub-root."""


@dataclass(frozen=True)
class Certificate:
    bound: float
    delta: float
    kind: str
    constants: dict[str, float]
    inputs_digest: str
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def c_r0(B: float, r0: float) -> float:
    return 2.0 * math.log2(8.0 * B**2 / r0)


def c_n_variance(n: int) -> float:
    return 2.0 * math.log2(n) + 5.0


def c_n_loss(n: int) -> float:
    # the data-dependent loss pathway states +6 rather than +5
    return 2.0 * math.log2(n) + 6.0


def _cap(psi, B: float) -> float:
    return float(getattr(psi, "cap_R", None) or 4.0 * B**2)


def _describe(psi) -> str:
    spec = getattr(psi, "kind", None)
    if spec is not None:
        return json.dumps({"kind": spec, "n": getattr(psi, "n", None), "rho": getattr(psi, "rho", None),
                           "d": getattr(psi, "d", None), "B": getattr(psi, "B", None),
                           "c": getattr(psi, "constant_c", None)}, sort_keys=True)
    bp = getattr(psi, "breakpoints", None)
    if bp is not None:
        return "empirical:" + hashlib.sha256(np.asarray(bp).tobytes()
                                             + np.asarray(psi.rad_values).tobytes()).hexdigest()
    return repr(psi)


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(np.ascontiguousarray(p, dtype=float).tobytes())
        else:
            h.update(repr(p).encode())
    return h.hexdigest()[:16]


def _as_matrix(losses) -> np.ndarray:
    L = np.asarray(losses, dtype=float)
    if L.ndim != 2 or L.shape[0] == 0 or L.shape[1] == 0:
        raise ValueError("losses must be a non-empty (n, H) matrix")
    return L


def erm(losses) -> int:
    """Index minimising the empirical mean loss; ties go to the lowest index."""
    return int(np.argmin(_as_matrix(losses).mean(axis=0)))


def certify_loss_rate(losses, psi, delta: float, r0: float, B: float, mode: str = "theorem",
                      constant_c: float = 1.0, seed: int | None = None) -> Certificate:
    """Loss-dependent bound for ERM with the empirical effective loss plugged in.

    ``mode="theorem"``: ``psi(24 B L; d/C_r0) v r*/6B v r0/48B`` with ``r*``
    the fixed point of ``6B psi(8r; d/C_r0)``.
    ``mode="data"``: ``psi(c B L; d/C_n) v c r*/B v c B log(2/d)/n`` with
    ``C_n = 2 log2 n + 6`` and ``r*`` the fixed point of ``6B psi(8r; d/C_n)``.
    """
    L = _as_matrix(losses)
    n = L.shape[0]
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    idx = erm(L)
    L_hat = float(np.mean(L[:, idx] - L.min(axis=1)))
    cap = _cap(psi, B)

    if mode == "theorem":
        if not 0 < r0 < 4 * B**2:
            raise ValueError("r0 must lie in (0, 4B^2)")
        C = c_r0(B, r0)
        dp = delta / C
        r_star = fixed_point_bounded(lambda r: 6 * B * psi(8 * r, dp), cap / 8).r_star
        terms = [psi(24 * B * L_hat, dp), r_star / (6 * B), r0 / (48 * B)]
        kind, constants = "loss-dependent", {"C_r0": C}
    elif mode == "data":
        C = c_n_loss(n)
        dp = delta / C
        c = constant_c
        r_star = fixed_point_bounded(lambda r: 6 * B * psi(8 * r, dp), cap / 8).r_star
        terms = [psi(c * B * L_hat, dp), c * r_star / B, c * B * math.log(2 / delta) / n]
        kind, constants = "data-loss", {"C_n": C}
    else:
        raise ValueError(f"unknown mode {mode!r}")

    constants.update(constant_c=constant_c, r0=r0, r_star=r_star)
    return Certificate(
        bound=float(max(terms)), delta=delta, kind=kind, constants=constants,
        inputs_digest=_digest(L, _describe(psi), seed, mode),
        details={"index": idx, "L_hat": L_hat, "terms": [float(t) for t in terms]},
    )


def _check_sub_root(psi, dp: float, cap: float) -> None:
    grid = np.geomspace(cap * 1e-8, cap, 256)
    if not is_sub_root(lambda r: psi(r, dp), grid):
        raise NotSubRootError("psi(r)/sqrt(r) increases somewhere on (0, 4B^2]")


def moment_penalized(losses_primary, losses_aux, psi, delta: float, B: float,
                     constant_c: float = 1.0, seed: int | None = None,
                     check_sub_root: bool = True) -> tuple[int, Certificate]:
    """Two-stage sample-splitting estimator penalising the centred second moment.

    Stage one sets ``L0 = min_h P_aux l(h)``.  Stage two minimises
    ``P_n l(h) + psi(16 P_n (l(h) - L0)^2; delta/C_n)`` with
    ``C_n = 2 log2 n + 5``.  The certificate uses the selected hypothesis'
    own centred second moment ``V``: ``2 psi(c V; d/C_n) v c r*/8B`` with
    ``r*`` the fixed point of ``B psi(r; d/C_n)``.
    """
    L = _as_matrix(losses_primary)
    A = _as_matrix(losses_aux)
    if L.shape != A.shape:
        raise ValueError("primary and auxiliary samples must have the same size and class")
    n = L.shape[0]
    C = c_n_variance(n)
    dp = delta / C
    cap = _cap(psi, B)
    if check_sub_root:
        _check_sub_root(psi, dp, cap)

    L0 = float(A.mean(axis=0).min())
    V = np.mean((L - L0) ** 2, axis=0)
    objective = L.mean(axis=0) + np.array([psi(16 * v, dp) for v in V])
    idx = int(np.argmin(objective))
    r_star = fixed_point_bounded(lambda r: B * psi(r, dp), cap).r_star
    c = constant_c
    terms = [2 * psi(c * V[idx], dp), c * r_star / (8 * B)]
    cert = Certificate(
        bound=float(max(terms)), delta=delta, kind="variance-dependent",
        constants={"C_n": C, "constant_c": c, "r_star": r_star},
        inputs_digest=_digest(L, A, _describe(psi), seed),
        details={"index": idx, "L0_hat": L0, "V_hat": float(V[idx]),
                 "objective": [float(o) for o in objective], "terms": [float(t) for t in terms]},
    )
    return idx, cert


def variance_certificate(losses_primary, L0_hat: float, psi, delta: float, B: float,
                         seed: int | None = None) -> Certificate:
    """Fully data-dependent variance bound via negative moment penalisation.

    ``h_NMP`` minimises ``P_n l(h) - 2 psi(16 P_n (l(h) - L0)^2; d/C_n)``;
    with ``V = P_n (l(h_NMP) - L0)^2`` the bound is
    ``4 psi(16 V; d/C_n) v r*/8B`` where ``r*`` is the fixed point of
    ``16 B psi(r; d/C_n)``.
    """
    L = _as_matrix(losses_primary)
    if not -B <= L0_hat <= B:
        raise ValueError("L0_hat must lie in [-B, B]")
    n = L.shape[0]
    C = c_n_variance(n)
    dp = delta / C
    cap = _cap(psi, B)
    V = np.mean((L - L0_hat) ** 2, axis=0)
    objective = L.mean(axis=0) - 2 * np.array([psi(16 * v, dp) for v in V])
    idx = int(np.argmin(objective))
    r_star = fixed_point_bounded(lambda r: 16 * B * psi(r, dp), cap).r_star
    terms = [4 * psi(16 * V[idx], dp), r_star / (8 * B)]
    return Certificate(
        bound=float(max(terms)), delta=delta, kind="data-variance",
        constants={"C_n": C, "r_star": r_star},
        inputs_digest=_digest(L, L0_hat, _describe(psi), seed),
        details={"index": idx, "V_hat": float(V[idx]), "terms": [float(t) for t in terms]},
    )
