"""Independent brute-force reference implementations.

Everything in this module recomputes relations directly from gate
matrices, never consulting the precomputed tables in
:mod:`qsynth.gates`, so tests can use it as a second opinion on masking,
simulation, and minimum synthesis depth.  It is deliberately naive and
only usable at tiny scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .circuit import Circuit, from_actions, ops_unitary
from .gates import ActionTable, gate_spec

MAX_ENUMERATION = 10**7


def embedded_ops(circuit: Circuit) -> list[np.ndarray]:
    n = circuit.n_qubits
    return [linalg.embed(gate_spec(name).matrix, qubits, n) for name, qubits in circuit.ops]


def commutes(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> bool:
    return bool(np.abs(a @ b - b @ a).max() <= tol)


def cancels(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> bool:
    return linalg.proportional_to_identity(a @ b, tol)


def naive_legal(history_mats, candidate: np.ndarray) -> bool:
    """Reference mask semantics, one candidate at a time, from raw matrices."""
    for h in reversed(history_mats):
        if cancels(candidate, h):
            return False
        if not commutes(candidate, h):
            return True
    return True


def naive_mask(history, table: ActionTable) -> np.ndarray:
    """Per-action legality recomputed from matrices (not the pair tables)."""
    hist_mats = [np.asarray(table.embedded[int(h)]) for h in history]
    return np.array(
        [naive_legal(hist_mats, np.asarray(table.embedded[a])) for a in range(table.n_actions)],
        dtype=bool,
    )


def has_cancelling_pair(circuit: Circuit) -> bool:
    """True if some gate can be commuted back onto an earlier inverse.

    Used to certify sampler output: a clean circuit has no pair (i, j)
    with product proportional to the identity and every gate between
    commuting with the later one.
    """
    mats = embedded_ops(circuit)
    for j in range(len(mats)):
        for i in range(j - 1, -1, -1):
            if cancels(mats[j], mats[i]):
                if all(commutes(mats[k], mats[j]) for k in range(i + 1, j)):
                    return True
                break  # the walk from j stops at the first non-commuting gate
            if not commutes(mats[j], mats[i]):
                break
    return False


def simulate(circuit: Circuit) -> np.ndarray:
    """Full-register product, recomputed gate by gate from the library."""
    return ops_unitary(circuit.ops, circuit.n_qubits)


@dataclass(frozen=True)
class EnumerationResult:
    target: np.ndarray
    min_depth: int | None
    witness: Circuit | None


def enumerate_min_depth(
    target,
    table: ActionTable,
    depth_bound: int,
    eps: float = linalg.SUCCESS_EPS,
    count_at_depth: int | None = None,
) -> EnumerationResult | int:
    """Exact minimum circuit depth for ``target`` within ``depth_bound``.

    Breadth-first over masked action sequences using the naive mask.  With
    ``count_at_depth=d`` it instead returns the number of distinct legal
    depth-d sequences that realize the target (used to calibrate search
    difficulty in tests).
    """
    k = table.n_actions
    if k**depth_bound > MAX_ENUMERATION:
        raise ValueError(
            f"{k}^{depth_bound} sequences exceed the {MAX_ENUMERATION} enumeration bound"
        )
    target = linalg.as_operator(target)
    dim = table.dim
    if target.shape[0] != dim:
        raise ValueError(f"target dim {target.shape[0]} does not match table dim {dim}")

    def hit(m: np.ndarray) -> bool:
        return abs(np.vdot(target, m)) / dim >= 1.0 - eps

    mats = [np.asarray(table.embedded[a]) for a in range(k)]
    counting = count_at_depth is not None
    if not counting and hit(np.eye(dim, dtype=np.complex128)):
        return EnumerationResult(target, 0, from_actions(table, ()))

    level: list[tuple[tuple[int, ...], np.ndarray]] = [((), np.eye(dim, dtype=np.complex128))]
    n_found = 0
    last = count_at_depth if counting else depth_bound
    for depth in range(1, last + 1):
        nxt: list[tuple[tuple[int, ...], np.ndarray]] = []
        for hist, m in level:
            hist_mats = [mats[h] for h in hist]
            for a in range(k):
                if not naive_legal(hist_mats, mats[a]):
                    continue
                m2 = mats[a] @ m
                if depth == last or not counting:
                    if hit(m2):
                        if counting:
                            if depth == last:
                                n_found += 1
                            continue
                        return EnumerationResult(target, depth, from_actions(table, hist + (a,)))
                if depth < last:
                    nxt.append((hist + (a,), m2))
        level = nxt
    if counting:
        return n_found
    return EnumerationResult(target, None, None)
