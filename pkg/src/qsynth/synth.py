"""Inference pipeline: synthesis attempts, dynamic-circuit correction,
and peephole simplification.

The §-style protocol: one deterministic attempt (T=0), then up to
``retries`` independent stochastic attempts (T=1 by default) with fresh
seeds; the first winning attempt is reported.  For clean-ancilla
circuits, a second synthesis produces the correction unitary applied
when the ancilla reads |1>, making the dynamic circuit deterministic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import circuit as circuit_mod
from . import linalg
from .alphazero import AgentConfig, play_episode
from .circuit import Circuit
from .env import SynthGame
from .gates import gate_spec
from .network import PolicyValueNet

PREFIX_WINDOW = 8  # longest identity prefix the simplifier scans for


class NoCorrectionError(RuntimeError):
    """The outcome-1 block is not proportional to a unitary, so no
    correction unitary exists."""


@dataclass(frozen=True)
class SynthesisReport:
    success: bool
    circuit: Circuit | None
    attempts: int
    temperatures: tuple[float, ...]
    wall_time: float
    t_count: int | None
    depth: int | None

    def __str__(self) -> str:
        if not self.success:
            return f"no circuit found ({self.attempts} attempts, {self.wall_time:.2f}s)"
        return (
            f"{self.depth} gates, T-count {self.t_count}, "
            f"{self.attempts} attempts, {self.wall_time:.2f}s"
        )


def synthesize(
    game: SynthGame,
    net: PolicyValueNet | None,
    config: AgentConfig,
    target,
    max_steps: int,
    retries: int = 10,
    retry_temperature: float = 1.0,
    seed: int = 0,
    budget: int | None = None,
) -> SynthesisReport:
    """Run the attempt protocol against ``target``; never raises on failure."""
    if budget is None:
        budget = config.n_mcts_eval
    start = time.perf_counter()
    temperatures = []
    for attempt in range(retries + 1):
        temperature = 0.0 if attempt == 0 else retry_temperature
        temperatures.append(temperature)
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
        won, history = play_episode(
            game, net, config, target, max_steps, budget, temperature, rng
        )
        if won:
            circ = circuit_mod.from_actions(game.table, history)
            return SynthesisReport(
                success=True,
                circuit=circ,
                attempts=attempt + 1,
                temperatures=tuple(temperatures),
                wall_time=time.perf_counter() - start,
                t_count=circ.t_count,
                depth=circ.depth,
            )
    return SynthesisReport(
        success=False,
        circuit=None,
        attempts=retries + 1,
        temperatures=tuple(temperatures),
        wall_time=time.perf_counter() - start,
        t_count=None,
        depth=None,
    )


@dataclass(frozen=True)
class CorrectionReport:
    """Result of the second synthesis stage for a dynamic circuit."""

    needed: bool
    report: SynthesisReport | None
    circuit: Circuit | None          # the ancilla circuit with correction attached
    residual: float | None           # max-norm of C.U1 - e^{i theta} V


def synthesize_correction(
    ancilla_circuit: Circuit,
    target,
    data_game: SynthGame,
    net: PolicyValueNet | None,
    config: AgentConfig,
    max_steps: int = 40,
    retries: int = 10,
    seed: int = 0,
    tol: float = linalg.DEFAULT_ATOL,
) -> CorrectionReport:
    """Synthesize the unitary applied when the ancilla is measured |1>.

    The correction C must satisfy C . U1 = target up to a phase, where U1
    is the (normalized) unitary the circuit applies on the |1> branch; C
    is therefore synthesized against target . U1^dagger on the data-qubit
    architecture.  A zero-weight |1> branch needs no correction.
    """
    if not ancilla_circuit.has_ancilla:
        raise ValueError("circuit has no ancilla; nothing to correct")
    target = linalg.as_operator(target)
    full = circuit_mod.unitary(ancilla_circuit)
    block1 = linalg.project_ancilla(full, 1, tol)
    if block1.weight <= tol:
        return CorrectionReport(
            needed=False, report=None, circuit=ancilla_circuit, residual=None
        )
    if not linalg.is_proportional_unitary(block1, tol):
        raise NoCorrectionError(
            "outcome-1 block is not proportional to a unitary; "
            "no correction unitary exists"
        )
    u1 = block1.normalized()
    correction_target = target @ u1.conj().T
    report = synthesize(
        data_game, net, config, correction_target, max_steps, retries=retries, seed=seed
    )
    if not report.success:
        return CorrectionReport(needed=True, report=report, circuit=None, residual=None)
    c = circuit_mod.unitary(report.circuit)
    residual = linalg.phase_distance(c @ u1, target)
    combined = circuit_mod.with_correction(ancilla_circuit, report.circuit.ops)
    return CorrectionReport(needed=True, report=report, circuit=combined, residual=residual)


# ---------------------------------------------------------------------------
# Peephole simplification
# ---------------------------------------------------------------------------

def _embedded(ops, n_qubits):
    return [linalg.embed(gate_spec(name).matrix, qs, n_qubits) for name, qs in ops]


def _commutes(a, b, tol=1e-9):
    return bool(np.abs(a @ b - b @ a).max() <= tol)


def _drop_identity_prefix(ops, mats) -> bool:
    """Remove the longest prefix (up to the window) that multiplies to a
    global phase times the identity."""
    dim = mats[0].shape[0] if mats else 0
    best = 0
    prod = np.eye(dim, dtype=np.complex128) if mats else None
    for k in range(1, min(PREFIX_WINDOW, len(ops)) + 1):
        prod = mats[k - 1] @ prod
        if linalg.proportional_to_identity(prod, 1e-9):
            best = k
    if best:
        del ops[:best]
        del mats[:best]
        return True
    return False


def _cancel_pair(ops, mats) -> bool:
    """Remove a pair whose product is a phase times identity and whose
    separating gates all commute with the later member."""
    n = len(ops)
    for i in range(n):
        for j in range(i + 1, n):
            if not linalg.proportional_to_identity(mats[j] @ mats[i], 1e-9):
                continue
            if all(_commutes(mats[k], mats[j]) for k in range(i + 1, j)):
                del ops[j], mats[j]
                del ops[i], mats[i]
                return True
    return False


def _merge_t_pairs(ops, mats, gate_names, n_qubits) -> bool:
    """Rewrite two same-qubit T (or Tdg) gates separated only by commuting
    gates into a single S (or Sdg), when available in the gate set."""
    for double, single in (("T", "S"), ("Tdg", "Sdg")):
        if single not in gate_names:
            continue
        for i in range(len(ops)):
            if ops[i][0] != double:
                continue
            for j in range(i + 1, len(ops)):
                if ops[j] == ops[i] and all(
                    _commutes(mats[k], mats[j]) for k in range(i + 1, j)
                ):
                    qubits = ops[i][1]
                    del ops[j], mats[j]
                    ops[i] = (single, qubits)
                    mats[i] = linalg.embed(gate_spec(single).matrix, qubits, n_qubits)
                    return True
    return False


def simplify(circ: Circuit) -> Circuit:
    """Iterate identity-prefix removal, pair cancellation, and T.T -> S
    merging to a fixpoint.  Never increases gate count or T-count; the
    result is fidelity-equivalent to the input (global phase only)."""
    ops = list(circ.ops)
    mats = _embedded(ops, circ.n_qubits)
    names = circ.gate_names or frozenset(name for name, _ in circ.ops)
    changed = True
    while changed and ops:
        changed = _drop_identity_prefix(ops, mats)
        if not changed:
            changed = _cancel_pair(ops, mats)
        if not changed:
            changed = _merge_t_pairs(ops, mats, names, circ.n_qubits)
    return Circuit(
        ops=tuple(ops),
        n_data=circ.n_data,
        has_ancilla=circ.has_ancilla,
        gate_names=circ.gate_names,
        correction=circ.correction,
    )
