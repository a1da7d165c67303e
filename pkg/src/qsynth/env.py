"""The synthesis game.

The environment state is the single matrix M_t = U_t · V_full†, where
U_t is the unitary of the circuit built so far and V_full is the target
(padded with an identity on the ancilla wire when one is present).
Appending a gate is one matrix multiplication: M_{t+1} = A · M_t.  The
game is won when M_t is the identity up to a global phase - or, with an
ancilla, when the outcome-0 projected block of M_t is, after weight
normalization.

States are immutable values; :class:`SynthGame` holds the fixed rules
(action table, success threshold) and is safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gates import ActionTable, legal_mask
from .linalg import SUCCESS_EPS, as_operator, is_unitary

# Outcome-0 weights below this are treated as "the ancilla never reads 0".
MIN_BLOCK_WEIGHT = 1e-9


class IllegalActionError(ValueError):
    """An action was masked at this state; selecting it is an agent bug."""


class GameOverError(RuntimeError):
    """step() was called on a finished game."""


@dataclass(frozen=True, slots=True)
class GameState:
    """Immutable snapshot of one synthesis game."""

    m: np.ndarray
    step: int
    max_steps: int
    history: tuple[int, ...]
    done: bool
    won: bool


class SynthGame:
    """Game rules for one architecture + gate set.

    ``eps`` is the binary-fidelity threshold: the game is won when the
    (projected, normalized) state matrix has fidelity >= 1 - eps with the
    identity.
    """

    def __init__(self, table: ActionTable, eps: float = SUCCESS_EPS):
        self.table = table
        self.eps = eps

    @property
    def n_actions(self) -> int:
        return self.table.n_actions

    @property
    def dim(self) -> int:
        return self.table.dim

    # -- success predicate -------------------------------------------------

    def _success(self, m: np.ndarray) -> bool:
        if self.table.arch.has_ancilla:
            half = m.shape[0] // 2
            block = m[0::2, 0::2]
            weight = np.vdot(block, block).real / half
            if weight <= MIN_BLOCK_WEIGHT:
                return False
            return abs(np.trace(block)) / (np.sqrt(weight) * half) >= 1.0 - self.eps
        return abs(np.trace(m)) / m.shape[0] >= 1.0 - self.eps

    # -- spec operations ---------------------------------------------------

    def reset(self, target, max_steps: int) -> GameState:
        """Start a game against ``target`` (an operator on the data qubits)."""
        v = as_operator(target)
        if max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not is_unitary(v):
            raise ValueError("target is not unitary")
        n_data = self.table.arch.n_data
        if v.shape[0] != (1 << n_data):
            raise ValueError(
                f"target dim {v.shape[0]} does not match {n_data} data qubits"
            )
        if self.table.arch.has_ancilla:
            v = np.kron(v, np.eye(2, dtype=np.complex128))
        m = np.ascontiguousarray(v.conj().T)
        m.setflags(write=False)
        won = self._success(m)
        return GameState(m=m, step=0, max_steps=max_steps, history=(), done=won, won=won)

    def step(self, state: GameState, action: int) -> tuple[GameState, float]:
        """Apply an action; returns the new state and the binary reward."""
        if state.done:
            raise GameOverError("game is already over")
        action = int(action)
        if not legal_mask(state.history, self.table)[action]:
            raise IllegalActionError(
                f"action {self.table.label(action)} is masked at step {state.step}"
            )
        return self.apply(state, action)

    def apply(self, state: GameState, action: int) -> tuple[GameState, float]:
        """step() without the legality re-check; the caller guarantees it."""
        m = self.table.embedded[action] @ state.m
        m.setflags(write=False)
        step = state.step + 1
        won = self._success(m)
        done = won or step >= state.max_steps
        new = GameState(
            m=m,
            step=step,
            max_steps=state.max_steps,
            history=state.history + (action,),
            done=done,
            won=won,
        )
        return new, (1.0 if won else 0.0)

    def observe(self, state: GameState) -> np.ndarray:
        """Two real planes (real part, imaginary part) of the state matrix."""
        return np.stack([state.m.real, state.m.imag])

    def legal(self, state: GameState) -> np.ndarray:
        return legal_mask(state.history, self.table)

    # -- hot-path helpers (no GameState construction) ----------------------

    def rollout_step(self, m: np.ndarray, action: int) -> tuple[np.ndarray, bool]:
        """Unchecked transition used inside search rollouts."""
        m2 = self.table.embedded[action] @ m
        return m2, self._success(m2)
