"""Target generation: random circuits, clean-ancilla targets, curriculum,
and the named benchmark unitaries.

Random target circuits use the same action mask as the game itself, so a
depth-d target is guaranteed to be reachable in at most d steps.  For
clean-ancilla architectures, sampled circuits are rejection-filtered
until the ancilla-postselected block is proportional to a unitary; the
normalized block is the data-qubit target.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import circuit as circuit_mod
from . import linalg
from .circuit import Circuit, from_actions
from .gates import ActionTable, legal_mask


class SamplingError(RuntimeError):
    """Rejection sampling exhausted its budget."""


def sample_action_sequence(d: int, table: ActionTable, rng: np.random.Generator) -> list[int]:
    """d actions, each uniform over the legal set given the prefix."""
    if d < 1:
        raise ValueError("depth must be >= 1")
    history: list[int] = []
    for _ in range(d):
        mask = legal_mask(history, table)
        choices = np.flatnonzero(mask)
        if choices.size == 0:
            raise SamplingError("no legal action available (degenerate table)")
        history.append(int(choices[rng.integers(choices.size)]))
    return history


def sample_random_circuit(d: int, table: ActionTable, rng: np.random.Generator) -> Circuit:
    """A random redundancy-free circuit of exactly ``d`` gates."""
    return from_actions(table, sample_action_sequence(d, table, rng))


def circuit_target(circ: Circuit) -> np.ndarray:
    """Full-register unitary realized by a sampled circuit."""
    return circuit_mod.unitary(circ)


def sample_clean_ancilla_target(
    d: int,
    table: ActionTable,
    rng: np.random.Generator,
    max_tries: int = 10_000,
    tol: float = linalg.DEFAULT_ATOL,
) -> tuple[Circuit, np.ndarray]:
    """Sample until the outcome-0 block is proportional to a unitary.

    Returns the accepted circuit and its normalized block, which is the
    data-qubit target the circuit realizes with the ancilla post-selected
    to |0>.
    """
    if not table.arch.has_ancilla:
        raise ValueError("table was not built for an ancilla architecture")
    for _ in range(max_tries):
        actions = sample_action_sequence(d, table, rng)
        u = np.eye(table.dim, dtype=np.complex128)
        for a in actions:
            u = table.embedded[a] @ u
        block = linalg.project_ancilla(u, 0, tol)
        if linalg.is_proportional_unitary(block, tol):
            return from_actions(table, actions), block.normalized()
    raise SamplingError(f"no unitary-producing circuit found in {max_tries} tries")


def sample_training_target(
    d: int, table: ActionTable, rng: np.random.Generator
) -> tuple[Circuit, np.ndarray]:
    """(witness circuit, target on data qubits) for either architecture kind."""
    if table.arch.has_ancilla:
        return sample_clean_ancilla_target(d, table, rng)
    circ = sample_random_circuit(d, table, rng)
    return circ, circuit_target(circ)


# ---------------------------------------------------------------------------
# Curriculum
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CurriculumState:
    """Position in the depth curriculum.

    Depths are drawn from round(Normal(mu, sigma)) clamped to
    [max(1, d_min), d_max]; mu advances by one after
    epochs_per_depth * n_games_per_level games at the current level.
    """

    mu: float
    sigma: float = 5.0
    games_at_level: int = 0
    n_games_per_level: int = 2048
    epochs_per_depth: int = 5
    d_min: int = 5
    d_max: int = 40
    mu_max: float = 30.0

    @property
    def level_games(self) -> int:
        return self.epochs_per_depth * self.n_games_per_level


def curriculum_next(
    cs: CurriculumState, rng: np.random.Generator
) -> tuple[int, CurriculumState]:
    """Draw the next game's target depth (= its step budget) and advance."""
    lo = max(1, cs.d_min)
    d = int(np.clip(round(rng.normal(cs.mu, cs.sigma)), lo, cs.d_max))
    games = cs.games_at_level + 1
    if games >= cs.level_games and cs.mu < cs.mu_max:
        return d, replace(cs, mu=cs.mu + 1, games_at_level=0)
    return d, replace(cs, games_at_level=games)


# ---------------------------------------------------------------------------
# Named benchmark unitaries
# ---------------------------------------------------------------------------

def _controlled(u: np.ndarray) -> np.ndarray:
    """Control on the first (most significant) qubit."""
    d = u.shape[0]
    out = np.eye(2 * d, dtype=np.complex128)
    out[d:, d:] = u
    return out


def _named() -> dict[str, np.ndarray]:
    h = np.array([[1, 1], [1, -1]], dtype=np.complex128) / np.sqrt(2)
    s = np.diag([1, 1j]).astype(np.complex128)
    t = np.diag([1, np.exp(1j * np.pi / 4)]).astype(np.complex128)
    x = np.array([[0, 1], [1, 0]], dtype=np.complex128)
    v = 0.5 * np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]], dtype=np.complex128)  # sqrt(X)
    iswap = np.array(
        [[1, 0, 0, 0], [0, 0, 1j, 0], [0, 1j, 0, 0], [0, 0, 0, 1]], dtype=np.complex128
    )
    swap = np.array(
        [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=np.complex128
    )
    ccz = np.eye(8, dtype=np.complex128)
    ccz[7, 7] = -1
    return {
        "CS": _controlled(s),
        "CT": _controlled(t),
        "CH": _controlled(h),
        "CV": _controlled(v),
        "iSWAP": iswap,
        "Toffoli": _controlled(_controlled(x)),
        "CCZ": ccz,
        "Fredkin": _controlled(swap),
    }


_NAMED = _named()
_NAMED_ALIASES = {"CCX": "Toffoli", "CSWAP": "Fredkin", "ISWAP": "iSWAP"}
for _m in _NAMED.values():
    _m.setflags(write=False)


def named_target(name: str) -> np.ndarray:
    """Standard matrix of a named benchmark unitary (control = first qubit)."""
    canon = _NAMED_ALIASES.get(name.upper() if name.upper() in _NAMED_ALIASES else name, name)
    if canon not in _NAMED:
        known = sorted(_NAMED) + sorted(_NAMED_ALIASES)
        raise ValueError(f"unknown target {name!r}; known: {known}")
    return _NAMED[canon]


def target_names() -> tuple[str, ...]:
    return tuple(sorted(_NAMED))
