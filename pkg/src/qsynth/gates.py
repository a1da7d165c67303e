"""Gate library, architectures, and the enumerated action set.

An :class:`ActionTable` is the bridge between a gate set × connectivity
specification and the synthesis game: it enumerates every legal gate
placement in a deterministic order, precomputes the full-dimension
embedding of each, and stores pairwise redundancy/commutation tables
used to mask trivial actions.  Tables are built once and never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import DEFAULT_ATOL, embed, proportional_to_identity

_S2 = 1.0 / np.sqrt(2.0)

GATE_MATRICES: dict[str, np.ndarray] = {
    "H": np.array([[_S2, _S2], [_S2, -_S2]], dtype=np.complex128),
    "S": np.array([[1, 0], [0, 1j]], dtype=np.complex128),
    "Sdg": np.array([[1, 0], [0, -1j]], dtype=np.complex128),
    "T": np.array([[1, 0], [0, np.exp(1j * np.pi / 4)]], dtype=np.complex128),
    "Tdg": np.array([[1, 0], [0, np.exp(-1j * np.pi / 4)]], dtype=np.complex128),
    "X": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "Z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
    # Control is the first wire (MSB of the 2-qubit sub-index).
    "CNOT": np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128
    ),
}

_ALIASES = {"S†": "Sdg", "T†": "Tdg", "SDG": "Sdg", "TDG": "Tdg", "CX": "CNOT"}

for _m in GATE_MATRICES.values():
    _m.setflags(write=False)


class InvalidArchitectureError(ValueError):
    """Raised when a gate set × connectivity yields no legal actions."""


@dataclass(frozen=True)
class GateSpec:
    """A named gate: its matrix and the number of qubits it acts on."""

    name: str
    arity: int
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.complex128)
        if m.shape != (2**self.arity,) * 2:
            raise ValueError(f"{self.name}: matrix shape {m.shape} does not match arity {self.arity}")
        if np.abs(m @ m.conj().T - np.eye(m.shape[0])).max() > 1e-12:
            raise ValueError(f"{self.name}: matrix is not unitary within 1e-12")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)


def gate_spec(name: str) -> GateSpec:
    """Look up a gate by name (aliases S†/T†/CX accepted)."""
    canon = _ALIASES.get(name, name)
    if canon not in GATE_MATRICES:
        raise ValueError(f"unknown gate {name!r}; known: {sorted(GATE_MATRICES)}")
    m = GATE_MATRICES[canon]
    return GateSpec(canon, 1 if m.shape[0] == 2 else 2, m)


@dataclass(frozen=True)
class Architecture:
    """Qubit layout: data qubits, optional trailing ancilla, connectivity.

    ``connectivity`` lists allowed (control, target) pairs for two-qubit
    gates; ``None`` means all ordered pairs.  ``single_qubit_sites``
    restricts where one-qubit gates may act; ``None`` means everywhere.
    The ancilla, when present, is the last qubit.
    """

    n_data: int
    has_ancilla: bool = False
    connectivity: tuple[tuple[int, int], ...] | None = None
    single_qubit_sites: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.n_data < 1:
            raise ValueError("need at least one data qubit")
        n = self.n_qubits
        if self.connectivity is not None:
            pairs = tuple((int(c), int(t)) for c, t in self.connectivity)
            for c, t in pairs:
                if c == t:
                    raise ValueError(f"connectivity pair ({c},{t}) must have distinct indices")
                if not (0 <= c < n and 0 <= t < n):
                    raise ValueError(f"connectivity pair ({c},{t}) out of range for {n} qubits")
            object.__setattr__(self, "connectivity", pairs)
        if self.single_qubit_sites is not None:
            sites = tuple(int(q) for q in self.single_qubit_sites)
            if any(q < 0 or q >= n for q in sites):
                raise ValueError(f"single-qubit sites {sites} out of range for {n} qubits")
            object.__setattr__(self, "single_qubit_sites", sites)

    @property
    def n_qubits(self) -> int:
        return self.n_data + (1 if self.has_ancilla else 0)

    @property
    def ancilla(self) -> int | None:
        return self.n_data if self.has_ancilla else None

    def pairs(self) -> tuple[tuple[int, int], ...]:
        if self.connectivity is not None:
            return tuple(sorted(self.connectivity))
        n = self.n_qubits
        return tuple((c, t) for c in range(n) for t in range(n) if c != t)

    def sites(self) -> tuple[int, ...]:
        if self.single_qubit_sites is not None:
            return tuple(sorted(self.single_qubit_sites))
        return tuple(range(self.n_qubits))


def all_to_all(n_data: int) -> Architecture:
    return Architecture(n_data=n_data)


def line(n_data: int) -> Architecture:
    """1D nearest-neighbour layout; CNOT ascending pairs only (i -> i+1)."""
    return Architecture(n_data=n_data, connectivity=tuple((i, i + 1) for i in range(n_data - 1)))


def clean_ancilla(n_data: int) -> Architecture:
    """The restricted clean-ancilla layout: one-qubit gates on the ancilla
    only, CNOT between the ancilla and any data qubit in both orientations."""
    anc = n_data
    conn = tuple((q, anc) for q in range(n_data)) + tuple((anc, q) for q in range(n_data))
    return Architecture(
        n_data=n_data, has_ancilla=True, connectivity=conn, single_qubit_sites=(anc,)
    )


@dataclass(frozen=True)
class ActionTable:
    """Enumerated action set with precomputed embeddings and pair tables.

    ``redundancy[i, j]`` is True iff embedded[i] @ embedded[j] is the
    identity up to a global phase; ``commutation[i, j]`` iff the two
    embedded operators commute.  Both are symmetric.
    """

    arch: Architecture
    gate_specs: tuple[GateSpec, ...]
    actions: tuple[tuple[GateSpec, tuple[int, ...]], ...]
    embedded: np.ndarray = field(repr=False)
    redundancy: np.ndarray = field(repr=False)
    commutation: np.ndarray = field(repr=False)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_qubits(self) -> int:
        return self.arch.n_qubits

    @property
    def dim(self) -> int:
        return 1 << self.arch.n_qubits

    def label(self, action: int) -> str:
        spec, qubits = self.actions[action]
        return spec.name + "".join(str(q) for q in qubits)

    def labels(self) -> tuple[str, ...]:
        return tuple(self.label(a) for a in range(self.n_actions))

    @property
    def gate_names(self) -> frozenset[str]:
        return frozenset(s.name for s in self.gate_specs)


def build_action_table(gates, arch: Architecture, tol: float = DEFAULT_ATOL) -> ActionTable:
    """Enumerate every (gate, placement) allowed by the architecture.

    Order is deterministic: gate-list order, then site index ascending for
    one-qubit gates, then (control, target) ascending for two-qubit gates.
    Embeddings and both pair tables are computed once here.
    """
    specs = tuple(g if isinstance(g, GateSpec) else gate_spec(g) for g in gates)
    if not specs:
        raise InvalidArchitectureError("empty gate set")
    n = arch.n_qubits

    actions: list[tuple[GateSpec, tuple[int, ...]]] = []
    for spec in specs:
        if spec.arity == 1:
            actions.extend((spec, (q,)) for q in arch.sites())
        else:
            actions.extend((spec, pair) for pair in arch.pairs())
    if not actions:
        raise InvalidArchitectureError("architecture admits no actions for this gate set")

    dim = 1 << n
    emb = np.empty((len(actions), dim, dim), dtype=np.complex128)
    for i, (spec, qubits) in enumerate(actions):
        emb[i] = embed(spec.matrix, qubits, n)

    k = len(actions)
    red = np.zeros((k, k), dtype=bool)
    com = np.zeros((k, k), dtype=bool)
    for i in range(k):
        for j in range(i, k):
            prod = emb[i] @ emb[j]
            red[i, j] = red[j, i] = proportional_to_identity(prod, tol)
            com[i, j] = com[j, i] = bool(np.abs(prod - emb[j] @ emb[i]).max() <= tol)

    emb.setflags(write=False)
    red.setflags(write=False)
    com.setflags(write=False)
    return ActionTable(
        arch=arch,
        gate_specs=specs,
        actions=tuple(actions),
        embedded=emb,
        redundancy=red,
        commutation=com,
    )


def legal_mask(history, table: ActionTable) -> np.ndarray:
    """Boolean legality vector over actions given the move history.

    For each candidate, walk the history newest to oldest: a redundancy
    partner makes it illegal; a commuting gate lets the walk continue; the
    first gate that neither commutes nor cancels makes it legal.  An empty
    (or exhausted) history leaves the candidate legal.
    """
    k = table.n_actions
    legal = np.zeros(k, dtype=bool)
    undecided = np.ones(k, dtype=bool)
    for h in reversed(history):
        h = int(h)
        if not 0 <= h < k:
            raise ValueError(f"history action {h} out of range")
        undecided &= ~(table.redundancy[:, h] & undecided)
        stops = undecided & ~table.commutation[:, h]
        legal |= stops
        undecided &= table.commutation[:, h]
        if not undecided.any():
            break
    legal |= undecided
    return legal
