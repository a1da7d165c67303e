"""Dense complex linear algebra for small multi-qubit operators.

Operators are plain numpy arrays of shape ``(2**n, 2**n)``, dtype
complex128.  Conventions used throughout the package:

* Qubit 0 is the most significant bit of a basis index; for two qubits
  the basis order is |00>, |01>, |10>, |11| with qubit 1 as the least
  significant bit.
* When an ancilla is present it is always the last qubit (least
  significant bit), prepared in |0> and post-selected at the end.
* Operator comparisons are insensitive to a global phase unless noted.

All dimensions in this package are tiny (at most 16), so everything is
dense and nothing is clever.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Default tolerance for unitarity / identity checks.
DEFAULT_ATOL = 1e-9

# Success threshold of the binary fidelity reward.
SUCCESS_EPS = 1e-3


def as_operator(m) -> np.ndarray:
    """Validate and return ``m`` as a square power-of-two complex matrix."""
    a = np.asarray(m, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"operator must be a square matrix, got shape {a.shape}")
    d = a.shape[0]
    if d < 2 or d & (d - 1):
        raise ValueError(f"operator dimension must be a power of two >= 2, got {d}")
    return a


def n_qubits_of(dim: int) -> int:
    """Number of qubits for a given operator dimension."""
    n = int(dim).bit_length() - 1
    if 1 << n != dim:
        raise ValueError(f"{dim} is not a power of two")
    return n


def is_unitary(m, tol: float = DEFAULT_ATOL) -> bool:
    a = np.asarray(m, dtype=np.complex128)
    d = a.shape[0]
    return bool(np.abs(a @ a.conj().T - np.eye(d)).max() <= tol)


def embed(gate, qubits, n_qubits: int) -> np.ndarray:
    """Embed ``gate`` acting on ``qubits`` into an ``n_qubits`` operator.

    The returned matrix applies ``gate`` to the named qubit positions and
    the identity everywhere else, under the MSB-first index convention.
    ``qubits`` lists the gate's own wire order, e.g. ``(control, target)``
    for CNOT, and may be in any order relative to the register.
    """
    g = as_operator(gate)
    k = n_qubits_of(g.shape[0])
    qubits = tuple(int(q) for q in qubits)
    if len(qubits) != k:
        raise ValueError(f"gate of dim {g.shape[0]} needs {k} qubit indices, got {len(qubits)}")
    if len(set(qubits)) != len(qubits):
        raise ValueError(f"qubit indices must be distinct, got {qubits}")
    if any(q < 0 or q >= n_qubits for q in qubits):
        raise ValueError(f"qubit indices {qubits} out of range for {n_qubits} qubits")

    dim = 1 << n_qubits
    idx = np.arange(dim)
    bit = [(idx >> (n_qubits - 1 - q)) & 1 for q in range(n_qubits)]

    # Sub-index on the gate's qubits (in the gate's wire order) and the
    # joint index of all remaining qubits, which must be preserved.
    sub = np.zeros(dim, dtype=np.intp)
    for q in qubits:
        sub = (sub << 1) | bit[q]
    rest = np.zeros(dim, dtype=np.intp)
    for q in range(n_qubits):
        if q not in qubits:
            rest = (rest << 1) | bit[q]

    out = g[np.ix_(sub, sub)] * (rest[:, None] == rest[None, :])
    return np.ascontiguousarray(out)


def compose(a, b) -> np.ndarray:
    """Matrix product ``a @ b`` (``b`` is applied first to states)."""
    a = as_operator(a)
    b = as_operator(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a @ b


def fidelity(u, v) -> float:
    """Global-phase-invariant overlap |Tr(v† u)| / dim, in [0, 1] for unitary u.

    Normalized so ``fidelity(v, v) == 1``; ``v`` must be unitary.
    """
    u = as_operator(u)
    v = as_operator(v)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    if not is_unitary(v):
        raise ValueError("reference operator is not unitary")
    return float(abs(np.vdot(v, u)) / u.shape[0])


def proportional_to_identity(m, tol: float = DEFAULT_ATOL) -> bool:
    """True iff ``m`` equals e^{i theta} * I within ``tol``."""
    a = np.asarray(m, dtype=np.complex128)
    d = a.shape[0]
    t = np.trace(a) / d
    if abs(abs(t) - 1.0) > tol:
        return False
    return bool(np.abs(a - t * np.eye(d)).max() <= tol)


def phase_distance(a, b) -> float:
    """Max-norm distance between ``a`` and the best phase alignment of ``b``."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    t = np.vdot(b, a)
    phase = t / abs(t) if abs(t) > 0 else 1.0
    return float(np.abs(a - phase * b).max())


@dataclass(frozen=True)
class ProjectedBlock:
    """Data-qubit block of an (n+1)-qubit operator after ancilla post-selection.

    ``block`` is A = (<outcome|_anc ⊗ I) · full · (|0>_anc ⊗ I) and
    ``weight`` is Tr(A†A)/2^n, the probability of the outcome on a
    maximally mixed data register.  The two outcome weights of the same
    parent sum to 1.
    """

    parent_dim: int
    block: np.ndarray
    outcome: int
    weight: float

    def normalized(self) -> np.ndarray:
        """block / sqrt(weight); unitary when the block passes the UU† check."""
        if self.weight <= 0.0:
            raise ValueError("cannot normalize a zero-weight block")
        return self.block / np.sqrt(self.weight)


def project_ancilla(full, outcome: int, tol: float = DEFAULT_ATOL) -> ProjectedBlock:
    """Project the ancilla (last qubit) of a unitary: in |0>, out |outcome>."""
    f = as_operator(full)
    if f.shape[0] < 4:
        raise ValueError("need at least one data qubit and one ancilla")
    if outcome not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {outcome}")
    if not is_unitary(f, tol):
        raise ValueError("input operator is not unitary")
    half = f.shape[0] // 2
    # Ancilla is the least significant bit: row 2i+outcome, column 2j+0.
    block = np.ascontiguousarray(f[outcome::2, 0::2])
    weight = float(np.vdot(block, block).real / half)
    return ProjectedBlock(parent_dim=f.shape[0], block=block, outcome=outcome, weight=weight)


def is_proportional_unitary(block: ProjectedBlock, tol: float = DEFAULT_ATOL) -> bool:
    """True iff the projected block equals sqrt(weight) times a unitary.

    Checks ``A A† / weight == I`` entrywise within ``tol``; blocks with
    weight below ``tol`` fail (the outcome never occurs).
    """
    if block.weight <= tol:
        return False
    a = block.block
    g = a @ a.conj().T / block.weight
    return bool(np.abs(g - np.eye(a.shape[0])).max() <= tol)
