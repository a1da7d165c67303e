"""Circuit values: ordered gate placements plus architecture metadata.

A circuit is a tuple of ``(gate_name, qubit_indices)`` placements applied
in order (first entry acts first), together with enough metadata to
re-simulate it: total qubit count, data qubit count, and whether the
last qubit is a post-selected clean ancilla.  Dynamic circuits carry an
optional correction applied to the data qubits when the ancilla is
measured |1>.

Serialization: a JSON "native" format that round-trips all metadata, and
OpenQASM 2 text with measurement + classically controlled correction for
dynamic circuits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import linalg
from .gates import gate_spec

FORMAT_NAME = "qsynth-circuit-v1"

_QASM_NAMES = {
    "H": "h", "S": "s", "Sdg": "sdg", "T": "t", "Tdg": "tdg",
    "X": "x", "Z": "z", "CNOT": "cx",
}
_QASM_INVERSE = {v: k for k, v in _QASM_NAMES.items()}


@dataclass(frozen=True)
class Circuit:
    """An ordered gate sequence on a fixed register."""

    ops: tuple[tuple[str, tuple[int, ...]], ...]
    n_data: int
    has_ancilla: bool = False
    gate_names: frozenset[str] = field(default_factory=frozenset)
    correction: tuple[tuple[str, tuple[int, ...]], ...] | None = None

    @property
    def n_qubits(self) -> int:
        return self.n_data + (1 if self.has_ancilla else 0)

    @property
    def depth(self) -> int:
        return len(self.ops)

    @property
    def t_count(self) -> int:
        n = sum(1 for name, _ in self.ops if name in ("T", "Tdg"))
        if self.correction:
            n += sum(1 for name, _ in self.correction if name in ("T", "Tdg"))
        return n

    def __str__(self) -> str:
        body = " ".join(name + "".join(map(str, qs)) for name, qs in self.ops) or "(empty)"
        if self.correction is not None:
            body += " | if anc=1: " + " ".join(
                name + "".join(map(str, qs)) for name, qs in self.correction
            )
        return body


def from_actions(table, actions) -> Circuit:
    """Build a circuit from action indices into an :class:`ActionTable`."""
    ops = []
    for a in actions:
        spec, qubits = table.actions[int(a)]
        ops.append((spec.name, tuple(qubits)))
    return Circuit(
        ops=tuple(ops),
        n_data=table.arch.n_data,
        has_ancilla=table.arch.has_ancilla,
        gate_names=table.gate_names,
    )


def ops_unitary(ops, n_qubits: int) -> np.ndarray:
    """Full product of a placement list: last gate leftmost."""
    u = np.eye(1 << n_qubits, dtype=np.complex128)
    for name, qubits in ops:
        u = linalg.embed(gate_spec(name).matrix, qubits, n_qubits) @ u
    return u


def unitary(circuit: Circuit) -> np.ndarray:
    """The circuit's full-register unitary (ancilla wire included if any)."""
    return ops_unitary(circuit.ops, circuit.n_qubits)


def data_unitary(circuit: Circuit, outcome: int = 0) -> linalg.ProjectedBlock | np.ndarray:
    """Data-qubit operator realized by the circuit.

    Without an ancilla this is just the full unitary.  With one, returns
    the :class:`~qsynth.linalg.ProjectedBlock` for the given measurement
    outcome (ancilla in |0>).
    """
    u = unitary(circuit)
    if not circuit.has_ancilla:
        return u
    return linalg.project_ancilla(u, outcome)


def to_json(circuit: Circuit) -> str:
    doc = {
        "format": FORMAT_NAME,
        "n_data": circuit.n_data,
        "ancilla": circuit.has_ancilla,
        "gate_names": sorted(circuit.gate_names),
        "gates": [[name, list(qubits)] for name, qubits in circuit.ops],
        "correction": None
        if circuit.correction is None
        else [[name, list(qubits)] for name, qubits in circuit.correction],
    }
    return json.dumps(doc, indent=2) + "\n"


def from_json(text: str) -> Circuit:
    doc = json.loads(text)
    if doc.get("format") != FORMAT_NAME:
        raise ValueError(f"not a {FORMAT_NAME} document")
    corr = doc.get("correction")
    return Circuit(
        ops=tuple((name, tuple(qs)) for name, qs in doc["gates"]),
        n_data=int(doc["n_data"]),
        has_ancilla=bool(doc["ancilla"]),
        gate_names=frozenset(doc.get("gate_names", [])),
        correction=None if corr is None else tuple((name, tuple(qs)) for name, qs in corr),
    )


def to_qasm(circuit: Circuit) -> str:
    """OpenQASM 2 text; dynamic circuits get a measurement and an
    ``if (c==1)``-guarded correction on the data qubits."""
    lines = ['OPENQASM 2.0;', 'include "qelib1.inc";', f"qreg q[{circuit.n_qubits}];"]
    if circuit.has_ancilla:
        lines.append("creg c[1];")
    for name, qubits in circuit.ops:
        args = ", ".join(f"q[{q}]" for q in qubits)
        lines.append(f"{_QASM_NAMES[name]} {args};")
    if circuit.has_ancilla:
        anc = circuit.n_qubits - 1
        lines.append(f"measure q[{anc}] -> c[0];")
        for name, qubits in circuit.correction or ():
            args = ", ".join(f"q[{q}]" for q in qubits)
            lines.append(f"if (c==1) {_QASM_NAMES[name]} {args};")
    return "\n".join(lines) + "\n"


class QasmParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def from_qasm(text: str) -> Circuit:
    """Parse the OpenQASM subset emitted by :func:`to_qasm`."""
    n_qubits = None
    has_creg = False
    measured = False
    ops: list[tuple[str, tuple[int, ...]]] = []
    correction: list[tuple[str, tuple[int, ...]]] = []

    def parse_args(args: str, lineno: int) -> tuple[int, ...]:
        out = []
        for tok in args.split(","):
            tok = tok.strip()
            if not (tok.startswith("q[") and tok.endswith("]")):
                raise QasmParseError(lineno, f"expected qubit reference, got {tok!r}")
            out.append(int(tok[2:-1]))
        return tuple(out)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("//")[0].strip()
        if not line:
            continue
        if not line.endswith(";"):
            raise QasmParseError(lineno, "missing trailing ';'")
        stmt = line[:-1].strip()
        if stmt.startswith(("OPENQASM", "include")):
            continue
        if stmt.startswith("qreg"):
            n_qubits = int(stmt[stmt.index("[") + 1 : stmt.index("]")])
            continue
        if stmt.startswith("creg"):
            has_creg = True
            continue
        if stmt.startswith("measure"):
            measured = True
            continue
        conditional = False
        if stmt.startswith("if"):
            close = stmt.index(")")
            cond = stmt[stmt.index("(") + 1 : close].replace(" ", "")
            if cond != "c==1":
                raise QasmParseError(lineno, f"unsupported condition {cond!r}")
            stmt = stmt[close + 1 :].strip()
            conditional = True
        parts = stmt.split(None, 1)
        if len(parts) != 2:
            raise QasmParseError(lineno, f"cannot parse statement {stmt!r}")
        mnemonic, args = parts
        if mnemonic not in _QASM_INVERSE:
            raise QasmParseError(lineno, f"unsupported gate {mnemonic!r}")
        placement = (_QASM_INVERSE[mnemonic], parse_args(args, lineno))
        if conditional:
            if not measured:
                raise QasmParseError(lineno, "conditional gate before measurement")
            correction.append(placement)
        else:
            if measured:
                raise QasmParseError(lineno, "unconditional gate after measurement")
            ops.append(placement)

    if n_qubits is None:
        raise QasmParseError(0, "no qreg declaration found")
    has_ancilla = measured or has_creg
    names = frozenset(name for name, _ in ops) | frozenset(name for name, _ in correction)
    return Circuit(
        ops=tuple(ops),
        n_data=n_qubits - (1 if has_ancilla else 0),
        has_ancilla=has_ancilla,
        gate_names=names,
        correction=tuple(correction) if correction else None,
    )


def with_correction(circuit: Circuit, correction_ops) -> Circuit:
    return replace(circuit, correction=tuple((name, tuple(qs)) for name, qs in correction_ops))
