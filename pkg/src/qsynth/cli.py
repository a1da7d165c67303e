"""Command-line surface: train, synth, bench, verify.

Configuration is a JSON document (see ``RunConfig``); invalid files are
rejected with line-precise diagnostics.  All commands honor ``--seed``
and are reproducible run to run.  ``QSYNTH_CHECKPOINT_DIR`` provides the
default directory against which relative checkpoint paths are resolved.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import circuit as circuit_mod
from . import linalg
from .alphazero import AgentConfig, training_run
from .env import SynthGame
from .gates import Architecture, build_action_table
from .network import NetConfig, PolicyValueNet, load_checkpoint
from .synth import synthesize, synthesize_correction
from .targets import (
    CurriculumState,
    named_target,
    sample_training_target,
    target_names,
)

CHECKPOINT_DIR_ENV = "QSYNTH_CHECKPOINT_DIR"
BENCH_CSV_SCHEMA = "depth,n,successes,mean_found_depth,mean_seconds"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Everything a training run needs; round-trips losslessly via JSON."""

    architecture: dict
    gates: list
    agent: dict = field(default_factory=dict)
    network: dict = field(default_factory=dict)
    curriculum: dict = field(default_factory=dict)
    seed: int = 0
    run_dir: str = "runs/default"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_json(text: str) -> "RunConfig":
        doc = json.loads(text)
        known = {f for f in RunConfig.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        missing = {"architecture", "gates"} - set(doc)
        if missing:
            raise ValueError(f"missing configuration keys: {sorted(missing)}")
        return RunConfig(**doc)


class ConfigError(ValueError):
    pass


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    try:
        return RunConfig.from_json(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}:{err.lineno}:{err.colno}: {err.msg}") from err
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{path}: {err}") from err


def architecture_from_dict(doc: dict) -> Architecture:
    conn = doc.get("connectivity", "all")
    sites = doc.get("single_qubit_sites", "all")
    return Architecture(
        n_data=int(doc["n_data"]),
        has_ancilla=bool(doc.get("ancilla", False)),
        connectivity=None if conn == "all" else tuple(tuple(p) for p in conn),
        single_qubit_sites=None if sites == "all" else tuple(sites),
    )


def architecture_to_dict(arch: Architecture) -> dict:
    return {
        "n_data": arch.n_data,
        "ancilla": arch.has_ancilla,
        "connectivity": "all" if arch.connectivity is None else [list(p) for p in arch.connectivity],
        "single_qubit_sites": "all"
        if arch.single_qubit_sites is None
        else list(arch.single_qubit_sites),
    }


def game_from_config(cfg: RunConfig) -> SynthGame:
    arch = architecture_from_dict(cfg.architecture)
    return SynthGame(build_action_table(cfg.gates, arch))


def resolve_checkpoint(path_str: str) -> Path:
    path = Path(path_str)
    base = os.environ.get(CHECKPOINT_DIR_ENV)
    if not path.is_absolute() and base and not path.exists():
        candidate = Path(base) / path
        if candidate.exists():
            return candidate
    return path


def load_agent(checkpoint_path) -> tuple[SynthGame, PolicyValueNet, AgentConfig, dict]:
    """Rebuild (game, net, agent config) from a training checkpoint."""
    net, _, extra = load_checkpoint(resolve_checkpoint(checkpoint_path))
    if "architecture" not in extra or "gates" not in extra:
        raise ConfigError(
            f"{checkpoint_path}: checkpoint carries no architecture metadata"
        )
    arch = architecture_from_dict(extra["architecture"])
    game = SynthGame(build_action_table(extra["gates"], arch))
    agent = AgentConfig(**{
        k: (tuple(tuple(b) for b in v) if k == "temperature_schedule" else v)
        for k, v in extra.get("agent", {}).items()
    })
    return game, net, agent, extra


# ---------------------------------------------------------------------------
# Matrix file format: one row per line, entries like 0.5-0.5i
# ---------------------------------------------------------------------------

def format_matrix(m: np.ndarray) -> str:
    rows = []
    for row in np.asarray(m, dtype=np.complex128):
        rows.append(" ".join(f"{z.real:.17g}{z.imag:+.17g}i" for z in row))
    return "\n".join(rows) + "\n"


def parse_matrix(text: str) -> np.ndarray:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#")[0].strip()
        if not line:
            continue
        entries = []
        for tok in line.split():
            try:
                entries.append(complex(tok.replace("i", "j")))
            except ValueError as err:
                raise ValueError(f"line {lineno}: bad complex entry {tok!r}") from err
        rows.append(entries)
    if not rows:
        raise ValueError("empty matrix file")
    n = len(rows)
    if any(len(r) != n for r in rows):
        raise ValueError(f"matrix is not square: {n} rows, row lengths {[len(r) for r in rows]}")
    return np.array(rows, dtype=np.complex128)


def load_target(spec: str) -> np.ndarray:
    """A named unitary, or a matrix file path."""
    try:
        return named_target(spec)
    except ValueError:
        pass
    path = Path(spec)
    if not path.exists():
        raise ConfigError(
            f"target {spec!r} is neither a named unitary ({', '.join(target_names())}) "
            f"nor an existing file"
        )
    target = parse_matrix(path.read_text())
    if not linalg.is_unitary(target):
        raise ConfigError(f"{spec}: matrix is not unitary within 1e-9")
    return target


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(args.config)
    arch = architecture_from_dict(cfg.architecture)
    table = build_action_table(cfg.gates, arch)
    game = SynthGame(table)
    agent = AgentConfig(**{
        k: (tuple(tuple(b) for b in v) if k == "temperature_schedule" else v)
        for k, v in cfg.agent.items()
    })
    net_cfg = NetConfig(dim=table.dim, n_actions=table.n_actions, **cfg.network)
    net = PolicyValueNet(net_cfg, rng=np.random.default_rng(cfg.seed))
    cur = cfg.curriculum
    curriculum = CurriculumState(
        mu=float(cur.get("mu_start", 5)),
        sigma=float(cur.get("sigma", 5.0)),
        d_min=int(cur.get("d_min", 5)),
        d_max=int(cur.get("d_max", 40)),
        mu_max=float(cur.get("mu_end", 30)),
        n_games_per_level=agent.games_per_epoch,
        epochs_per_depth=agent.epochs_per_depth,
    )
    run_meta = {
        "architecture": architecture_to_dict(arch),
        "gates": list(cfg.gates),
        "agent": cfg.agent,
        "network": cfg.network,
    }
    run = training_run(
        game,
        net,
        agent,
        curriculum,
        cfg.run_dir,
        seed=cfg.seed,
        mu_end=float(cur.get("mu_end", curriculum.mu_max)),
        resume=not args.fresh,
        run_meta=run_meta,
    )
    print(f"training complete: {len(run.checkpoints)} checkpoints in {cfg.run_dir}")
    print(f"metrics: {run.metrics_path}")
    return 0


def _agent_for_synth(args) -> tuple[SynthGame, PolicyValueNet | None, AgentConfig]:
    if args.checkpoint:
        game, net, agent, _ = load_agent(args.checkpoint)
        return game, net, agent
    if not args.config:
        raise ConfigError("need --checkpoint or (--config with --mcts-only)")
    cfg = load_config(args.config)
    return game_from_config(cfg), None, AgentConfig(**cfg.agent)


def cmd_synth(args) -> int:
    game, net, agent = _agent_for_synth(args)
    if args.mcts_only:
        net = None
    target = load_target(args.target)
    n_data = game.table.arch.n_data
    if target.shape[0] != (1 << n_data):
        raise ConfigError(
            f"target dimension {target.shape[0]} does not match the agent's "
            f"{n_data} data qubits"
        )
    budget = args.budget or agent.n_mcts_eval
    report = synthesize(
        game,
        net,
        agent,
        target,
        max_steps=args.max_steps,
        retries=args.retries,
        retry_temperature=args.temp,
        seed=args.seed,
        budget=budget,
    )
    print(f"synthesis: {report}")
    if not report.success:
        return 1
    circ = report.circuit
    if args.correction and game.table.arch.has_ancilla:
        data_arch = Architecture(n_data=n_data)
        data_gates = args.correction_gates.split(",") if args.correction_gates else list(
            game.table.gate_names
        )
        data_game = SynthGame(build_action_table(sorted(data_gates), data_arch))
        correction = synthesize_correction(
            circ, target, data_game, None, agent, max_steps=args.max_steps,
            retries=args.retries, seed=args.seed + 1,
        )
        if correction.needed and (correction.report is None or not correction.report.success):
            print("correction synthesis failed", file=sys.stderr)
            return 1
        circ = correction.circuit
        if correction.needed:
            print(
                f"correction: {correction.report.circuit.depth} gates, "
                f"residual {correction.residual:.2e}"
            )
        else:
            print("correction: not needed (outcome-1 branch never occurs)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "circuit.json").write_text(circuit_mod.to_json(circ))
    (out / "circuit.qasm").write_text(circuit_mod.to_qasm(circ))
    labels = " ".join(n + "".join(map(str, q)) for n, q in circ.ops)
    print(f"circuit: {labels}")
    print(f"wrote {out / 'circuit.json'} and {out / 'circuit.qasm'}")
    return 0


def parse_depth_range(text: str) -> list[int]:
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(d) for d in text.split(",")]


def cmd_bench(args) -> int:
    if args.checkpoint:
        game, net, agent, _ = load_agent(args.checkpoint)
    else:
        if not args.config:
            raise ConfigError("need --checkpoint or --config")
        cfg = load_config(args.config)
        game, net, agent = game_from_config(cfg), None, AgentConfig(**cfg.agent)
    if args.mcts_only:
        net = None
    budget = args.budget or agent.n_mcts_eval
    depths = parse_depth_range(args.depths)
    lines = [f"# qsynth bench v1 budget={budget} n={args.n} seed={args.seed}", BENCH_CSV_SCHEMA]
    for d in depths:
        target_rng = np.random.default_rng(np.random.SeedSequence([args.seed, d]))
        successes = 0
        found_depths = []
        seconds = []
        for i in range(args.n):
            _, target = sample_training_target(d, game.table, target_rng)
            t0 = time.perf_counter()
            report = synthesize(
                game, net, agent, target, max_steps=d, retries=args.retries,
                seed=args.seed * 1_000_003 + d * 1009 + i, budget=budget,
            )
            seconds.append(time.perf_counter() - t0)
            if report.success:
                successes += 1
                found_depths.append(report.depth)
        mean_depth = f"{np.mean(found_depths):.4f}" if found_depths else ""
        mean_secs = f"{np.mean(seconds):.4f}" if args.timing else ""
        lines.append(f"{d},{args.n},{successes},{mean_depth},{mean_secs}")
        print(f"depth {d}: {successes}/{args.n} solved", file=sys.stderr)
    text = "\n".join(lines) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}", file=sys.stderr)
    return 0


def _branch_fidelities(circ, target, eps) -> list[tuple[str, float]]:
    """Fidelity of every measurement branch of a circuit against a target."""
    u = circuit_mod.unitary(circ)
    if not circ.has_ancilla:
        return [("unitary", linalg.fidelity(u, target))]
    out = []
    block0 = linalg.project_ancilla(u, 0)
    if block0.weight <= 1e-9 or not linalg.is_proportional_unitary(block0, np.sqrt(2 * eps)):
        out.append(("outcome-0", 0.0))
    else:
        out.append(("outcome-0", linalg.fidelity(block0.normalized(), target)))
    block1 = linalg.project_ancilla(u, 1)
    if circ.correction is not None:
        if block1.weight <= 1e-9:
            out.append(("outcome-1", 1.0))  # branch never occurs
        elif not linalg.is_proportional_unitary(block1, np.sqrt(2 * eps)):
            out.append(("outcome-1", 0.0))
        else:
            c = circuit_mod.ops_unitary(circ.correction, circ.n_data)
            out.append(("outcome-1", linalg.fidelity(c @ block1.normalized(), target)))
    elif block1.weight > 1e-9:
        out.append(("outcome-1 (uncorrected, weight %.3f)" % block1.weight, float("nan")))
    return out


def cmd_verify(args) -> int:
    path = Path(args.circuit)
    if not path.exists():
        print(f"error: {path}: no such circuit file", file=sys.stderr)
        return 2
    text = path.read_text()
    try:
        if text.lstrip().startswith("{"):
            circ = circuit_mod.from_json(text)
        else:
            circ = circuit_mod.from_qasm(text)
    except (ValueError, KeyError) as err:
        print(f"error: {path}: {err}", file=sys.stderr)
        return 2
    target = load_target(args.target)
    if target.shape[0] != (1 << circ.n_data):
        print(
            f"error: target dim {target.shape[0]} vs circuit data dim {1 << circ.n_data}",
            file=sys.stderr,
        )
        return 2
    branches = _branch_fidelities(circ, target, args.eps)
    ok = True
    for name, fid in branches:
        if np.isnan(fid):
            print(f"{name}: present but unverifiable (no correction recorded)")
            ok = False
            continue
        passed = fid >= 1 - args.eps
        ok = ok and passed
        print(f"{name}: fidelity {fid:.10f} [{'PASS' if passed else 'FAIL'}]")
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qsynth", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run curriculum self-play training")
    t.add_argument("--config", required=True, help="JSON run configuration")
    t.add_argument("--fresh", action="store_true", help="ignore existing checkpoints")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="synthesize a target unitary")
    s.add_argument("--checkpoint", help="trained agent checkpoint (.npz)")
    s.add_argument("--config", help="config for --mcts-only runs")
    s.add_argument("--mcts-only", action="store_true", help="ignore the network")
    s.add_argument("--target", required=True, help="named unitary or matrix file")
    s.add_argument("--max-steps", type=int, default=40)
    s.add_argument("--retries", type=int, default=10)
    s.add_argument("--temp", type=float, default=1.0, help="retry temperature")
    s.add_argument("--budget", type=int, default=None, help="simulations per action")
    s.add_argument("--correction", action="store_true",
                   help="synthesize the |1>-branch correction (ancilla agents)")
    s.add_argument("--correction-gates", default=None, help="comma list, e.g. H,S,T,CNOT")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="synth-out")
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("bench", help="random-circuit benchmark, CSV output")
    b.add_argument("--checkpoint")
    b.add_argument("--config")
    b.add_argument("--mcts-only", action="store_true")
    b.add_argument("--depths", required=True, help="e.g. 1:8 or 2,4,6")
    b.add_argument("--n", type=int, default=100, help="targets per depth")
    b.add_argument("--retries", type=int, default=10)
    b.add_argument("--budget", type=int, default=None)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--timing", action="store_true",
                   help="fill mean_seconds (off by default so output is reproducible)")
    b.add_argument("--out", default="-", help="CSV path or - for stdout")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="simulate a circuit file against a target")
    v.add_argument("--circuit", required=True, help="native JSON or OpenQASM file")
    v.add_argument("--target", required=True, help="named unitary or matrix file")
    v.add_argument("--eps", type=float, default=linalg.SUCCESS_EPS)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
