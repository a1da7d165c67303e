"""Scratch: measure MCTS floor for acceptance criteria 2 and 3."""
import sys
import time

import numpy as np

sys.path.insert(0, "src")
from qsynth.env import SynthGame
from qsynth.gates import all_to_all, build_action_table
from qsynth.mcts import run_search
from qsynth.targets import named_target, sample_random_circuit, circuit_target
from qsynth import oracles


def sample_action(policy, t, rng):
    if t == 0:
        return int(policy.argmax())
    w = policy ** (1.0 / t)
    w = w / w.sum()
    return int(rng.choice(len(policy), p=w))


def attempt(game, target, max_steps, budget, temperature, rng, reuse=True):
    state = game.reset(target, max_steps)
    node = None
    while not state.done:
        res, root = run_search(game, state, budget, rng, reuse=node if reuse else None)
        if res.winning_line:
            for a in res.winning_line:
                state, _ = game.step(state, a)
            break
        a = sample_action(res.policy, temperature, rng)
        node = root.children.get(a)
        state, _ = game.step(state, a)
    return state.won, len(state.history)


def protocol(game, target, max_steps, budget, retries, seed, reuse=True):
    for k in range(retries + 1):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
        t = 0.0 if k == 0 else 1.0
        won, depth = attempt(game, target, max_steps, budget, t, rng, reuse)
        if won:
            return k + 1, depth
    return None, None


def criterion2(reuse):
    table = build_action_table(["H", "S", "Sdg", "T", "Tdg", "CNOT"], all_to_all(2))
    game = SynthGame(table)
    cs = named_target("CS")
    t0 = time.time()
    results = []
    for seed in range(10):
        attempts, depth = protocol(game, cs, 5, 400, 10, seed, reuse)
        results.append((attempts, depth))
    print(f"criterion2 reuse={reuse}: {results} ({time.time()-t0:.1f}s)")


def criterion3(reuse, n=30):
    table = build_action_table(["H", "S", "T", "CNOT"], all_to_all(2))
    game = SynthGame(table)
    rng = np.random.default_rng(1234)
    t0 = time.time()
    ok = 0
    att_hist = []
    for i in range(n):
        circ = sample_random_circuit(4, table, rng)
        target = circuit_target(circ)
        attempts, depth = protocol(game, target, 4, 400, 10, 50_000 + i, reuse)
        if attempts is not None:
            ok += 1
            att_hist.append(attempts)
    print(f"criterion3 reuse={reuse}: {ok}/{n} solved, attempts={att_hist} ({time.time()-t0:.1f}s)")


if __name__ == "__main__":
    which = sys.argv[1] if len(sys.argv) > 1 else "all"
    if which in ("all", "count"):
        table = build_action_table(["H", "S", "Sdg", "T", "Tdg", "CNOT"], all_to_all(2))
        n5 = oracles.enumerate_min_depth(named_target("CS"), table, 5, count_at_depth=5)
        print("CS depth-5 solutions in 12-action table:", n5)
    if which in ("all", "c2"):
        criterion2(reuse=False)
        criterion2(reuse=True)
    if which in ("all", "c3"):
        criterion3(reuse=False)
        criterion3(reuse=True)
