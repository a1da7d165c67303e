"""Monte Carlo Tree Search over the synthesis game.

Runs standalone with uniform random rollouts (UCT selection) or guided
by a policy/value evaluator (PUCT selection, no rollouts).  One tree per
search; trees are never shared and the root game state is not mutated.

Node statistics follow the classic convention: each node stores its own
visit count and cumulative reward, a child's edge statistics are the
child node's, and every node counts itself once at creation, so the
parent term of UCT/PUCT is nonzero from the first iteration and the root
visit count equals iterations + 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import GameState, SynthGame
from .gates import legal_mask

UCT_C = math.sqrt(2.0)
PUCT_C = 1.25


class SearchNode:
    """One game state in the tree."""

    __slots__ = ("state", "visits", "reward_sum", "legal", "priors", "children", "expanded")

    def __init__(self, state: GameState):
        self.state = state
        self.visits = 0
        self.reward_sum = 0.0
        self.legal: np.ndarray | None = None
        self.priors: np.ndarray | None = None
        self.children: dict[int, SearchNode] = {}
        self.expanded = False

    @property
    def terminal(self) -> bool:
        return self.state.done

    @property
    def q(self) -> float:
        return self.reward_sum / self.visits if self.visits else 0.0


@dataclass(frozen=True)
class SearchResult:
    """Visit-count policy, per-action Q values, and the root value estimate.

    ``winning_line`` is the shortest action sequence (root to terminal
    win) discovered by any virtual game during the search, or None.  The
    game is deterministic and single-player, so a winning virtual game is
    itself a valid synthesis; inference-time players follow it directly.
    """

    policy: np.ndarray
    q_values: np.ndarray
    value: float
    winning_line: tuple[int, ...] | None = None


def uct_score(q: float, n_child: int, n_parent: float, c: float = UCT_C) -> float:
    """Q + c * sqrt(ln N / n); unvisited children score +inf."""
    if n_child == 0:
        return math.inf
    return q + c * math.sqrt(math.log(n_parent) / n_child)


def backpropagate(path, reward: float) -> None:
    """Add ``reward`` and one visit to every node on a root-to-leaf path."""
    for node in path:
        node.visits += 1
        node.reward_sum += reward


def _expand(
    node: SearchNode, game: SynthGame, evaluator, root_prior_fn
) -> tuple[float, int | None]:
    """Create the node's children and fill priors when guided.

    Child creation is eager (one game step per legal action), so a child
    that terminates the game with a win is detected here; the first such
    action is returned for winning-line harvesting.  Returns the leaf
    value estimate (network value, or 0.0 when rollouts provide it).
    """
    node.legal = np.flatnonzero(legal_mask(node.state.history, game.table))
    win_action = None
    for a in node.legal:
        a = int(a)
        child = node.children.get(a)
        if child is None:
            child_state, _ = game.apply(node.state, a)
            child = SearchNode(child_state)
            node.children[a] = child
        if win_action is None and child.terminal and child.state.won:
            win_action = a
    value = 0.0
    if evaluator is not None:
        probs, value = evaluator(node.state)
        p = np.asarray(probs, dtype=float)[node.legal]
        total = p.sum()
        p = p / total if total > 0 else np.full(node.legal.size, 1.0 / node.legal.size)
        if root_prior_fn is not None:
            p = root_prior_fn(p)
        node.priors = p
    node.expanded = True
    return float(value), win_action


def _rollout(
    game: SynthGame, state: GameState, rng: np.random.Generator
) -> tuple[float, list[int]]:
    """Play uniform random legal actions to termination.

    Returns the binary reward and the actions played by the virtual game.
    """
    if state.done:
        return (1.0 if state.won else 0.0), []
    m = state.m
    history = list(state.history)
    played: list[int] = []
    for _ in range(state.max_steps - state.step):
        mask = legal_mask(history, game.table)
        choices = np.flatnonzero(mask)
        if choices.size == 0:  # stuck (possible only for degenerate tables)
            return 0.0, played
        a = int(choices[rng.integers(choices.size)])
        m, won = game.rollout_step(m, a)
        played.append(a)
        if won:
            return 1.0, played
        history.append(a)
    return 0.0, played


def _select_action(
    node: SearchNode,
    use_puct: bool,
    c_uct: float,
    c_puct: float,
    rng: np.random.Generator,
) -> int:
    best_score = -math.inf
    ties: list[int] = []
    sqrt_n = math.sqrt(node.visits)
    for k, a in enumerate(node.legal):
        a = int(a)
        child = node.children.get(a)
        n = child.visits if child is not None else 0
        q = child.q if child is not None and n else 0.0
        if use_puct:
            score = q + c_puct * node.priors[k] * sqrt_n / (n + 1)
        else:
            score = uct_score(q, n, node.visits, c_uct)
        if score > best_score:
            best_score = score
            ties = [a]
        elif score == best_score:
            ties.append(a)
    # Ties (including the +inf of unvisited children) break uniformly at
    # random from the seeded search rng: index-ordered ties systematically
    # starve high-index subtrees of deep expansion.
    if len(ties) == 1:
        return ties[0]
    return ties[int(rng.integers(len(ties)))]


def run_search(
    game: SynthGame,
    root: GameState,
    budget: int,
    rng: np.random.Generator,
    evaluator=None,
    c_uct: float = UCT_C,
    c_puct: float = PUCT_C,
    root_prior_fn=None,
    reuse: SearchNode | None = None,
    stop_on_win: bool = False,
) -> tuple[SearchResult, SearchNode]:
    """Run ``budget`` search iterations from ``root``.

    Each iteration selects a path (UCT without an evaluator, PUCT with),
    expands the selected leaf (creating all its children), estimates its
    value (random rollout / network / terminal reward), and
    backpropagates.  ``reuse`` re-roots a subtree kept from a previous
    search on the same game.  ``stop_on_win`` ends the search as soon as
    a winning line is known (inference only; it skews visit counts).
    Returns the result and the root node, whose children can seed the
    next move's search.
    """
    if root.done:
        raise ValueError("cannot search from a finished game state")
    if budget < 1:
        raise ValueError("budget must be >= 1")

    winning_line: tuple[int, ...] | None = None

    def harvest(line) -> None:
        nonlocal winning_line
        if winning_line is None or len(line) < len(winning_line):
            winning_line = tuple(line)

    if reuse is not None and reuse.state.history == root.history:
        root_node = reuse
        if not root_node.expanded:
            root_node.visits = 1
            _, win = _expand(root_node, game, evaluator, root_prior_fn)
            if win is not None:
                harvest([win])
        elif evaluator is not None and root_prior_fn is not None:
            root_node.priors = root_prior_fn(root_node.priors)
    else:
        root_node = SearchNode(root)
        root_node.visits = 1
        _, win = _expand(root_node, game, evaluator, root_prior_fn)
        if win is not None:
            harvest([win])

    use_puct = evaluator is not None
    for _ in range(budget):
        node = root_node
        path = [root_node]
        line: list[int] = []
        while node.expanded and not node.terminal and node.legal.size > 0:
            a = _select_action(node, use_puct, c_uct, c_puct, rng)
            child = node.children[a]
            path.append(child)
            line.append(a)
            node = child
        if node.terminal:
            if node.state.won:
                harvest(line)
            reward = 1.0 if node.state.won else 0.0
        elif not node.expanded:
            if evaluator is not None:
                reward, win = _expand(node, game, evaluator, None)
                if win is not None:
                    harvest(line + [win])
            else:
                _, win = _expand(node, game, None, None)
                if win is not None:
                    harvest(line + [win])
                reward, played = _rollout(game, node.state, rng)
                if reward == 1.0:
                    harvest(line + played)
        else:  # expanded but stuck: no legal action exists (degenerate table)
            reward = 0.0
        backpropagate(path, reward)
        if stop_on_win and winning_line is not None:
            break

    n_actions = game.n_actions
    visits = np.zeros(n_actions)
    rewards = np.zeros(n_actions)
    for a, child in root_node.children.items():
        visits[a] = child.visits
        rewards[a] = child.reward_sum
    total = visits.sum()
    policy = visits / total if total > 0 else visits
    q_values = np.divide(rewards, visits, out=np.zeros(n_actions), where=visits > 0)
    value = float((policy * q_values).sum())
    result = SearchResult(
        policy=policy, q_values=q_values, value=value, winning_line=winning_line
    )
    return result, root_node
