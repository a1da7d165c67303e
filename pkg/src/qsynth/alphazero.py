"""The hybrid agent: PUCT self-play, training epochs, competition gate.

Self-play runs the guided tree search with Dirichlet noise at the root,
samples actions at a scheduled temperature, and records (observation,
search policy, legality mask) triples; the game outcome (win 1, loss 0)
becomes the value target for every step of the trajectory.  Replay is
cleared at each curriculum level.  After every epoch the updated network
challenges the incumbent best on a paired set of fresh targets and
replaces it only with a five-game margin.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import circuit as circuit_mod
from .env import SynthGame
from .mcts import SearchNode, run_search
from .network import (
    Adam,
    NetEvaluator,
    PolicyValueNet,
    TrainBatch,
    copy_net,
    load_checkpoint,
    save_checkpoint,
    train_step,
)
from .targets import CurriculumState, curriculum_next, sample_training_target

# (step upper bound, temperature); None bounds the final band.
DEFAULT_TEMPERATURE_SCHEDULE = ((5, 1.0), (15, 0.6), (None, 0.4))


@dataclass(frozen=True)
class AgentConfig:
    n_mcts_train: int = 200
    n_mcts_eval: int = 400
    c_puct: float = 1.25
    dirichlet_alpha: float = 0.3
    dirichlet_eps: float = 0.25
    temperature_schedule: tuple = DEFAULT_TEMPERATURE_SCHEDULE
    batch_size: int = 64
    games_per_epoch: int = 2048
    epochs_per_depth: int = 5
    competition_games: int = 100
    competition_margin: int = 5

    def __post_init__(self):
        if self.n_mcts_train < 1 or self.n_mcts_eval < 1:
            raise ValueError("simulation budgets must be >= 1")
        for bound, t in self.temperature_schedule:
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"temperatures must lie in [0, 1], got {t}")


def temperature_at(schedule, step: int) -> float:
    """Temperature for a 0-based game step (bands are upper-exclusive)."""
    for bound, t in schedule:
        if bound is None or step < bound:
            return float(t)
    return float(schedule[-1][1])


def puct_score(q: float, prior: float, n_child: int, n_parent: float, c_puct: float) -> float:
    """Q + c_puct * prior * sqrt(N) / (n + 1)."""
    return q + c_puct * prior * np.sqrt(n_parent) / (n_child + 1)


def mix_dirichlet(prior, alpha: float, eps: float, rng: np.random.Generator) -> np.ndarray:
    """(1 - eps) * prior + eps * Dirichlet(alpha), over the prior's support."""
    p = np.asarray(prior, dtype=float)
    if p.size == 0 or eps == 0.0:
        return p.copy()
    noise = rng.dirichlet(np.full(p.size, alpha))
    return (1.0 - eps) * p + eps * noise


def sample_action(policy, temperature: float, rng: np.random.Generator | None = None) -> int:
    """Tempered sampling: p_a = pi_a^(1/T) / sum; argmax at T = 0."""
    p = np.asarray(policy, dtype=float)
    if temperature == 0.0:
        return int(p.argmax())  # ties resolve to the lowest index
    if rng is None:
        raise ValueError("sampling at T > 0 needs an rng")
    w = np.zeros_like(p)
    support = p > 0
    w[support] = p[support] ** (1.0 / temperature)
    w /= w.sum()
    return int(rng.choice(p.size, p=w))


@dataclass(frozen=True)
class ReplayRecord:
    observation: np.ndarray
    policy: np.ndarray
    value: float
    mask: np.ndarray


def self_play_game(
    game: SynthGame,
    net: PolicyValueNet,
    config: AgentConfig,
    target,
    max_steps: int,
    rng: np.random.Generator,
) -> tuple[bool, list[ReplayRecord], circuit_mod.Circuit]:
    """One self-play game; value targets are filled in after the outcome."""
    evaluator = NetEvaluator(game, net)
    state = game.reset(target, max_steps)
    records: list[ReplayRecord] = []
    node: SearchNode | None = None
    while not state.done:
        noise = None
        if config.dirichlet_eps > 0:
            noise = lambda p: mix_dirichlet(p, config.dirichlet_alpha, config.dirichlet_eps, rng)
        result, root = run_search(
            game,
            state,
            config.n_mcts_train,
            rng,
            evaluator=evaluator,
            c_puct=config.c_puct,
            root_prior_fn=noise,
            reuse=node,
        )
        records.append(
            ReplayRecord(
                observation=game.observe(state),
                policy=result.policy,
                value=0.0,
                mask=game.legal(state),
            )
        )
        t = temperature_at(config.temperature_schedule, state.step)
        action = sample_action(result.policy, t, rng)
        node = root.children.get(action)
        state, _ = game.step(state, action)
    outcome = 1.0 if state.won else 0.0
    records = [replace(r, value=outcome) for r in records]
    return state.won, records, circuit_mod.from_actions(game.table, state.history)


def play_episode(
    game: SynthGame,
    net: PolicyValueNet | None,
    config: AgentConfig,
    target,
    max_steps: int,
    budget: int,
    temperature: float,
    rng: np.random.Generator,
    follow_wins: bool = True,
) -> tuple[bool, tuple[int, ...]]:
    """Inference-time play: no noise, no records; optionally commits any
    winning line the search discovers (the game is deterministic)."""
    evaluator = NetEvaluator(game, net) if net is not None else None
    state = game.reset(target, max_steps)
    node: SearchNode | None = None
    while not state.done:
        result, root = run_search(
            game,
            state,
            budget,
            rng,
            evaluator=evaluator,
            c_puct=config.c_puct,
            reuse=node,
            stop_on_win=follow_wins,
        )
        if follow_wins and result.winning_line:
            for action in result.winning_line:
                state, _ = game.step(state, action)
            break
        action = sample_action(result.policy, temperature, rng)
        node = root.children.get(action)
        state, _ = game.step(state, action)
    return state.won, state.history


def network_policy_episode(
    game: SynthGame,
    net: PolicyValueNet,
    target,
    max_steps: int,
    temperature: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[bool, tuple[int, ...]]:
    """Play the raw network policy (no search); isolates what training taught."""
    evaluator = NetEvaluator(game, net)
    state = game.reset(target, max_steps)
    while not state.done:
        policy, _ = evaluator(state)
        action = sample_action(policy, temperature, rng)
        state, _ = game.step(state, action)
    return state.won, state.history


def records_to_batch(records) -> TrainBatch:
    return TrainBatch(
        obs=np.stack([r.observation for r in records]),
        policies=np.stack([r.policy for r in records]),
        values=np.array([r.value for r in records]),
        masks=np.stack([r.mask for r in records]),
    )


def train_epoch(
    net: PolicyValueNet,
    opt: Adam,
    replay: list[ReplayRecord],
    config: AgentConfig,
    rng: np.random.Generator,
) -> dict:
    """One pass over the replay in shuffled batches; returns loss metrics."""
    if not replay:
        raise ValueError("replay is empty")
    order = rng.permutation(len(replay))
    losses = []
    for start in range(0, len(order), config.batch_size):
        idx = order[start : start + config.batch_size]
        batch = records_to_batch([replay[i] for i in idx])
        losses.append(train_step(net, opt, batch))
    return {"losses": losses, "mean_loss": float(np.mean(losses)), "batches": len(losses)}


def competition(
    game: SynthGame,
    net_new: PolicyValueNet,
    net_best: PolicyValueNet,
    config: AgentConfig,
    curriculum: CurriculumState,
    seed,
) -> tuple[bool, int, int]:
    """Paired T=0 games on shared fresh targets at the current level.

    Returns (keep_new, wins_new, wins_best); the challenger must win at
    least ``competition_margin`` more games than the incumbent.
    """
    target_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    wins_new = wins_best = 0
    cs = curriculum
    for k in range(config.competition_games):
        d, cs = curriculum_next(cs, target_rng)
        _, target = sample_training_target(d, game.table, target_rng)
        for which, net in (("new", net_new), ("best", net_best)):
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1, k]))
            won, _ = play_episode(
                game, net, config, target, d, config.n_mcts_train, 0.0, rng,
                follow_wins=False,
            )
            if won:
                if which == "new":
                    wins_new += 1
                else:
                    wins_best += 1
    return wins_new >= wins_best + config.competition_margin, wins_new, wins_best


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

METRICS_FIELDS = ("mu", "epoch", "games", "wins", "win_rate", "mean_loss", "best_replaced")


@dataclass
class TrainingRun:
    """Paths and state produced by ``training_run``."""

    checkpoints: list[Path] = field(default_factory=list)
    metrics_path: Path | None = None


def _replay_to_arrays(replay):
    if not replay:
        return {}
    b = records_to_batch(replay)
    return {
        "replay/obs": b.obs,
        "replay/policies": b.policies,
        "replay/values": b.values,
        "replay/masks": b.masks,
    }


def _replay_from_arrays(data) -> list[ReplayRecord]:
    if "replay/obs" not in data:
        return []
    return [
        ReplayRecord(
            observation=data["replay/obs"][i],
            policy=data["replay/policies"][i],
            value=float(data["replay/values"][i]),
            mask=data["replay/masks"][i],
        )
        for i in range(data["replay/obs"].shape[0])
    ]


def training_run(
    game: SynthGame,
    net: PolicyValueNet,
    config: AgentConfig,
    curriculum: CurriculumState,
    out_dir,
    seed: int,
    mu_end: float | None = None,
    resume: bool = True,
    run_meta: dict | None = None,
) -> TrainingRun:
    """Curriculum self-play training per the standard loop.

    For each level: clear replay, then epochs of (games_per_epoch self-play
    games -> one training pass over the level replay -> competition gate ->
    checkpoint).  Per-(level, epoch) seeds make any run resumable from its
    latest checkpoint with identical results.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    if mu_end is None:
        mu_end = curriculum.mu_max

    opt = Adam(net)
    best = copy_net(net)
    # the curriculum counter must tick in lockstep with the epoch/game loops
    cs = replace(
        curriculum,
        games_at_level=0,
        n_games_per_level=config.games_per_epoch,
        epochs_per_depth=config.epochs_per_depth,
    )
    start_mu, start_epoch = cs.mu, 0
    replay: list[ReplayRecord] = []

    latest = sorted(out.glob("ckpt-*.npz"))
    if resume and latest:
        net_l, opt_l, extra = load_checkpoint(latest[-1])
        net_params, loaded = net.parameters(), net_l.parameters()
        for k in net_params:
            net_params[k][...] = loaded[k]
        for k, v in net_l.buffers().items():
            net.buffers()[k][...] = v
        opt = opt_l
        best = load_checkpoint(out / "best.npz")[0]
        cs = CurriculumState(**extra["curriculum"])
        start_mu, start_epoch = extra["mu"], extra["epoch"] + 1
        with np.load(latest[-1]) as data:
            replay = _replay_from_arrays(data)
        if start_epoch >= config.epochs_per_depth:
            start_mu += 1
            start_epoch = 0
            replay = []

    run = TrainingRun(metrics_path=metrics_path)
    if not metrics_path.exists():
        with open(metrics_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(METRICS_FIELDS)

    mu = start_mu
    while mu <= mu_end:
        if mu != start_mu:
            replay = []
        first_epoch = start_epoch if mu == start_mu else 0
        for epoch in range(first_epoch, config.epochs_per_depth):
            rng = np.random.default_rng(np.random.SeedSequence([seed, int(mu), epoch]))
            wins = 0
            for _ in range(config.games_per_epoch):
                d, cs = curriculum_next(cs, rng)
                _, target = sample_training_target(d, game.table, rng)
                won, records, _ = self_play_game(game, best, config, target, d, rng)
                replay.extend(records)
                wins += int(won)
            metrics = train_epoch(net, opt, replay, config, rng)
            keep_new, w_new, w_best = competition(
                game, net, best, config, cs,
                seed=seed * 1_000_003 + int(mu) * 1009 + epoch,
            )
            if keep_new:
                best = copy_net(net)
            extra = {
                "mu": int(mu),
                "epoch": epoch,
                "curriculum": _curriculum_dict(cs),
                "seed": seed,
                **(run_meta or {}),
            }
            ck = out / f"ckpt-mu{int(mu):03d}-ep{epoch:02d}.npz"
            _save_with_replay(ck, net, opt, extra, replay)
            save_checkpoint(out / "best.npz", best, None, extra)
            run.checkpoints.append(ck)
            with open(metrics_path, "a", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(
                    [
                        int(mu),
                        epoch,
                        config.games_per_epoch,
                        wins,
                        f"{wins / config.games_per_epoch:.4f}",
                        f"{metrics['mean_loss']:.6f}",
                        int(keep_new),
                    ]
                )
        mu += 1
    return run


def _curriculum_dict(cs: CurriculumState) -> dict:
    return {
        "mu": cs.mu,
        "sigma": cs.sigma,
        "games_at_level": cs.games_at_level,
        "n_games_per_level": cs.n_games_per_level,
        "epochs_per_depth": cs.epochs_per_depth,
        "d_min": cs.d_min,
        "d_max": cs.d_max,
        "mu_max": cs.mu_max,
    }


def _save_with_replay(path, net, opt, extra, replay) -> None:
    # The level replay rides along so a resumed run trains on identical data.
    save_checkpoint(path, net, opt, extra)
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    arrays.update(_replay_to_arrays(replay))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
