import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsynth.alphazero import (
    AgentConfig,
    competition,
    mix_dirichlet,
    network_policy_episode,
    play_episode,
    puct_score,
    sample_action,
    self_play_game,
    temperature_at,
    train_epoch,
)
from qsynth.env import SynthGame
from qsynth.gates import all_to_all, build_action_table
from qsynth.mcts import run_search
from qsynth.network import Adam, NetConfig, NetEvaluator, PolicyValueNet
from qsynth.oracles import simulate
from qsynth.linalg import fidelity
from qsynth.targets import CurriculumState, sample_training_target


def game_1q():
    return SynthGame(build_action_table(["H", "T"], all_to_all(1)))


def tiny_net(game, seed=0):
    cfg = NetConfig(
        dim=game.dim, n_actions=game.n_actions, channels=4, blocks=1,
        policy_channels=3, value_channels=2,
    )
    return PolicyValueNet(cfg, rng=np.random.default_rng(seed))


def smoke_config(**kw):
    defaults = dict(
        n_mcts_train=32, n_mcts_eval=64, games_per_epoch=8, epochs_per_depth=2,
        competition_games=6, competition_margin=5, batch_size=8,
    )
    defaults.update(kw)
    return AgentConfig(**defaults)


# -- formulas -----------------------------------------------------------------


def test_puct_hand_values():
    assert puct_score(0.0, 1.0, 0, 4, 1.0) == pytest.approx(2.0, abs=1e-12)
    assert puct_score(0.7, 0.0, 3, 100, 5.0) == pytest.approx(0.7, abs=1e-12)
    base = puct_score(0.0, 0.5, 2, 9, 1.25)
    assert puct_score(0.0, 0.5, 2, 9, 2.5) == pytest.approx(2 * base, abs=1e-12)


def test_tempered_sampling_hand_values():
    rng = np.random.default_rng(0)
    # T = 0.5 squares the distribution: (0.2, 0.8) -> (1/17, 16/17)
    counts = np.zeros(2)
    for _ in range(4000):
        counts[sample_action([0.2, 0.8], 0.5, rng)] += 1
    assert counts[1] / 4000 == pytest.approx(16 / 17, abs=0.02)
    assert sample_action([0.2, 0.5, 0.3], 0.0) == 1
    # T = 1 reproduces the policy itself
    counts = np.zeros(2)
    for _ in range(4000):
        counts[sample_action([0.25, 0.75], 1.0, rng)] += 1
    assert counts[1] / 4000 == pytest.approx(0.75, abs=0.03)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(0.01, 1.0), min_size=2, max_size=8),
    st.floats(0.05, 1.0),
)
def test_tempered_distribution_normalizes(raw, t):
    p = np.array(raw) / np.sum(raw)
    w = p ** (1.0 / t)
    w = w / w.sum()
    assert w.sum() == pytest.approx(1.0, abs=1e-9)
    # T -> 0 selects the argmax
    assert sample_action(p, 0.0) == int(p.argmax())


def test_temperature_schedule_bands():
    sched = ((5, 1.0), (15, 0.6), (None, 0.4))
    assert [temperature_at(sched, s) for s in (0, 4)] == [1.0, 1.0]
    assert [temperature_at(sched, s) for s in (5, 14)] == [0.6, 0.6]
    assert [temperature_at(sched, s) for s in (15, 99)] == [0.4, 0.4]


def test_mix_dirichlet_limits():
    rng = np.random.default_rng(1)
    p = np.array([0.5, 0.25, 0.25])
    assert np.allclose(mix_dirichlet(p, 0.3, 0.0, rng), p)
    pure = mix_dirichlet(p, 0.3, 1.0, rng)
    assert pure.sum() == pytest.approx(1.0, abs=1e-9)
    mixed = mix_dirichlet(p, 0.3, 0.25, rng)
    assert mixed.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(mixed >= 0)


def test_dirichlet_applied_at_root_only():
    # Child priors must be the raw network outputs: expand the root with a
    # noise hook and check an expanded child's priors match the evaluator.
    game = game_1q()
    net = tiny_net(game)
    evaluator = NetEvaluator(game, net)
    state = game.reset(np.diag([1.0, 1j]), 3)
    rng = np.random.default_rng(3)
    noise = lambda p: mix_dirichlet(p, 0.3, 0.9, rng)
    _, root = run_search(game, state, 60, rng, evaluator=evaluator, root_prior_fn=noise)
    raw_root, _ = evaluator(state)
    legal = root.legal
    assert not np.allclose(root.priors, raw_root[legal] / raw_root[legal].sum(), atol=1e-3)
    child = next(c for c in root.children.values() if c.expanded and not c.terminal)
    raw_child, _ = evaluator(child.state)
    expect = raw_child[child.legal]
    expect = expect / expect.sum()
    assert np.allclose(child.priors, expect, atol=1e-12)


# -- self-play ----------------------------------------------------------------


def test_self_play_records_and_outcome():
    game = game_1q()
    net = tiny_net(game)
    target = np.diag([1.0, 1j])  # depth-2 target (T then T)
    won, records, circ = self_play_game(game, net, smoke_config(), target, 2, np.random.default_rng(4))
    assert len(records) <= 2 and len(records) >= 1
    assert circ.depth == len(records)
    for r in records:
        assert r.value == (1.0 if won else 0.0)
        assert r.policy.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(r.policy[~r.mask] == 0)
        assert r.observation.shape == (2, 2, 2)
    if won:
        assert fidelity(simulate(circ), target) >= 1 - game.eps


def test_self_play_oracle_network_wins_depth_one():
    game = game_1q()
    h = game.table.gate_specs[0].matrix

    class Oracle:
        config = None

        def forward(self, obs, mask, train=False):
            # always push H with full confidence, value 1
            p = np.zeros((obs.shape[0], game.n_actions))
            p[:, game.table.labels().index("H0")] = 1.0
            return p, np.ones(obs.shape[0])

    cfg = smoke_config(dirichlet_eps=0.0, temperature_schedule=((None, 0.0),))
    won, records, circ = self_play_game(game, Oracle(), cfg, h, 1, np.random.default_rng(5))
    assert won and circ.depth == 1 and circ.ops[0][0] == "H"


def test_mcts_floor_on_solved_depth2_game():
    # Untrained network, budget 200, T=0 schedule: the search alone must
    # win nearly every depth-2 game (>= 95/100).
    game = game_1q()
    net = tiny_net(game, seed=9)
    cfg = AgentConfig(
        n_mcts_train=200, temperature_schedule=((None, 0.0),),
        games_per_epoch=1, epochs_per_depth=1,
    )
    target = np.diag([1.0, 1j])
    wins = 0
    for k in range(100):
        won, _, _ = self_play_game(game, net, cfg, target, 2, np.random.default_rng(1000 + k))
        wins += int(won)
    assert wins >= 95


# -- training epoch / competition ----------------------------------------------


def collect_replay(game, net, cfg, rng, n_games=10, depth=2):
    replay = []
    for _ in range(n_games):
        _, target = sample_training_target(depth, game.table, rng)
        _, records, _ = self_play_game(game, net, cfg, target, depth, rng)
        replay.extend(records)
    return replay


def test_train_epoch_consumes_replay_read_only():
    game = game_1q()
    net = tiny_net(game)
    cfg = smoke_config()
    rng = np.random.default_rng(6)
    replay = collect_replay(game, net, cfg, rng)
    snapshot = [(r.observation.copy(), r.policy.copy(), r.value) for r in replay]
    opt = Adam(net)
    metrics = train_epoch(net, opt, replay, cfg, rng)
    assert metrics["batches"] >= 1
    assert np.isfinite(metrics["mean_loss"])
    for r, (obs, pol, val) in zip(replay, snapshot):
        assert np.array_equal(r.observation, obs)
        assert np.array_equal(r.policy, pol)
        assert r.value == val


def test_train_epoch_overfits_fixed_replay():
    game = game_1q()
    net = tiny_net(game, seed=7)
    cfg = smoke_config()
    rng = np.random.default_rng(8)
    replay = collect_replay(game, net, cfg, rng, n_games=6)
    opt = Adam(net)
    first = train_epoch(net, opt, replay, cfg, rng)["mean_loss"]
    last = None
    for _ in range(30):
        last = train_epoch(net, opt, replay, cfg, rng)["mean_loss"]
    assert last < first


def test_competition_margin_rule():
    game = game_1q()
    net = tiny_net(game, seed=10)
    cfg = smoke_config(competition_games=10, competition_margin=5)
    cs = CurriculumState(mu=2, sigma=0.5, d_min=1, d_max=3)
    # identical parameters: paired play gives identical outcomes, margin unmet
    keep, w_new, w_best = competition(game, net, net, cfg, cs, seed=3)
    assert w_new == w_best
    assert keep is False
