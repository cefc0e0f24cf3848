import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import flat_terrain_config, make_domain, make_rng
from roverlab import nn, ppo, terrain
from roverlab import rng as rngmod
from roverlab.env import EpisodeOutcome, NavigationEnv, Observation, OutcomeKind
from roverlab.rover import BodyCommand, ControlLimits, RoverGeometry


def gae_bruteforce(rewards, values, dones, bootstrap, gamma, lam):
    """O(T^2) reference: A_t = sum_l (gamma*lam)^l * delta_{t+l} with products
    of (1 - done) cutting the sum at episode boundaries."""
    t_len = len(rewards)
    vals = list(values) + [bootstrap]
    deltas = [rewards[t] + gamma * vals[t + 1] * (1.0 - dones[t]) - vals[t]
              for t in range(t_len)]
    adv = []
    for t in range(t_len):
        total = 0.0
        weight = 1.0
        for l in range(t, t_len):
            total += weight * deltas[l]
            if dones[l]:
                break
            weight *= gamma * lam
        adv.append(total)
    return np.array(adv)


class TestGae:
    def test_single_step_identity(self):
        adv, ret = ppo.compute_gae(np.array([[1.0]]), np.array([[0.0]]),
                                   np.array([[1.0]]), np.array([0.0]),
                                   0.99, 0.95, normalize=False)
        assert adv[0, 0] == 1.0
        assert ret[0, 0] == 1.0

    def test_two_step_hand_recursion(self):
        rewards = np.array([[1.0], [1.0]])
        values = np.zeros((2, 1))
        dones = np.array([[0.0], [1.0]])
        adv, _ = ppo.compute_gae(rewards, values, dones, np.array([0.0]),
                                 0.99, 0.95, normalize=False)
        assert adv[1, 0] == pytest.approx(1.0, abs=1e-12)
        assert adv[0, 0] == pytest.approx(1.9405, abs=1e-12)

    @pytest.mark.parametrize("lam", [0.0, 0.5, 0.95, 1.0])
    def test_matches_bruteforce(self, lam):
        g = make_rng(0, 600)
        for _ in range(100)[:25]:
            t_len = int(g.integers(1, 17))
            rewards = g.standard_normal(t_len)
            values = g.standard_normal(t_len)
            dones = (g.random(t_len) < 0.2).astype(float)
            bootstrap = float(g.standard_normal())
            adv, _ = ppo.compute_gae(rewards[:, None], values[:, None],
                                     dones[:, None], np.array([bootstrap]),
                                     0.99, lam, normalize=False)
            ref = gae_bruteforce(rewards, values, dones, bootstrap, 0.99, lam)
            assert np.max(np.abs(adv[:, 0] - ref)) < 1e-10

    def test_lambda_zero_is_td_residual(self):
        g = make_rng(1, 601)
        rewards = g.standard_normal((6, 2))
        values = g.standard_normal((6, 2))
        dones = np.zeros((6, 2))
        bootstrap = g.standard_normal(2)
        adv, _ = ppo.compute_gae(rewards, values, dones, bootstrap, 0.99, 0.0,
                                 normalize=False)
        vals = np.vstack([values, bootstrap[None, :]])
        td = rewards + 0.99 * vals[1:] - values
        assert np.allclose(adv, td, atol=1e-12)

    def test_lambda_one_is_discounted_return_minus_value(self):
        g = make_rng(2, 602)
        rewards = g.standard_normal(10)
        values = g.standard_normal(10)
        dones = np.zeros(10)
        dones[6] = 1.0
        adv, _ = ppo.compute_gae(rewards[:, None], values[:, None], dones[:, None],
                                 np.array([0.5]), 0.99, 1.0, normalize=False)
        ret = np.zeros(10)
        acc = 0.5  # bootstrap value
        for t in range(9, -1, -1):
            if dones[t]:
                acc = 0.0
            ret[t] = rewards[t] + 0.99 * acc
            acc = ret[t]
        assert np.allclose(adv[:, 0], ret - values, atol=1e-10)

    def test_returns_are_raw_advantages_plus_values(self):
        g = make_rng(3, 603)
        rewards = g.standard_normal((8, 3))
        values = g.standard_normal((8, 3))
        dones = (g.random((8, 3)) < 0.3).astype(float)
        raw, ret = ppo.compute_gae(rewards, values, dones, g.standard_normal(3),
                                   0.99, 0.95, normalize=False)
        assert np.allclose(ret, raw + values, atol=1e-14)

    def test_normalization_zero_mean_unit_variance(self):
        g = make_rng(4, 604)
        rewards = g.standard_normal((32, 4))
        values = g.standard_normal((32, 4))
        dones = np.zeros((32, 4))
        adv, _ = ppo.compute_gae(rewards, values, dones, np.zeros(4), 0.99, 0.95)
        assert abs(adv.mean()) < 1e-9
        assert abs(adv.std() - 1.0) < 1e-6


class TestObjectives:
    def test_identity_ratio_returns_advantage(self):
        assert ppo.clip_objective(1.0, 2.5, 0.2) == 2.5
        assert ppo.clip_objective(1.0, -1.5, 0.2) == -1.5

    def test_clip_caps_positive_advantage(self):
        assert ppo.clip_objective(1.5, 2.0, 0.2) == pytest.approx(2.4, abs=1e-12)

    def test_clip_floors_negative_advantage(self):
        assert ppo.clip_objective(0.5, -1.0, 0.2) == pytest.approx(-0.8, abs=1e-12)

    @given(ratio=st.floats(0.01, 5.0), adv=st.floats(-5, 5), eps=st.floats(0.05, 0.5))
    def test_clip_never_exceeds_unclipped(self, ratio, adv, eps):
        obj = ppo.clip_objective(ratio, adv, eps)
        assert obj <= ratio * adv + 1e-12
        if 1 - eps <= ratio <= 1 + eps:
            assert obj == pytest.approx(ratio * adv, abs=1e-12)

    def test_kl_penalty_no_update_case(self):
        assert ppo.kl_penalty_objective(1.0, 3.0, 0.0, 2.0) == 3.0

    def test_kl_penalty_example(self):
        assert ppo.kl_penalty_objective(1.2, 1.0, 0.01, 2.0) == pytest.approx(1.18, abs=1e-12)

    @given(beta=st.floats(0.1, 100.0))
    def test_kl_penalty_monotone_in_beta(self, beta):
        base = ppo.kl_penalty_objective(1.2, 1.0, 0.05, beta)
        more = ppo.kl_penalty_objective(1.2, 1.0, 0.05, beta * 2)
        assert more < base


class TestAdaptiveKl:
    def test_dead_zone(self):
        assert ppo.adaptive_kl_update(1.0, 0.008, 0.008) == 1.0

    def test_doubles_above_band(self):
        assert ppo.adaptive_kl_update(1.0, 0.02, 0.008) == 2.0

    def test_halves_below_band(self):
        assert ppo.adaptive_kl_update(1.0, 0.004, 0.008) == 0.5

    def test_clamped(self):
        assert ppo.adaptive_kl_update(1e4, 1.0, 0.008) == 1e4
        assert ppo.adaptive_kl_update(2e-4, 0.0, 0.008) == 1e-4

    def test_nonpositive_beta_rejected(self):
        with pytest.raises(ValueError):
            ppo.adaptive_kl_update(0.0, 0.01, 0.008)


class _ScriptedEnv:
    """Duck-typed env that terminates every `period` steps; observation is a
    counter so buffer contents are predictable."""

    def __init__(self, period):
        self.period = period
        self.t = 0
        self.episode = 0
        self.needs_reset = True

    def reset(self):
        self.t = 0
        self.episode += 1
        self.needs_reset = False
        return self._obs()

    def _obs(self):
        vec = [float(self.t + 100 * self.episode)] * 12
        return Observation(*vec)

    def step(self, cmd):
        self.t += 1
        from roverlab.env import RewardBreakdown
        rb = RewardBreakdown(1.0, 0, 0, 0, 0, 0, 0, 0)
        if self.t >= self.period:
            self.needs_reset = True
            return self._obs(), rb, EpisodeOutcome(OutcomeKind.TIMEOUT, self.t, 1.0)
        return self._obs(), rb, None


class TestCollectRollout:
    def make_pool(self, n_envs=2, obstacle_count=0, seed=0):
        domain = make_domain(obstacle_count=obstacle_count)
        hf = terrain.generate_heightfield(domain.terrain)
        envs = [NavigationEnv(domain, RoverGeometry(), ControlLimits(), hf,
                              rngmod.stream(seed, rngmod.ENV_BASE + i))
                for i in range(n_envs)]
        return ppo.EnvPool(envs, ControlLimits())

    def test_capacity(self):
        pool = self.make_pool(n_envs=2)
        params = nn.init_policy(make_rng(0, 2))
        buf, _ = ppo.collect_rollout(pool, params, 1, make_rng(0, 3))
        assert buf.size == 2
        assert buf.obs.shape == (1, 2, 12)

    def test_done_recorded_and_reset_obs_stored(self):
        pool = ppo.EnvPool.__new__(ppo.EnvPool)
        pool.envs = [_ScriptedEnv(period=3)]
        pool.limits = ControlLimits()
        pool.obs = np.zeros((1, 12))
        pool.obs[0] = pool.envs[0].reset().as_vector()
        params = nn.init_policy(make_rng(0, 2))
        buf, stats = ppo.collect_rollout(pool, params, 7, make_rng(0, 3))
        assert list(buf.dones[:, 0]) == [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]
        # after a done, the next stored observation is the fresh reset
        assert buf.obs[3, 0, 0] * 15.0 == pytest.approx(200.0)  # episode 2, t=0
        assert stats.timeout == 2
        assert stats.episode_steps == [3, 3]

    def test_bitwise_deterministic(self):
        bufs = []
        for _ in range(2):
            pool = self.make_pool(n_envs=2, obstacle_count=3, seed=5)
            params = nn.init_policy(make_rng(1, 2))
            buf, _ = ppo.collect_rollout(pool, params, 16, make_rng(1, 3))
            bufs.append(buf)
        for field in ("obs", "actions", "logp_old", "rewards", "values", "dones",
                      "mean_old", "bootstrap"):
            assert np.array_equal(getattr(bufs[0], field), getattr(bufs[1], field))


def synthetic_buffer(seed, n_steps=8, n_envs=4):
    g = make_rng(seed, 700)
    params = nn.init_policy(make_rng(seed, 701))
    buf = ppo.RolloutBuffer.allocate(n_steps, n_envs)
    buf.obs[:] = g.standard_normal(buf.obs.shape) * 0.5
    mean, log_std, value = nn.forward(params, buf.obs.reshape(-1, 12))
    actions, logp = nn.sample_action(mean, log_std, make_rng(seed, 702))
    buf.actions[:] = actions.reshape(buf.actions.shape)
    buf.logp_old[:] = logp.reshape(buf.logp_old.shape)
    buf.values[:] = value.reshape(buf.values.shape)
    buf.mean_old[:] = mean.reshape(buf.mean_old.shape)
    buf.log_std_old = log_std
    buf.rewards[:] = g.standard_normal((n_steps, n_envs))
    buf.dones[:] = (g.random((n_steps, n_envs)) < 0.1).astype(float)
    buf.bootstrap = g.standard_normal(n_envs)
    buf.advantages, buf.returns = ppo.compute_gae(
        buf.rewards, buf.values, buf.dones, buf.bootstrap, 0.99, 0.95)
    return params, buf


class TestPpoUpdate:
    def test_bitwise_deterministic(self):
        outs = []
        for _ in range(2):
            params, buf = synthetic_buffer(3)
            cfg = ppo.desk_config(n_steps=8, n_envs=4, minibatch_size=16,
                                  mini_epochs=3)
            adam = nn.AdamState()
            ppo.ppo_update(params, buf, cfg, adam, 1.0, make_rng(3, 703))
            outs.append(params.flatten())
        assert np.array_equal(outs[0], outs[1])

    def test_requires_gae(self):
        params, buf = synthetic_buffer(4)
        buf.advantages = None
        cfg = ppo.desk_config(n_steps=8, n_envs=4, minibatch_size=16)
        with pytest.raises(ValueError):
            ppo.ppo_update(params, buf, cfg, nn.AdamState(), 1.0, make_rng(4, 703))

    def test_small_lr_update_is_ascent_direction(self):
        improved = 0
        for seed in range(10):
            params, buf = synthetic_buffer(seed + 10)
            spec = nn.LossSpec(objective="clip")

            def mean_objective(p):
                mb = buf.minibatch(np.arange(buf.size))
                mean, log_std, _ = nn.forward(p, mb.obs)
                ratio = np.exp(nn.log_prob(mean, log_std, mb.actions) - mb.logp_old)
                return float(np.mean(ppo.clip_objective(ratio, mb.advantages, 0.2)))

            before = mean_objective(params)
            cfg = ppo.desk_config(n_steps=8, n_envs=4, minibatch_size=32,
                                  mini_epochs=1, lr=1e-5, critic_coef=0.0,
                                  entropy_coef=0.0, bound_coef=0.0)
            ppo.ppo_update(params, buf, cfg, nn.AdamState(), 1.0, make_rng(seed, 704))
            after = mean_objective(params)
            if after >= before - 1e-12:
                improved += 1
        assert improved >= 9

    def test_adaptive_kl_beta_adjusts(self):
        params, buf = synthetic_buffer(20)
        cfg = ppo.desk_config(n_steps=8, n_envs=4, minibatch_size=32,
                              mini_epochs=2, objective="kl_penalty",
                              kl_target=1e-9, lr=1e-3)
        _, beta = ppo.ppo_update(params, buf, cfg, nn.AdamState(), 1.0,
                                 make_rng(20, 705))
        assert beta == 2.0  # any measurable KL overshoots the tiny target

    def test_clip_early_stop_on_kl(self):
        params, buf = synthetic_buffer(21)
        cfg = ppo.desk_config(n_steps=8, n_envs=4, minibatch_size=16,
                              mini_epochs=8, kl_target=1e-12, lr=1e-2)
        stats, _ = ppo.ppo_update(params, buf, cfg, nn.AdamState(), 1.0,
                                  make_rng(21, 706))
        assert stats.early_stopped
        assert stats.minibatches < 8 * (buf.size // 16)


class TestTrain:
    def setup_result(self, tmp_path, total=None, seed=0, n_steps=8, n_envs=2,
                     resume_from=None, out=None):
        cfg = ppo.desk_config(n_steps=n_steps, n_envs=n_envs,
                              minibatch_size=n_steps * n_envs, mini_epochs=2,
                              total_env_steps=total or (3 * n_steps * n_envs))
        setup = ppo.TrainSetup(
            ppo=cfg, domain=make_domain(obstacle_count=2),
            master_seed=seed, out_dir=out or (tmp_path / "run"),
            checkpoint_interval_steps=10_000, max_episode_steps=50)
        return ppo.train(setup, resume_from=resume_from)

    def test_budget_boundary_single_iteration(self, tmp_path):
        result = self.setup_result(tmp_path, total=16, n_steps=8, n_envs=2)
        assert result.iterations == 1
        rows = result.telemetry_path.read_text().splitlines()
        assert rows[0] == ",".join(ppo.TELEMETRY_COLUMNS)
        assert len(rows) == 2

    def test_telemetry_row_per_iteration(self, tmp_path):
        result = self.setup_result(tmp_path)
        rows = result.telemetry_path.read_text().splitlines()
        assert len(rows) == 1 + 3
        assert result.env_steps == 48

    def test_deterministic_runs(self, tmp_path):
        r1 = self.setup_result(tmp_path, out=tmp_path / "a")
        r2 = self.setup_result(tmp_path, out=tmp_path / "b")
        assert (r1.telemetry_path.read_text() == r2.telemetry_path.read_text())
        assert np.array_equal(r1.params.flatten(), r2.params.flatten())

    def test_distinct_seeds_distinct_telemetry(self, tmp_path):
        r1 = self.setup_result(tmp_path, seed=0, out=tmp_path / "a")
        r2 = self.setup_result(tmp_path, seed=1, out=tmp_path / "b")
        assert r1.telemetry_path.read_text() != r2.telemetry_path.read_text()

    def test_resume_matches_uninterrupted(self, tmp_path):
        straight = self.setup_result(tmp_path, total=96, out=tmp_path / "full")
        part = self.setup_result(tmp_path, total=48, out=tmp_path / "half")
        resumed = ppo.train(
            ppo.TrainSetup(
                ppo=ppo.desk_config(n_steps=8, n_envs=2, minibatch_size=16,
                                    mini_epochs=2, total_env_steps=96),
                domain=make_domain(obstacle_count=2), master_seed=0,
                out_dir=tmp_path / "half", checkpoint_interval_steps=10_000,
                max_episode_steps=50),
            resume_from=part.final_checkpoint)
        assert np.array_equal(straight.params.flatten(), resumed.params.flatten())
        full_rows = straight.telemetry_path.read_text().splitlines()
        resumed_rows = resumed.telemetry_path.read_text().splitlines()
        assert full_rows == resumed_rows
