import numpy as np
import pytest

from spikerl.amp import CastPolicy, GradScaler, MasterWeights
from spikerl.checkpoint import param_hash
from spikerl.numeric import NumFormat, round_to
from tests.helpers import random_batch, small_agent


def amp_agent(fmt, seed=4, **kw):
    return small_agent(seed=seed, dtype=np.float32, policy=CastPolicy(fmt), **kw)


def run_steps(agent, steps, seed=0, batch=8):
    rng = np.random.default_rng(seed)
    for _ in range(steps):
        agent.train_step(random_batch(rng, batch))
    return agent


class TestCastPolicy:
    def test_modes(self):
        assert CastPolicy.from_mode("bf16").compute_format is NumFormat.BF16
        assert CastPolicy.from_mode("fp16").compute_format is NumFormat.FP16
        assert not CastPolicy.from_mode("off").enabled
        with pytest.raises(ValueError):
            CastPolicy.from_mode("fp8")
        with pytest.raises(ValueError):
            CastPolicy(NumFormat.FP64)

    def test_op_classes(self):
        p = CastPolicy(NumFormat.BF16)
        assert p.format_for("matmul") is NumFormat.BF16
        for op in ("reduction", "loss", "voltage", "current"):
            assert p.format_for(op) is NumFormat.FP32
        assert p.accumulation_format is NumFormat.FP32

    def test_affine_output_is_rounded(self, rng):
        p = CastPolicy(NumFormat.BF16)
        out = p.affine(rng.normal(size=(3, 5)).astype(np.float32),
                       rng.normal(size=(2, 5)).astype(np.float32), np.ones(2, np.float32))
        assert np.array_equal(round_to(out, NumFormat.BF16), out)

    def test_disabled_is_identity(self, rng):
        x = rng.normal(size=7).astype(np.float32)
        assert CastPolicy(NumFormat.FP32).cast(x) is x


class TestGradScaler:
    def test_scale_loss(self):
        assert GradScaler(init_scale=1.0).scale_loss(0.37) == 0.37
        assert GradScaler().scale_loss(1e-6) == pytest.approx(6.5536e-2, rel=1e-12)
        assert GradScaler(enabled=False).scale_loss(3.0) == 3.0

    def test_linearity_on_quadratic(self, rng):
        # L(w) = 0.5 * |A w - b|^2, grad = A^T (A w - b)
        A = rng.normal(size=(6, 4)).astype(np.float32)
        b = rng.normal(size=6).astype(np.float32)
        w = rng.normal(size=4).astype(np.float32)
        s = GradScaler()
        g = A.T @ (A @ w - b)
        g_scaled = A.T @ (s.scale_loss(np.float32(1.0)) * (A @ w - b))
        assert np.array_equal(g_scaled, np.float32(s.scale) * g)
        unscaled, found = s.unscale_and_check({"w": g_scaled})
        assert not found
        assert np.array_equal(unscaled["w"], g)
        assert np.array_equal(np.sign(unscaled["w"]), np.sign(g_scaled))

    def test_unscale(self):
        s = GradScaler(init_scale=2.0)
        g, found = s.unscale_and_check({"a": np.array([4.0, -2.0], np.float32)})
        assert g["a"].tolist() == [2.0, -1.0] and not found
        _, found = s.unscale_and_check({"a": np.array([1.0, np.inf], np.float32)})
        assert found
        _, found = s.unscale_and_check({"a": np.array([np.nan], np.float32)})
        assert found

    def test_roundtrip_within_one_ulp(self, rng):
        g = rng.normal(size=10_000).astype(np.float32)
        for k in (1, 8, 16, 24):
            s = GradScaler(init_scale=2.0 ** k)
            back, _ = s.unscale_and_check({"g": g * np.float32(s.scale)})
            ulp = np.spacing(np.abs(g))
            assert np.all(np.abs(back["g"] - g) <= ulp)

    def test_backoff_and_skip(self):
        s = GradScaler()
        calls = []
        stepped, scale = s.step_or_skip(lambda: calls.append(1), True)
        assert (stepped, scale, calls) == (False, 32768.0, [])

    def test_growth_after_interval(self):
        s = GradScaler()
        for _ in range(1999):
            s.step_or_skip(lambda: None, False)
        assert s.scale == 2.0 ** 16
        s.step_or_skip(lambda: None, False)
        assert s.scale == 2.0 ** 17 and s.good_steps == 0

    def test_overflow_resets_counter(self):
        s = GradScaler()
        for _ in range(1999):
            s.step_or_skip(lambda: None, False)
        s.step_or_skip(lambda: None, True)
        assert s.scale == 2.0 ** 15 and s.good_steps == 0
        for _ in range(1999):
            s.step_or_skip(lambda: None, False)
        assert s.scale == 2.0 ** 15

    def test_scale_stays_power_of_two(self, rng):
        s = GradScaler(growth_interval=3)
        for inf in rng.random(500) < 0.3:
            s.step_or_skip(lambda: None, bool(inf))
            m, _ = np.frexp(s.scale)
            assert m == 0.5 and s.scale > 0

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            GradScaler(init_scale=1000.0)


class TestMasterWeights:
    def test_exact_values_pass_through(self):
        w = {"w": np.array([1.0, 0.5, -2.0], np.float32)}
        mw = MasterWeights(w, CastPolicy(NumFormat.BF16))
        assert np.array_equal(w["w"], mw.master["w"])

    def test_small_updates_accumulate_in_master(self):
        w = {"w": np.array([1.0], np.float32)}
        mw = MasterWeights(w, CastPolicy(NumFormat.BF16))
        moved_at = None
        for i in range(1, 33):
            mw.master["w"] += np.float32(2.0 ** -12)
            mw.sync_working_copy()
            if moved_at is None and w["w"][0] != 1.0:
                moved_at = i
        # bf16 ulp at 1.0 is 2^-7 = 32 * 2^-12; the tie at 16 rounds to even (1.0)
        assert moved_at == 17
        assert mw.master["w"][0] == 1.0 + 32 * 2.0 ** -12
        assert w["w"][0] == 1.0 + 2.0 ** -7
        # a naive low-precision accumulator never moves
        naive = np.float32(1.0)
        for _ in range(32):
            naive = round_to(naive + np.float32(2.0 ** -12), NumFormat.BF16)
        assert naive == 1.0

    def test_sync_idempotent(self, rng):
        w = {"w": rng.normal(size=16).astype(np.float32)}
        mw = MasterWeights(w, CastPolicy(NumFormat.FP16))
        first = w["w"].copy()
        mw.sync_working_copy()
        assert np.array_equal(first, w["w"])
        assert np.array_equal(w["w"], round_to(mw.master["w"], NumFormat.FP16))


class TestTrainingUnderAmp:
    @pytest.mark.parametrize("fmt", [NumFormat.BF16, NumFormat.FP16])
    def test_working_copy_tracks_master(self, fmt):
        agent = run_steps(amp_agent(fmt), 6)
        for mw in (agent.actor_master, agent.critic_master):
            for k, m in mw.master.items():
                assert m.dtype == np.float32
                assert np.array_equal(mw.working[k], round_to(m, fmt))
        assert all(np.isfinite(v).all() for v in agent.state_arrays().values())

    def test_injected_overflow_skips_step_bitwise(self):
        agent = amp_agent(NumFormat.FP16)
        run_steps(agent, 2)
        before = param_hash(agent.state_arrays())
        scale = agent.critic_scaler.scale

        def poison(name, grads):
            g = {k: v.copy() for k, v in grads.items()}
            g[sorted(g)[0]].flat[0] = np.inf
            return g

        agent.grad_hooks.append(poison)
        # third step: critic only (policy_delay 2), so no target soft update either
        info = agent.train_step(random_batch(np.random.default_rng(5), 8))
        assert info["critic_stepped"] is False and not info["updated_actor"]
        assert agent.critic_scaler.scale == scale / 2
        assert agent.critic_scaler.good_steps == 0
        assert param_hash(agent.state_arrays()) == before

    def test_actor_overflow_skips_actor_step(self):
        agent = amp_agent(NumFormat.BF16)
        run_steps(agent, 1)
        actor_before = param_hash({**agent.actor.params, **agent.actor_master.master})
        scale = agent.actor_scaler.scale
        agent.grad_hooks.append(
            lambda name, g: {k: v * np.inf for k, v in g.items()} if name == "actor" else g)
        info = agent.train_step(random_batch(np.random.default_rng(6), 8))
        assert info["updated_actor"]
        assert agent.actor_scaler.scale == scale / 2
        assert param_hash({**agent.actor.params, **agent.actor_master.master}) == actor_before

    def test_fp32_policy_bitwise_equals_plain(self):
        plain = run_steps(small_agent(seed=4, dtype=np.float32), 100)
        amp_off = run_steps(amp_agent(NumFormat.FP32), 100)
        a = {k: v for k, v in plain.state_arrays().items()}
        b = {k: v for k, v in amp_off.state_arrays().items() if "master" not in k}
        assert param_hash(a) == param_hash(b)
