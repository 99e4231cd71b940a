import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maxent_source import entropy as entropy_mod
from maxent_source.errors import FormatVersionError
from maxent_source.evaluation import EvalConfig
from maxent_source.numcore import RngStream, finite_diff_grad, max_rel_error
from maxent_source.sampler import SourceSampler
from maxent_source.simulators import AbsVal, InverseKinematics, TwoMoons, generate_dataset, get_task
from maxent_source.surrogate import SurrogateSpec, train_surrogate
from maxent_source.training import (
    DEFAULT_GRID,
    Reference,
    RunResult,
    TrainConfig,
    config_snapshot,
    lambda_schedule,
    load_config_snapshot,
    loss,
    loss_and_grad,
    read_sweep_csv,
    read_trace_csv,
    sweep,
    sweep_configs,
    train,
    trace_csv,
)

SMALL_EVAL = EvalConfig(n_entropy=256, n_projections=64, baseline_repeats=2)


@pytest.fixture(scope="module")
def sir_surrogate():
    spec = SurrogateSpec(hidden=(16, 16), max_epochs=3, batch_size=64)
    sur, _ = train_surrogate(get_task("sir"), 400, spec, RngStream(0))
    return sur


def _sim(kind, sir_surrogate):
    return {"ik": InverseKinematics(), "surrogate": sir_surrogate}[kind]


# schedule ------------------------------------------------------------------------


def test_schedule_examples():
    assert lambda_schedule(0, 500, 0.35) == 1.0
    assert lambda_schedule(500, 500, 0.35) == pytest.approx(0.35)
    assert lambda_schedule(250, 500, 0.35) == pytest.approx(0.675)
    assert lambda_schedule(10_000, 500, 0.35) == pytest.approx(0.35)


@given(st.floats(0, 1), st.integers(1, 1000))
def test_schedule_monotone(lam, decay):
    vals = [lambda_schedule(s, decay, lam) for s in range(0, 2 * decay, max(1, decay // 50))]
    assert all(a >= b - 1e-15 for a, b in zip(vals, vals[1:]))


# config -----------------------------------------------------------------------------


def test_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(decay_steps=10, max_iter=5)
    with pytest.raises(ValueError):
        TrainConfig(sim_batch=1)
    with pytest.raises(ValueError):
        TrainConfig(lambda_final=1.5)
    with pytest.raises(KeyError):
        TrainConfig.from_dict({"learning_rate": 1})


def test_config_roundtrip_through_snapshot(tmp_path):
    cfg = TrainConfig(lambda_final=None, max_iter=77, decay_steps=7, seed=3, evaluation=SMALL_EVAL)
    (tmp_path / "c.toml").write_text(config_snapshot(cfg, "ik"))
    task, back = load_config_snapshot(tmp_path / "c.toml")
    assert task == "ik" and back == cfg


# loss ------------------------------------------------------------------------------


def _frozen_inputs(sim, cfg, seed=0, n=None):
    r = RngStream(seed)
    n = n or max(cfg.sim_batch, cfg.entropy_batch)
    latents = r.child("z").standard_normal(n, sim.theta_dim)
    noise = sim.draw_noise(cfg.sim_batch, r.child("noise")) if not sim.deterministic else None
    directions = r.child("u").unit_directions(cfg.n_projections, sim.x_dim)
    return dict(latents=latents, noise=noise, directions=directions)


def _setup(sim, cfg, seed=0):
    sampler = SourceSampler.create(sim.lo, sim.hi, hidden=(8, 8), out_scale=1.0, rng=RngStream(seed, 1))
    data = generate_dataset(sim if not hasattr(sim, "base") else sim.base, cfg.sim_batch, seed).data
    return sampler, data, Reference(cfg, sim.lo, sim.hi)


def test_loss_endpoints():
    sim = TwoMoons()
    cfg = TrainConfig(sim_batch=16, entropy_batch=16, n_projections=8)
    sampler, data, ref = _setup(sim, cfg)
    kw = _frozen_inputs(sim, cfg)
    t0 = loss(sampler, sim, data, 0.0, ref, RngStream(0), cfg, **kw)
    assert t0.total == t0.distance
    t1 = loss(sampler, sim, data, 1.0, ref, RngStream(0), cfg, **kw)
    assert t1.total == t1.kl
    assert t1.kl == pytest.approx(-entropy_mod.kole_entropy(sampler.forward(kw["latents"])) + math.log(100))


def test_lambda_one_touches_only_entropy_path():
    sim = TwoMoons()
    cfg = TrainConfig(sim_batch=16, entropy_batch=16, n_projections=8)
    sampler, data, ref = _setup(sim, cfg)
    kw = _frozen_inputs(sim, cfg)
    calls = []
    orig = sim.backward
    sim.backward = lambda *a: calls.append(1) or orig(*a)
    loss_and_grad(sampler, sim, data, 1.0, ref, RngStream(0), cfg, **kw)
    assert calls == []


def test_distance_floor_at_exact_match():
    class Echo(AbsVal):
        deterministic = True

    sim = Echo()
    cfg = TrainConfig(sim_batch=8, entropy_batch=8, n_projections=4)
    sampler, _, ref = _setup(sim, cfg)
    kw = _frozen_inputs(sim, cfg)
    data = sim.forward(sampler.forward(kw["latents"], update_stats=False))
    t = loss(sampler, sim, data, 0.5, ref, RngStream(0), cfg, **kw)
    assert t.distance == pytest.approx(math.log(cfg.eps_num))
    assert math.isfinite(t.total)


def test_gaussian_reference_cross_entropy():
    cfg = TrainConfig(reference="gaussian", reference_mean=[0.5, -1.0], reference_std=[2.0, 0.5])
    ref = Reference(cfg, [-5, -5], [5, 5])
    theta = RngStream(0).standard_normal(1000, 2)
    ce, grad = ref.cross_entropy(theta)
    logpdf = -0.5 * ((theta - [0.5, -1.0]) / [2.0, 0.5]) ** 2 - np.log([2.0, 0.5]) - 0.5 * math.log(2 * math.pi)
    assert ce == pytest.approx(-logpdf.sum(axis=1).mean(), rel=1e-12)
    num = finite_diff_grad(lambda t: ref.cross_entropy(t)[0], theta[:5])
    assert max_rel_error(ref.cross_entropy(theta[:5])[1], num) <= 1e-6


@pytest.mark.parametrize("kind", ["ik", "surrogate"])
@pytest.mark.parametrize("lam", [0.35, None])
def test_end_to_end_gradient(kind, lam, sir_surrogate, monkeypatch):
    sim = _sim(kind, sir_surrogate)
    cfg = TrainConfig(sim_batch=16, entropy_batch=16, n_projections=8, lambda_final=lam)
    sampler, data, ref = _setup(sim, cfg)
    kw = _frozen_inputs(sim, cfg)
    terms, grads = loss_and_grad(sampler, sim, data, lam, ref, RngStream(0), cfg, **kw)
    analytic = np.concatenate([g.ravel() for g in grads])

    _, kcache = entropy_mod.kole_forward(sampler.forward(kw["latents"], update_stats=False), cfg.k)
    real_forward = entropy_mod.kole_forward

    def frozen_forward(samples, k=3):
        # neighbors held at the assignment of the unperturbed point
        dist = np.linalg.norm(samples - samples[kcache.neighbors], axis=1)
        _, cache = real_forward(samples, k)
        n, d = samples.shape
        value = (d / n) * np.sum(np.log(dist)) - entropy_mod.digamma(k) + entropy_mod.digamma(n) + \
            entropy_mod.log_unit_ball_volume(d)
        return value, replace(cache, neighbors=kcache.neighbors, distances=dist, n_nonzero=n)

    monkeypatch.setattr(entropy_mod, "kole_forward", frozen_forward)
    flat0 = sampler.net.get_flat()

    def f(flat):
        sampler.net.set_flat(flat)
        return loss(sampler, sim, data, lam, ref, RngStream(0), cfg, **kw).total

    numeric = finite_diff_grad(f, flat0)
    sampler.net.set_flat(flat0)
    assert max_rel_error(analytic, numeric, floor=1e-4) <= 1e-3


def test_no_entropy_mode_never_calls_estimator(monkeypatch):
    calls = []
    real = entropy_mod.kole_forward
    monkeypatch.setattr(entropy_mod, "kole_forward", lambda *a, **k: calls.append(1) or real(*a, **k))
    sim = TwoMoons()
    ds = generate_dataset(sim, 200, 1)
    cfg = TrainConfig(lambda_final=None, max_iter=20, decay_steps=5, sim_batch=32, entropy_batch=32)
    run = train(sim, ds, cfg, evaluate=False)
    assert calls == [] and run.entropy_calls == 0
    cfg = replace(cfg, lambda_final=0.5)
    run = train(sim, ds, cfg, evaluate=False)
    assert len(calls) == 20 and run.entropy_calls == 20


def test_dataset_too_small():
    sim = TwoMoons()
    with pytest.raises(ValueError):
        train(sim, generate_dataset(sim, 100, 1), TrainConfig(max_iter=10, decay_steps=5), evaluate=False)


# train runs ---------------------------------------------------------------------------


def _tiny_cfg(**kw):
    base = dict(lambda_final=0.35, max_iter=40, decay_steps=10, sim_batch=32, entropy_batch=32, n_projections=16,
                patience=5, seed=4, evaluation=SMALL_EVAL)
    base.update(kw)
    return TrainConfig(**base)


@pytest.mark.parametrize("kind", ["ik", "surrogate"])
def test_run_determinism_and_trace(kind, sir_surrogate, tmp_path):
    sim = _sim(kind, sir_surrogate)
    base_task = sim.base if kind == "surrogate" else sim
    ds = generate_dataset(base_task, 300, 2)
    cfg = _tiny_cfg()
    a = train(sim, ds, cfg, eval_task=base_task)
    b = train(sim, ds, cfg, eval_task=base_task)
    assert trace_csv(a.trace) == trace_csv(b.trace)
    assert a.metrics == b.metrics
    assert a.trace.shape[0] <= cfg.max_iter
    # early stopping only after the schedule: at least decay_steps + patience iterations
    assert a.trace.shape[0] >= cfg.decay_steps + cfg.patience
    assert np.all(a.trace[: cfg.decay_steps, 1] > cfg.lambda_final)
    assert set(a.metrics) >= {"entropy", "swd", "c2st", "swd_ratio"}
    assert all(math.isfinite(v) for v in a.metrics.values())

    a.save(tmp_path / "run")
    back = RunResult.load(tmp_path / "run")
    assert np.array_equal(back.trace, a.trace)
    assert back.config == cfg
    assert (tmp_path / "run" / "trace.csv").read_text() == trace_csv(a.trace)


def test_trace_csv_rejects_unknown_version(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("# format_version: 9\niteration,lambda,total,distance,kl\n")
    with pytest.raises(FormatVersionError):
        read_trace_csv(p)


def test_best_weights_retained():
    sim = TwoMoons()
    ds = generate_dataset(sim, 300, 2)
    run = train(sim, ds, _tiny_cfg(max_iter=60), evaluate=False)
    assert run.best_iteration >= 10
    tail = run.trace[10:, 2]
    assert run.trace[run.best_iteration, 2] == tail.min()


# sweeps ----------------------------------------------------------------------------------


def test_default_grid():
    assert len(DEFAULT_GRID) == 15
    assert DEFAULT_GRID[0] == 1.0 and DEFAULT_GRID[-1] == pytest.approx(2 ** (-7))
    cfgs = sweep_configs(TrainConfig())
    assert len(cfgs) == 16 and cfgs[-1].lambda_final is None
    assert len({c.stream for c in cfgs}) == 16


def _strip_runtime(rows):
    return [{k: v for k, v in r.items() if k != "runtime_s"} for r in rows]


def test_sweep_reproducible_and_parallel_identical(tmp_path):
    sim = TwoMoons()
    ds = generate_dataset(sim, 300, 2)
    cfg = _tiny_cfg(max_iter=20, patience=20)
    grid = [1.0, 0.25]
    a = sweep(sim, ds, cfg, grid, out_dir=tmp_path / "a")
    b = sweep(sim, ds, cfg, grid, out_dir=tmp_path / "b", parallel=2)
    assert len(a) == 3 and a[-1]["lambda"] == "none"
    assert _strip_runtime(a) == _strip_runtime(b)
    rows = read_sweep_csv(tmp_path / "a" / "sweep.csv")
    assert list(rows[0]) == ["lambda", "entropy", "swd", "c2st", "runtime_s", "diverged"]
    assert _strip_runtime(rows) == _strip_runtime(a)
    assert (tmp_path / "a" / "run_lambda_0.25" / "trace.csv").read_text() == \
        (tmp_path / "b" / "run_lambda_0.25" / "trace.csv").read_text()


def test_sweep_records_failures():
    class Exploding(TwoMoons):
        def forward(self, theta, noise):
            out = super().forward(theta, noise)
            return out * np.inf if self.boom else out

    sim = Exploding()
    sim.boom = True
    ds = generate_dataset(TwoMoons(), 300, 2)
    rows = sweep(sim, ds, _tiny_cfg(max_iter=20), [0.5])
    assert [r["diverged"] for r in rows] == [True, True]
    assert all(math.isnan(r["entropy"]) for r in rows)
