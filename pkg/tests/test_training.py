import numpy as np
import pytest

from patchpcc.geometry import PointCloud
from patchpcc.metrics import chamfer
from patchpcc.nn import Tensor
from patchpcc.nn import autograd as ag
from patchpcc.nn.gradcheck import grad_check
from patchpcc.synthetic import sphere_with_handle
from patchpcc.training import (
    Discriminator, TrainConfig, Trainer, chamfer_loss, clip_weights, compute_loss,
    discriminator_loss, generator_loss, global_loss, patch_chamfer_loss,
)


def small_config(**kw):
    base = dict(K=32, alpha=2.0, d=4, roc=0.5, n0=1024)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def cloud():
    return PointCloud(sphere_with_handle(128, seed=5))


def test_defaults():
    c = TrainConfig()
    assert (c.n0, c.alpha, c.L, c.d, c.lam, c.lam2, c.lr, c.epochs) == (1024, 2.0, 7, 16, 1e-6, 1e-3, 5e-4, 8)
    assert (c.clip, c.n_critic) == (0.01, 5)
    with pytest.raises(ValueError):
        TrainConfig(mode="other")


def test_chamfer_loss_value_and_gradient():
    rng = np.random.default_rng(0)
    target = rng.normal(size=(20, 3))
    pred = Tensor(rng.normal(size=(15, 3)), requires_grad=True)
    assert chamfer_loss(target, pred).item() == pytest.approx(chamfer(target, pred.data), rel=1e-15)
    rep = grad_check(lambda: chamfer_loss(target, pred), [pred], tolerance=1e-6)
    assert rep.passed, rep


def test_patch_chamfer_loss():
    rng = np.random.default_rng(1)
    targets = rng.normal(size=(3, 10, 3))
    preds = Tensor(rng.normal(size=(3, 5, 3)), requires_grad=True)
    expect = np.mean([chamfer(t, p) for t, p in zip(targets, preds.data)])
    assert patch_chamfer_loss(targets, preds).item() == pytest.approx(expect, rel=1e-12)
    rep = grad_check(lambda: patch_chamfer_loss(targets, preds), [preds], tolerance=1e-6)
    assert rep.passed, rep


def test_global_loss_examples():
    zero = Tensor(0.0)
    assert global_loss(zero, zero, 1e-6).item() == 0.0
    d, r = Tensor(0.25), Tensor(3.0)
    assert global_loss(d, r, 0.0).item() == 0.25


def test_discriminator_loss_examples():
    ones, zeros = Tensor(np.ones((4, 1))), Tensor(np.zeros((4, 1)))
    c = Tensor(np.full((4, 1), 0.7))
    assert discriminator_loss(c, c).item() == 0.0
    assert discriminator_loss(ones, zeros).item() == -1.0
    rng = np.random.default_rng(2)
    a, b = Tensor(rng.normal(size=(6, 1))), Tensor(rng.normal(size=(6, 1)))
    assert discriminator_loss(a, b).item() == pytest.approx(-discriminator_loss(b, a).item(), abs=1e-15)
    with pytest.raises(ValueError):
        discriminator_loss(a, Tensor(np.zeros((5, 1))))


def test_generator_loss_examples():
    d, r = Tensor(0.3), Tensor(2.0)
    scores = Tensor(np.random.default_rng(3).normal(size=(5, 1)))
    assert generator_loss(d, r, scores, 1e-6, 0.0).item() == global_loss(d, r, 1e-6).item()
    ones = Tensor(np.ones((7, 1)))
    assert generator_loss(Tensor(0.0), Tensor(0.0), ones, 1e-6, 1e-3).item() == pytest.approx(-1e-3, abs=1e-18)
    higher = Tensor(scores.data + 0.5)
    assert generator_loss(d, r, higher, 1e-6, 1e-3).item() < generator_loss(d, r, scores, 1e-6, 1e-3).item()


def test_discriminator_accepts_both_patch_sizes():
    disc = Discriminator(k=16, seed=0)
    rng = np.random.default_rng(4)
    assert disc.scores(rng.normal(size=(3, 32, 3))).shape == (3, 1)
    assert disc.scores(rng.normal(size=(3, 16, 3))).shape == (3, 1)


def test_clip_weights():
    disc = Discriminator(k=4, seed=0)
    clip_weights(disc.params, 0.01)
    assert max(np.abs(p.data).max() for p in disc.params) <= 0.01


def test_plain_training_is_deterministic(cloud):
    traces = []
    for _ in range(2):
        cfg = small_config(seed=7)
        tr = Trainer(cfg.build_model(), cfg)
        traces.append([r.to_line() for r in tr.fit([cloud], epochs=3)])
    assert traces[0] == traces[1]
    assert traces[0][0].startswith("step=1 d_cd=")


def test_plain_training_reduces_loss(cloud):
    cfg = small_config(seed=1)
    tr = Trainer(cfg.build_model(), cfg)
    trace = tr.fit([cloud], epochs=40)
    assert trace[-1].d_cd < trace[0].d_cd


def test_ablation_arms_selectable(cloud):
    for kw in (dict(uniform_context=True), dict(raw_centroids=True), dict(global_loss=False)):
        cfg = small_config(**kw)
        tr = Trainer(cfg.build_model(), cfg)
        rec = tr.train_step(cloud)
        assert np.isfinite(rec.loss)
    cfg = small_config(uniform_context=True)
    terms = compute_loss(cfg.build_model(), Trainer(cfg.build_model(), cfg).prepared(cloud), cfg)
    m = terms.codes.shape[0]
    assert terms.rate.item() == pytest.approx(m * 4 * np.log2(7) / 128, rel=1e-12)


def test_gan_round(cloud):
    cfg = small_config(mode="gan", seed=3)
    model = cfg.build_model()
    tr = Trainer(model, cfg)
    before = [p.data.copy() for p in model.params]
    out_before = tr.reconstruct(cloud)
    rec = tr.train_gan_round(cloud)
    assert np.isfinite(rec.loss_d) and np.isfinite(rec.loss_g)
    assert max(np.abs(p.data).max() for p in tr.discriminator.params) <= cfg.clip
    assert tr.critic_optimizer.step_count == cfg.n_critic
    assert any(not np.array_equal(a, p.data) for a, p in zip(before, model.params))
    assert not np.array_equal(out_before, tr.reconstruct(cloud))
    assert "loss_d=" in rec.to_line(gan=True)


def test_checkpoint_and_snapshot_hooks(cloud, tmp_path):
    cfg = small_config()
    model = cfg.build_model()
    tr = Trainer(model, cfg)
    seen, snaps = [], []

    def on_epoch(epoch, trace):
        model.save(tmp_path / f"e{epoch}.ipdw")
        seen.append((epoch, len(trace)))

    tr.fit([cloud], epochs=2, on_epoch=on_epoch, snapshot=lambda step, pts: snaps.append((step, pts.shape)))
    assert seen == [(0, 1), (1, 2)]
    assert (tmp_path / "e1.ipdw").exists()
    assert snaps[0][0] == 1 and snaps[0][1][1] == 3


def test_rate_gradient_reaches_context(cloud):
    cfg = small_config(lam=1.0)
    model = cfg.build_model()
    prep = Trainer(model, cfg).prepared(cloud)
    terms = compute_loss(model, prep, cfg)
    model.zero_grad()
    terms.loss.backward()
    assert all(p.grad is not None and np.abs(p.grad).sum() > 0 for p in model.context.params[-2:])
    assert all(p.grad is not None for p in model.encoder.params)
    with ag.no_grad():
        assert not compute_loss(model, prep, cfg).loss.requires_grad
