"""Rate-distortion training, plain and adversarial."""

import math
from dataclasses import dataclass, fields

import numpy as np

from patchpcc.metrics import nearest
from patchpcc.model import CodecModel, rate_bits
from patchpcc.nn import autograd as ag
from patchpcc.nn.autograd import Tensor, make_op
from patchpcc.nn.layers import Kind, LayerSpec, Network
from patchpcc.nn.optim import Adam, RMSprop
from patchpcc.pipeline import CodecSettings, prepare


@dataclass
class TrainConfig:
    K: int = 256
    alpha: float = 2.0
    L: int = 7
    d: int = 16
    n0: int = 1024
    lam: float = 1e-6            # rate weight, plain mode (also lambda_1 in GAN mode)
    lam2: float = 1e-3           # adversarial weight
    lr: float = 5e-4
    gan_lr: float = 5e-5
    epochs: int = 8
    seed: int = 0
    mode: str = "plain"          # "plain" | "gan"
    roc: float = 0.25
    depth: int = None
    extended: bool = False
    clip: float = 0.01
    n_critic: int = 5
    n_patches: int = None
    # ablation arms
    uniform_context: bool = False
    raw_centroids: bool = False
    global_loss: bool = True

    def __post_init__(self):
        if self.mode not in ("plain", "gan"):
            raise ValueError(f"unknown training mode {self.mode!r}")

    @property
    def k(self):
        return self.settings().k

    def settings(self):
        return CodecSettings(K=self.K, alpha=self.alpha, roc=self.roc, depth=self.depth,
                             extended=self.extended, seed=self.seed, n_patches=self.n_patches,
                             raw_centroids=self.raw_centroids,
                             uniform_context=self.uniform_context, n0=self.n0)

    def build_model(self):
        return CodecModel(self.k, self.d, self.L, seed=self.seed)


# losses -------------------------------------------------------------------

def chamfer_loss(target, pred):
    """Differentiable Chamfer distance between a fixed cloud and ``pred`` (N, 3)."""
    target = np.asarray(target, dtype=np.float64)
    p = pred.data
    to_pred, d_fwd = nearest(p, target)
    to_target, d_bwd = nearest(target, p)
    value = d_fwd.mean() + d_bwd.mean()

    def backward(g):
        g = float(g)
        grad = 2.0 * g / len(p) * (p - target[to_target])
        contrib = 2.0 * g / len(target) * (p[to_pred] - target)
        for c in range(3):
            grad[:, c] += np.bincount(to_pred, weights=contrib[:, c], minlength=len(p))
        return (grad,)

    return make_op(np.array(value), (pred,), backward)


def patch_chamfer_loss(targets, preds):
    """Mean per-patch Chamfer distance; targets (m, K, 3), preds (m, k, 3)."""
    targets = np.asarray(targets, dtype=np.float64)
    p = preds.data
    diff = p[:, :, None, :] - targets[:, None, :, :]
    d2 = np.einsum("mkjc,mkjc->mkj", diff, diff)
    bwd_idx = d2.argmin(axis=2)      # for each predicted point, nearest target
    fwd_idx = d2.argmin(axis=1)      # for each target point, nearest prediction
    m, k, K = d2.shape
    bwd = np.take_along_axis(d2, bwd_idx[..., None], axis=2)[..., 0]
    fwd = np.take_along_axis(d2, fwd_idx[:, None, :], axis=1)[:, 0, :]
    value = (bwd.mean(axis=1) + fwd.mean(axis=1)).mean()

    def backward(g):
        g = float(g) / m
        rows = np.arange(m)[:, None]
        grad = 2.0 * g / k * (p - targets[rows, bwd_idx])
        contrib = 2.0 * g / K * (p[rows, fwd_idx] - targets)
        flat = (rows * k + fwd_idx).ravel()
        for c in range(3):
            grad[..., c] += np.bincount(flat, weights=contrib[..., c].ravel(),
                                        minlength=m * k).reshape(m, k)
        return (grad,)

    return make_op(np.array(value), (preds,), backward)


def global_loss(distortion, rate, lam):
    return distortion + rate * lam


def discriminator_loss(real_scores, fake_scores):
    """WGAN critic loss ``-(mean d(real) - mean d(fake))``."""
    if real_scores.shape != fake_scores.shape:
        raise ValueError("real and fake score counts differ")
    return -(ag.mean(real_scores) - ag.mean(fake_scores))


def generator_loss(distortion, rate, fake_scores, lam1, lam2):
    return distortion + rate * lam1 + ag.mean(-fake_scores) * lam2


# discriminator ------------------------------------------------------------

def discriminator_specs(k, group_size=16):
    return [
        LayerSpec(Kind.SAPP, (3, 32, 64, 128), group_size=group_size),
        LayerSpec(Kind.SMLP, (3 + 128, 128, 256, 512, 16)),
        LayerSpec(Kind.POINTNET_POOL),
        LayerSpec(Kind.MLP, (16, 256, k * 128, 128, 1), activate_last=False),
    ]


class Discriminator(Network):
    """Patch critic; works on patches of any point count (K inputs or k outputs)."""

    def __init__(self, k, seed=1):
        super().__init__(discriminator_specs(k), np.random.default_rng(seed))
        self.k = k

    def scores(self, patches):
        x = patches if isinstance(patches, Tensor) else Tensor(patches)
        return self(x)


def clip_weights(params, bound):
    for p in params:
        np.clip(p.data, -bound, bound, out=p.data)


# training loop ------------------------------------------------------------

@dataclass
class StepRecord:
    step: int
    d_cd: float
    rate: float
    loss: float
    loss_d: float = math.nan
    loss_g: float = math.nan

    def to_line(self, gan=False):
        names = [f.name for f in fields(self)]
        if not gan:
            names = names[:4]
        return " ".join(f"{name}={getattr(self, name)!r}" for name in names)


@dataclass
class LossTerms:
    loss: Tensor
    distortion: Tensor
    rate: Tensor            # bits per input point
    fake: Tensor            # decoder output in the network domain (m, k, 3)
    codes: np.ndarray
    reconstruction: np.ndarray


def compute_loss(model, prep, config, surrogate=False):
    """Full forward pass for one prepared cloud: distortion, rate and the loss."""
    ps = prep.patchset
    fw = model.forward(ps.patches, ps.centroids, surrogate=surrogate,
                       uniform_context=config.uniform_context)
    factor = ps.unscale_factor()
    if config.global_loss:
        placed = ag.affine_const(fw.patches, factor, ps.centroids[:, None, :])
        flat = ag.reshape(placed, (-1, 3))
        distortion = chamfer_loss(prep.cloud.points, flat)
        recon = flat.data
    else:
        rel = ag.affine_const(fw.patches, factor, 0.0)
        distortion = patch_chamfer_loss(ps.relative, rel)
        recon = (rel.data + ps.centroids[:, None, :]).reshape(-1, 3)
    rate = rate_bits(fw.pmfs, fw.codes) * (1.0 / prep.n)
    return LossTerms(global_loss(distortion, rate, config.lam), distortion, rate,
                     fw.patches, fw.codes, recon)


class Trainer:
    """Owns the optimisers and the per-cloud preparation cache.

    Centroid coding is discrete, so each cloud is prepared once and reused;
    only the patch/latent path is learned.
    """

    def __init__(self, model, config, discriminator=None):
        self.model = model
        self.config = config
        self.settings = config.settings()
        self.step = 0
        self._cache = {}
        if config.mode == "gan":
            self.discriminator = discriminator or Discriminator(model.k, seed=config.seed + 1)
            self.optimizer = RMSprop(model.params, lr=config.gan_lr)
            self.critic_optimizer = RMSprop(self.discriminator.params, lr=config.gan_lr)
        else:
            self.discriminator = None
            self.optimizer = Adam(model.params, lr=config.lr)

    def prepared(self, cloud, key=None):
        key = id(cloud) if key is None else key
        if key not in self._cache:
            self._cache[key] = prepare(cloud, self.settings)
        return self._cache[key]

    def train_step(self, cloud, key=None):
        prep = self.prepared(cloud, key)
        terms = compute_loss(self.model, prep, self.config)
        self.model.zero_grad()
        terms.loss.backward()
        self.optimizer.step()
        self.step += 1
        return StepRecord(self.step, terms.distortion.item(), terms.rate.item(), terms.loss.item())

    def critic_step(self, real, fake):
        disc = self.discriminator
        loss = discriminator_loss(disc.scores(real), disc.scores(fake))
        disc.zero_grad()
        loss.backward()
        self.critic_optimizer.step()
        clip_weights(disc.params, self.config.clip)
        return loss.item()

    def train_gan_round(self, cloud, key=None):
        """``n_critic`` critic updates, then one generator update."""
        prep = self.prepared(cloud, key)
        real = prep.patchset.patches
        with ag.no_grad():
            fake = self.model.forward(real, prep.centroids,
                                      uniform_context=self.config.uniform_context).patches.data
        loss_d = math.nan
        for _ in range(self.config.n_critic):
            loss_d = self.critic_step(real, fake)

        terms = compute_loss(self.model, prep, self.config)
        fake_scores = self.discriminator.scores(terms.fake)
        loss_g = generator_loss(terms.distortion, terms.rate, fake_scores,
                                self.config.lam, self.config.lam2)
        self.model.zero_grad()
        loss_g.backward()
        self.discriminator.zero_grad()
        self.optimizer.step()
        self.step += 1
        return StepRecord(self.step, terms.distortion.item(), terms.rate.item(),
                          loss_g.item(), loss_d, loss_g.item())

    def fit(self, clouds, epochs=None, log=None, on_epoch=None, snapshot=None):
        """Run ``epochs`` passes over ``clouds`` (one cloud per step).

        ``log`` receives one text line per step; ``on_epoch(epoch, trace)``
        runs after every epoch (checkpointing); ``snapshot(step, points)``
        gets the normalised reconstruction after every step when given.
        """
        epochs = self.config.epochs if epochs is None else epochs
        gan = self.config.mode == "gan"
        trace = []
        for epoch in range(epochs):
            for key, cloud in enumerate(clouds):
                rec = self.train_gan_round(cloud, key) if gan else self.train_step(cloud, key)
                trace.append(rec)
                if log is not None:
                    log(rec.to_line(gan))
                if snapshot is not None:
                    snapshot(rec.step, self.reconstruct(cloud, key))
            if on_epoch is not None:
                on_epoch(epoch, trace)
        return trace

    def reconstruct(self, cloud, key=None):
        with ag.no_grad():
            return compute_loss(self.model, self.prepared(cloud, key), self.config).reconstruction
