"""Patch autoencoder, latent quantiser and centroid-conditioned entropy model."""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from patchpcc.errors import FormatMismatchError
from patchpcc.nn import autograd as ag
from patchpcc.nn.autograd import Tensor, make_op
from patchpcc.nn.layers import Kind, LayerSpec, Network
from patchpcc.nn.weights import dump_weights, load_weights

GROUP_SIZE = 16
DECODER_FEATURES = 128
PROB_FLOOR = 1e-12


def quantize(y, levels=7):
    """Latent codes ``min(floor(sigmoid(y) * L), L - 1)``."""
    s = expit(np.asarray(y, dtype=np.float64))
    return np.minimum(np.floor(s * levels), levels - 1).astype(np.int64)


def dequantize(codes):
    """Bin centre of each code on the ``sigmoid(y) * L`` scale."""
    return np.asarray(codes, dtype=np.float64) + 0.5


def quantize_ste(y, levels=7, surrogate=False):
    """Quantiser node.

    Forward emits the dequantised code (or ``sigmoid(y) * L`` when
    ``surrogate`` is set, for finite-difference checks); backward always uses
    ``d/dy [sigmoid(y) * L]``.  Returns ``(tensor, codes)``.
    """
    s = expit(y.data)
    codes = np.minimum(np.floor(s * levels), levels - 1).astype(np.int64)
    value = s * levels if surrogate else codes + 0.5
    slope = levels * s * (1.0 - s)
    return make_op(value, (y,), lambda g: (g * slope,)), codes


def rate_bits(pmfs, codes):
    """Differentiable ``sum -log2 p[code]`` with probabilities floored at 1e-12."""
    p = pmfs.data
    codes = np.asarray(codes, dtype=np.int64)
    chosen = np.take_along_axis(p, codes[..., None], axis=-1)[..., 0]
    clamped = np.maximum(chosen, PROB_FLOOR)
    bits = float(-np.log2(clamped).sum())

    def backward(g):
        gp = np.zeros(p.shape)
        local = np.where(chosen > PROB_FLOOR, -1.0 / (np.log(2.0) * clamped), 0.0)
        np.put_along_axis(gp, codes[..., None], (float(g) * local)[..., None], axis=-1)
        return (gp,)

    return make_op(np.array(bits), (pmfs,), backward)


def estimate_rate(codes, pmfs, n):
    """Estimated bits per input point of the latent codes under ``pmfs``."""
    p = pmfs.data if isinstance(pmfs, Tensor) else np.asarray(pmfs, dtype=np.float64)
    chosen = np.take_along_axis(p, np.asarray(codes, dtype=np.int64)[..., None], axis=-1)
    return float(-np.log2(np.maximum(chosen, PROB_FLOOR)).sum() / n)


def encoder_specs(d=16, group_size=GROUP_SIZE):
    return [
        LayerSpec(Kind.SAPP, (3, 32, 64, 128), group_size=group_size),
        LayerSpec(Kind.SMLP, (3 + 128, 128, 256, 512, d), activate_last=False),
        LayerSpec(Kind.POINTNET_POOL),
    ]


def decoder_specs(k, d=16):
    return [
        LayerSpec(Kind.MLP, (d, 256, 1024, k * DECODER_FEATURES)),
        LayerSpec(Kind.RESHAPE, (k, DECODER_FEATURES)),
        LayerSpec(Kind.CONCAT_BROADCAST),
        LayerSpec(Kind.SMLP, (DECODER_FEATURES + d, 128, 64, 32, 3), activate_last=False),
    ]


def context_specs(d=16, levels=7):
    return [
        LayerSpec(Kind.SMLP, (3, 64, 128, 256)),
        LayerSpec(Kind.POINTNET_POOL),
        LayerSpec(Kind.CONCAT_BROADCAST),
        LayerSpec(Kind.SMLP, (3 + 256, 256, 512, d * levels), activate_last=False),
        LayerSpec(Kind.RESHAPE, (d, levels)),
        LayerSpec(Kind.SOFTMAX_LAST),
    ]


@dataclass
class ForwardResult:
    latent: Tensor        # pre-quantisation y, (m, d)
    codes: np.ndarray     # (m, d) ints in [0, L)
    patches: Tensor       # decoder output in the network domain, (m, k, 3)
    pmfs: Tensor          # (m, d, L)


class CodecModel:
    """Encoder, decoder and context model sharing one weight file.

    The parameter order (encoder, decoder, context) is the weight file order.
    """

    def __init__(self, k, d=16, levels=7, seed=0, group_size=GROUP_SIZE):
        if levels < 2 or d < 1 or k < 1:
            raise ValueError("need k >= 1, d >= 1 and at least two quantisation levels")
        self.k, self.d, self.levels = int(k), int(d), int(levels)
        rng = np.random.default_rng(seed)
        self.encoder = Network(encoder_specs(self.d, group_size), rng)
        self.decoder = Network(decoder_specs(self.k, self.d), rng)
        self.context = Network(context_specs(self.d, self.levels), rng)

    @property
    def params(self):
        return self.encoder.params + self.decoder.params + self.context.params

    @property
    def autoencoder_params(self):
        return self.encoder.params + self.decoder.params

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def encode(self, patches):
        """(m, K, 3) network-domain patches -> (m, d) real latents."""
        x = patches if isinstance(patches, Tensor) else Tensor(patches)
        return self.encoder(x)

    def decode(self, latent_values):
        """(m, d) dequantised latents -> (m, k, 3) network-domain patches."""
        x = latent_values if isinstance(latent_values, Tensor) else Tensor(latent_values)
        return self.decoder(x)

    def context_pmfs(self, centroids):
        """(m, 3) decoded centroids -> (m, d, L) pmfs."""
        x = centroids if isinstance(centroids, Tensor) else Tensor(centroids)
        return self.context(x)

    def uniform_pmfs(self, m):
        return Tensor(np.full((m, self.d, self.levels), 1.0 / self.levels))

    def forward(self, patches, centroids, surrogate=False, uniform_context=False):
        y = self.encode(patches)
        q, codes = quantize_ste(y, self.levels, surrogate=surrogate)
        out = self.decode(q)
        pmfs = self.uniform_pmfs(len(codes)) if uniform_context else self.context_pmfs(centroids)
        return ForwardResult(y, codes, out, pmfs)

    # weight files ---------------------------------------------------------

    def to_bytes(self):
        return dump_weights([p.data for p in self.params])

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    def load_arrays(self, arrays):
        params = self.params
        if len(arrays) != len(params):
            raise FormatMismatchError(f"weight file has {len(arrays)} tensors, model needs {len(params)}")
        for p, a in zip(params, arrays):
            if p.shape != a.shape:
                raise FormatMismatchError(f"weight tensor shape {a.shape} != expected {p.shape}")
            p.data = np.array(a, dtype=np.float64)

    @classmethod
    def from_bytes(cls, data):
        arrays = load_weights(data)
        d, levels, k = infer_dimensions(arrays)
        model = cls(k, d, levels)
        model.load_arrays(arrays)
        return model

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def infer_dimensions(arrays):
    """Recover (d, L, k) from the tensor shapes of a weight file."""
    n_enc = sum(len(s.param_shapes) for s in encoder_specs())
    n_dec = sum(len(s.param_shapes) for s in decoder_specs(1))
    n_ctx = sum(len(s.param_shapes) for s in context_specs())
    if len(arrays) != n_enc + n_dec + n_ctx:
        raise FormatMismatchError(f"weight file has {len(arrays)} tensors, expected {n_enc + n_dec + n_ctx}")
    enc_last = arrays[n_enc - 1]
    dec_mlp_last = arrays[n_enc + 5]
    ctx_last = arrays[-1]
    d = int(enc_last.shape[0])
    k, rem = divmod(int(dec_mlp_last.shape[0]), DECODER_FEATURES)
    levels, rem2 = divmod(int(ctx_last.shape[0]), d) if d else (0, 1)
    if rem or rem2 or k < 1 or levels < 2:
        raise FormatMismatchError("weight tensor shapes do not describe a codec model")
    return d, levels, k
