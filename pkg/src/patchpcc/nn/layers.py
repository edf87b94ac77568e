"""Layer vocabulary and sequential networks built from it."""

import collections
import hashlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from patchpcc.errors import ShapeError
from patchpcc.nn import autograd as ag
from patchpcc.nn.autograd import Tensor


class Kind(str, Enum):
    SMLP = "SMLP"                          # shared MLP, applied to every point row
    MLP = "MLP"                            # plain MLP over the last axis
    SAPP = "SAPP"                          # set abstraction per point
    POINTNET_POOL = "POINTNET_POOL"        # max over the point axis
    SIGMOID = "SIGMOID"
    SOFTMAX_LAST = "SOFTMAX_LAST"
    RESHAPE = "RESHAPE"                    # last axis -> widths
    CONCAT_BROADCAST = "CONCAT_BROADCAST"  # join current activation with the network input


AFFINE_KINDS = (Kind.SMLP, Kind.MLP, Kind.SAPP)


@dataclass(frozen=True)
class LayerSpec:
    """One block of a network.

    For the affine kinds ``widths`` lists every layer dimension including the
    input; hidden layers are rectified, and the final one too when
    ``activate_last`` is set.  RESHAPE reuses ``widths`` as the new trailing
    extents.  SAPP emits ``3 + widths[-1]`` features per point (coordinates
    followed by the pooled neighbourhood feature).
    """

    kind: Kind
    widths: tuple = ()
    group_size: int = 0
    activate_last: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if any(w <= 0 for w in self.widths):
            raise ValueError(f"{self.kind.value}: widths must be positive, got {self.widths}")
        if self.kind in AFFINE_KINDS and len(self.widths) < 2:
            raise ValueError(f"{self.kind.value}: needs at least two widths")
        if self.kind is Kind.SAPP:
            if self.group_size < 1:
                raise ValueError("SAPP: group_size must be >= 1")
            if self.widths[0] != 3:
                raise ValueError("SAPP: first width must be 3 (relative coordinates)")
        if self.kind is Kind.RESHAPE and not self.widths:
            raise ValueError("RESHAPE: target extents required")

    @property
    def param_shapes(self):
        if self.kind not in AFFINE_KINDS:
            return []
        shapes = []
        for din, dout in zip(self.widths[:-1], self.widths[1:]):
            shapes += [(din, dout), (dout,)]
        return shapes

    @property
    def out_width(self):
        if self.kind is Kind.SAPP:
            return 3 + self.widths[-1]
        return self.widths[-1]


def init_params(specs, rng):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    params = []
    for spec in specs:
        for shape in spec.param_shapes:
            fan_in = shape[0] if len(shape) == 2 else params[-1].shape[0]
            bound = np.sqrt(1.0 / fan_in)
            params.append(Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True))
    return params


def mlp_stack(x, params, activate_last=True):
    n_layers = len(params) // 2
    for i in range(n_layers):
        x = ag.linear(x, params[2 * i], params[2 * i + 1])
        if i < n_layers - 1 or activate_last:
            x = ag.relu(x)
    return x


_KNN_CACHE = collections.OrderedDict()
_KNN_CACHE_SIZE = 8


def knn_within(points, group_size):
    """Indices of each point's nearest neighbours inside its own set.

    ``points`` is (B, P, 3).  Neighbours are ordered by distance, ties by
    lower index, and include the point itself.  Training feeds the same
    patches every step, so recent results are memoised by content.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    key = (points.shape, group_size, hashlib.blake2b(points.tobytes(), digest_size=16).digest())
    hit = _KNN_CACHE.get(key)
    if hit is not None:
        _KNN_CACHE.move_to_end(key)
        return hit
    diff = points[:, :, None, :] - points[:, None, :, :]
    d2 = np.einsum("bpqc,bpqc->bpq", diff, diff)
    idx = np.argsort(d2, axis=-1, kind="stable")[..., :group_size]
    idx.setflags(write=False)
    _KNN_CACHE[key] = idx
    if len(_KNN_CACHE) > _KNN_CACHE_SIZE:
        _KNN_CACHE.popitem(last=False)
    return idx


def set_abstraction(x, params, group_size):
    """SAPP block: per-point max-pooled MLP over neighbour offsets, plus coordinates."""
    squeeze = x.ndim == 2
    if squeeze:
        x = ag.reshape(x, (1,) + x.shape)
    group = min(group_size, x.shape[1])
    idx = knn_within(x.data, group)
    h = mlp_stack(ag.neighbor_offsets(x, idx), params, activate_last=True)
    out = ag.concat_last(x, ag.max_pool(h, axis=2))
    if squeeze:
        out = ag.reshape(out, out.shape[1:])
    return out


def forward(specs, x, params):
    """Evaluate a layer sequence on ``x`` with a flat parameter list.

    Raises ShapeError naming the offending layer on any extent mismatch.
    """
    expected = [s for spec in specs for s in spec.param_shapes]
    if len(params) != len(expected):
        raise ShapeError(f"expected {len(expected)} parameter tensors, got {len(params)}")
    for i, (p, shape) in enumerate(zip(params, expected)):
        if p.shape != shape:
            raise ShapeError(f"parameter {i} has shape {p.shape}, expected {shape}")

    net_input = x
    pos = 0
    for i, spec in enumerate(specs):
        kind = spec.kind
        n_params = len(spec.param_shapes)
        mine = params[pos:pos + n_params]
        pos += n_params
        if kind in (Kind.SMLP, Kind.MLP):
            if x.shape[-1] != spec.widths[0]:
                raise ShapeError(f"{kind.value} expects width {spec.widths[0]}, got {x.shape[-1]}", i)
            if kind is Kind.SMLP and x.ndim < 2:
                raise ShapeError("SMLP needs a point axis", i)
            x = mlp_stack(x, mine, spec.activate_last)
        elif kind is Kind.SAPP:
            if x.shape[-1] != 3 or x.ndim not in (2, 3):
                raise ShapeError(f"SAPP expects (..., P, 3) points, got {x.shape}", i)
            x = set_abstraction(x, mine, spec.group_size)
        elif kind is Kind.POINTNET_POOL:
            if x.ndim < 2:
                raise ShapeError("POINTNET_POOL needs a point axis", i)
            x = ag.max_pool(x, axis=-2)
        elif kind is Kind.SIGMOID:
            x = ag.sigmoid(x)
        elif kind is Kind.SOFTMAX_LAST:
            x = ag.softmax_last(x)
        elif kind is Kind.RESHAPE:
            if int(np.prod(spec.widths)) != x.shape[-1]:
                raise ShapeError(f"cannot reshape width {x.shape[-1]} to {spec.widths}", i)
            x = ag.reshape(x, x.shape[:-1] + spec.widths)
        elif kind is Kind.CONCAT_BROADCAST:
            try:
                if x.ndim > net_input.ndim:
                    x = ag.concat_broadcast(x, net_input)
                else:
                    x = ag.concat_broadcast(net_input, x)
            except ShapeError as exc:
                raise ShapeError(str(exc), i) from None
    return x


class Network:
    """A LayerSpec sequence together with its parameters."""

    def __init__(self, specs, rng):
        self.specs = tuple(specs)
        self.params = init_params(self.specs, rng)

    def __call__(self, x):
        if not isinstance(x, Tensor):
            x = Tensor(x)
        return forward(self.specs, x, self.params)

    @property
    def n_weights(self):
        return sum(p.size for p in self.params)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
