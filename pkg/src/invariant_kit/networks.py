"""Feedforward networks, exact evaluation, and local affine relaxations.

The relaxation is a CROWN-style backward pass in the same-slope variant:
each neuron's lower and upper linear bounds share one slope, so the whole
network gets a single coefficient matrix C with two offsets d_lo <= d_hi
valid on a stated input region. Coefficient accumulation runs in interval
arithmetic and the residual from collapsing to a point matrix C is folded
into the offsets, so validity survives floating point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .intervals import (
    Interval,
    IntervalMatrix,
    IntervalVector,
    _down,
    _down2,
    _up,
    _up2,
    k_add,
    matvec_point,
    pos_neg_split,
)

__all__ = [
    "FeedforwardNetwork",
    "Layer",
    "AffineRelaxation",
    "LocalizationError",
    "load_network",
    "save_network",
    "interval_forward",
    "crown_affine_bounds",
    "ibp_relaxation",
    "nn_inclusion",
    "build_linear_relu_net",
    "compose_input_transform",
]

_ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")


class LocalizationError(ValueError):
    """A box escaped the region a localized bound was computed for."""


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


_ACT_FN = {
    "relu": lambda z: np.maximum(z, 0.0),
    "tanh": np.tanh,
    "sigmoid": _sigmoid,
    "identity": lambda z: z,
}


def _act_interval(act: str, lo, hi):
    # all supported activations are nondecreasing
    if act == "identity":
        return lo, hi
    if act == "relu":
        return np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    if act == "tanh":
        return (np.maximum(_down2(np.tanh(lo)), -1.0),
                np.minimum(_up2(np.tanh(hi)), 1.0))
    if act == "sigmoid":
        return (np.maximum(_down2(_sigmoid(lo)), 0.0),
                np.minimum(_up2(_sigmoid(hi)), 1.0))
    raise ValueError(f"unknown activation {act!r}")


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        b = np.asarray(self.bias, dtype=float)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError(f"layer shape mismatch: W {w.shape}, b {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer weights must be finite")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)


class FeedforwardNetwork:
    """A chain of affine layers with monotone scalar activations.

    The final layer's activation is the identity, matching the usual
    controller readout.
    """

    def __init__(self, layers):
        layers = [ly if isinstance(ly, Layer) else Layer(*ly) for ly in layers]
        if not layers:
            raise ValueError("network needs at least one layer")
        if layers[-1].activation != "identity":
            raise ValueError("final layer activation must be identity")
        for a, b in zip(layers, layers[1:]):
            if b.weights.shape[1] != a.weights.shape[0]:
                raise ValueError(
                    f"layer shapes do not chain: {a.weights.shape} -> {b.weights.shape}")
        self.layers = tuple(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    def forward(self, x) -> np.ndarray:
        """Exact layer-by-layer evaluation; batches over leading axes."""
        v = np.asarray(x, dtype=float)
        for ly in self.layers:
            v = v @ ly.weights.T + ly.bias
            v = _ACT_FN[ly.activation](v)
        return v

    __call__ = forward

    def __repr__(self):
        dims = [self.input_dim] + [ly.weights.shape[0] for ly in self.layers]
        return f"FeedforwardNetwork({'x'.join(str(d) for d in dims)})"


def load_network(path) -> FeedforwardNetwork:
    """Load a network from the versioned JSON weight format."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != 1:
        raise ValueError(f"unsupported network file version {doc.get('version')!r}")
    layers = [Layer(np.array(ly["weights"], dtype=float),
                    np.array(ly["bias"], dtype=float),
                    ly["activation"])
              for ly in doc["layers"]]
    return FeedforwardNetwork(layers)


def save_network(net: FeedforwardNetwork, path) -> None:
    doc = {
        "version": 1,
        "layers": [
            {"weights": ly.weights.tolist(), "bias": ly.bias.tolist(),
             "activation": ly.activation}
            for ly in net.layers
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def interval_forward(net: FeedforwardNetwork, box: IntervalVector) -> IntervalVector:
    """Interval bound propagation through the network (natural inclusion)."""
    cur = box
    for ly in net.layers:
        pre = IntervalMatrix.thin(ly.weights) @ cur + ly.bias
        cur = IntervalVector(*_act_interval(ly.activation, pre.lo, pre.hi))
    return cur


def _preactivation_boxes(net: FeedforwardNetwork, box: IntervalVector):
    pres = []
    cur = box
    for ly in net.layers:
        pre = IntervalMatrix.thin(ly.weights) @ cur + ly.bias
        pres.append(pre)
        cur = IntervalVector(*_act_interval(ly.activation, pre.lo, pre.hi))
    return pres


# ---------------------------------------------------------------------------
# same-slope neuron relaxations
# ---------------------------------------------------------------------------

def _relu_crit(alpha, lo, hi):
    return [0.0] if lo < 0.0 < hi else []


def _tanh_crit(alpha, lo, hi):
    # d/dz tanh = 1 - tanh^2 = alpha  =>  z = +/- atanh(sqrt(1 - alpha))
    if not 0.0 < alpha < 1.0:
        return []
    zc = math.atanh(math.sqrt(1.0 - alpha))
    return [z for z in (-zc, zc) if lo < z < hi]


def _sigmoid_crit(alpha, lo, hi):
    # d/dz sigmoid = s(1-s) = alpha  =>  s = (1 +/- sqrt(1-4 alpha)) / 2
    if not 0.0 < alpha < 0.25:
        return []
    r = math.sqrt(1.0 - 4.0 * alpha)
    out = []
    for s in ((1.0 - r) / 2.0, (1.0 + r) / 2.0):
        if 0.0 < s < 1.0:
            z = math.log(s / (1.0 - s))
            if lo < z < hi:
                out.append(z)
    return out


_CRIT = {"relu": _relu_crit, "tanh": _tanh_crit, "sigmoid": _sigmoid_crit}

_DERIV = {
    "relu": lambda z: 0.0 if z <= 0.0 else 1.0,
    "tanh": lambda z: 1.0 - math.tanh(z) ** 2,
    "sigmoid": lambda z: _sigmoid(z) * (1.0 - _sigmoid(z)),
    "identity": lambda z: 1.0,
}


def same_slope_relaxation(act: str, lo: float, hi: float) -> tuple[float, float, float]:
    """One slope alpha and two intercepts with alpha*z+b_lo <= act(z) <= alpha*z+b_up
    on [lo, hi].

    The slope is the secant; intercepts are the extremes of act(z) - alpha*z
    over the endpoints and interior stationary points, padded by a few ulps
    so the bound is valid in real arithmetic.
    """
    fn = _ACT_FN[act]
    if act == "identity":
        return 1.0, 0.0, 0.0
    if act == "relu":
        if lo >= 0.0:
            return 1.0, 0.0, 0.0
        if hi <= 0.0:
            return 0.0, 0.0, 0.0
    if hi - lo < 1e-12:
        mid = 0.5 * (lo + hi)
        alpha = min(max(_DERIV[act](mid), 0.0), 1.0)
        cands = [lo, hi]
    else:
        alpha = (float(fn(hi)) - float(fn(lo))) / (hi - lo)
        alpha = min(max(alpha, 0.0), 1.0)
        cands = [lo, hi] + _CRIT[act](alpha, lo, hi)
    vals = [float(fn(c)) - alpha * c for c in cands]
    scale = max(max(abs(float(fn(c))), abs(alpha * c)) for c in cands)
    pad = 4.0 * np.spacing(scale) if scale > 0.0 else 0.0
    b_lo = float(_down2(min(vals) - pad))
    b_up = float(_up2(max(vals) + pad))
    return alpha, b_lo, b_up


# ---------------------------------------------------------------------------
# CROWN backward pass
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineRelaxation:
    """Local affine bounds C x + d_lo <= N(x) <= C x + d_hi on a region."""

    C: np.ndarray  # (p, n)
    d_lo: np.ndarray  # (p,)
    d_hi: np.ndarray  # (p,)
    region: IntervalVector

    def __post_init__(self):
        if np.any(self.d_lo > self.d_hi):
            raise ValueError("relaxation offsets out of order")


def crown_affine_bounds(net: FeedforwardNetwork,
                        region: IntervalVector) -> AffineRelaxation:
    """Same-slope CROWN bounds for the network over the region."""
    if region.dim != net.input_dim:
        raise ValueError(f"region dim {region.dim} != network input {net.input_dim}")
    pres = _preactivation_boxes(net, region)

    last = net.layers[-1]
    a = IntervalMatrix.thin(last.weights)
    c = IntervalVector.thin(last.bias)
    for i in range(len(net.layers) - 2, -1, -1):
        ly = net.layers[i]
        pre = pres[i]
        width = ly.weights.shape[0]
        alpha = np.empty(width)
        b_lo = np.empty(width)
        b_up = np.empty(width)
        for j in range(width):
            alpha[j], b_lo[j], b_up[j] = same_slope_relaxation(
                ly.activation, float(pre.lo[j]), float(pre.hi[j]))
        # current bound: out in a @ xi_{i+1} + c, with xi_{i+1} = act(W xi_i + b)
        # in diag(alpha) z + [b_lo, b_up]
        c = c + a @ IntervalVector(b_lo, b_up)
        scaled = IntervalMatrix(*_scale_cols(a.lo, a.hi, alpha))
        c = c + scaled @ IntervalVector.thin(ly.bias)
        a = scaled @ IntervalMatrix.thin(ly.weights)

    # collapse the coefficient interval to its midpoint; the residual acts on
    # the region and is absorbed into the offsets
    cmat = 0.5 * (a.lo + a.hi)
    resid = IntervalMatrix(_down(a.lo - cmat), _up(a.hi - cmat))
    d = c + resid @ region
    return AffineRelaxation(cmat, d.lo, d.hi, region)


def _scale_cols(alo, ahi, alpha):
    p1 = alo * alpha[None, :]
    p2 = ahi * alpha[None, :]
    return _down(np.minimum(p1, p2)), _up(np.maximum(p1, p2))


def ibp_relaxation(net: FeedforwardNetwork, region: IntervalVector) -> AffineRelaxation:
    """Degenerate relaxation C = 0 with IBP output bounds as the offsets."""
    out = interval_forward(net, region)
    zeros = np.zeros((net.output_dim, net.input_dim))
    return AffineRelaxation(zeros, out.lo, out.hi, region)


def nn_inclusion(rel: AffineRelaxation, box: IntervalVector) -> IntervalVector:
    """Network output bounds on a sub-box of the relaxation region.

    Evaluates C^+ lo + C^- hi + d_lo (and mirrored for the upper bound),
    which is the interval image of C[box] + [d].
    """
    if not rel.region.contains(box):
        raise LocalizationError(
            f"box {box!r} escapes relaxation region {rel.region!r}")
    c_plus, c_minus = pos_neg_split(rel.C)
    t1 = matvec_point(c_plus, box.lo)
    t2 = matvec_point(c_minus, box.hi)
    t3 = matvec_point(c_plus, box.hi)
    t4 = matvec_point(c_minus, box.lo)
    lo, _ = k_add(*k_add(t1.lo, t1.hi, t2.lo, t2.hi), rel.d_lo, rel.d_lo)
    _, hi = k_add(*k_add(t3.lo, t3.hi, t4.lo, t4.hi), rel.d_hi, rel.d_hi)
    return IntervalVector(lo, hi)


# ---------------------------------------------------------------------------
# constructions
# ---------------------------------------------------------------------------

def build_linear_relu_net(gain: np.ndarray) -> FeedforwardNetwork:
    """A one-hidden-layer ReLU network computing exactly x -> K x.

    Uses relu(x) - relu(-x) = x on every coordinate.
    """
    gain = np.atleast_2d(np.asarray(gain, dtype=float))
    p, n = gain.shape
    eye = np.eye(n)
    w0 = np.vstack([eye, -eye])
    w1 = np.hstack([gain, -gain])
    return FeedforwardNetwork([
        Layer(w0, np.zeros(2 * n), "relu"),
        Layer(w1, np.zeros(p), "identity"),
    ])


def compose_input_transform(net: FeedforwardNetwork,
                            tinv: np.ndarray) -> FeedforwardNetwork:
    """The network y -> N(Tinv y), built by prepending a linear layer."""
    tinv = np.asarray(tinv, dtype=float)
    n = net.input_dim
    if tinv.shape != (n, n):
        raise ValueError(f"transform shape {tinv.shape} != ({n}, {n})")
    first = Layer(tinv, np.zeros(n), "identity")
    return FeedforwardNetwork([first, *net.layers])
