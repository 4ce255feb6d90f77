"""Scalar function approximators: dense/DGM networks, periodic embedding,
and the exponential density head."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

TWO_PI = 2.0 * np.pi

_ACTIVATIONS = {
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "exp": ad.exp,
    "identity": lambda x: x,
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str           # "dense" | "dgm"
    width: int
    activation: str = "tanh"


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    layers: tuple = ()
    embedding: str = "identity"     # "identity" | "fourier"
    time_input: bool = False

    @property
    def feature_dim(self):
        d = 2 * self.input_dim if self.embedding == "fourier" else self.input_dim
        return d + (1 if self.time_input else 0)


def dgm_architecture(d, width=4, depth=1, activation="tanh", embedding="fourier"):
    layers = tuple(LayerSpec("dgm", width, activation) for _ in range(depth))
    return Architecture(input_dim=d, layers=layers, embedding=embedding)


def _segments(arch):
    """Yield ("w", rows, cols) / ("b", n) parameter blocks in flat order."""
    n_in = arch.feature_dim
    state = n_in      # width of the running state S
    s1 = None         # width of the first DGM state, once created
    for spec in arch.layers:
        w = spec.width
        if spec.kind == "dense":
            yield ("w", w, state)
            yield ("b", w)
            state = w
        elif spec.kind == "dgm":
            if s1 is None:
                yield ("w", w, n_in)   # S1 transform
                yield ("b", w)
                s1 = w
                state = w
            for _gate in range(4):     # Z, G, R, H
                yield ("w", w, n_in)
                yield ("w", w, state)
                yield ("b", w)
            state = w
        else:
            raise ValueError(f"unknown layer kind {spec.kind!r}")
    yield ("w", 1, state)
    yield ("b", 1)


def param_count(arch):
    n = 0
    for seg in _segments(arch):
        n += seg[1] * seg[2] if seg[0] == "w" else seg[1]
    return n


def init_values(arch, rng):
    """Glorot-uniform weights, zero biases, flat vector."""
    parts = []
    for seg in _segments(arch):
        if seg[0] == "w":
            rows, cols = seg[1], seg[2]
            bound = np.sqrt(6.0 / (rows + cols))
            parts.append(rng.uniform(-bound, bound, size=rows * cols))
        else:
            parts.append(np.zeros(seg[1]))
    return np.concatenate(parts)


@dataclass
class NetworkParams:
    arch: Architecture
    values: np.ndarray
    extra_scalars: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = param_count(self.arch)
        if self.values.size != expected:
            raise ValueError(
                f"descriptor implies {expected} parameters, got {self.values.size}")


def init_params(arch, rng, extra_scalars=None):
    return NetworkParams(arch, init_values(arch, rng), dict(extra_scalars or {}))


class _Cursor:
    def __init__(self, flat):
        self.flat = flat
        self.pos = 0

    def take(self, n):
        out = self.flat[self.pos:self.pos + n]
        self.pos += n
        return out


def _dot(ws, xs, b):
    acc = b
    for w, x in zip(ws, xs):
        acc = acc + w * x
    return acc


class NetworkGraph:
    """A network's forward graph on a given tape, with reusable parameter leaves.

    Construct once per tape; update values with `set_values`; call repeatedly
    (e.g. once per hyper-dual axis lift) to build forward subgraphs sharing
    the same parameter nodes.
    """

    def __init__(self, tape, arch):
        self.tape = tape
        self.arch = arch
        self.n_params = param_count(arch)
        self.param_ids = [tape.param(0.0) for _ in range(self.n_params)]
        self._vars = [ad.Var(tape, nid) for nid in self.param_ids]

    def set_values(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ValueError("parameter vector length mismatch")
        for nid, v in zip(self.param_ids, flat):
            self.tape.set_leaf(nid, v)

    def __call__(self, xs, s=None):
        arch = self.arch
        if len(xs) != arch.input_dim:
            raise ValueError(
                f"expected {arch.input_dim} input coordinates, got {len(xs)}")
        if arch.embedding == "fourier":
            y = [ad.sin(TWO_PI * x) for x in xs] + [ad.cos(TWO_PI * x) for x in xs]
        else:
            y = list(xs)
        if arch.time_input:
            if s is None:
                raise ValueError("architecture expects a time input")
            y = [s] + y
        cur = _Cursor(self._vars)

        def matvec(rows, cols, feats):
            out = []
            for _ in range(rows):
                ws = cur.take(cols)
                out.append(_dot(ws, feats, 0.0))
            return out

        state = y
        s1 = None
        for spec in arch.layers:
            act = _ACTIVATIONS[spec.activation]
            w = spec.width
            if spec.kind == "dense":
                pre = matvec(w, len(state), state)
                bs = cur.take(w)
                state = [act(p + b) for p, b in zip(pre, bs)]
            else:  # dgm
                if s1 is None:
                    pre = matvec(w, len(y), y)
                    bs = cur.take(w)
                    state = [act(p + b) for p, b in zip(pre, bs)]
                    s1 = state
                gates = []
                for gate_src in (state, s1, state, None):
                    if gate_src is None:  # H gate uses S * R
                        r = gates[2]
                        gate_src = [si * ri for si, ri in zip(state, r)]
                    uy = matvec(w, len(y), y)
                    ws_ = matvec(w, len(gate_src), gate_src)
                    bs = cur.take(w)
                    gates.append([act(a + b + c) for a, b, c in zip(uy, ws_, bs)])
                z, g, _r, h = gates
                state = [(1.0 - gi) * hi + zi * si
                         for gi, hi, zi, si in zip(g, h, z, state)]
        pre = matvec(1, len(state), state)
        b_out = cur.take(1)[0]
        assert cur.pos == self.n_params
        return pre[0] + b_out


# -- functional wrappers ---------------------------------------------------


def periodic_embed(x):
    """(sin 2pi x_1, ..., sin 2pi x_d, cos 2pi x_1, ..., cos 2pi x_d)."""
    x = np.asarray(x, dtype=float)
    return np.concatenate([np.sin(TWO_PI * x), np.cos(TWO_PI * x)], axis=-1)


def _forward_values(params, x, s=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.empty(x.shape[0])
    chunk = 4096
    for lo in range(0, x.shape[0], chunk):
        xc = x[lo:lo + chunk]
        tape = ad.Tape(lanes=xc.shape[0])
        net = NetworkGraph(tape, params.arch)
        net.set_values(params.values)
        xs = [ad.Var(tape, tape.leaf(xc[:, j])) for j in range(xc.shape[1])]
        sv = None
        if params.arch.time_input:
            sc = np.broadcast_to(np.asarray(s, dtype=float), (x.shape[0],))[lo:lo + chunk]
            sv = ad.Var(tape, tape.leaf(sc))
        out[lo:lo + chunk] = net(xs, s=sv).values
    return out


def mlp_forward(params, x, s=None):
    """Dense feed-forward evaluation; returns values (one per input row)."""
    if any(spec.kind != "dense" for spec in params.arch.layers):
        raise ValueError("mlp_forward expects a dense-only architecture")
    return _forward_values(params, x, s=s)


def dgm_forward(params, x, s=None):
    """Gated DGM evaluation; returns values (one per input row)."""
    if not any(spec.kind == "dgm" for spec in params.arch.layers):
        raise ValueError("dgm_forward expects at least one DGM layer")
    return _forward_values(params, x, s=s)


def network_forward(params, x, s=None):
    return _forward_values(params, x, s=s)


def torus_grid_points(d, n):
    axes = [np.arange(n) / n for _ in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def density_eval(f_params, x, mode="normalized_grid", grid_n=None):
    """Density m(x) = exp f(x), either grid-normalized or raw (penalty mode)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    f_vals = _forward_values(f_params, x)
    if np.any(f_vals > 700.0):
        raise OverflowError("exp argument exceeds 700 in density evaluation")
    if mode == "penalty":
        return np.exp(f_vals)
    if mode != "normalized_grid":
        raise ValueError(f"unknown density mode {mode!r}")
    d = f_params.arch.input_dim
    if d > 2:
        raise ValueError("normalized_grid density requires dimension <= 2")
    if grid_n is None:
        grid_n = 1024 if d == 1 else 64
    g = torus_grid_points(d, grid_n)
    fg = _forward_values(f_params, g)
    if np.any(fg > 700.0):
        raise OverflowError("exp argument exceeds 700 in normalization grid")
    z = np.mean(np.exp(fg))
    return np.exp(f_vals) / z


# -- checkpoint format -----------------------------------------------------
#
# One JSON header line (architecture descriptor, extra scalar names/values,
# parameter count), then the flat parameter vector as little-endian float64.


def save_params(path, params):
    header = {
        "input_dim": params.arch.input_dim,
        "layers": [[s.kind, s.width, s.activation] for s in params.arch.layers],
        "embedding": params.arch.embedding,
        "time_input": params.arch.time_input,
        "extra_scalars": {k: float(v) for k, v in params.extra_scalars.items()},
        "count": int(params.values.size),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(params.values.astype("<f8").tobytes())


def load_params(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        raw = fh.read()
    arch = Architecture(
        input_dim=header["input_dim"],
        layers=tuple(LayerSpec(k, w, a) for k, w, a in header["layers"]),
        embedding=header["embedding"],
        time_input=header["time_input"],
    )
    values = np.frombuffer(raw, dtype="<f8", count=header["count"]).copy()
    return NetworkParams(arch, values, dict(header["extra_scalars"]))
