"""Small differentiable function approximators with hand-derived gradients.

A :class:`Network` maps observation ids to a hidden representation ``h``, policy
logits and a scalar value.  Two torsos are available:

* ``"tabular"``: ``h`` is the one-hot encoding of the observation, so the heads
  are per-observation tables.
* ``"mlp"``: ``h = tanh(W onehot(obs) + b)``.

Extra heads (the learned model) register their parameter shapes through the
``extra_layout`` argument; they live in the same flat :class:`ParamVector` so a
single optimizer and target-network EMA cover everything.
"""

import json
from typing import NamedTuple, Optional

import numpy as np

from ._validation import ValidationError

HEADER_MAGIC = "MUESLI-LAB-PARAMS 1"


class ParamVector:
    """Flat float64 parameter vector with a named layout.

    ``layout`` is a sequence of ``(name, shape)`` pairs; ``pv[name]`` returns a
    writable view into ``pv.data`` with that shape.
    """

    def __init__(self, layout, data=None):
        self.layout = tuple((str(n), tuple(int(d) for d in s)) for n, s in layout)
        self._slices = {}
        offset = 0
        for name, shape in self.layout:
            if name in self._slices:
                raise ValidationError(f"duplicate layout entry {name!r}")
            size = int(np.prod(shape)) if shape else 1
            self._slices[name] = (slice(offset, offset + size), shape)
            offset += size
        self.size = offset
        if data is None:
            self.data = np.zeros(offset)
        else:
            data = np.asarray(data, dtype=float)
            if data.shape != (offset,):
                raise ValidationError(f"data has shape {data.shape}, layout needs ({offset},)")
            self.data = data.copy()

    def __getitem__(self, name):
        sl, shape = self._slices[name]
        return self.data[sl].reshape(shape)

    def __contains__(self, name):
        return name in self._slices

    def names(self):
        return [n for n, _ in self.layout]

    def copy(self):
        return ParamVector(self.layout, self.data)

    def zeros_like(self):
        return ParamVector(self.layout)

    def with_data(self, data):
        return ParamVector(self.layout, data)

    def check_compatible(self, other):
        if self.layout != other.layout:
            raise ValidationError("parameter layouts differ")

    def is_finite(self):
        return bool(np.all(np.isfinite(self.data)))

    def __repr__(self):
        return f"ParamVector(size={self.size}, heads={self.names()})"


class NetOutput(NamedTuple):
    policy_logits: np.ndarray
    value: np.ndarray
    hidden: np.ndarray


class _Cache(NamedTuple):
    obs: np.ndarray
    hidden: np.ndarray


def softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class Network:
    """Torso plus policy and value heads over ``num_obs`` observation ids.

    Args:
        num_obs, num_actions: input and output sizes.
        mode: ``"tabular"`` or ``"mlp"``.
        hidden: hidden width for ``"mlp"`` (tabular width is ``num_obs``).
        extra_layout: ``{name: (shape, init_scale)}`` for additional heads;
            a positive ``init_scale`` draws ``U(-scale, scale)``, 0 means zeros.
    """

    def __init__(self, num_obs, num_actions, mode="tabular", hidden=16, extra_layout=None):
        if mode not in ("tabular", "mlp"):
            raise ValidationError(f"mode must be 'tabular' or 'mlp', got {mode!r}")
        self.num_obs = int(num_obs)
        self.num_actions = int(num_actions)
        self.mode = mode
        self.hidden = self.num_obs if mode == "tabular" else int(hidden)
        H, O, A = self.hidden, self.num_obs, self.num_actions
        spec = {}
        if mode == "mlp":
            spec["torso.w"] = ((H, O), 0.05)
            spec["torso.b"] = ((H,), 0.0)
        spec["policy.w"] = ((A, H), 0.0)
        spec["policy.b"] = ((A,), 0.0)
        spec["value.w"] = ((H,), 0.0)
        spec["value.b"] = ((), 0.0)
        for name, entry in (extra_layout or {}).items():
            if name in spec:
                raise ValidationError(f"extra head {name!r} clashes with a base head")
            spec[name] = entry
        self._spec = spec
        self.layout = tuple((name, shape) for name, (shape, _) in spec.items())

    def init_params(self, seed=0):
        """Zero heads, ``U(-0.05, 0.05)`` torso weights, extras per their scale."""
        rng = np.random.default_rng(seed)
        params = ParamVector(self.layout)
        for name, (shape, scale) in self._spec.items():
            if scale > 0:
                params[name][...] = rng.uniform(-scale, scale, size=shape)
        return params

    def _check(self, params, obs):
        if params.layout != self.layout:
            raise ValidationError("parameter layout does not match this network")
        obs = np.asarray(obs, dtype=np.int64)
        if obs.size and (obs.min() < 0 or obs.max() >= self.num_obs):
            raise ValidationError(f"observation id out of range [0, {self.num_obs})")
        return obs

    def hidden_of(self, params, obs):
        obs = self._check(params, obs)
        if self.mode == "tabular":
            return np.eye(self.num_obs)[obs]
        return np.tanh(params["torso.w"].T[obs] + params["torso.b"])

    def forward(self, params, obs):
        """Outputs for a 1-d array (or scalar) of observation ids."""
        out, _ = self.forward_with_cache(params, obs)
        return out

    def forward_with_cache(self, params, obs):
        obs = np.atleast_1d(self._check(params, obs))
        h = self.hidden_of(params, obs)
        logits = h @ params["policy.w"].T + params["policy.b"]
        value = h @ params["value.w"] + params["value.b"]
        return NetOutput(logits, value, h), _Cache(obs, h)

    def backward(self, params, cache, d_logits=None, d_value=None, d_hidden=None, grad=None):
        """Accumulate parameter gradients from output adjoints.

        Args:
            cache: second return value of :meth:`forward_with_cache`.
            d_logits, d_value, d_hidden: ``dL/d(output)`` arrays (any may be
                None); ``d_hidden`` carries gradients from extra heads.
            grad: optional :class:`ParamVector` to accumulate into.
        Returns:
            The gradient :class:`ParamVector`.
        """
        if grad is None:
            grad = params.zeros_like()
        else:
            params.check_compatible(grad)
        h = cache.hidden
        N = h.shape[0]
        dh = np.zeros_like(h) if d_hidden is None else np.array(d_hidden, dtype=float)
        if dh.shape != h.shape:
            raise ValidationError("d_hidden does not match the hidden layer")
        if d_logits is not None:
            d_logits = np.asarray(d_logits, dtype=float).reshape(N, self.num_actions)
            grad["policy.w"][...] += d_logits.T @ h
            grad["policy.b"][...] += d_logits.sum(axis=0)
            dh += d_logits @ params["policy.w"]
        if d_value is not None:
            d_value = np.asarray(d_value, dtype=float).reshape(N)
            grad["value.w"][...] += d_value @ h
            grad["value.b"][...] += d_value.sum()
            dh += d_value[:, None] * params["value.w"]
        if self.mode == "mlp":
            dpre = dh * (1.0 - h * h)
            gw_t = np.zeros((self.num_obs, self.hidden))
            np.add.at(gw_t, cache.obs, dpre)
            grad["torso.w"][...] += gw_t.T
            grad["torso.b"][...] += dpre.sum(axis=0)
        return grad

    def policy_table(self, params):
        """Softmax policy for every observation id, shape ``(num_obs, A)``."""
        return softmax(self.forward(params, np.arange(self.num_obs)).policy_logits)


class FDReport(NamedTuple):
    max_rel_error: float
    max_abs_error: float
    worst_index: int
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def fd_check(params, loss_fn, tolerance=1e-4, step=1e-5, floor=1e-6, indices=None):
    """Compare an analytic gradient with central finite differences.

    ``loss_fn(params)`` must return ``(loss, grad)`` with ``grad`` a
    :class:`ParamVector` (or flat array).  The per-coordinate error is
    ``|g - fd| / max(|g|, |fd|, floor)``.
    """
    _, grad = loss_fn(params)
    g = np.asarray(grad.data if isinstance(grad, ParamVector) else grad, dtype=float)
    coords = np.arange(params.size) if indices is None else np.asarray(indices)
    fd = np.zeros(coords.size)
    for j, i in enumerate(coords):
        plus = params.copy()
        plus.data[i] += step
        minus = params.copy()
        minus.data[i] -= step
        fd[j] = (loss_fn(plus)[0] - loss_fn(minus)[0]) / (2 * step)
    an = g[coords]
    abs_err = np.abs(an - fd)
    rel = abs_err / np.maximum(np.maximum(np.abs(an), np.abs(fd)), floor)
    worst = int(np.argmax(rel)) if rel.size else 0
    return FDReport(float(rel.max(initial=0.0)), float(abs_err.max(initial=0.0)),
                    int(coords[worst]) if rel.size else -1, tolerance)


def save_params(path, blocks, meta=None):
    """Write named parameter vectors to one binary file.

    The file starts with a magic line and a JSON header line describing each
    block's layout and offset (in float64 elements), followed by raw
    little-endian float64 data.
    """
    header = {"meta": meta or {}, "blocks": []}
    offset = 0
    for name, pv in blocks.items():
        header["blocks"].append({"name": name, "layout": [[n, list(s)] for n, s in pv.layout],
                                 "offset": offset, "size": pv.size})
        offset += pv.size
    with open(path, "wb") as fh:
        fh.write((HEADER_MAGIC + "\n").encode())
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        for pv in blocks.values():
            fh.write(np.ascontiguousarray(pv.data, dtype="<f8").tobytes())


def load_params(path):
    """Inverse of :func:`save_params`; returns ``(blocks, meta)``."""
    with open(path, "rb") as fh:
        magic = fh.readline().decode().strip()
        if magic != HEADER_MAGIC:
            raise ValidationError(f"{path}: not a parameter file (magic {magic!r})")
        header = json.loads(fh.readline().decode())
        raw = np.frombuffer(fh.read(), dtype="<f8")
    blocks = {}
    for b in header["blocks"]:
        data = raw[b["offset"]:b["offset"] + b["size"]]
        blocks[b["name"]] = ParamVector([(n, tuple(s)) for n, s in b["layout"]], data)
    return blocks, header["meta"]


def sum_grads(*grads: Optional[ParamVector]):
    out = None
    for g in grads:
        if g is None:
            continue
        out = g.copy() if out is None else out.with_data(out.data + g.data)
    return out
