"""Trainable embedding modules inserted between lookup and prediction.

Every module works on embedding sets shaped ``(B, F, K)``; linear embeddings
travel through the pipeline as ``(B, F, 1)``. Five kinds exist:

``scale``     flatten, affine+activation chain to ``R*K`` units, ``R = round(F*S)``
``fm_embed``  every flattened component ``e'_i`` becomes the vector ``e'_i * v_i``
``encode``    contract to ``E*K`` units (``E = round(F/S)``), expand back to ``F*K``
``nn_embed``  joint square chain over ``[linear || interaction]``, size ``F*(K+1)``
``reweight``  ``w = logistic(W e' + b)`` in ``(0, 1)^F``, each set scaled by its weight
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .nn import ACTIVATIONS, chain_backward, chain_forward, he_init, sigmoid

KINDS = ("scale", "fm_embed", "encode", "nn_embed", "reweight")
LINEAR, INTERACTION, BOTH = "linear", "interaction", "both"

# which embeddings each kind may attach to
ALLOWED_TARGETS = {
    "scale": (LINEAR, INTERACTION, BOTH),
    "fm_embed": (INTERACTION,),
    "encode": (LINEAR, INTERACTION, BOTH),
    "nn_embed": (BOTH,),
    "reweight": (LINEAR, INTERACTION, BOTH),
}
TARGET_MESSAGES = {
    "fm_embed": "FM embedding module can only be applied to interaction embeddings",
    "nn_embed": "NN embedding module requires both linear and interaction embeddings",
}


@dataclass(frozen=True)
class ModuleSpec:
    kind: str
    factor: float = 1.0  # S: scaling factor (scale) or shrink factor (encode)
    hidden_layers: int = 1  # H
    activation: str = "relu"
    latent_size: int = 4  # C (fm_embed)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"kind", "factor", "hidden_layers", "activation", "latent_size"}
        if unknown:
            raise ValueError(f"unknown module keys: {sorted(unknown)}")
        return cls(**d)


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def validate_module(spec: ModuleSpec, target: str) -> list:
    errs = []
    if spec.kind not in KINDS:
        return [f"unknown module kind {spec.kind!r}"]
    if target not in ALLOWED_TARGETS[spec.kind]:
        errs.append(TARGET_MESSAGES.get(spec.kind, f"{spec.kind} cannot target {target}"))
    if spec.kind != "reweight" and spec.activation not in ACTIVATIONS:
        errs.append(f"{spec.kind}: unknown activation {spec.activation!r}")
    if spec.kind in ("scale", "nn_embed") and spec.hidden_layers < 0:
        errs.append(f"{spec.kind}: hidden_layers must be >= 0")
    if spec.kind == "scale" and not spec.factor > 0:
        errs.append("scale: factor must be > 0")
    if spec.kind == "encode":
        if spec.factor < 1:
            errs.append("encode: shrink factor must be >= 1")
        if spec.hidden_layers < 1:
            errs.append("encode: hidden_layers must be >= 1")
    if spec.kind == "fm_embed" and spec.latent_size < 1:
        errs.append("fm_embed: latent_size must be >= 1")
    return errs


class _ChainModule:
    """Shared plumbing for modules that are a single dense chain."""

    def __init__(self, name, layers, activation):
        self.name = name
        self.layers = layers
        self.activation = activation

    def params(self):
        out = {}
        for t, (W, b) in enumerate(self.layers):
            out[f"{self.name}.W{t}"] = W
            out[f"{self.name}.b{t}"] = b
        return out

    def _grads(self, grads):
        out = {}
        for t, (dW, db) in enumerate(grads):
            out[f"{self.name}.W{t}"] = dW
            out[f"{self.name}.b{t}"] = db
        return out

    def param_count(self):
        return sum(W.size + b.size for W, b in self.layers)


class ScaleModule(_ChainModule):
    kind = "scale"

    def __init__(self, name, F, K, spec, rng, dtype=np.float32):
        self.F, self.K = F, K
        self.R = round_half_away(F * spec.factor)
        if self.R < 1:
            raise ValueError(f"scale: round({F} * {spec.factor}) = 0 features")
        rk = self.R * K
        layers = [he_init(rng, rk, F * K, dtype)]
        layers += [he_init(rng, rk, rk, dtype) for _ in range(spec.hidden_layers)]
        super().__init__(name, layers, spec.activation)

    def out_shape(self):
        return self.R, self.K

    def forward(self, e):
        B = e.shape[0]
        out, cache = chain_forward(e.reshape(B, -1), self.layers, self.activation)
        return out.reshape(B, self.R, self.K), cache

    def backward(self, dout, cache):
        B = dout.shape[0]
        dx, grads = chain_backward(dout.reshape(B, -1), self.layers, cache, self.activation)
        return dx.reshape(B, self.F, self.K), self._grads(grads)


class EncodeModule(_ChainModule):
    kind = "encode"

    def __init__(self, name, F, K, spec, rng, dtype=np.float32):
        self.F, self.K = F, K
        self.E = round_half_away(F / spec.factor)
        if self.E < 1:
            raise ValueError(f"encode: round({F} / {spec.factor}) = 0 features")
        ek, fk = self.E * K, F * K
        layers = [he_init(rng, ek, fk, dtype)]
        layers += [he_init(rng, ek, ek, dtype) for _ in range(spec.hidden_layers - 1)]
        layers.append(he_init(rng, fk, ek, dtype))
        super().__init__(name, layers, spec.activation)

    def out_shape(self):
        return self.F, self.K

    def forward(self, e):
        B = e.shape[0]
        out, cache = chain_forward(e.reshape(B, -1), self.layers, self.activation)
        return out.reshape(B, self.F, self.K), cache

    def backward(self, dout, cache):
        B = dout.shape[0]
        dx, grads = chain_backward(dout.reshape(B, -1), self.layers, cache, self.activation)
        return dx.reshape(B, self.F, self.K), self._grads(grads)


class ReweightModule:
    kind = "reweight"

    def __init__(self, name, F, K, spec, rng, dtype=np.float32):
        self.name, self.F, self.K = name, F, K
        self.W, self.b = he_init(rng, F, F * K, dtype)

    def params(self):
        return {f"{self.name}.W": self.W, f"{self.name}.b": self.b}

    def param_count(self):
        return self.W.size + self.b.size

    def out_shape(self):
        return self.F, self.K

    def weights(self, e):
        flat = e.reshape(e.shape[0], -1)
        return sigmoid(flat @ self.W.T.astype(np.float64) + self.b)

    def forward(self, e):
        flat = e.reshape(e.shape[0], -1)
        w = sigmoid(flat @ self.W.T.astype(np.float64) + self.b)
        return w[:, :, None] * e, (e, flat, w)

    def backward(self, dout, cache):
        e, flat, w = cache
        dw = (dout * e).sum(axis=2)
        dz = dw * w * (1.0 - w)
        de = dout * w[:, :, None] + (dz @ self.W.astype(np.float64)).reshape(e.shape)
        return de, {f"{self.name}.W": dz.T @ flat, f"{self.name}.b": dz.sum(axis=0)}


class FMEmbedModule:
    kind = "fm_embed"

    def __init__(self, name, F, K, spec, rng, dtype=np.float32):
        self.name, self.F, self.K, self.C = name, F, K, spec.latent_size
        self.v = rng.normal(0.0, 0.01, size=(F * K, self.C)).astype(dtype)

    def params(self):
        return {f"{self.name}.v": self.v}

    def param_count(self):
        return self.v.size

    def out_shape(self):
        return self.F * self.K, self.C

    def forward(self, e):
        flat = e.reshape(e.shape[0], -1)
        return flat[:, :, None] * self.v.astype(np.float64)[None], flat

    def backward(self, dout, cache):
        flat = cache
        dflat = (dout * self.v.astype(np.float64)[None]).sum(axis=2)
        dv = (flat[:, :, None] * dout).sum(axis=0)
        return dflat.reshape(-1, self.F, self.K), {f"{self.name}.v": dv}


class NNEmbedModule(_ChainModule):
    """Joint module: consumes and produces both embedding sets."""

    kind = "nn_embed"

    def __init__(self, name, F, K, spec, rng, dtype=np.float32):
        self.F, self.K = F, K
        n = F * (K + 1)
        layers = [he_init(rng, n, n, dtype) for _ in range(spec.hidden_layers + 1)]
        super().__init__(name, layers, spec.activation)

    def forward(self, lin, inter):
        B = lin.shape[0]
        x = np.concatenate([lin.reshape(B, -1), inter.reshape(B, -1)], axis=1)
        out, cache = chain_forward(x, self.layers, self.activation)
        return out[:, :self.F, None], out[:, self.F:].reshape(B, self.F, self.K), cache

    def backward(self, dlin, dinter, cache):
        B = dlin.shape[0]
        dout = np.concatenate([dlin.reshape(B, -1), dinter.reshape(B, -1)], axis=1)
        dx, grads = chain_backward(dout, self.layers, cache, self.activation)
        return dx[:, :self.F, None], dx[:, self.F:].reshape(B, self.F, self.K), self._grads(grads)


MODULE_CLASSES = {
    "scale": ScaleModule,
    "fm_embed": FMEmbedModule,
    "encode": EncodeModule,
    "nn_embed": NNEmbedModule,
    "reweight": ReweightModule,
}


def build_module(name, spec: ModuleSpec, F, K, rng, dtype=np.float32):
    return MODULE_CLASSES[spec.kind](name, F, K, spec, rng, dtype)


# --- size audit -----------------------------------------------------------


def enumerated_param_count(spec: ModuleSpec, F: int, K: int) -> int:
    """Trainable parameter count of the implemented architecture.

    ``K`` is the vector size of the path the module sits on (1 for linear).
    """
    if spec.kind == "scale":
        rk = round_half_away(F * spec.factor) * K
        return rk * (F * K + 1) + spec.hidden_layers * rk * (rk + 1)
    if spec.kind == "encode":
        ek, fk = round_half_away(F / spec.factor) * K, F * K
        return ek * (fk + 1) + (spec.hidden_layers - 1) * ek * (ek + 1) + fk * (ek + 1)
    if spec.kind == "nn_embed":
        n = F * (K + 1)
        return (spec.hidden_layers + 1) * (n * n + n)
    if spec.kind == "reweight":
        return F * (K * F + 1)
    if spec.kind == "fm_embed":
        return F * K * spec.latent_size
    raise ValueError(spec.kind)


def table_formula_count(spec: ModuleSpec, F: int, K: int) -> int:
    """The closed-form module size, evaluated literally with ``H = hidden_layers``."""
    H = spec.hidden_layers
    if spec.kind == "scale":
        R = round_half_away(F * spec.factor)
        return R * K * ((F * K + 1) + (R * K + 1) * (H - 1))
    if spec.kind == "encode":
        E = round_half_away(F / spec.factor)
        return E * K * (F * K * (E * K + F * K) + (H - 1) * (E * K + 1))
    if spec.kind == "nn_embed":
        return H * (F ** 2 * (K + 1) ** 2 + F * (K + 1))
    if spec.kind == "reweight":
        return F * (K * F + 1)
    if spec.kind == "fm_embed":
        return F * K * spec.latent_size
    raise ValueError(spec.kind)


@dataclass(frozen=True)
class ParamAudit:
    kind: str
    path: str
    F: int
    K: int
    enumerated: int
    table_formula: int

    @property
    def match(self):
        return self.enumerated == self.table_formula

    def note(self):
        if self.match:
            return "match"
        if self.kind in ("scale", "nn_embed"):
            return "mismatch: formula counts H weight matrices, implementation has H+1"
        if self.kind == "encode":
            return "mismatch: formula is not a layer-by-layer parameter sum"
        return "mismatch"


def module_param_count(spec: ModuleSpec, F: int, K: int, path: str = INTERACTION) -> ParamAudit:
    return ParamAudit(spec.kind, path, F, K,
                      enumerated_param_count(spec, F, K), table_formula_count(spec, F, K))
