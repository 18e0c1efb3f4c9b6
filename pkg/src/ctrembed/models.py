"""LR, FM and DeepFM predictors over hashed embeddings.

One configurable model covers all three: ``num_factors == 0`` gives LR,
``num_factors > 0`` gives FM, and a DNN term (``num_hidden_layers > 0`` and
``hidden_layer_size > 0``) turns FM into DeepFM. Embedding modules sit between
lookup and prediction.

The logit is always assembled as ``bias + linear + interaction + dnn``.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .embedding import init_tables, lookup_batch
from .modules import (
    BOTH, INTERACTION, LINEAR, ModuleSpec, build_module, round_half_away, validate_module,
)
from .nn import ACTIVATIONS, chain_backward, chain_forward, he_init, sigmoid


class ConfigError(ValueError):
    """Invalid model or run configuration. ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ModelSpec:
    num_feats: int
    num_bins: int
    num_factors: int = 0
    num_hidden_layers: int = 0
    hidden_layer_size: int = 64  # used only when num_hidden_layers > 0
    linear_modules: tuple = ()
    interaction_modules: tuple = ()
    both_modules: tuple = ()
    dnn_activation: str = "relu"
    init_std: float = 0.01

    @property
    def has_dnn(self):
        return self.num_hidden_layers > 0 and self.hidden_layer_size > 0

    @property
    def kind(self):
        if self.num_factors == 0:
            return "LR"
        return "DeepFM" if self.has_dnn else "FM"

    def to_dict(self):
        d = asdict(self)
        for key in ("linear_modules", "interaction_modules", "both_modules"):
            d[key] = [m.to_dict() for m in getattr(self, key)]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("linear_modules", "interaction_modules", "both_modules"):
            d[key] = tuple(m if isinstance(m, ModuleSpec) else ModuleSpec.from_dict(m)
                           for m in d.get(key, ()))
        return cls(**d)

    def validate(self):
        errs = model_errors(self)
        if errs:
            raise ConfigError(errs)
        return self


@dataclass
class Stage:
    """One attached module instance and the path it runs on."""

    name: str
    path: str  # linear / interaction / joint
    spec: ModuleSpec
    F: int
    K: int
    out_F: int = 0
    out_K: int = 0


def plan_stages(spec: ModelSpec):
    """Dry-run the module pipeline. Returns ``(stages, (lin_F, inter_F, inter_K), errors)``.

    Order: ``linear_modules``, then ``interaction_modules``, then
    ``both_modules``; within each list, list order.
    """
    errs = []
    stages = []
    lin = [spec.num_feats, 1]
    inter = [spec.num_feats, spec.num_factors]

    def advance(name, path, m, shape):
        F, K = shape
        st = Stage(name, path, m, F, K)
        if m.kind == "scale":
            R = round_half_away(F * m.factor)
            if R < 1:
                errs.append(f"{name}: round(F*S) = round({F}*{m.factor}) = 0")
                return False
            shape[0] = R
        elif m.kind == "encode":
            E = round_half_away(F / m.factor) if m.factor > 0 else 0
            if E < 1:
                errs.append(f"{name}: round(F/S) = round({F}/{m.factor}) = 0")
                return False
        elif m.kind == "fm_embed":
            shape[0], shape[1] = F * K, m.latent_size
        st.out_F, st.out_K = shape
        stages.append(st)
        return True

    groups = ((LINEAR, spec.linear_modules), (INTERACTION, spec.interaction_modules),
              (BOTH, spec.both_modules))
    for target, mods in groups:
        for pos, m in enumerate(mods):
            name = f"{target}.{pos}.{m.kind}"
            e = validate_module(m, target)
            if e:
                errs.extend(f"{name}: {x}" for x in e)
                continue
            if spec.num_factors == 0 and target in (INTERACTION, BOTH):
                errs.append(f"{name}: model has no interaction embeddings (num_factors=0)")
                continue
            if m.kind == "nn_embed":
                if lin[0] != inter[0]:
                    errs.append(f"{name}: linear and interaction feature counts differ "
                                f"({lin[0]} vs {inter[0]})")
                    continue
                stages.append(Stage(name, "joint", m, inter[0], inter[1], inter[0], inter[1]))
                continue
            if target in (LINEAR, BOTH):
                advance(f"{name}.linear" if target == BOTH else name, LINEAR, m, lin)
            if target in (INTERACTION, BOTH):
                advance(f"{name}.interaction" if target == BOTH else name, INTERACTION, m, inter)
    return stages, (lin[0], inter[0], inter[1]), errs


def model_errors(spec: ModelSpec) -> list:
    errs = []
    if spec.num_feats < 1:
        errs.append("num_feats must be >= 1")
    if spec.num_bins < 1:
        errs.append("num_bins must be >= 1")
    for key in ("num_factors", "num_hidden_layers", "hidden_layer_size"):
        if getattr(spec, key) < 0:
            errs.append(f"{key} must be >= 0")
    if spec.init_std < 0:
        errs.append("init_std must be >= 0")
    if spec.has_dnn and spec.num_factors == 0:
        errs.append("a DNN term requires num_factors > 0")
    if spec.has_dnn and spec.dnn_activation not in ACTIVATIONS:
        errs.append(f"unknown dnn_activation {spec.dnn_activation!r}")
    if errs:
        return errs
    return plan_stages(spec)[2]


# --- per-sample prediction functions -------------------------------------


def predict_lr(e, bias):
    return sigmoid(float(bias) + float(np.sum(e.linear)))


def fm_interaction(vectors):
    """Sum over pairs ``i < j`` of ``<v_i, v_j>`` in O(F*k)."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] <= 1:
        return 0.0
    s = v.sum(axis=0)
    return float(0.5 * np.sum(s * s - (v * v).sum(axis=0)))


def predict_fm(e, bias):
    return sigmoid(float(bias) + float(np.sum(e.linear)) + fm_interaction(e.interaction))


@dataclass
class DnnParams:
    hidden: list = field(default_factory=list)  # [(W, b)], W: (size, in)
    out_W: np.ndarray = None  # (1, last)
    out_b: np.ndarray = None  # (1,)

    @property
    def layers(self):
        return [*self.hidden, (self.out_W, self.out_b)]

    @property
    def input_width(self):
        return self.layers[0][0].shape[1]


def init_dnn(input_width, num_hidden_layers, hidden_layer_size, rng, dtype=np.float32):
    hidden = []
    width = input_width
    for _ in range(num_hidden_layers):
        hidden.append(he_init(rng, hidden_layer_size, width, dtype))
        width = hidden_layer_size
    W, b = he_init(rng, 1, width, dtype)
    return DnnParams(hidden, W, b)


def dnn_term(vectors, params: DnnParams, activation="relu"):
    """Concatenate the vectors, run the hidden layers, read the linear output neuron."""
    x = np.asarray(vectors, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != params.input_width:
        raise ValueError(f"DNN expects {params.input_width} inputs, got {x.shape[1]}")
    out, _ = chain_forward(x, params.layers, activation, activate_last=False)
    return float(out[0, 0])


def predict_deepfm(e, bias, dnn: DnnParams, activation="relu"):
    logit = float(bias) + float(np.sum(e.linear)) + fm_interaction(e.interaction)
    return sigmoid(logit + dnn_term(e.interaction, dnn, activation))


# --- the batched model ----------------------------------------------------


@dataclass
class Gradients:
    bias: float
    linear_rows: np.ndarray  # unique touched rows
    linear_grad: np.ndarray  # (n_rows,)
    inter_rows: np.ndarray
    inter_grad: np.ndarray  # (n_rows, k)
    dense: dict  # name -> array, same keys as CTRModel.dense_params()


class CTRModel:
    """A model built from a ModelSpec; parameters live in numpy arrays.

    ``dtype`` is the storage precision (float32 by default). All arithmetic is
    float64; the gradient checks build the model with ``dtype=np.float64``.
    """

    def __init__(self, spec: ModelSpec, seed=0, dtype=np.float32):
        spec.validate()
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.linear, self.interaction = init_tables(spec, seed, dtype)
        rng = np.random.default_rng([seed, 1])
        stages, (self.lin_F, self.inter_F, self.inter_K), _ = plan_stages(spec)
        self.stages = stages
        self.modules = [build_module(s.name, s.spec, s.F, s.K, rng, dtype) for s in stages]
        self.dnn = None
        if spec.has_dnn:
            self.dnn = init_dnn(self.inter_F * self.inter_K, spec.num_hidden_layers,
                                spec.hidden_layer_size, rng, dtype)

    @property
    def dnn_input_width(self):
        return 0 if self.dnn is None else self.dnn.input_width

    def dense_params(self) -> dict:
        out = {}
        for mod in self.modules:
            out.update(mod.params())
        if self.dnn is not None:
            for t, (W, b) in enumerate(self.dnn.layers):
                out[f"dnn.W{t}"] = W
                out[f"dnn.b{t}"] = b
        return out

    def arrays(self) -> dict:
        """Every parameter array by name (tables, bias, dense)."""
        out = {"linear.weights": self.linear.weights, "linear.bias": self.linear.bias}
        if self.interaction is not None:
            out["interaction.vectors"] = self.interaction.vectors
        out.update(self.dense_params())
        return out

    # forward / backward

    def forward(self, indices):
        """Probabilities for a ``(B, F)`` index batch, plus a cache for :meth:`backward`."""
        indices = np.asarray(indices, dtype=np.int64)
        lin0, inter0 = lookup_batch(indices, self.linear, self.interaction)
        B = indices.shape[0]
        lin = lin0[:, :, None]
        inter = inter0
        mod_caches = []
        for st, mod in zip(self.stages, self.modules):
            if st.path == "joint":
                lin, inter, c = mod.forward(lin, inter)
            elif st.path == LINEAR:
                lin, c = mod.forward(lin)
            else:
                inter, c = mod.forward(inter)
            mod_caches.append(c)
        logit = float(self.linear.bias[0]) + lin.reshape(B, -1).sum(axis=1)
        s = None
        dnn_cache = None
        if inter is not None:
            s = inter.sum(axis=1)
            logit = logit + 0.5 * (s * s - (inter * inter).sum(axis=1)).sum(axis=1)
            if self.dnn is not None:
                out, dnn_cache = chain_forward(inter.reshape(B, -1), self.dnn.layers,
                                               self.spec.dnn_activation, activate_last=False)
                logit = logit + out[:, 0]
        p = sigmoid(logit)
        cache = dict(indices=indices, lin=lin, inter=inter, s=s, mod=mod_caches,
                     dnn=dnn_cache, logit=logit, p=p)
        return p, cache

    def predict(self, indices, batch_size=65536):
        indices = np.asarray(indices, dtype=np.int64)
        out = np.empty(indices.shape[0])
        for lo in range(0, indices.shape[0], batch_size):
            out[lo:lo + batch_size] = self.forward(indices[lo:lo + batch_size])[0]
        return out

    def backward(self, cache, labels) -> Gradients:
        """Exact gradients of the mean batch log loss.

        Table gradients are returned only for touched rows, with duplicate
        rows summed.
        """
        y = np.asarray(labels, dtype=np.float64)
        B = y.shape[0]
        dlogit = (cache["p"] - y) / B
        dense = {}
        lin, inter = cache["lin"], cache["inter"]
        dlin = np.broadcast_to(dlogit[:, None, None], lin.shape).copy()
        dinter = None
        if inter is not None:
            dinter = dlogit[:, None, None] * (cache["s"][:, None, :] - inter)
            if self.dnn is not None:
                dx, grads = chain_backward(dlogit[:, None], self.dnn.layers, cache["dnn"],
                                           self.spec.dnn_activation, activate_last=False)
                dinter = dinter + dx.reshape(inter.shape)
                for t, (dW, db) in enumerate(grads):
                    dense[f"dnn.W{t}"] = dW
                    dense[f"dnn.b{t}"] = db
        for st, mod, c in zip(reversed(self.stages), reversed(self.modules),
                              reversed(cache["mod"])):
            if st.path == "joint":
                dlin, dinter, g = mod.backward(dlin, dinter, c)
            elif st.path == LINEAR:
                dlin, g = mod.backward(dlin, c)
            else:
                dinter, g = mod.backward(dinter, c)
            dense.update(g)
        idx = cache["indices"].reshape(-1)
        lrows, lgrad = kernels.coalesce_rows(idx, dlin.reshape(-1, 1))
        if dinter is not None:
            irows, igrad = kernels.coalesce_rows(idx, dinter.reshape(idx.shape[0], -1))
        else:
            irows, igrad = np.zeros(0, np.int64), np.zeros((0, 0))
        grads = Gradients(float(dlogit.sum()), lrows, lgrad[:, 0], irows, igrad, dense)
        check_finite(grads)
        return grads


class NonFiniteGradient(FloatingPointError):
    pass


def check_finite(g: Gradients):
    bad = []
    if not np.isfinite(g.bias):
        bad.append("bias")
    if not np.all(np.isfinite(g.linear_grad)):
        bad.append("linear table")
    if not np.all(np.isfinite(g.inter_grad)):
        bad.append("interaction table")
    bad += [k for k, v in g.dense.items() if not np.all(np.isfinite(v))]
    if bad:
        raise NonFiniteGradient(f"non-finite gradient in: {', '.join(bad)}")
