"""Central finite-difference check of :meth:`CTRModel.backward`.

Independent of the analytic path: it only calls ``forward`` and recomputes
the mean log loss from the returned probabilities.
"""

import numpy as np

from .models import CTRModel


def mean_loss(model, indices, labels):
    p, _ = model.forward(indices)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def randomize(model: CTRModel, rng, scale=0.5, gain=1.0):
    """Fill every parameter with random values so no gradient is trivially zero.

    Tables and the bias get ``N(0, scale^2)``; dense weight matrices are
    scaled by ``gain/sqrt(fan_in)`` so deep chains stay out of saturation.
    """
    for name, arr in model.arrays().items():
        if arr.ndim == 2 and name not in ("interaction.vectors",) and not name.endswith(".v"):
            arr[...] = rng.normal(0.0, gain / np.sqrt(arr.shape[1]), size=arr.shape)
        else:
            arr[...] = rng.normal(0.0, scale, size=arr.shape)
    return model


def _chain_caches(cache):
    for c in [*cache["mod"], cache["dnn"]]:
        if isinstance(c, list):
            yield from c


def well_conditioned(model: CTRModel, indices, max_logit=8.0, kink_gap=1e-3, relu=True):
    """Centre the batch logits with the bias, then reject degenerate draws.

    Rejected: saturated logits, ReLU pre-activations within ``kink_gap`` of
    the kink (central differences across a kink are wrong by construction)
    and fully dead ReLU layers (the true gradient there is exactly zero, so
    a relative error is meaningless).
    """
    _, cache = model.forward(indices)
    model.linear.bias[0] -= np.mean(cache["logit"])
    _, cache = model.forward(indices)
    if np.max(np.abs(cache["logit"])) > max_logit:
        return False
    if relu:
        for _, z, _ in _chain_caches(cache):
            if np.any(np.abs(z) < kink_gap) or np.all(z <= 0):
                return False
    return True


def _fd(model, arr, pos, indices, labels, h):
    orig = arr[pos]
    arr[pos] = orig + h
    lp = mean_loss(model, indices, labels)
    arr[pos] = orig - h
    lm = mean_loss(model, indices, labels)
    arr[pos] = orig
    return (lp - lm) / (2.0 * h)


def gradient_pairs(model: CTRModel, indices, labels, h=1e-5):
    """Return matched ``(analytic, numeric)`` vectors over every touched parameter."""
    if model.dtype != np.float64:
        raise ValueError("finite differences need a float64 model")
    _, cache = model.forward(indices)
    g = model.backward(cache, labels)
    ana, num = [g.bias], [_fd(model, model.linear.bias, (0,), indices, labels, h)]
    for r, gr in zip(g.linear_rows, g.linear_grad):
        ana.append(gr)
        num.append(_fd(model, model.linear.weights, (r,), indices, labels, h))
    if model.interaction is not None:
        for r, gr in zip(g.inter_rows, g.inter_grad):
            for k in range(gr.shape[0]):
                ana.append(gr[k])
                num.append(_fd(model, model.interaction.vectors, (r, k), indices, labels, h))
    for name, arr in model.dense_params().items():
        ga = g.dense[name]
        for pos in np.ndindex(arr.shape):
            ana.append(ga[pos])
            num.append(_fd(model, arr, pos, indices, labels, h))
    return np.array(ana), np.array(num)


def relative_error(ana, num):
    """``||a - n|| / max(||a||, ||n||)`` over the whole gradient vector."""
    denom = max(np.linalg.norm(ana), np.linalg.norm(num), 1e-300)
    return float(np.linalg.norm(ana - num) / denom)


def check_model(model, indices, labels, h=1e-5):
    return relative_error(*gradient_pairs(model, indices, labels, h))


def legal_attachments(num_factors):
    """Every ``(target, kind)`` pair a model with ``num_factors`` accepts."""
    from .modules import ALLOWED_TARGETS, BOTH, INTERACTION, LINEAR

    targets = (LINEAR,) if num_factors == 0 else (LINEAR, INTERACTION, BOTH)
    return [(t, kind) for t in targets for kind, ok in ALLOWED_TARGETS.items() if t in ok]


def combinations():
    """``(model_kind, target, module_kind)`` for every baseline and legal attachment.

    ``target`` and ``module_kind`` are None for the bare baseline.
    """
    out = []
    for kind, k in (("LR", 0), ("FM", 1), ("DeepFM", 1)):
        out.append((kind, None, None))
        out += [(kind, t, m) for t, m in legal_attachments(k)]
    return out


def random_instance(model_kind, target, module_kind, rng, batch=4):
    """A tiny random float64 model (F<=6, K<=4, num_bins<=64) and a labelled batch."""
    from .models import ModelSpec
    from .modules import ModuleSpec

    F = int(rng.integers(2, 7))
    K = 0 if model_kind == "LR" else int(rng.integers(1, 5))
    bins = int(rng.integers(F, 65))
    act = str(rng.choice(["relu", "swish", "tanh", "sigmoid"]))
    mods = {"linear_modules": (), "interaction_modules": (), "both_modules": ()}
    if module_kind is not None:
        m = ModuleSpec(module_kind, factor=float(rng.choice([0.5, 1.0, 1.5])),
                       hidden_layers=int(rng.integers(1, 3)), activation=act,
                       latent_size=int(rng.integers(1, 4)))
        if module_kind == "encode":
            m = ModuleSpec("encode", factor=float(rng.choice([1.0, 1.5, 2.0])),
                           hidden_layers=m.hidden_layers, activation=act)
        mods[f"{target}_modules"] = (m,)
    deep = model_kind == "DeepFM"
    spec = ModelSpec(F, bins, K, num_hidden_layers=int(rng.integers(1, 3)) if deep else 0,
                     hidden_layer_size=int(rng.integers(2, 6)), dnn_activation=act, **mods)
    model = CTRModel(spec, seed=int(rng.integers(2 ** 31)), dtype=np.float64)
    scale = 0.5
    for _ in range(1000):
        randomize(model, rng, scale, gain=2.0 * scale)
        idx = rng.integers(0, bins, size=(batch, F))
        # repeat one index so duplicate-row accumulation is exercised
        idx[-1, 0] = idx[0, 0]
        if well_conditioned(model, idx, relu=act == "relu"):
            break
        scale *= 0.95
    else:
        raise RuntimeError("no well-conditioned draw found")
    labels = rng.integers(0, 2, size=batch)
    return model, idx, labels
