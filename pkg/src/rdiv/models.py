"""Hypothesis spaces, losses and minimum-hypothesis fitting.

A :class:`ModelSpec` fixes the triple (hypothesis space, loss, target).  Five
families are supported:

``mean``
    constant reconstruction ``h(x) = mu`` under squared error.
``gaussian``
    diagonal Gaussian density under negative log-likelihood.
``kde``
    isotropic Gaussian kernel density estimate under negative log-likelihood.
``mlp_classifier``
    ReLU network + softmax under cross-entropy against labels.
``mlp_autoencoder``
    ReLU network reconstructing its input under squared error.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from . import mlp
from .data import DataMatrix, derive_seed
from .errors import InvalidArgument

FAMILIES = ("mean", "gaussian", "kde", "mlp_classifier", "mlp_autoencoder")
MLP_FAMILIES = ("mlp_classifier", "mlp_autoencoder")
DETERMINISTIC_FAMILIES = ("mean", "gaussian", "kde")

VARIANCE_FLOOR = 1e-6
_KDE_CHUNK = 2048


@dataclass(frozen=True)
class ModelSpec:
    family: str
    target: Optional[str] = None
    bandwidth: Optional[float] = None
    hidden: Tuple[int, ...] = (64,)
    epochs: int = 50
    batch: int = 128
    lr: Optional[float] = None
    optimizer: str = "adam"
    loss_clip: Optional[float] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgument(f"unknown model family {self.family!r}")
        expected = "label" if self.family == "mlp_classifier" else "self"
        target = expected if self.target is None else self.target
        if target != expected:
            raise InvalidArgument(f"family {self.family} requires target={expected!r}, got {target!r}")
        object.__setattr__(self, "target", target)
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise InvalidArgument(f"kde bandwidth must be positive, got {self.bandwidth}")
        if self.loss_clip is not None and not self.loss_clip > 0:
            raise InvalidArgument(f"loss_clip must be positive, got {self.loss_clip}")
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if self.family in MLP_FAMILIES:
            if not self.hidden or min(self.hidden) < 1:
                raise InvalidArgument("mlp needs at least one hidden layer of positive width")
            if self.epochs < 1 or self.batch < 1:
                raise InvalidArgument("epochs and batch must be positive")
            if self.optimizer not in ("adam", "sgd"):
                raise InvalidArgument(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
            if self.lr is not None and not self.lr > 0:
                raise InvalidArgument("lr must be positive")

    @property
    def supervised(self) -> bool:
        return self.target == "label"

    @property
    def deterministic(self) -> bool:
        """True when fitting ignores the seed."""
        return self.family in DETERMINISTIC_FAMILIES

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Hypothesis:
    """A fitted member of the hypothesis space.

    ``params`` is a dict of arrays for the closed-form families and a list of
    ``(W, b)`` layers for the networks.  ``history`` holds per-epoch training
    losses for networks and is empty otherwise.
    """

    spec: ModelSpec
    params: object
    history: Tuple[float, ...] = field(default=())

    @property
    def dim(self) -> int:
        if self.spec.family in MLP_FAMILIES:
            return self.params[0][0].shape[0]
        if self.spec.family == "kde":
            return self.params["train"].shape[1]
        return self.params["mu"].shape[0]

    @property
    def n_classes(self) -> Optional[int]:
        if self.spec.family == "mlp_classifier":
            return self.params[-1][1].shape[0]
        return None


def silverman_bandwidth(values: np.ndarray) -> float:
    """Normal-reference rule ``(4 / (d + 2))^(1/(d+4)) n^(-1/(d+4)) sigma``.

    ``sigma`` is the mean per-coordinate standard deviation; degenerate
    inputs fall back to 1.
    """
    n, d = values.shape
    sigma = float(np.mean(values.std(axis=0, ddof=1))) if n > 1 else 0.0
    if not sigma > 0:
        return 1.0
    return (4.0 / (d + 2)) ** (1.0 / (d + 4)) * n ** (-1.0 / (d + 4)) * sigma


def resolve_bandwidth(spec: ModelSpec, data: DataMatrix) -> ModelSpec:
    """Pin an unset KDE bandwidth from ``data`` so several fits share one hypothesis space."""
    if spec.family != "kde" or spec.bandwidth is not None:
        return spec
    return replace(spec, bandwidth=silverman_bandwidth(data.values))


def _check_dim(h: Hypothesis, data: DataMatrix):
    if data.dim != h.dim:
        raise InvalidArgument(f"dimension mismatch: hypothesis expects {h.dim}, data has {data.dim}")


def _classifier_objective(labels, clip):
    def objective(out, idx):
        losses, grad = mlp.cross_entropy(out, labels[idx])
        if clip is not None:
            grad = grad * (losses < clip)[:, None]
            losses = np.minimum(losses, clip)
        return float(losses.mean()), grad / len(idx)

    return objective


def _autoencoder_objective(x, clip):
    def objective(out, idx):
        losses, grad = mlp.squared_error(out, x[idx])
        if clip is not None:
            grad = grad * (losses < clip)[:, None]
            losses = np.minimum(losses, clip)
        return float(losses.mean()), grad / len(idx)

    return objective


def mlp_sizes(spec: ModelSpec, data: DataMatrix):
    out = data.n_classes if spec.family == "mlp_classifier" else data.dim
    return [data.dim, *spec.hidden, out]


def init_network(spec: ModelSpec, data: DataMatrix, seed: int) -> mlp.Params:
    return mlp.init_params(mlp_sizes(spec, data), np.random.default_rng(derive_seed(seed, 0)))


def fit(spec: ModelSpec, data: DataMatrix, seed: int = 0) -> Hypothesis:
    """Return the minimum hypothesis of ``spec`` on ``data``."""
    if data.rows < 1:
        raise InvalidArgument("cannot fit on empty data")
    x = data.values
    if spec.family == "mean":
        return Hypothesis(spec, {"mu": x.mean(axis=0)})
    if spec.family == "gaussian":
        return Hypothesis(spec, {"mu": x.mean(axis=0), "var": np.maximum(x.var(axis=0), VARIANCE_FLOOR)})
    if spec.family == "kde":
        bw = spec.bandwidth if spec.bandwidth is not None else silverman_bandwidth(x)
        return Hypothesis(spec, {"train": np.array(x), "bandwidth": np.float64(bw)})

    if spec.family == "mlp_classifier":
        if not data.has_labels:
            raise InvalidArgument("mlp_classifier requires labeled data")
        objective = _classifier_objective(data.labels, spec.loss_clip)
    else:
        objective = _autoencoder_objective(x, spec.loss_clip)
    params = init_network(spec, data, seed)
    params, history = mlp.train(
        params,
        x,
        objective,
        epochs=spec.epochs,
        batch=spec.batch,
        optimizer=spec.optimizer,
        lr=spec.lr,
        rng=np.random.default_rng(derive_seed(seed, 1)),
    )
    return Hypothesis(spec, params, tuple(history))


def kde_log_density(train: np.ndarray, bandwidth: float, x: np.ndarray) -> np.ndarray:
    """Log density of an isotropic Gaussian KDE; training points contribute to their own density."""
    n, d = train.shape
    const = np.log(n) + 0.5 * d * np.log(2 * np.pi * bandwidth**2)
    out = np.empty(len(x))
    for s in range(0, len(x), _KDE_CHUNK):
        sq = cdist(x[s : s + _KDE_CHUNK], train, "sqeuclidean")
        out[s : s + _KDE_CHUNK] = logsumexp(-sq / (2 * bandwidth**2), axis=1) - const
    return out


def _raw_losses(h: Hypothesis, x: np.ndarray, labels) -> np.ndarray:
    fam = h.spec.family
    p = h.params
    if fam == "mean":
        return np.sum((x - p["mu"]) ** 2, axis=1)
    if fam == "gaussian":
        var = p["var"]
        return 0.5 * np.sum(np.log(2 * np.pi * var) + (x - p["mu"]) ** 2 / var, axis=1)
    if fam == "kde":
        return -kde_log_density(p["train"], float(p["bandwidth"]), x)
    out, _ = mlp.forward(p, x)
    if fam == "mlp_classifier":
        if labels is None:
            raise InvalidArgument("classifier loss needs labels")
        labels = np.asarray(labels, dtype=np.int64)
        if labels.min() < 0 or labels.max() >= h.n_classes:
            raise InvalidArgument(f"labels must lie in [0, {h.n_classes})")
        return mlp.cross_entropy(out, labels)[0]
    return mlp.squared_error(out, x)[0]


def sample_losses(h: Hypothesis, data: DataMatrix) -> np.ndarray:
    """Per-row losses ``l(h(x), a(x))``, clamped to ``[-c, c]`` when ``loss_clip`` is set."""
    _check_dim(h, data)
    losses = _raw_losses(h, data.values, data.labels)
    c = h.spec.loss_clip
    if c is not None:
        losses = np.clip(losses, -c, c)
    return losses


def sample_loss(h: Hypothesis, x, target=None) -> float:
    """Loss of a single sample; ``target`` is the label for classifiers and ignored otherwise."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    labels = None if target is None or not h.spec.supervised else [int(target)]
    data = DataMatrix(x.reshape(1, -1), labels, h.n_classes if labels is not None else None)
    return float(sample_losses(h, data)[0])


def empirical_risk(h: Hypothesis, data: DataMatrix) -> float:
    """Mean per-sample loss over ``data``, summed exactly so row order cannot matter."""
    if data.rows < 1:
        raise InvalidArgument("empirical risk of empty data")
    return math.fsum(sample_losses(h, data)) / data.rows


def predict_proba(h: Hypothesis, x: np.ndarray) -> np.ndarray:
    if h.spec.family != "mlp_classifier":
        raise InvalidArgument("predict_proba needs an mlp_classifier")
    out, _ = mlp.forward(h.params, np.asarray(x, dtype=np.float64))
    return mlp.softmax(out)


def accuracy(h: Hypothesis, data: DataMatrix) -> float:
    return float(np.mean(np.argmax(predict_proba(h, data.values), axis=1) == data.labels))


def _batch_loss_and_grads(spec, params, data):
    x = data.values
    out, cache = mlp.forward(params, x)
    if spec.family == "mlp_classifier":
        losses, dout = mlp.cross_entropy(out, data.labels)
    else:
        losses, dout = mlp.squared_error(out, x)
    return float(losses.mean()), mlp.backward(params, cache, dout / len(x))


def grad_check(spec: ModelSpec, data: DataMatrix, seed: int = 0, params=None, step: float = 1e-5) -> float:
    """Worst relative error between backprop gradients and central differences.

    Evaluated at the seeded initialization unless ``params`` is given.  The
    relative error of each entry is ``|a - n| / max(|a|, |n|, 1e-4)``, so
    near-zero gradients are compared absolutely.
    """
    if spec.family not in MLP_FAMILIES:
        raise InvalidArgument("grad_check applies to mlp families only")
    if spec.family == "mlp_classifier" and not data.has_labels:
        raise InvalidArgument("mlp_classifier requires labeled data")
    if params is None:
        params = init_network(spec, data, seed)
    params = [(np.array(w, dtype=np.float64), np.array(b, dtype=np.float64)) for w, b in params]
    _, grads = _batch_loss_and_grads(spec, params, data)
    worst = 0.0
    for layer, (w, b) in enumerate(params):
        for j, tensor in enumerate((w, b)):
            analytic = grads[layer][j]
            flat = tensor.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up, _ = _batch_loss_and_grads(spec, params, data)
                flat[i] = orig - step
                down, _ = _batch_loss_and_grads(spec, params, data)
                flat[i] = orig
                num = (up - down) / (2 * step)
                a = analytic.reshape(-1)[i]
                err = abs(a - num) / max(abs(a), abs(num), 1e-4)
                worst = max(worst, err)
    return worst


# ---------------------------------------------------------------- serialization

_HYP_MAGIC = b"RDIVHYP"
_HYP_VERSION = 1
_FAMILY_TAGS = {name: i for i, name in enumerate(FAMILIES)}


def _tensors(h: Hypothesis):
    fam = h.spec.family
    if fam == "mean":
        return [h.params["mu"]]
    if fam == "gaussian":
        return [h.params["mu"], h.params["var"]]
    if fam == "kde":
        return [h.params["train"], np.asarray(h.params["bandwidth"])]
    return [t for layer in h.params for t in layer]


def hypothesis_to_bytes(h: Hypothesis) -> bytes:
    """Versioned blob: magic, version, family tag, spec JSON, then float64 tensors."""
    spec_json = json.dumps(h.spec.to_dict(), sort_keys=True).encode()
    tensors = _tensors(h)
    parts = [_HYP_MAGIC, struct.pack("<BBI", _HYP_VERSION, _FAMILY_TAGS[h.spec.family], len(spec_json)), spec_json]
    parts.append(struct.pack("<I", len(tensors)))
    for t in tensors:
        t = np.ascontiguousarray(t, dtype="<f8")
        parts.append(struct.pack("<B", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}Q", *t.shape))
        parts.append(t.tobytes())
    return b"".join(parts)


def hypothesis_from_bytes(blob: bytes) -> Hypothesis:
    if not blob.startswith(_HYP_MAGIC):
        raise InvalidArgument("not a hypothesis blob")
    off = len(_HYP_MAGIC)
    version, tag, n_json = struct.unpack_from("<BBI", blob, off)
    if version != _HYP_VERSION:
        raise InvalidArgument(f"unsupported hypothesis blob version {version}")
    off += struct.calcsize("<BBI")
    spec = ModelSpec.from_dict(json.loads(blob[off : off + n_json]))
    off += n_json
    if _FAMILY_TAGS[spec.family] != tag:
        raise InvalidArgument("family tag does not match the embedded spec")
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    tensors = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", blob, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors.append(np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64))
        off += 8 * size
    if off != len(blob):
        raise InvalidArgument("trailing bytes in hypothesis blob")
    fam = spec.family
    if fam == "mean":
        return Hypothesis(spec, {"mu": tensors[0]})
    if fam == "gaussian":
        return Hypothesis(spec, {"mu": tensors[0], "var": tensors[1]})
    if fam == "kde":
        return Hypothesis(spec, {"train": tensors[0], "bandwidth": np.float64(tensors[1].reshape(-1)[0])})
    return Hypothesis(spec, list(zip(tensors[0::2], tensors[1::2])))
