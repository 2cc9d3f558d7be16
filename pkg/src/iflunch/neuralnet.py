"""Feed-forward networks with hand-written backpropagation.

One :class:`Network` class covers every architecture used here.  Hidden
layers are ReLU with inverted dropout; output heads are attached to a chosen
set of hidden layers, each head holding one logit per arm.  A CFR net has a
head pair on the last layer only, a MultiNet has one on every hidden layer,
and a treatment net is either of those with a single arm.

All parameters live in one flat vector so a single Adam update touches
everything; per-layer arrays are views into it.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .dgp import make_rng
from .estimators import targeted_regularization_terms
from .learners import nnls_simplex


# Training runs in single precision for speed; gradient checks build float64 nets.
TRAIN_DTYPE = np.float32


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"non-finite loss {loss} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss


class Variant(str, enum.Enum):
    INC = "Inc"
    CASC = "Casc"


# --------------------------------------------------------------------------
# configuration and search space


@dataclass(frozen=True)
class MlpConfig:
    layers: int = 4
    neurons_per_layer: int = 50
    dropout_prob: float = 0.1
    l2_penalty: float = 1e-4
    learning_rate: float = 1e-3
    batch_size: int = 32
    iterations: int = 2000
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MlpConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass(frozen=True)
class SearchSpace:
    """Closed ranges; rates and penalties are sampled log-uniformly."""

    layers: tuple = (4, 14)
    neurons_per_layer: tuple = (5, 200)
    dropout_prob: tuple = (0.1, 0.5)
    l2_penalty: tuple = (1e-5, 1e-3)
    learning_rate: tuple = (1e-5, 1e-2)
    batch_size: tuple = (10, 64)
    iterations: tuple = (2000, 10000)

    @classmethod
    def from_dict(cls, data: dict) -> "SearchSpace":
        return cls(**{k: tuple(v) for k, v in data.items()})

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}

    def sample(self, rng: np.random.Generator, seed: int) -> MlpConfig:
        def integer(lo_hi):
            lo, hi = lo_hi
            return int(rng.integers(int(lo), int(hi) + 1))

        def uniform(lo_hi):
            lo, hi = lo_hi
            return float(rng.uniform(lo, hi)) if hi > lo else float(lo)

        def log_uniform(lo_hi):
            lo, hi = lo_hi
            return float(math.exp(rng.uniform(math.log(lo), math.log(hi)))) if hi > lo else float(lo)

        return MlpConfig(
            layers=integer(self.layers),
            neurons_per_layer=integer(self.neurons_per_layer),
            dropout_prob=uniform(self.dropout_prob),
            l2_penalty=log_uniform(self.l2_penalty),
            learning_rate=log_uniform(self.learning_rate),
            batch_size=integer(self.batch_size),
            iterations=integer(self.iterations),
            seed=seed,
        )


# --------------------------------------------------------------------------
# network


@dataclass
class Batch:
    """Training rows.  ``arm`` selects the head column for each row.

    ``mask`` (rows x heads) weights each head's loss per row; ``clever`` is
    the targeted-regularization covariate ``1/pi_arm(x)`` per row.
    """

    x: np.ndarray
    y: np.ndarray
    arm: np.ndarray
    mask: Optional[np.ndarray] = None
    clever: Optional[np.ndarray] = None

    def take(self, idx) -> "Batch":
        return Batch(
            self.x[idx], self.y[idx], self.arm[idx],
            None if self.mask is None else self.mask[idx],
            None if self.clever is None else self.clever[idx],
        )


class Network:
    """ReLU MLP with per-layer multi-arm heads and optional learnable gamma.

    Parameters
    ----------
    n_inputs : int
        Covariate dimension.
    layers, width : int
        Number and width of hidden layers.
    n_arms : int
        Logits per head (2 for outcome nets, 1 for treatment nets).
    head_layers : sequence of int
        1-based hidden-layer indices that carry a head.
    binary : bool
        Sigmoid/cross-entropy heads if true, linear/squared-error otherwise.
    treg : bool
        Adds one learnable fluctuation coefficient per arm.
    """

    def __init__(self, n_inputs, layers, width, n_arms=2, head_layers=None, dropout=0.0, l2=0.0,
                 binary=True, treg=False, seed=None, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.n_inputs = int(n_inputs)
        self.layers = int(layers)
        self.width = int(width)
        self.n_arms = int(n_arms)
        self.head_layers = tuple(head_layers) if head_layers is not None else (self.layers,)
        if not self.head_layers or any(not 1 <= h <= self.layers for h in self.head_layers):
            raise ValueError(f"head layers {self.head_layers} outside 1..{self.layers}")
        self.dropout = float(dropout)
        self.l2 = float(l2)
        self.binary = bool(binary)
        self.treg = bool(treg)
        self.center = np.zeros(self.n_inputs)
        self.scale = np.ones(self.n_inputs)

        shapes = []
        d = self.n_inputs
        for _ in range(self.layers):
            shapes += [("W", (d, self.width)), ("b", (self.width,))]
            d = self.width
        for _ in self.head_layers:
            shapes += [("V", (self.width, self.n_arms)), ("c", (self.n_arms,))]
        if self.treg:
            shapes.append(("gamma", (self.n_arms,)))
        sizes = [int(np.prod(s)) for _, s in shapes]
        self.params = np.zeros(sum(sizes), dtype=self.dtype)
        self._decay = np.zeros(sum(sizes), dtype=self.dtype)
        self._slices = []
        views = []
        offset = 0
        for (_, shape), size in zip(shapes, sizes):
            self._slices.append(slice(offset, offset + size))
            views.append(self.params[offset : offset + size].reshape(shape))
            offset += size
        self.W = views[0 : 2 * self.layers : 2]
        self.b = views[1 : 2 * self.layers : 2]
        k = 2 * self.layers
        self.V = views[k : k + 2 * len(self.head_layers) : 2]
        self.c = views[k + 1 : k + 2 * len(self.head_layers) : 2]
        self.gamma = views[-1] if self.treg else None
        for (kind, _), sl in zip(shapes, self._slices):
            if kind in ("W", "V"):
                self._decay[sl] = 1.0
        self._initialize(make_rng(seed))

    # layout helpers -------------------------------------------------------

    def _initialize(self, rng):
        for W in self.W:
            W[...] = rng.normal(0.0, math.sqrt(2.0 / W.shape[0]), W.shape)
        for V in self.V:
            V[...] = rng.normal(0.0, math.sqrt(1.0 / V.shape[0]), V.shape)

    def layer_slice(self, layer: int) -> slice:
        """Flat-parameter slice of hidden layer ``layer`` (1-based) weights and bias."""
        a = self._slices[2 * (layer - 1)]
        b = self._slices[2 * (layer - 1) + 1]
        return slice(a.start, b.stop)

    def head_slice(self, head: int) -> slice:
        k = 2 * self.layers + 2 * head
        return slice(self._slices[k].start, self._slices[k + 1].stop)

    @property
    def gamma_slice(self) -> Optional[slice]:
        return self._slices[-1] if self.treg else None

    def set_standardization(self, x):
        x = np.asarray(x, dtype=float)
        self.center = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
        self.scale = scale

    def init_head_bias(self, y, arm):
        """Start every head at the per-arm mean target (logit scale for binary)."""
        for a in range(self.n_arms):
            sel = arm == a
            mu = float(np.mean(y[sel])) if np.any(sel) else float(np.mean(y))
            if self.binary:
                mu = min(max(mu, 1e-3), 1 - 1e-3)
                mu = math.log(mu / (1 - mu))
            for c in self.c:
                c[a] = mu

    # forward / backward ---------------------------------------------------

    def head_logits(self, x) -> list:
        """Logits of every head for every arm, no dropout: list of (n, arms)."""
        h = ((np.asarray(x, dtype=float) - self.center) / self.scale).astype(self.dtype, copy=False)
        out = []
        heads = dict(zip(self.head_layers, range(len(self.head_layers))))
        for layer in range(1, self.layers + 1):
            h = np.maximum(h @ self.W[layer - 1] + self.b[layer - 1], 0.0)
            if layer in heads:
                j = heads[layer]
                out.append((h @ self.V[j] + self.c[j]).astype(float))
        return out

    def head_predictions(self, x, arm: int) -> np.ndarray:
        """Prediction of every head for ``arm``: array (heads, n)."""
        logits = np.stack([o[:, arm] for o in self.head_logits(x)])
        return _sigmoid(logits) if self.binary else logits

    def loss_and_grad(self, batch: Batch, dropout_masks=None, rng=None, variant: Variant = Variant.INC,
                      frozen_inputs=None, return_parts: bool = False):
        """Loss and flat gradient on ``batch``.

        The loss is ``mean_i mean_l mask_il * (loss_il + tl_il)`` plus the L2
        penalty ``l2/2 * sum ||W||^2`` over hidden and head weights.

        ``variant=Casc`` stops gradients at layer boundaries: each hidden
        layer is updated only by the loss of its own head.  ``frozen_inputs``
        replaces each layer's input with the given arrays (used to check the
        cascade gradient with finite differences).  Dropout masks are drawn
        from ``rng`` unless given explicitly; with neither, dropout is off.
        """
        variant = Variant(variant)
        x = ((batch.x - self.center) / self.scale).astype(self.dtype, copy=False)
        n = x.shape[0]
        n_heads = len(self.head_layers)
        heads = dict(zip(self.head_layers, range(n_heads)))
        mask = np.ones((n, n_heads)) if batch.mask is None else batch.mask
        rows = np.arange(n)
        keep = 1.0 - self.dropout
        cascade = variant is Variant.CASC

        inputs, pre, drops, outs = [], [], [], []
        h = x
        for layer in range(1, self.layers + 1):
            if frozen_inputs is not None and layer > 1:
                h = frozen_inputs[layer - 1]
            inputs.append(h)
            z = h @ self.W[layer - 1] + self.b[layer - 1]
            a = np.maximum(z, 0.0)
            if dropout_masks is not None:
                d = dropout_masks[layer - 1]
            elif rng is not None and self.dropout > 0:
                d = (rng.random(a.shape) < keep).astype(self.dtype)
                d *= 1.0 / keep
            else:
                d = None
            h = a if d is None else a * d
            pre.append(z)
            drops.append(d)
            outs.append(h)

        scale = 1.0 / (n * n_heads)
        total = 0.0
        d_logit = []
        parts = []
        for layer in self.head_layers:
            j = heads[layer]
            o = outs[layer - 1] @ self.V[j] + self.c[j]
            oi = o[rows, batch.arm]
            w = mask[:, j]
            if self.binary:
                loss = np.logaddexp(0.0, oi) - batch.y * oi
                p = _sigmoid(oi)
                g = p - batch.y
            else:
                p = oi
                loss = (oi - batch.y) ** 2
                g = 2.0 * (oi - batch.y)
            tl_loss = 0.0
            if self.treg:
                clever = np.zeros(n) if batch.clever is None else batch.clever
                terms = targeted_regularization_terms(batch.y, p, batch.arm, self.gamma, clever, self.binary)
                dm_do = p * (1.0 - p) if self.binary else 1.0
                g = g + terms.dtl_dm * dm_do
                tl_loss = terms.loss_tl
                parts.append((j, terms, w))
            total += scale * float(np.sum(w * (loss + tl_loss)))
            d_logit.append((j, layer, scale * w * g))
        # weight decay on every W and V entry, written straight into the gradient
        grad = np.multiply(self.params, self._decay)
        grad *= self.l2
        total += 0.5 * float(grad @ self.params)
        gW = [grad[self._slices[2 * i]].reshape(self.W[i].shape) for i in range(self.layers)]
        gb = [grad[self._slices[2 * i + 1]] for i in range(self.layers)]
        k = 2 * self.layers
        gV = [grad[self._slices[k + 2 * j]].reshape(self.V[j].shape) for j in range(n_heads)]
        gc = [grad[self._slices[k + 2 * j + 1]] for j in range(n_heads)]

        head_dh = {}
        for j, layer, g in d_logit:
            dO = np.zeros((n, self.n_arms), dtype=self.dtype)
            dO[rows, batch.arm] = g
            gV[j] += outs[layer - 1].T @ dO
            gc[j] += dO.sum(axis=0)
            head_dh[layer] = dO @ self.V[j].T

        dh = None
        for layer in range(self.layers, 0, -1):
            local = head_dh.get(layer)
            if cascade or dh is None:
                dh = local
            elif local is not None:
                dh = dh + local
            i = layer - 1
            if dh is None:
                continue
            da = dh if drops[i] is None else dh * drops[i]
            dz = da * (pre[i] > 0)
            gW[i] += inputs[i].T @ dz
            gb[i] += dz.sum(axis=0)
            dh = dz @ self.W[i].T if layer > 1 and not cascade and frozen_inputs is None else None

        if self.treg:
            gg = grad[self._slices[-1]]
            for j, terms, w in parts:
                gg += np.bincount(batch.arm, weights=scale * w * terms.dtl_dgamma, minlength=self.n_arms)
        if return_parts:
            return total, grad, {"inputs": inputs, "outputs": outs, "dropout": drops}
        return total, grad

    def layer_losses(self, batch: Batch, dropout_masks=None, frozen_inputs=None) -> np.ndarray:
        """Unpenalized mean loss of each head separately (no mask)."""
        out = []
        for j in range(len(self.head_layers)):
            m = np.zeros((batch.x.shape[0], len(self.head_layers)))
            m[:, j] = len(self.head_layers)
            b = replace(batch, mask=m)
            l2, self.l2 = self.l2, 0.0
            try:
                loss, _ = self.loss_and_grad(b, dropout_masks=dropout_masks, frozen_inputs=frozen_inputs)
            finally:
                self.l2 = l2
            out.append(loss)
        return np.array(out)

    # export ---------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n_inputs": self.n_inputs, "layers": self.layers, "width": self.width, "n_arms": self.n_arms,
            "head_layers": list(self.head_layers), "dropout": self.dropout, "l2": self.l2,
            "binary": self.binary, "treg": self.treg,
            "center": self.center.tolist(), "scale": self.scale.tolist(),
            "params": self.params.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Network":
        net = cls(data["n_inputs"], data["layers"], data["width"], data["n_arms"], data["head_layers"],
                  data["dropout"], data["l2"], data["binary"], data["treg"], seed=0)
        net.params[...] = np.asarray(data["params"], dtype=float)
        net.center = np.asarray(data["center"], dtype=float)
        net.scale = np.asarray(data["scale"], dtype=float)
        return net


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def mlp_forward_backward(net: Network, batch: Batch, **kwargs):
    """Loss and gradient of ``net`` on ``batch``; see :meth:`Network.loss_and_grad`."""
    return net.loss_and_grad(batch, **kwargs)


# --------------------------------------------------------------------------
# optimisation


class Adam:
    """Adam with preallocated moment buffers; updates ``params`` in place."""

    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8, dtype=np.float64):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self._tmp = np.zeros(size, dtype=dtype)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        b1, b2, tmp = self.beta1, self.beta2, self._tmp
        self.m *= b1
        np.multiply(grad, 1 - b1, out=tmp)
        self.m += tmp
        self.v *= b2
        np.multiply(grad, grad, out=tmp)
        tmp *= 1 - b2
        self.v += tmp
        lr_t = self.lr * math.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        np.sqrt(self.v, out=tmp)
        tmp += self.eps
        np.divide(self.m, tmp, out=tmp)
        tmp *= lr_t
        params -= tmp


def loss_mask_partition(n: int, layers: int, rng: np.random.Generator) -> np.ndarray:
    """Assign each row to one layer: seeded shuffle, equal contiguous blocks, remainder round-robin."""
    if n < layers:
        raise ValueError(f"loss masking needs n >= layers (n={n}, layers={layers})")
    order = rng.permutation(n)
    block = n // layers
    owner = np.empty(n, dtype=int)
    owner[order[: block * layers]] = np.repeat(np.arange(layers), block)
    rest = order[block * layers :]
    owner[rest] = np.arange(rest.shape[0]) % layers
    mask = np.zeros((n, layers))
    mask[np.arange(n), owner] = float(layers)
    return mask


def train_network(net: Network, batch: Batch, config: MlpConfig, rng: np.random.Generator,
                  variant: Variant = Variant.INC) -> Network:
    """Adam on randomly drawn mini-batches; one iteration is one batch."""
    n = batch.x.shape[0]
    size = min(int(config.batch_size), n)
    opt = Adam(net.params.shape[0], config.learning_rate, dtype=net.dtype)
    for it in range(int(config.iterations)):
        idx = rng.integers(0, n, size=size)
        loss, grad = net.loss_and_grad(batch.take(idx), rng=rng, variant=variant)
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainingDiverged(it, loss)
        opt.step(net.params, grad)
    if not np.all(np.isfinite(net.params)):
        raise TrainingDiverged(int(config.iterations), float("nan"))
    return net


def combine_layers(layer_predictions, target) -> np.ndarray:
    """Simplex weights over layers from an (L, n) prediction matrix."""
    P = np.atleast_2d(np.asarray(layer_predictions, dtype=float))
    return nnls_simplex(P.T, target)


# --------------------------------------------------------------------------
# fitted models


@dataclass
class FittedOutcomeNet:
    """Outcome model ``m(t, x)``: per-arm simplex combination of head predictions."""

    net: Network
    beta: np.ndarray
    variant: str = "CFR"
    loss_mask: bool = False
    config: Optional[MlpConfig] = None

    def layer_predictions(self, x, t) -> np.ndarray:
        return self.net.head_predictions(x, int(t))

    def predict(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.asarray(t)
        if t.ndim == 0:
            return self.beta[int(t)] @ self.layer_predictions(x, int(t))
        out = np.empty(x.shape[0])
        for a in (0, 1):
            sel = t == a
            if np.any(sel):
                out[sel] = self.beta[a] @ self.layer_predictions(x[sel], a)
        return out

    @property
    def gamma(self):
        return None if self.net.gamma is None else self.net.gamma.copy()


@dataclass
class FittedTreatmentNet:
    net: Network
    beta: np.ndarray
    config: Optional[MlpConfig] = None

    def predict(self, x):
        return self.beta @ self.net.head_predictions(np.atleast_2d(np.asarray(x, dtype=float)), 0)


@dataclass
class FittedSmallMlp:
    net: Network

    def predict(self, x):
        return self.net.head_predictions(np.atleast_2d(np.asarray(x, dtype=float)), 0)[0]


def _check_arms(t):
    if not (np.any(t == 0) and np.any(t == 1)):
        raise ValueError("both treatment arms must be non-empty")


def _is_binary(y) -> bool:
    return bool(np.all((y >= 0) & (y <= 1)))


def _fit_beta(net, x, t, y, n_arms):
    beta = []
    for a in range(n_arms):
        sel = t == a if n_arms == 2 else np.ones(x.shape[0], dtype=bool)
        preds = net.head_predictions(x[sel], a)
        beta.append(combine_layers(preds, y[sel]))
    return np.array(beta)


def train_outcome_net(dataset, config: MlpConfig, architecture: str = "cfr", variant: Variant = Variant.INC,
                      use_loss_mask: bool = False, clever=None, binary: Optional[bool] = None) -> FittedOutcomeNet:
    """Train a two-armed outcome network on ``(x, t, y)``.

    ``architecture="cfr"`` puts a head pair on the last layer only;
    ``"multinet"`` puts one on every hidden layer.  Passing ``clever``
    (``1/pi_t(x)`` per row, propensity held fixed) switches on targeted
    regularization with a learnable per-arm gamma.
    """
    x, t, y = dataset.covariates, dataset.treatment, dataset.outcome
    _check_arms(t)
    binary = _is_binary(y) if binary is None else binary
    rng = make_rng(config.seed)
    multinet = architecture == "multinet"
    heads = tuple(range(1, config.layers + 1)) if multinet else (config.layers,)
    net = Network(x.shape[1], config.layers, config.neurons_per_layer, 2, heads, config.dropout_prob,
                  config.l2_penalty, binary, treg=clever is not None, seed=rng, dtype=TRAIN_DTYPE)
    net.set_standardization(x)
    arm = t.astype(int)
    net.init_head_bias(y, arm)
    mask = loss_mask_partition(x.shape[0], len(heads), rng) if use_loss_mask and multinet else None
    batch = Batch(x, y, arm, mask, None if clever is None else np.asarray(clever, dtype=float))
    train_network(net, batch, config, rng, variant if multinet else Variant.INC)
    beta = _fit_beta(net, x, arm, y, 2)
    label = f"MN-{Variant(variant).value}" if multinet else "CFR"
    return FittedOutcomeNet(net, beta, label, use_loss_mask and multinet, config)


def train_cfr(dataset, config: MlpConfig, clever=None) -> FittedOutcomeNet:
    return train_outcome_net(dataset, config, "cfr", clever=clever)


def train_multinet(dataset, config: MlpConfig, variant: Variant = Variant.INC, use_loss_mask: bool = False,
                   clever=None) -> FittedOutcomeNet:
    return train_outcome_net(dataset, config, "multinet", Variant(variant), use_loss_mask, clever)


def train_treatment_net(dataset, config: MlpConfig, architecture: str = "cfr-like",
                        variant: Variant = Variant.INC) -> FittedTreatmentNet:
    """Single-armed network predicting ``P(T=1 | x)``."""
    x, t = dataset.covariates, dataset.treatment
    _check_arms(t)
    rng = make_rng(config.seed)
    multinet = architecture.startswith("multinet")
    heads = tuple(range(1, config.layers + 1)) if multinet else (config.layers,)
    net = Network(x.shape[1], config.layers, config.neurons_per_layer, 1, heads, config.dropout_prob,
                  config.l2_penalty, True, seed=rng, dtype=TRAIN_DTYPE)
    net.set_standardization(x)
    arm = np.zeros(x.shape[0], dtype=int)
    net.init_head_bias(t, arm)
    train_network(net, Batch(x, t, arm), config, rng, variant if multinet else Variant.INC)
    return FittedTreatmentNet(net, _fit_beta(net, x, arm, t, 1)[0], config)


def fit_small_mlp(x, y, hidden=32, iterations=300, learning_rate=0.01, l2_penalty=1e-4, binary=True,
                  seed=None, batch_size=256) -> FittedSmallMlp:
    """One-hidden-layer network used as a Super Learner library member."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rng = make_rng(seed)
    net = Network(x.shape[1], 1, hidden, 1, (1,), 0.0, l2_penalty, binary, seed=rng, dtype=TRAIN_DTYPE)
    net.set_standardization(x)
    arm = np.zeros(x.shape[0], dtype=int)
    net.init_head_bias(y, arm)
    cfg = MlpConfig(layers=1, neurons_per_layer=hidden, dropout_prob=0.0, l2_penalty=l2_penalty,
                    learning_rate=learning_rate, batch_size=batch_size, iterations=iterations)
    train_network(net, Batch(x, y, arm), cfg, rng)
    return FittedSmallMlp(net)


# --------------------------------------------------------------------------
# hyperparameter search


@dataclass
class SearchResult:
    best: MlpConfig
    scores: list = field(default_factory=list)
    failures: list = field(default_factory=list)


def heldout_loss(model, dataset, binary=True, outcome=True) -> float:
    x, t = dataset.covariates, dataset.treatment
    if outcome:
        y = dataset.outcome
        p = model.predict(x, t)
    else:
        y = t
        p = model.predict(x)
    if binary:
        p = np.clip(p, 1e-12, 1 - 1e-12)
        return float(np.mean(-(y * np.log(p) + (1 - y) * np.log1p(-p))))
    return float(np.mean((p - y) ** 2))


def hyperparameter_search(dataset, trainer, space: Optional[SearchSpace] = None, trials: int = 15, seed=None,
                          candidates: Optional[Sequence[MlpConfig]] = None, outcome: bool = True) -> SearchResult:
    """Monte-Carlo train/test search: each trial samples a config and a fresh 80/20 split.

    ``trainer(dataset, config)`` returns a fitted model; the held-out
    cross-entropy (squared error for continuous outcomes) picks the winner.
    ``candidates`` replaces random sampling with an explicit list.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    space = space or SearchSpace()
    rng = make_rng(seed)
    configs = list(candidates) if candidates is not None else None
    n_trials = len(configs) if configs is not None else trials
    binary = _is_binary(dataset.outcome) if outcome else True
    scores, failures = [], []
    best, best_score = None, math.inf
    for k in range(n_trials):
        trial_seed = int(rng.integers(0, 2**31 - 1))
        cfg = configs[k] if configs is not None else space.sample(rng, trial_seed)
        cfg = replace(cfg, seed=trial_seed)
        perm = rng.permutation(dataset.n)
        cut = int(round(0.8 * dataset.n))
        train, test = dataset.subset(np.sort(perm[:cut])), dataset.subset(np.sort(perm[cut:]))
        try:
            model = trainer(train, cfg)
            score = heldout_loss(model, test, binary, outcome)
            if not math.isfinite(score):
                raise TrainingDiverged(int(cfg.iterations), score)
        except (TrainingDiverged, ValueError, FloatingPointError) as exc:
            failures.append((k, cfg, str(exc)))
            continue
        scores.append((k, cfg, score))
        if score < best_score:
            best, best_score = cfg, score
    if best is None:
        detail = "; ".join(f"trial {k}: {msg}" for k, _, msg in failures)
        raise RuntimeError(f"all {n_trials} search trials failed: {detail}")
    return SearchResult(best, scores, failures)


def save_network(net: Network, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(net.to_dict(), fh)


def load_network(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return Network.from_dict(json.load(fh))
