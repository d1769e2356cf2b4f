"""Joint-prediction feed-forward network with hand-written backpropagation.

A shared ReLU trunk maps the embedding to the surrogate representation.
Scalar heads sit on top of it:

* ``outcome`` (perfect variant) or ``outcome_0 .. outcome_C`` (noisy variant),
  identity output trained by squared error;
* ``score``, a logit whose logistic map is the surrogacy score P(T=1 | rep, z);
* ``coder_0 .. coder_{J-1}`` (noisy variant), coder-label predictions.

Covariates ``z`` are concatenated to every head input by default, or to the
trunk input with ``NetworkConfig(z_at_trunk=True)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

PROB_CLAMP = 1e-7
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class NetworkConfig:
    trunk_dims: tuple[int, ...] = (100, 50)
    head_dims: tuple[int, ...] = (50, 1)
    activation: str = "relu"
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    learning_rate: float = 2e-5
    max_epochs: int = 200
    batch_size: int = 256
    val_fraction: float = 0.2
    patience: int = 5
    seed: int = 0
    z_at_trunk: bool = False

    def __post_init__(self):
        object.__setattr__(self, "trunk_dims", tuple(int(v) for v in self.trunk_dims))
        object.__setattr__(self, "head_dims", tuple(int(v) for v in self.head_dims))
        if not self.trunk_dims or min(self.trunk_dims) < 1 or not self.head_dims or min(self.head_dims) < 1:
            raise ValueError("all layer widths must be >= 1")
        if self.head_dims[-1] != 1:
            raise ValueError("heads are scalar: head_dims must end in 1")
        if self.activation != "relu":
            raise ValueError("only the rectifier activation is supported")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be >= 0")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 0:
            raise ValueError("batch_size >= 1, max_epochs >= 0, patience >= 0 required")


@dataclass(frozen=True)
class Layout:
    """Shapes of every block: name -> list of (fan_in, fan_out)."""

    d: int
    p: int
    num_classes: int
    num_coders: int
    variant: str
    blocks: dict

    @classmethod
    def build(cls, config: NetworkConfig, d: int, p: int, num_classes: int = 2,
              num_coders: int = 0, variant: str = "perfect") -> "Layout":
        if variant not in ("perfect", "noisy"):
            raise ValueError("variant must be 'perfect' or 'noisy'")
        trunk_in = d + (p if config.z_at_trunk else 0)
        widths = [trunk_in, *config.trunk_dims]
        blocks = {"trunk": list(zip(widths[:-1], widths[1:]))}
        head_in = config.trunk_dims[-1] + (0 if config.z_at_trunk else p)
        hw = [head_in, *config.head_dims]
        head_shape = list(zip(hw[:-1], hw[1:]))
        if variant == "perfect":
            names = ["outcome", "score"]
        else:
            names = [f"outcome_{c}" for c in range(num_classes)] + ["score"]
            names += [f"coder_{j}" for j in range(num_coders)]
        for name in names:
            blocks[name] = list(head_shape)
        return cls(d, p, num_classes, num_coders, variant, blocks)

    @property
    def outcome_heads(self) -> list[str]:
        if self.variant == "perfect":
            return ["outcome"]
        return [f"outcome_{c}" for c in range(self.num_classes)]

    @property
    def coder_heads(self) -> list[str]:
        return [f"coder_{j}" for j in range(self.num_coders)] if self.variant == "noisy" else []

    def param_names(self) -> list[str]:
        names = []
        for block, shapes in self.blocks.items():
            for i in range(len(shapes)):
                names += [f"{block}.{i}.W", f"{block}.{i}.b"]
        return names


def init_params(layout: Layout, seed: int) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    rng = np.random.default_rng([seed, 0x1A17])
    params = {}
    for block, shapes in layout.blocks.items():
        for i, (fan_in, fan_out) in enumerate(shapes):
            bound = 1.0 / math.sqrt(fan_in)
            params[f"{block}.{i}.W"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            params[f"{block}.{i}.b"] = rng.uniform(-bound, bound, size=fan_out)
    return params


@dataclass
class TrainReport:
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    init_val_loss: float = float("nan")
    best_epoch: int = 0
    stopped_epoch: int = 0


@dataclass
class FittedNetwork:
    layout: Layout
    params: dict
    config: NetworkConfig
    train_report: TrainReport = field(default_factory=TrainReport)

    def to_json(self) -> str:
        """Serialize layer shapes and row-major weights."""
        lay = self.layout
        doc = {
            "format": "sri-network/1",
            "layout": {"d": lay.d, "p": lay.p, "num_classes": lay.num_classes,
                       "num_coders": lay.num_coders, "variant": lay.variant,
                       "blocks": {k: [list(s) for s in v] for k, v in lay.blocks.items()}},
            "config": asdict(self.config),
            "params": {name: {"shape": list(self.params[name].shape),
                              "data": self.params[name].ravel().tolist()}
                       for name in lay.param_names()},
            "train_report": asdict(self.train_report),
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FittedNetwork":
        doc = json.loads(text)
        lay = doc["layout"]
        layout = Layout(lay["d"], lay["p"], lay["num_classes"], lay["num_coders"], lay["variant"],
                        {k: [tuple(s) for s in v] for k, v in lay["blocks"].items()})
        params = {name: np.array(v["data"], dtype=float).reshape(v["shape"])
                  for name, v in doc["params"].items()}
        return cls(layout, params, NetworkConfig(**doc["config"]), TrainReport(**doc["train_report"]))


class HeadOutputs(NamedTuple):
    representation: np.ndarray
    outcome: np.ndarray          # (n,) perfect variant, (n, C+1) noisy variant
    surrogacy_score: np.ndarray  # (n,), clamped to [PROB_CLAMP, 1 - PROB_CLAMP]
    coder_preds: np.ndarray | None
    score_logit: np.ndarray


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _inputs(layout: Layout, config: NetworkConfig, y, z):
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if z is None:
        z = np.empty((len(y), 0))
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[None, :] if len(y) == 1 and z.size == layout.p else z.reshape(len(y), -1)
    if y.shape[1] != layout.d or z.shape[1] != layout.p:
        raise ValueError(f"expected inputs of width d={layout.d}, p={layout.p}; "
                         f"got {y.shape[1]} and {z.shape[1]}")
    return y, z


def _mlp_forward(params, block, shapes, x, relu_last):
    cache = [x]
    h = x
    for i in range(len(shapes)):
        h = h @ params[f"{block}.{i}.W"] + params[f"{block}.{i}.b"]
        if i < len(shapes) - 1 or relu_last:
            h = np.maximum(h, 0.0)
        cache.append(h)
    return h, cache


def _mlp_backward(params, block, shapes, cache, grad_out, relu_last, grads):
    g = grad_out
    for i in reversed(range(len(shapes))):
        if i < len(shapes) - 1 or relu_last:
            g = g * (cache[i + 1] > 0)
        grads[f"{block}.{i}.W"] = cache[i].T @ g
        grads[f"{block}.{i}.b"] = g.sum(axis=0)
        g = g @ params[f"{block}.{i}.W"].T
    return g


def _forward_full(layout, config, params, y, z):
    y, z = _inputs(layout, config, y, z)
    trunk_in = np.hstack([y, z]) if config.z_at_trunk else y
    rep, trunk_cache = _mlp_forward(params, "trunk", layout.blocks["trunk"], trunk_in, True)
    head_in = rep if config.z_at_trunk else np.hstack([rep, z])
    heads = {}
    for name, shapes in layout.blocks.items():
        if name == "trunk":
            continue
        out, cache = _mlp_forward(params, name, shapes, head_in, False)
        heads[name] = (out[:, 0], cache)
    return rep, trunk_cache, heads


def forward(net: FittedNetwork, y_embed, z=None) -> HeadOutputs:
    """Evaluate all heads; accepts one unit (vectors) or a batch (2-D arrays)."""
    return _outputs(net.layout, net.config, net.params, y_embed, z)


def _outputs(layout, config, params, y, z) -> HeadOutputs:
    rep, _, heads = _forward_full(layout, config, params, y, z)
    logit = heads["score"][0]
    score = np.clip(_sigmoid(logit), PROB_CLAMP, 1 - PROB_CLAMP)
    if layout.variant == "perfect":
        outcome = heads["outcome"][0]
    else:
        outcome = np.stack([heads[h][0] for h in layout.outcome_heads], axis=1)
    coders = np.stack([heads[h][0] for h in layout.coder_heads], axis=1) if layout.coder_heads else None
    return HeadOutputs(rep, outcome, score, coders, logit)


# -- losses ------------------------------------------------------------------

@dataclass
class Batch:
    """Training arrays.  ``target`` is (n,) for the perfect variant (labels
    of labeled units) or (n, C+1) surrogate outcomes for the noisy variant;
    ``coder_labels`` is (n, J).  Entries on rows with ``s == 0`` are ignored."""

    y: np.ndarray
    z: np.ndarray
    t: np.ndarray
    s: np.ndarray
    target: np.ndarray
    coder_labels: np.ndarray | None = None

    def take(self, idx) -> "Batch":
        return Batch(self.y[idx], self.z[idx], self.t[idx], self.s[idx], self.target[idx],
                     None if self.coder_labels is None else self.coder_labels[idx])


def _cross_entropy(t, logit):
    p = _sigmoid(logit)
    pc = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
    ce = -(t * np.log(pc) + (1 - t) * np.log(1 - pc))
    dlogit = np.where((p > PROB_CLAMP) & (p < 1 - PROB_CLAMP), p - t, 0.0)
    return ce, dlogit


def _loss_terms(layout, config, params, batch: Batch):
    """Per-unit loss and gradients of the mean loss with respect to every head output."""
    rep, trunk_cache, heads = _forward_full(layout, config, params, batch.y, batch.z)
    n = len(batch.t)
    s = batch.s.astype(float)
    t = batch.t.astype(float)
    ce, dlogit = _cross_entropy(t, heads["score"][0])
    dout = {}
    if layout.variant == "perfect":
        target = np.where(s > 0, np.nan_to_num(batch.target), 0.0)
        resid = heads["outcome"][0] - target
        per_unit = s * resid**2 + config.alpha * ce
        dout["outcome"] = 2 * s * resid / n
        dout["score"] = config.alpha * dlogit / n
    else:
        target = np.where(s[:, None] > 0, np.nan_to_num(batch.target), 0.0)
        per_unit = config.gamma * ce
        for c, name in enumerate(layout.outcome_heads):
            resid = heads[name][0] - target[:, c]
            per_unit = per_unit + s * resid**2
            dout[name] = 2 * s * resid / n
        labels = np.where(s[:, None] > 0, batch.coder_labels, 0).astype(float)
        for j, name in enumerate(layout.coder_heads):
            resid = heads[name][0] - labels[:, j]
            per_unit = per_unit + config.beta * s * resid**2
            dout[name] = 2 * config.beta * s * resid / n
        dout["score"] = config.gamma * dlogit / n
    return per_unit, dout, rep, trunk_cache, heads


def joint_loss(net: FittedNetwork, batch: Batch) -> float:
    per_unit, *_ = _loss_terms(net.layout, net.config, net.params, batch)
    return float(per_unit.mean())


def joint_loss_perfect(net: FittedNetwork, batch: Batch) -> float:
    """Mean of s*(mu - L)^2 + alpha*CE(T, rho) over the batch."""
    if net.layout.variant != "perfect":
        raise ValueError("network was built for the noisy variant")
    return joint_loss(net, batch)


def joint_loss_noisy(net: FittedNetwork, batch: Batch, surrogate_outcomes=None) -> float:
    """Mean of s*sum_c (mu_c - M_c)^2 + beta*s*sum_j (kappa_j - L_j)^2 + gamma*CE(T, rho)."""
    if net.layout.variant != "noisy":
        raise ValueError("network was built for the perfect variant")
    if surrogate_outcomes is not None:
        batch = Batch(batch.y, batch.z, batch.t, batch.s, np.asarray(surrogate_outcomes, float), batch.coder_labels)
    return joint_loss(net, batch)


def _gradients(layout, config, params, batch):
    per_unit, dout, rep, trunk_cache, heads = _loss_terms(layout, config, params, batch)
    grads = {}
    g_head_in = None
    for name, shapes in layout.blocks.items():
        if name == "trunk":
            continue
        g = _mlp_backward(params, name, shapes, heads[name][1], dout[name][:, None], False, grads)
        g_head_in = g if g_head_in is None else g_head_in + g
    g_rep = g_head_in[:, : rep.shape[1]]
    _mlp_backward(params, "trunk", layout.blocks["trunk"], trunk_cache, g_rep, True, grads)
    return float(per_unit.mean()), grads


def gradients(net: FittedNetwork, batch: Batch) -> dict[str, np.ndarray]:
    """Exact gradients of the variant's joint loss with respect to every parameter."""
    return _gradients(net.layout, net.config, net.params, batch)[1]


# -- training ----------------------------------------------------------------

def _stratified_split(t, s, val_fraction, rng):
    val = []
    for tv in (0, 1):
        for sv in (0, 1):
            cell = np.flatnonzero((t == tv) & (s == sv))
            if len(cell) == 0:
                continue
            cell = rng.permutation(cell)
            n_val = int(round(len(cell) * val_fraction))
            if len(cell) >= 2:
                n_val = min(max(n_val, 1), len(cell) - 1)
            else:
                n_val = 0
            val.extend(cell[:n_val].tolist())
    val = np.sort(np.array(val, dtype=np.int64))
    train = np.setdiff1d(np.arange(len(t)), val)
    return train, val


def train(batch: Batch, config: NetworkConfig, variant: str = "perfect", num_classes: int = 2,
          num_coders: int = 0) -> FittedNetwork:
    """Fit the joint network with Adam and validation-based early stopping.

    Returns the parameters of the epoch with the lowest validation loss,
    counting the initialization as epoch 0.
    """
    if len(batch.t) == 0 or not (batch.s == 1).any():
        raise ValueError("cannot fit outcome head: no labeled units in the training split")
    layout = Layout.build(config, batch.y.shape[1], batch.z.shape[1], num_classes, num_coders, variant)
    params = init_params(layout, config.seed)
    rng = np.random.default_rng([config.seed, 0x7EA1])
    tr_idx, val_idx = _stratified_split(batch.t, batch.s, config.val_fraction, rng)
    if not (batch.s[tr_idx] == 1).any():
        raise ValueError("cannot fit outcome head: no labeled units left after the validation split")
    train_b = batch.take(tr_idx)
    val_b = batch.take(val_idx) if len(val_idx) else train_b

    def val_loss(p):
        return float(_loss_terms(layout, config, p, val_b)[0].mean())

    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(v) for k, v in params.items()}
    step = 0
    report = TrainReport(init_val_loss=val_loss(params))
    best, best_params, bad = report.init_val_loss, {k: a.copy() for k, a in params.items()}, 0
    lr = config.learning_rate
    n_tr = len(tr_idx)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n_tr)
        losses = []
        for start in range(0, n_tr, config.batch_size):
            mb = train_b.take(order[start:start + config.batch_size])
            loss, grads = _gradients(layout, config, params, mb)
            losses.append(loss * len(mb.t))
            step += 1
            c1 = 1 - ADAM_BETA1**step
            c2 = 1 - ADAM_BETA2**step
            for k, g in grads.items():
                m[k] = ADAM_BETA1 * m[k] + (1 - ADAM_BETA1) * g
                v[k] = ADAM_BETA2 * v[k] + (1 - ADAM_BETA2) * g * g
                params[k] -= lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + ADAM_EPS)
        report.train_losses.append(float(sum(losses) / n_tr))
        vl = val_loss(params)
        report.val_losses.append(vl)
        report.stopped_epoch = epoch
        if vl < best:
            best, bad, report.best_epoch = vl, 0, epoch
            best_params = {k: a.copy() for k, a in params.items()}
        else:
            bad += 1
            if bad >= max(config.patience, 1):
                break
    return FittedNetwork(layout, best_params, config, report)


def make_batch(dataset, idx=None, surrogate=None) -> Batch:
    """Training arrays for ``dataset`` rows ``idx``.

    Without ``surrogate`` the first coder's label is the outcome target
    (perfect variant); otherwise ``surrogate`` holds (n, C+1) surrogate
    outcomes aligned with the full dataset (noisy variant).
    """
    idx = np.arange(dataset.n) if idx is None else np.asarray(idx)
    labels = dataset.labels[idx]
    s = dataset.s[idx]
    if surrogate is None:
        target = np.where(s == 1, labels[:, 0], 0).astype(float) if labels.shape[1] else np.zeros(len(idx))
        coder = None
    else:
        target = np.asarray(surrogate, dtype=float)[idx]
        coder = labels
    return Batch(dataset.y[idx], dataset.z[idx], dataset.t[idx], s, target, coder)
