"""Two-head residual policy/value network, from first principles.

Everything is plain numpy float64: 3x3/1x1 convolutions (im2col), batch
normalization with running statistics, dense layers, masked softmax and
tanh heads, hand-written reverse-mode gradients, and Adam.  The input is
the game observation as a 2-channel dim x dim image (real and imaginary
planes of the state matrix).

Layout: a stem convolution (2 -> channels, needed so the residual
additions type-check) feeds `blocks` residual blocks of two 3x3
convolutions each; a 1x1-conv policy head ends in a dense layer over all
actions with illegal logits masked to -inf; a 1x1-conv value head ends
in a dense layer and tanh.  Batch norm follows every convolution.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class TrainingDivergence(RuntimeError):
    """A gradient went non-finite during training."""


@dataclass(frozen=True)
class NetConfig:
    """Shape of the network; the parameter count is a pure function of this."""

    dim: int
    n_actions: int
    channels: int = 64
    blocks: int = 5
    policy_channels: int = 32
    value_channels: int = 8


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def _conv_indices(h: int, k: int) -> np.ndarray:
    """Gather indices mapping (pixel, kernel position) -> padded flat pixel."""
    pad = k // 2
    hp = h + 2 * pad
    idx = np.empty((h * h, k * k), dtype=np.intp)
    p = 0
    for i in range(h):
        for j in range(h):
            q = 0
            for di in range(k):
                for dj in range(k):
                    idx[p, q] = (i + di) * hp + (j + dj)
                    q += 1
            p += 1
    return idx


class Conv2D:
    """Same-padding convolution, no bias (batch norm always follows)."""

    def __init__(self, name: str, c_in: int, c_out: int, k: int, h: int, rng):
        self.name = name
        self.c_in, self.c_out, self.k, self.h = c_in, c_out, k, h
        fan_in = c_in * k * k
        self.w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (c_out, c_in, k, k))
        self.gw = np.zeros_like(self.w)
        self._idx = _conv_indices(h, k)
        self._cols = None

    def forward(self, x: np.ndarray, cache: bool) -> np.ndarray:
        b, c, h, _ = x.shape
        pad = self.k // 2
        if pad:
            xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        else:
            xp = x
        hp = h + 2 * pad
        cols = xp.reshape(b, c, hp * hp)[:, :, self._idx]          # (B,C,P,K)
        cols = cols.transpose(0, 2, 1, 3).reshape(b, h * h, c * self.k**2)
        if cache:
            self._cols = cols
        wmat = self.w.reshape(self.c_out, -1)
        y = cols @ wmat.T                                          # (B,P,Cout)
        return y.transpose(0, 2, 1).reshape(b, self.c_out, h, h)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        b, _, h, _ = dy.shape
        p = h * h
        dy2 = dy.reshape(b, self.c_out, p).transpose(0, 2, 1)      # (B,P,Cout)
        cols = self._cols
        self.gw = (
            dy2.reshape(-1, self.c_out).T @ cols.reshape(-1, cols.shape[2])
        ).reshape(self.w.shape)
        wmat = self.w.reshape(self.c_out, -1)
        dcols = (dy2 @ wmat).reshape(b, p, self.c_in, self.k**2).transpose(0, 2, 1, 3)
        pad = self.k // 2
        hp = h + 2 * pad
        dxp = np.zeros((b, self.c_in, hp * hp))
        for kk in range(self.k**2):
            # for a fixed kernel offset every pixel maps to a distinct
            # padded pixel, so fancy-index += is safe
            dxp[:, :, self._idx[:, kk]] += dcols[:, :, :, kk]
        dxp = dxp.reshape(b, self.c_in, hp, hp)
        return dxp[:, :, pad : pad + h, pad : pad + h] if pad else dxp

    def params(self):
        return {f"{self.name}.w": self.w}

    def grads(self):
        return {f"{self.name}.w": self.gw}

    weight_names = property(lambda self: (f"{self.name}.w",))


class BatchNorm2D:
    """Per-channel batch norm over (batch, height, width)."""

    def __init__(self, name: str, c: int):
        self.name = name
        self.gamma = np.ones(c)
        self.beta = np.zeros(c)
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)
        self.ggamma = np.zeros(c)
        self.gbeta = np.zeros(c)
        self._xhat = None
        self._invstd = None

    def forward(self, x: np.ndarray, train: bool, cache: bool, update_running: bool) -> np.ndarray:
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            if update_running:
                self.running_mean = BN_MOMENTUM * self.running_mean + (1 - BN_MOMENTUM) * mean
                self.running_var = BN_MOMENTUM * self.running_var + (1 - BN_MOMENTUM) * var
        else:
            mean = self.running_mean
            var = self.running_var
        invstd = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean[:, None, None]) * invstd[:, None, None]
        if cache:
            self._xhat = xhat
            self._invstd = invstd
        return self.gamma[:, None, None] * xhat + self.beta[:, None, None]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, invstd = self._xhat, self._invstd
        self.ggamma = (dy * xhat).sum(axis=(0, 2, 3))
        self.gbeta = dy.sum(axis=(0, 2, 3))
        dxhat = dy * self.gamma[:, None, None]
        mean_dxhat = dxhat.mean(axis=(0, 2, 3))
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2, 3))
        return invstd[:, None, None] * (
            dxhat - mean_dxhat[:, None, None] - xhat * mean_dxhat_xhat[:, None, None]
        )

    def params(self):
        return {f"{self.name}.gamma": self.gamma, f"{self.name}.beta": self.beta}

    def grads(self):
        return {f"{self.name}.gamma": self.ggamma, f"{self.name}.beta": self.gbeta}

    def buffers(self):
        return {
            f"{self.name}.running_mean": self.running_mean,
            f"{self.name}.running_var": self.running_var,
        }

    weight_names = property(lambda self: ())


class Dense:
    def __init__(self, name: str, n_in: int, n_out: int, rng):
        self.name = name
        self.w = rng.normal(0.0, np.sqrt(2.0 / n_in), (n_out, n_in))
        self.b = np.zeros(n_out)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._x = None

    def forward(self, x: np.ndarray, cache: bool) -> np.ndarray:
        if cache:
            self._x = x
        return x @ self.w.T + self.b

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.gw = dy.T @ self._x
        self.gb = dy.sum(axis=0)
        return dy @ self.w

    def params(self):
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}

    def grads(self):
        return {f"{self.name}.w": self.gw, f"{self.name}.b": self.gb}

    weight_names = property(lambda self: (f"{self.name}.w",))


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise log softmax with illegal entries at -inf (probability 0)."""
    z = np.where(mask, logits, -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    return z - lse


# ---------------------------------------------------------------------------
# The network
# ---------------------------------------------------------------------------

class PolicyValueNet:
    """Residual two-head network over game observations."""

    def __init__(self, config: NetConfig, rng: np.random.Generator | int = 0):
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        self.config = config
        d, c = config.dim, config.channels
        self.stem = Conv2D("stem.conv", 2, c, 3, d, rng)
        self.stem_bn = BatchNorm2D("stem.bn", c)
        self.blocks = []
        for i in range(config.blocks):
            self.blocks.append(
                (
                    Conv2D(f"block{i}.conv1", c, c, 3, d, rng),
                    BatchNorm2D(f"block{i}.bn1", c),
                    Conv2D(f"block{i}.conv2", c, c, 3, d, rng),
                    BatchNorm2D(f"block{i}.bn2", c),
                )
            )
        pc, vc = config.policy_channels, config.value_channels
        self.pconv = Conv2D("policy.conv", c, pc, 1, d, rng)
        self.pbn = BatchNorm2D("policy.bn", pc)
        self.pfc = Dense("policy.fc", pc * d * d, config.n_actions, rng)
        self.vconv = Conv2D("value.conv", c, vc, 1, d, rng)
        self.vbn = BatchNorm2D("value.bn", vc)
        self.vfc = Dense("value.fc", vc * d * d, 1, rng)
        self._relu_masks: list[np.ndarray] = []
        self._vpre = None

    # -- structure walks ----------------------------------------------------

    def _layers(self):
        yield self.stem
        yield self.stem_bn
        for c1, b1, c2, b2 in self.blocks:
            yield from (c1, b1, c2, b2)
        yield from (self.pconv, self.pbn, self.pfc, self.vconv, self.vbn, self.vfc)

    def parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self._layers():
            out.update(layer.params())
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self._layers():
            out.update(layer.grads())
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self._layers():
            if isinstance(layer, BatchNorm2D):
                out.update(layer.buffers())
        return out

    def weight_names(self) -> tuple[str, ...]:
        names: list[str] = []
        for layer in self._layers():
            names.extend(layer.weight_names)
        return tuple(names)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    # -- forward / backward -------------------------------------------------

    def _relu(self, x: np.ndarray, cache: bool) -> np.ndarray:
        m = x > 0
        if cache:
            self._relu_masks.append(m)
        return x * m

    def forward_raw(
        self, obs: np.ndarray, mask: np.ndarray, train: bool, cache: bool = False,
        update_running: bool = False,
    ) -> tuple[np.ndarray, np.ndarray]:
        """(masked logits as log-probabilities, value); caches for backward."""
        obs = np.asarray(obs, dtype=float)
        mask = np.asarray(mask, dtype=bool)
        if obs.ndim != 4 or obs.shape[1:] != (2, self.config.dim, self.config.dim):
            raise ValueError(
                f"observation batch must be (B, 2, {self.config.dim}, {self.config.dim}),"
                f" got {obs.shape}"
            )
        if mask.shape != (obs.shape[0], self.config.n_actions):
            raise ValueError(f"mask batch must be (B, {self.config.n_actions}), got {mask.shape}")
        self._relu_masks = []
        x = self._relu(self.stem_bn.forward(self.stem.forward(obs, cache), train, cache, update_running), cache)
        for c1, b1, c2, b2 in self.blocks:
            h = self._relu(b1.forward(c1.forward(x, cache), train, cache, update_running), cache)
            h = b2.forward(c2.forward(h, cache), train, cache, update_running)
            x = self._relu(h + x, cache)
        b = obs.shape[0]
        p = self._relu(self.pbn.forward(self.pconv.forward(x, cache), train, cache, update_running), cache)
        logits = self.pfc.forward(p.reshape(b, -1), cache)
        v = self._relu(self.vbn.forward(self.vconv.forward(x, cache), train, cache, update_running), cache)
        vpre = self.vfc.forward(v.reshape(b, -1), cache)[:, 0]
        value = np.tanh(vpre)
        if cache:
            self._value = value
        return masked_log_softmax(logits, mask), value

    def forward(
        self, obs: np.ndarray, mask: np.ndarray, train: bool = False
    ) -> tuple[np.ndarray, np.ndarray]:
        """Masked policy probabilities (0 on illegal actions) and value."""
        logp, value = self.forward_raw(obs, mask, train=train)
        return np.exp(logp), value

    def backward(self, dlogits: np.ndarray, dvalue: np.ndarray) -> None:
        """Reverse pass from d(loss)/d(logits) and d(loss)/d(value)."""
        masks = self._relu_masks[::-1]  # consumed in reverse order
        mi = 0

        dvpre = (dvalue * (1.0 - self._value**2))[:, None]
        dv = self.vfc.backward(dvpre)
        b = dlogits.shape[0]
        d = self.config.dim
        dv = dv.reshape(b, self.config.value_channels, d, d)
        dv = dv * masks[mi]; mi += 1
        dxv = self.vconv.backward(self.vbn.backward(dv))

        dp = self.pfc.backward(dlogits)
        dp = dp.reshape(b, self.config.policy_channels, d, d)
        dp = dp * masks[mi]; mi += 1
        dxp = self.pconv.backward(self.pbn.backward(dp))

        dx = dxv + dxp
        for c1, b1, c2, b2 in reversed(self.blocks):
            dx = dx * masks[mi]; mi += 1           # relu after the skip add
            dskip = dx
            dh = c2.backward(b2.backward(dx))
            dh = dh * masks[mi]; mi += 1
            dx = c1.backward(b1.backward(dh)) + dskip
        dx = dx * masks[mi]; mi += 1
        self.stem.backward(self.stem_bn.backward(dx))


# ---------------------------------------------------------------------------
# Loss, optimizer, training step
# ---------------------------------------------------------------------------

@dataclass
class TrainBatch:
    """Search-distilled training data."""

    obs: np.ndarray          # (B, 2, d, d)
    policies: np.ndarray     # (B, A), sums to 1 over legal actions
    values: np.ndarray       # (B,), in [-1, 1]
    masks: np.ndarray        # (B, A) bool

    def __len__(self) -> int:
        return self.obs.shape[0]


L2_WEIGHT = 1e-4


def loss_and_grads(
    net: PolicyValueNet, batch: TrainBatch, l2: float = L2_WEIGHT,
    update_running: bool = False,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean[CE(target policy, policy) + (target value - value)^2] + l2 |w|^2."""
    b = len(batch)
    logp, value = net.forward_raw(
        batch.obs, batch.masks, train=True, cache=True, update_running=update_running
    )
    t = batch.policies
    ce = -(t * np.where(t > 0, logp, 0.0)).sum(axis=1)  # 0 log 0 = 0
    se = (batch.values - value) ** 2
    data_loss = float((ce + se).mean())

    dlogits = (np.exp(logp) - t) / b
    dlogits[~batch.masks] = 0.0
    dvalue = 2.0 * (value - batch.values) / b
    net.backward(dlogits, dvalue)

    grads = {k: v.copy() for k, v in net.gradients().items()}
    l2_term = 0.0
    params = net.parameters()
    for name in net.weight_names():
        w = params[name]
        l2_term += float((w**2).sum())
        grads[name] += 2.0 * l2 * w
    return data_loss + l2 * l2_term, grads


def loss(net: PolicyValueNet, batch: TrainBatch, l2: float = L2_WEIGHT) -> float:
    """Loss value only (no gradient bookkeeping kept)."""
    logp, value = net.forward_raw(batch.obs, batch.masks, train=True)
    t = batch.policies
    ce = -(t * np.where(t > 0, logp, 0.0)).sum(axis=1)
    se = (batch.values - value) ** 2
    l2_term = sum(float((net.parameters()[n] ** 2).sum()) for n in net.weight_names())
    return float((ce + se).mean()) + l2 * l2_term


class Adam:
    """Adam with bias correction; moments keyed like the parameter dict."""

    def __init__(self, net: PolicyValueNet, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in net.parameters().items()}
        self.v = {k: np.zeros_like(v) for k, v in net.parameters().items()}

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        b1t = 1.0 - self.beta1**self.step_count
        b2t = 1.0 - self.beta2**self.step_count
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / b1t) / (np.sqrt(self.v[k] / b2t) + self.eps)


def train_step(
    net: PolicyValueNet, opt: Adam, batch: TrainBatch, l2: float = L2_WEIGHT
) -> float:
    """One Adam update on one batch; raises on non-finite gradients."""
    value, grads = loss_and_grads(net, batch, l2, update_running=True)
    for k, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingDivergence(f"non-finite gradient in {k}")
    opt.update(net.parameters(), grads)
    return value


def gradient_check(
    net: PolicyValueNet,
    batch: TrainBatch,
    sample_count: int,
    rng: np.random.Generator,
    h: float = 1e-4,
    l2: float = L2_WEIGHT,
) -> float:
    """Max relative error of analytic gradients vs central finite differences."""
    _, grads = loss_and_grads(net, batch, l2)
    params = net.parameters()
    names = sorted(params)
    worst = 0.0
    for _ in range(sample_count):
        name = names[int(rng.integers(len(names)))]
        p = params[name]
        flat = int(rng.integers(p.size))
        orig = p.flat[flat]
        p.flat[flat] = orig + h
        up = loss(net, batch, l2)
        p.flat[flat] = orig - h
        down = loss(net, batch, l2)
        p.flat[flat] = orig
        numeric = (up - down) / (2 * h)
        analytic = grads[name].flat[flat]
        err = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, net: PolicyValueNet, opt: Adam | None = None, extra: dict | None = None) -> None:
    """Single-file container: parameters, BN statistics, optimizer moments,
    and a JSON blob for configuration plus caller extras (curriculum, ...)."""
    arrays: dict[str, np.ndarray] = {}
    for k, v in net.parameters().items():
        arrays[f"param/{k}"] = v
    for k, v in net.buffers().items():
        arrays[f"buffer/{k}"] = v
    meta = {
        "version": CHECKPOINT_VERSION,
        "net_config": asdict(net.config),
        "extra": extra or {},
    }
    if opt is not None:
        meta["opt"] = {
            "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
            "eps": opt.eps, "step_count": opt.step_count,
        }
        for k, v in opt.m.items():
            arrays[f"opt_m/{k}"] = v
        for k, v in opt.v.items():
            arrays[f"opt_v/{k}"] = v
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[PolicyValueNet, Adam | None, dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        net = PolicyValueNet(NetConfig(**meta["net_config"]), rng=0)
        params = net.parameters()
        for k in params:
            params[k][...] = data[f"param/{k}"]
        buffers = net.buffers()
        for k in buffers:
            buffers[k][...] = data[f"buffer/{k}"]
        opt = None
        if "opt" in meta:
            o = meta["opt"]
            opt = Adam(net, lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"])
            opt.step_count = o["step_count"]
            for k in opt.m:
                opt.m[k] = data[f"opt_m/{k}"].copy()
                opt.v[k] = data[f"opt_v/{k}"].copy()
        return net, opt, meta["extra"]


def copy_net(net: PolicyValueNet) -> PolicyValueNet:
    """Deep copy via the parameter/buffer dicts (used for best-vs-new)."""
    clone = PolicyValueNet(net.config, rng=0)
    cp, cb = clone.parameters(), clone.buffers()
    for k, v in net.parameters().items():
        cp[k][...] = v
    for k, v in net.buffers().items():
        cb[k][...] = v
    return clone


class NetEvaluator:
    """Adapter: (game, net) -> evaluator callable for the tree search."""

    def __init__(self, game, net: PolicyValueNet):
        self.game = game
        self.net = net

    def __call__(self, state):
        obs = self.game.observe(state)[None]
        mask = self.game.legal(state)[None]
        p, v = self.net.forward(obs, mask, train=False)
        return p[0], float(v[0])
