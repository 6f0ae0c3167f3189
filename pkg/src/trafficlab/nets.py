"""Dense networks for the trajectory-modification learner.

Small fixed architectures (encoder -> attention -> decoder actor, concat
critic) with hand-written reverse-mode gradient accumulation. Layers are
stateless between calls: ``forward`` returns an explicit cache that
``backward`` consumes, so several passes can be in flight during one update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .observation import OBS_DIM, OBS_LAYOUT, SOCIAL_SLOTS


def build_obs_scale() -> np.ndarray:
    """Fixed per-entry input scaling (positions /30, speeds /10, shapes /10,
    angles /pi). Part of the network math, not of the observation contract."""
    scale = np.ones(OBS_DIM)
    i = 0
    for name, n in OBS_LAYOUT:
        for _ in range(n):
            if "position" in name or "deadreckon" in name or name.endswith(("rel_x", "rel_y")):
                scale[i] = 30.0
            elif "speed" in name:
                scale[i] = 10.0
            elif name.endswith(("length", "width")):
                scale[i] = 10.0
            elif "trend" in name:
                scale[i] = math.pi
            i += 1
    assert i == OBS_DIM
    return scale


class Dense:
    """Fully connected layer, tanh or linear, uniform +/-1/sqrt(fan_in) init."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 activation: str = "tanh", dtype=np.float64):
        bound = 1.0 / math.sqrt(n_in)
        self.W = rng.uniform(-bound, bound, size=(n_out, n_in)).astype(dtype)
        self.b = rng.uniform(-bound, bound, size=n_out).astype(dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        if activation not in ("tanh", "linear"):
            raise ValueError(f"unsupported activation '{activation}'")
        self.activation = activation

    def forward(self, x: np.ndarray):
        z = x @ self.W.T + self.b
        y = np.tanh(z) if self.activation == "tanh" else z
        return y, (x, y)

    def backward(self, cache, dy: np.ndarray, accumulate: bool = True) -> np.ndarray:
        x, y = cache
        dz = dy * (1.0 - y * y) if self.activation == "tanh" else dy
        if accumulate:
            self.dW += dz.T @ x
            self.db += dz.sum(axis=0)
        return dz @ self.W

    def zero_grad(self) -> None:
        self.dW[...] = 0.0
        self.db[...] = 0.0


class MLP:
    def __init__(self, sizes, rng, activations=None, dtype=np.float64):
        if activations is None:
            activations = ["tanh"] * (len(sizes) - 1)
        self.layers = [
            Dense(sizes[i], sizes[i + 1], rng, activations[i], dtype)
            for i in range(len(sizes) - 1)
        ]

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    def backward(self, caches, dy, accumulate: bool = True):
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            dy = layer.backward(c, dy, accumulate)
        return dy


class SoftAttention:
    """Single-query soft attention over the ego row and 5 social rows.

    The query comes from the ego features through one nonlinear projection;
    keys and values project ego + social rows through two more, so the ego
    attends to the nearby vehicles and to itself.
    """

    def __init__(self, d_feat: int, d_attn: int, rng, dtype=np.float64):
        self.p_q = Dense(d_feat, d_attn, rng, "tanh", dtype)
        self.p_k = Dense(d_feat, d_attn, rng, "tanh", dtype)
        self.p_v = Dense(d_feat, d_attn, rng, "tanh", dtype)
        self.d_attn = d_attn

    def forward(self, ego: np.ndarray, social: np.ndarray):
        b, s, d = social.shape
        rows = np.concatenate([ego[:, None, :], social], axis=1)
        flat = rows.reshape(b * (s + 1), d)
        q, cq = self.p_q.forward(ego)
        kf, ck = self.p_k.forward(flat)
        vf, cv = self.p_v.forward(flat)
        keys = kf.reshape(b, s + 1, self.d_attn)
        vals = vf.reshape(b, s + 1, self.d_attn)
        logits = np.einsum("bd,bjd->bj", q, keys) / math.sqrt(self.d_attn)
        logits = logits - logits.max(axis=1, keepdims=True)
        expl = np.exp(logits)
        weights = expl / expl.sum(axis=1, keepdims=True)
        out = np.einsum("bj,bjd->bd", weights, vals)
        cache = (b, s, q, keys, vals, weights, cq, ck, cv)
        return out, weights, cache

    def backward(self, cache, dout, accumulate: bool = True):
        b, s, q, keys, vals, weights, cq, ck, cv = cache
        scale = 1.0 / math.sqrt(self.d_attn)
        dvals = weights[:, :, None] * dout[:, None, :]
        dw = np.einsum("bd,bjd->bj", dout, vals)
        dlogits = weights * (dw - (weights * dw).sum(axis=1, keepdims=True))
        dq = np.einsum("bj,bjd->bd", dlogits, keys) * scale
        dkeys = dlogits[:, :, None] * q[:, None, :] * scale
        dflat = self.p_k.backward(ck, dkeys.reshape(b * (s + 1), -1), accumulate)
        dflat = dflat + self.p_v.backward(cv, dvals.reshape(b * (s + 1), -1), accumulate)
        drows = dflat.reshape(b, s + 1, -1)
        dego = self.p_q.backward(cq, dq, accumulate) + drows[:, 0]
        return dego, drows[:, 1:]

    @property
    def layers(self):
        return [self.p_q, self.p_k, self.p_v]


@dataclass(frozen=True)
class ActorSizes:
    enc: int = 64
    attn: int = 64
    dec: int = 256


@dataclass(frozen=True)
class CriticSizes:
    enc: int = 64
    dec: int = 64


_R_DIM = 8
_E_DIM = 5
_S_DIM = 7


class Actor:
    """Encoder -> social attention -> decoder policy; tanh-bounded scalar."""

    def __init__(self, rng, sizes: ActorSizes = ActorSizes(), dtype=np.float64):
        self.sizes = sizes
        self.dtype = np.dtype(dtype)
        e = sizes.enc
        self.enc_r = MLP([_R_DIM, e, e], rng, dtype=dtype)
        self.enc_e = MLP([_E_DIM, e, e], rng, dtype=dtype)
        self.enc_s = MLP([_S_DIM, e, e], rng, dtype=dtype)
        self.attn = SoftAttention(e, sizes.attn, rng, dtype=dtype)
        self.dec = MLP([sizes.attn, sizes.dec, sizes.dec, 1], rng, dtype=dtype)
        self.inv_scale = (1.0 / build_obs_scale()).astype(dtype)

    def forward(self, obs: np.ndarray):
        x = np.asarray(obs, dtype=self.dtype) * self.inv_scale
        b = x.shape[0]
        o_r = x[:, :_R_DIM]
        o_e = x[:, _R_DIM:_R_DIM + _E_DIM]
        o_s = x[:, _R_DIM + _E_DIM:].reshape(b * SOCIAL_SLOTS, _S_DIM)
        f_r, c_r = self.enc_r.forward(o_r)
        f_e, c_e = self.enc_e.forward(o_e)
        f_s, c_s = self.enc_s.forward(o_s)
        ego = f_r + f_e
        social = f_s.reshape(b, SOCIAL_SLOTS, -1)
        att, weights, c_att = self.attn.forward(ego, social)
        a, c_dec = self.dec.forward(att)
        return a, (b, c_r, c_e, c_s, c_att, c_dec, weights)

    def backward(self, cache, da, accumulate: bool = True) -> None:
        b, c_r, c_e, c_s, c_att, c_dec, _ = cache
        datt = self.dec.backward(c_dec, da, accumulate)
        dego, dsocial = self.attn.backward(c_att, datt, accumulate)
        self.enc_r.backward(c_r, dego, accumulate)
        self.enc_e.backward(c_e, dego, accumulate)
        self.enc_s.backward(c_s, dsocial.reshape(b * SOCIAL_SLOTS, -1), accumulate)

    def act(self, obs_vec: np.ndarray) -> float:
        a, _ = self.forward(np.asarray(obs_vec, dtype=self.dtype)[None, :])
        return float(a[0, 0])

    def named_layers(self):
        return [
            ("enc_r", self.enc_r.layers),
            ("enc_e", self.enc_e.layers),
            ("enc_s", self.enc_s.layers),
            ("attn", self.attn.layers),
            ("dec", self.dec.layers),
        ]


class Critic:
    """Q network: whole-observation encoder, action concatenated after it."""

    def __init__(self, rng, sizes: CriticSizes = CriticSizes(), dtype=np.float64):
        self.sizes = sizes
        self.dtype = np.dtype(dtype)
        h = sizes.enc
        d = sizes.dec
        self.enc = MLP([OBS_DIM, h, h], rng, dtype=dtype)
        self.dec = MLP([h + 1, d, d, 1], rng,
                       activations=["tanh", "tanh", "linear"], dtype=dtype)
        self.inv_scale = (1.0 / build_obs_scale()).astype(dtype)

    def forward(self, obs: np.ndarray, action: np.ndarray):
        x = np.asarray(obs, dtype=self.dtype) * self.inv_scale
        a = np.asarray(action, dtype=self.dtype)
        f, c_enc = self.enc.forward(x)
        fa = np.concatenate([f, a], axis=1)
        q, c_dec = self.dec.forward(fa)
        return q, (c_enc, c_dec, f.shape[1])

    def backward(self, cache, dq, accumulate: bool = True):
        c_enc, c_dec, h = cache
        dfa = self.dec.backward(c_dec, dq, accumulate)
        dobs = self.enc.backward(c_enc, dfa[:, :h], accumulate)
        return dobs, dfa[:, h:]

    def value(self, obs_vec, action: float) -> float:
        q, _ = self.forward(
            np.asarray(obs_vec, dtype=self.dtype)[None, :],
            np.array([[action]], dtype=self.dtype),
        )
        return float(q[0, 0])

    def named_layers(self):
        return [("enc", self.enc.layers), ("dec", self.dec.layers)]


# ---------------------------------------------------------------------------
# Parameter plumbing shared by actor and critics


def named_params(net):
    out = []
    for prefix, layers in net.named_layers():
        for i, layer in enumerate(layers):
            out.append((f"{prefix}.{i}.W", layer.W, layer.dW))
            out.append((f"{prefix}.{i}.b", layer.b, layer.db))
    return out


def zero_grads(net) -> None:
    for _, layers in net.named_layers():
        for layer in layers:
            layer.zero_grad()


def soft_update(target, online, tau: float) -> None:
    """Blend online parameters into the target: t <- tau*p + (1-tau)*t."""
    for (_, tp, _), (_, p, _) in zip(named_params(target), named_params(online)):
        tp *= 1.0 - tau
        tp += tau * p


def copy_params(dst, src) -> None:
    for (_, dp, _), (_, sp, _) in zip(named_params(dst), named_params(src)):
        dp[...] = sp


def get_state(net) -> dict:
    return {name: p.tolist() for name, p, _ in named_params(net)}


def set_state(net, state: dict) -> None:
    for name, p, _ in named_params(net):
        arr = np.asarray(state[name], dtype=p.dtype)
        if arr.shape != p.shape:
            raise ValueError(f"parameter '{name}': shape {arr.shape} != {p.shape}")
        p[...] = arr


class Adam:
    """Adaptive-moment gradient descent over a net's parameter list."""

    def __init__(self, net, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.net = net
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for _, p, _ in named_params(net)]
        self.v = [np.zeros_like(p) for _, p, _ in named_params(net)]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for (_, p, g), m, v in zip(named_params(self.net), self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def get_state(self) -> dict:
        return {
            "t": self.t,
            "m": [m.tolist() for m in self.m],
            "v": [v.tolist() for v in self.v],
        }

    def set_state(self, state: dict) -> None:
        self.t = int(state["t"])
        for m, raw in zip(self.m, state["m"]):
            m[...] = np.asarray(raw, dtype=m.dtype)
        for v, raw in zip(self.v, state["v"]):
            v[...] = np.asarray(raw, dtype=v.dtype)


# ---------------------------------------------------------------------------
# Convenience single-sample entry points


def attention_forward(block: SoftAttention, ego_features, social_features):
    """Attention values and weights for one ego row plus social rows."""
    ego = np.asarray(ego_features, dtype=float)
    social = np.asarray(social_features, dtype=float)
    single = ego.ndim == 1
    if single:
        ego = ego[None, :]
        social = social[None, :, :]
    out, weights, _ = block.forward(ego, social)
    if single:
        return out[0], weights[0]
    return out, weights


def actor_forward(actor: Actor, obs_vec) -> float:
    return actor.act(obs_vec)


def critic_forward(critic: Critic, obs_vec, action: float) -> float:
    return critic.value(obs_vec, action)
