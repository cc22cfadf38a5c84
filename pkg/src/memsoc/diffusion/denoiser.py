"""Patch-token transformer denoiser for 1-D signals.

The signal is cut into fixed-size patches, each embedded as a token.
Blocks interleave self-attention over signal tokens, cross-attention to
conditioning tokens built from PCA coefficients, and a two-layer
feed-forward, all with residual connections and layer norm. A sinusoidal
time embedding, passed through a small MLP, is added to every token.
"""

from dataclasses import dataclass

import numpy as np

from .. import mathcore as mc
from ..mathcore import Tensor, attention, layer_norm, matmul, relu
from ..mathcore.rng import subsystem_rng


@dataclass
class DiffusionConfig:
    steps: int = 500
    beta_lo: float = 1e-4
    beta_hi: float = 0.02
    signal_length: int = 256
    patch_size: int = 16
    token_dim: int = 64
    n_blocks: int = 4
    ff_mult: int = 2
    k_cond: int = 16
    epochs: int = 400
    batch_size: int = 64
    learning_rate: float = 1e-3
    snapshot_every: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.signal_length < self.patch_size:
            raise ValueError(
                f"signal_length {self.signal_length} < patch_size {self.patch_size}")


def sinusoidal_embedding(t, dim):
    """Classic sin/cos positional code for integer timesteps."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class DenoiserNet:
    """Predicts the noise component of a noisy signal given (t, conditioning)."""

    def __init__(self, config, seed=0, rng=None):
        self.config = config
        self.patch = config.patch_size
        self.d = config.token_dim
        self.k_cond = config.k_cond
        self.n_tokens = -(-config.signal_length // self.patch)  # ceil
        self.padded_len = self.n_tokens * self.patch
        # data and conditioning statistics, frozen by the trainer
        self.data_mean = 0.0
        self.data_std = 1.0
        self.cond_mean = np.zeros(self.k_cond)
        self.cond_std = np.ones(self.k_cond)

        rng = rng if rng is not None else subsystem_rng(seed, "init", 2)
        d, p = self.d, self.patch

        def glorot(shape, fan):
            return Tensor(rng.standard_normal(shape) / np.sqrt(fan), requires_grad=True)

        self.params = {}
        P = self.params
        P["in_proj.w"] = glorot((p, d), p)
        P["in_proj.b"] = Tensor(np.zeros(d), requires_grad=True)
        P["time.w1"] = glorot((d, d), d)
        P["time.b1"] = Tensor(np.zeros(d), requires_grad=True)
        P["time.w2"] = glorot((d, d), d)
        P["time.b2"] = Tensor(np.zeros(d), requires_grad=True)
        if self.k_cond > 0:
            # conditioning tokens: a two-layer mix of the whitened coefficient
            # vector, one token per coefficient, plus a positional code; the
            # tokens reach the signal stream only through cross-attention
            ch = 4 * self.k_cond
            P["cond.w1"] = glorot((self.k_cond, ch), self.k_cond)
            P["cond.b1"] = Tensor(np.zeros(ch), requires_grad=True)
            P["cond.w2"] = glorot((ch, self.k_cond * d), ch)
            P["cond.b2"] = Tensor(np.zeros(self.k_cond * d), requires_grad=True)
            P["cond.scale"] = glorot((self.k_cond, d), 1)
            P["cond.pos"] = glorot((self.k_cond, d), 1)
        for i in range(config.n_blocks):
            for name in ("sa", "ca") if self.k_cond > 0 else ("sa",):
                for w in ("wq", "wk", "wv", "wo"):
                    P[f"b{i}.{name}.{w}"] = glorot((d, d), d)
                P[f"b{i}.{name}.ln_g"] = Tensor(np.ones(d), requires_grad=True)
                P[f"b{i}.{name}.ln_b"] = Tensor(np.zeros(d), requires_grad=True)
            h = d * config.ff_mult
            P[f"b{i}.ff.w1"] = glorot((d, h), d)
            P[f"b{i}.ff.b1"] = Tensor(np.zeros(h), requires_grad=True)
            P[f"b{i}.ff.w2"] = glorot((h, d), h)
            P[f"b{i}.ff.b2"] = Tensor(np.zeros(d), requires_grad=True)
            P[f"b{i}.ff.ln_g"] = Tensor(np.ones(d), requires_grad=True)
            P[f"b{i}.ff.ln_b"] = Tensor(np.zeros(d), requires_grad=True)
        P["out.ln_g"] = Tensor(np.ones(d), requires_grad=True)
        P["out.ln_b"] = Tensor(np.zeros(d), requires_grad=True)
        P["out.w"] = Tensor(rng.standard_normal((d, p)) * (0.1 / np.sqrt(d)),
                            requires_grad=True)
        P["out.b"] = Tensor(np.zeros(p), requires_grad=True)

    def parameters(self):
        return list(self.params.values())

    def pad(self, x):
        """Edge-pad the last axis up to a whole number of patches."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        extra = self.padded_len - x.shape[-1]
        if extra < 0:
            raise ValueError(f"signal length {x.shape[-1]} exceeds configured "
                             f"{self.config.signal_length}")
        if extra:
            x = np.concatenate([x, np.repeat(x[:, -1:], extra, axis=1)], axis=1)
        return x

    def set_normalization(self, data_mean, data_std, cond_mean, cond_std):
        self.data_mean = float(data_mean)
        self.data_std = float(data_std)
        self.cond_mean = np.asarray(cond_mean, dtype=np.float64)
        self.cond_std = np.maximum(np.asarray(cond_std, dtype=np.float64), 1e-12)

    def forward(self, x_t, t, cond):
        """Noise prediction as a Tensor; x_t is (batch, padded_len) in the
        standardized domain, t an int array, cond (batch, k_cond) or None."""
        P = self.params
        x = x_t if isinstance(x_t, Tensor) else Tensor(np.atleast_2d(x_t))
        b = x.data.shape[0]
        tokens = mc.add(matmul(mc.reshape(x, (b, self.n_tokens, self.patch)),
                               P["in_proj.w"]), P["in_proj.b"])
        temb = Tensor(sinusoidal_embedding(t, self.d))
        temb = mc.add(matmul(relu(mc.add(matmul(temb, P["time.w1"]), P["time.b1"])),
                             P["time.w2"]), P["time.b2"])
        tokens = mc.add(tokens, mc.reshape(temb, (b, 1, self.d)))

        ct = None
        if self.k_cond > 0:
            if cond is None:
                raise ValueError("net was built with conditioning; cond is required")
            cw = (np.atleast_2d(cond) - self.cond_mean) / self.cond_std
            mixed = mc.add(matmul(relu(mc.add(matmul(Tensor(cw), P["cond.w1"]),
                                              P["cond.b1"])), P["cond.w2"]),
                           P["cond.b2"])
            ct = mc.add(mc.add(mc.multiply(Tensor(cw[:, :, None]), P["cond.scale"]),
                               mc.reshape(mixed, (b, self.k_cond, self.d))),
                        P["cond.pos"])

        h = tokens
        for i in range(self.config.n_blocks):
            n = layer_norm(h, P[f"b{i}.sa.ln_g"], P[f"b{i}.sa.ln_b"])
            sa = attention(matmul(n, P[f"b{i}.sa.wq"]), matmul(n, P[f"b{i}.sa.wk"]),
                           matmul(n, P[f"b{i}.sa.wv"]))
            h = mc.add(h, matmul(sa, P[f"b{i}.sa.wo"]))
            if ct is not None:
                n = layer_norm(h, P[f"b{i}.ca.ln_g"], P[f"b{i}.ca.ln_b"])
                ca = attention(matmul(n, P[f"b{i}.ca.wq"]), matmul(ct, P[f"b{i}.ca.wk"]),
                               matmul(ct, P[f"b{i}.ca.wv"]))
                h = mc.add(h, matmul(ca, P[f"b{i}.ca.wo"]))
            n = layer_norm(h, P[f"b{i}.ff.ln_g"], P[f"b{i}.ff.ln_b"])
            ff = mc.add(matmul(relu(mc.add(matmul(n, P[f"b{i}.ff.w1"]),
                                           P[f"b{i}.ff.b1"])), P[f"b{i}.ff.w2"]),
                        P[f"b{i}.ff.b2"])
            h = mc.add(h, ff)

        out = mc.add(matmul(layer_norm(h, P["out.ln_g"], P["out.ln_b"]), P["out.w"]),
                     P["out.b"])
        return mc.reshape(out, (b, self.padded_len))

    def cond_cache(self, cond):
        """Precompute conditioning tokens and per-block cross-attention K/V.

        The conditioning is fixed across all reverse steps of a sampling
        run, so this is paid once per batch instead of once per step.
        """
        if self.k_cond == 0:
            return None
        if cond is None:
            raise ValueError("net was built with conditioning; cond is required")
        P = self.params
        cw = (np.atleast_2d(cond) - self.cond_mean) / self.cond_std
        mixed = (np.maximum(cw @ P["cond.w1"].data + P["cond.b1"].data, 0.0)
                 @ P["cond.w2"].data + P["cond.b2"].data)
        ct = (cw[:, :, None] * P["cond.scale"].data
              + mixed.reshape(len(cw), self.k_cond, self.d) + P["cond.pos"].data)
        cache = {"ct": ct}
        for i in range(self.config.n_blocks):
            cache[f"b{i}.k"] = ct @ P[f"b{i}.ca.wk"].data
            cache[f"b{i}.v"] = ct @ P[f"b{i}.ca.wv"].data
        return cache

    @staticmethod
    def _np_attention(q, k, v):
        scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(q.shape[-1])
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        return (e / e.sum(axis=-1, keepdims=True)) @ v

    @staticmethod
    def _np_layer_norm(x, gamma, beta, eps=1e-5):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return (xc / np.sqrt(var + eps)) * gamma + beta

    def fast_forward(self, x_t, t, cache):
        """Tape-free twin of forward() for the sampling hot loop; must stay
        arithmetically identical to the Tensor path."""
        P = {name: p.data for name, p in self.params.items()}
        x = np.atleast_2d(x_t)
        b = x.shape[0]
        tokens = x.reshape(b, self.n_tokens, self.patch) @ P["in_proj.w"] + P["in_proj.b"]
        temb = sinusoidal_embedding(t, self.d)
        temb = np.maximum(temb @ P["time.w1"] + P["time.b1"], 0.0) @ P["time.w2"] + P["time.b2"]
        h = tokens + temb[:, None, :]
        for i in range(self.config.n_blocks):
            n = self._np_layer_norm(h, P[f"b{i}.sa.ln_g"], P[f"b{i}.sa.ln_b"])
            sa = self._np_attention(n @ P[f"b{i}.sa.wq"], n @ P[f"b{i}.sa.wk"],
                                    n @ P[f"b{i}.sa.wv"])
            h = h + sa @ P[f"b{i}.sa.wo"]
            if cache is not None:
                n = self._np_layer_norm(h, P[f"b{i}.ca.ln_g"], P[f"b{i}.ca.ln_b"])
                ca = self._np_attention(n @ P[f"b{i}.ca.wq"], cache[f"b{i}.k"],
                                        cache[f"b{i}.v"])
                h = h + ca @ P[f"b{i}.ca.wo"]
            n = self._np_layer_norm(h, P[f"b{i}.ff.ln_g"], P[f"b{i}.ff.ln_b"])
            ff = np.maximum(n @ P[f"b{i}.ff.w1"] + P[f"b{i}.ff.b1"], 0.0) \
                @ P[f"b{i}.ff.w2"] + P[f"b{i}.ff.b2"]
            h = h + ff
        out = self._np_layer_norm(h, P["out.ln_g"], P["out.ln_b"]) @ P["out.w"] + P["out.b"]
        return out.reshape(b, self.padded_len)

    def __call__(self, x_t, t, cond, cache=None):
        """Inference-mode noise prediction as a plain array."""
        squeeze = np.ndim(x_t) == 1
        t = np.full(1 if squeeze else len(x_t), t) if np.ndim(t) == 0 else t
        if cache is None:
            cache = self.cond_cache(cond)
        out = self.fast_forward(np.atleast_2d(x_t), t, cache)
        return out[0] if squeeze else out

    def state(self):
        out = {name: p.data.copy() for name, p in self.params.items()}
        out["_meta.data_stats"] = np.array([self.data_mean, self.data_std])
        out["_meta.cond_mean"] = self.cond_mean.copy()
        out["_meta.cond_std"] = self.cond_std.copy()
        out["_meta.config"] = np.array([
            self.config.steps, self.config.signal_length, self.config.patch_size,
            self.config.token_dim, self.config.n_blocks, self.config.ff_mult,
            self.config.k_cond], dtype=np.int64)
        return out

    @classmethod
    def from_state(cls, state, config=None):
        meta = state["_meta.config"]
        if config is None:
            config = DiffusionConfig(
                steps=int(meta[0]), signal_length=int(meta[1]), patch_size=int(meta[2]),
                token_dim=int(meta[3]), n_blocks=int(meta[4]), ff_mult=int(meta[5]),
                k_cond=int(meta[6]))
        net = cls(config)
        for name in net.params:
            net.params[name] = Tensor(state[name], requires_grad=True)
        net.data_mean, net.data_std = (float(v) for v in state["_meta.data_stats"])
        net.cond_mean = np.asarray(state["_meta.cond_mean"])
        net.cond_std = np.asarray(state["_meta.cond_std"])
        return net
