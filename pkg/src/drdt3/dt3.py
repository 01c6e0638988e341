"""Decision-TTT sequence model.

Embeds K-step (return-to-go, state, action) contexts, runs them through an
attention + fast-weight block, and reads coarse action predictions off the
state-token positions. The fast-weight sub-layer updates its hidden matrix W
by one recorded gradient step per token, so outer-loop gradients flow through
the inner update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DArray


class TimestepRangeError(IndexError):
    """A context timestep falls outside the learned embedding table."""


# ---------------------------------------------------------------------------
# Context containers
# ---------------------------------------------------------------------------

@dataclass
class ContextWindow:
    """One K-step model input; padding occupies a contiguous prefix."""

    rtgs: np.ndarray        # (K,)
    states: np.ndarray      # (K, d_s)
    actions: np.ndarray     # (K, d_a)
    timesteps: np.ndarray   # (K,) int
    pad_mask: np.ndarray    # (K,) bool, True = real token

    def validate(self):
        k = len(self.rtgs)
        if not (len(self.states) == len(self.actions)
                == len(self.timesteps) == len(self.pad_mask) == k):
            raise ValueError("context fields disagree on K")
        real = np.flatnonzero(self.pad_mask)
        pad = np.flatnonzero(~self.pad_mask)
        if pad.size and real.size and pad.max() > real.min():
            raise ValueError("padding must occupy a contiguous prefix")
        if pad.size:
            if np.any(self.rtgs[pad]) or np.any(self.states[pad]) \
                    or np.any(self.actions[pad]):
                raise ValueError("padded rows must be all-zero")
        if real.size > 1:
            steps = self.timesteps[real]
            if np.any(np.diff(steps) != 1):
                raise ValueError("real timesteps must increase by 1")
        return self


class ContextBatch:
    """Stacked contexts: rtgs (B,K), states (B,K,d_s), actions (B,K,d_a)."""

    def __init__(self, rtgs, states, actions, timesteps, pad_mask):
        self.rtgs = np.asarray(rtgs, dtype=np.float64)
        self.states = np.asarray(states, dtype=np.float64)
        self.actions = np.asarray(actions, dtype=np.float64)
        self.timesteps = np.asarray(timesteps, dtype=np.int64)
        self.pad_mask = np.asarray(pad_mask, dtype=bool)

    @classmethod
    def from_windows(cls, windows):
        return cls(
            np.stack([w.rtgs for w in windows]),
            np.stack([w.states for w in windows]),
            np.stack([w.actions for w in windows]),
            np.stack([w.timesteps for w in windows]),
            np.stack([w.pad_mask for w in windows]),
        )

    @property
    def size(self):
        return self.rtgs.shape[0]

    @property
    def context_len(self):
        return self.rtgs.shape[1]


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

class Linear:
    def __init__(self, w, b):
        self.w = w
        self.b = b

    @classmethod
    def init(cls, rng, d_in, d_out, std=0.02):
        return cls(
            DArray(rng.normal(0.0, std, size=(d_in, d_out)), requires_grad=True),
            DArray(np.zeros(d_out), requires_grad=True),
        )

    def __call__(self, x):
        return ad.matmul(x, self.w) + self.b

    def named(self, prefix):
        return [(prefix + ".w", self.w), (prefix + ".b", self.b)]


class TTTLinearLayer:
    """Fast-weight layer: W starts at W0 each sequence and takes one
    gradient step on the token reconstruction loss per real token."""

    def __init__(self, w0, theta_q, theta_k, theta_v, inner_lr, rank=0):
        self.w0 = w0
        self.theta_q = theta_q      # full (d,d), or (A, B) pair when factored
        self.theta_k = theta_k
        self.theta_v = theta_v
        self.inner_lr = float(inner_lr)
        self.rank = rank

    @classmethod
    def init(cls, rng, d, inner_lr, rank=0, std=0.02):
        def proj():
            if rank > 0:
                return (
                    DArray(rng.normal(0.0, std, size=(d, rank)), requires_grad=True),
                    DArray(rng.normal(0.0, std, size=(rank, d)), requires_grad=True),
                )
            return DArray(rng.normal(0.0, std, size=(d, d)), requires_grad=True)
        w0 = DArray(np.zeros((d, d)), requires_grad=True)
        return cls(w0, proj(), proj(), proj(), inner_lr, rank)

    def _theta(self, t):
        if self.rank > 0:
            return ad.matmul(t[0], t[1])
        return t

    def thetas(self):
        return (self._theta(self.theta_q), self._theta(self.theta_k),
                self._theta(self.theta_v))

    def named(self, prefix):
        out = [(prefix + ".w0", self.w0)]
        for name, t in (("theta_q", self.theta_q), ("theta_k", self.theta_k),
                        ("theta_v", self.theta_v)):
            if self.rank > 0:
                out += [(f"{prefix}.{name}.a", t[0]), (f"{prefix}.{name}.b", t[1])]
            else:
                out.append((f"{prefix}.{name}", t))
        return out


class AttentionTTTBlock:
    def __init__(self, wq, wk, wv, wo, n_heads, ln1_g, ln1_b, ttt, ln2_g, ln2_b):
        self.wq, self.wk, self.wv, self.wo = wq, wk, wv, wo
        self.n_heads = n_heads
        self.ln1_g, self.ln1_b = ln1_g, ln1_b
        self.ttt = ttt
        self.ln2_g, self.ln2_b = ln2_g, ln2_b

    @classmethod
    def init(cls, rng, d, n_heads, inner_lr, rank=0):
        if d % n_heads != 0:
            raise ValueError(f"embed dim {d} not divisible by {n_heads} heads")
        mk = lambda: Linear.init(rng, d, d)
        ones = lambda: DArray(np.ones(d), requires_grad=True)
        zeros = lambda: DArray(np.zeros(d), requires_grad=True)
        return cls(mk(), mk(), mk(), mk(), n_heads, ones(), zeros(),
                   TTTLinearLayer.init(rng, d, inner_lr, rank), ones(), zeros())

    def named(self, prefix):
        out = []
        for n, lin in (("wq", self.wq), ("wk", self.wk),
                       ("wv", self.wv), ("wo", self.wo)):
            out += lin.named(f"{prefix}.{n}")
        out += [(f"{prefix}.ln1_g", self.ln1_g), (f"{prefix}.ln1_b", self.ln1_b)]
        out += self.ttt.named(f"{prefix}.ttt")
        out += [(f"{prefix}.ln2_g", self.ln2_g), (f"{prefix}.ln2_b", self.ln2_b)]
        return out


class DT3Params:
    def __init__(self, proj_rtg, proj_state, proj_action, time_table, block,
                 lnf_g, lnf_b, head, include_action_tokens=True, dt_mode=False):
        self.proj_rtg = proj_rtg
        self.proj_state = proj_state
        self.proj_action = proj_action
        self.time_table = time_table
        self.block = block
        self.lnf_g, self.lnf_b = lnf_g, lnf_b
        self.head = head
        self.include_action_tokens = include_action_tokens
        self.dt_mode = dt_mode

    @classmethod
    def init(cls, rng, d_s, d_a, cfg):
        d = cfg.embed_dim
        return cls(
            Linear.init(rng, 1, d),
            Linear.init(rng, d_s, d),
            Linear.init(rng, d_a, d),
            DArray(rng.normal(0.0, 0.02, size=(cfg.max_episode_len, d)),
                   requires_grad=True),
            AttentionTTTBlock.init(rng, d, cfg.n_heads, cfg.inner_lr,
                                   cfg.ttt_proj_rank),
            DArray(np.ones(d), requires_grad=True),
            DArray(np.zeros(d), requires_grad=True),
            Linear.init(rng, d, d_a),
            include_action_tokens=cfg.include_action_tokens,
            dt_mode=cfg.dt_mode,
        )

    @property
    def tokens_per_step(self):
        return 3 if self.include_action_tokens else 2

    def named(self):
        out = []
        out += self.proj_rtg.named("proj_rtg")
        out += self.proj_state.named("proj_state")
        out += self.proj_action.named("proj_action")
        out.append(("time_table", self.time_table))
        out += self.block.named("block")
        out += [("lnf_g", self.lnf_g), ("lnf_b", self.lnf_b)]
        out += self.head.named("head")
        return out

    def parameters(self):
        return [p for _, p in self.named()]


# ---------------------------------------------------------------------------
# Forward operations
# ---------------------------------------------------------------------------

def embed_context(batch, params):
    """Project each modality, add timestep embeddings, interleave per step.

    Returns (tokens, token_mask): tokens (B, m*K, d) with per-step order
    (rtg, state[, action]); token_mask (B, m*K) bool.
    """
    b, k = batch.rtgs.shape
    if batch.timesteps.min() < 0 or \
            batch.timesteps.max() >= params.time_table.shape[0]:
        raise TimestepRangeError(
            f"timesteps outside embedding table of length "
            f"{params.time_table.shape[0]}"
        )
    temb = ad.embedding(params.time_table, batch.timesteps)      # (B,K,d)
    tok_rtg = params.proj_rtg(DArray(batch.rtgs[..., None])) + temb
    tok_state = params.proj_state(DArray(batch.states)) + temb
    mods = [tok_rtg, tok_state]
    if params.include_action_tokens:
        mods.append(params.proj_action(DArray(batch.actions)) + temb)
    m = len(mods)
    d = params.time_table.shape[1]
    stacked = ad.concat([ad.reshape(t, (b, k, 1, d)) for t in mods], axis=2)
    tokens = ad.reshape(stacked, (b, m * k, d))
    token_mask = np.repeat(batch.pad_mask, m, axis=1)
    return tokens, token_mask


def causal_attention(x, block, token_mask):
    """Masked multi-head attention with residual add + layer norm.

    Masked keys get exactly zero weight, so outputs at earlier positions are
    bitwise independent of later tokens. Fully padded queries attend to
    themselves only (their outputs are never read).
    """
    b, s, d = x.shape
    h = block.n_heads
    dh = d // h

    def split_heads(t):
        return ad.transpose(ad.reshape(t, (b, s, h, dh)), (0, 2, 1, 3))

    q = split_heads(block.wq(x))
    kk = split_heads(block.wk(x))
    v = split_heads(block.wv(x))
    scores = ad.scale(ad.matmul(q, ad.transpose(kk)), 1.0 / np.sqrt(dh))

    causal = np.tril(np.ones((s, s), dtype=bool))
    mask = causal[None, None] & token_mask[:, None, None, :]
    idx = np.arange(s)
    mask[:, :, idx, idx] = True
    attn = ad.masked_softmax(scores, mask)

    out = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (b, s, d))
    return ad.layer_norm(x + block.wo(out), block.ln1_g, block.ln1_b)


def ttt_forward(x, layer, token_mask):
    """Sequential fast-weight pass with residual add + layer norm.

    Per real token t: W <- W - inner_lr * 2 (W k_t - v_t) k_t^T with
    k_t = theta_K x_t, v_t = theta_V x_t; output z_t = W theta_Q x_t.
    Padded tokens leave W untouched. The whole recurrence is recorded, so
    gradients reach theta_K / theta_V through the inner update.
    """
    b, s, d = x.shape
    theta_q, theta_k, theta_v = layer.thetas()
    w = ad.reshape(layer.w0, (1, d, d))
    zs = []
    for t in range(s):
        xt = ad.reshape(x[:, t, :], (b, d, 1))
        kt = ad.matmul(theta_k, xt)
        vt = ad.matmul(theta_v, xt)
        err = ad.matmul(w, kt) - vt
        grad = ad.scale(ad.matmul(err, ad.transpose(kt)), 2.0)
        step = (layer.inner_lr
                * token_mask[:, t].astype(np.float64).reshape(b, 1, 1))
        w = w - ad.mul(grad, DArray(step))
        zt = ad.matmul(w, ad.matmul(theta_q, xt))
        zs.append(ad.reshape(zt, (b, 1, d)))
    return ad.concat(zs, axis=1)


def ttt_sublayer(x, block, token_mask):
    z = ttt_forward(x, block.ttt, token_mask)
    return ad.layer_norm(x + z, block.ln2_g, block.ln2_b)


def forward_hidden(batch, params):
    tokens, token_mask = embed_context(batch, params)
    h = causal_attention(tokens, params.block, token_mask)
    if not params.dt_mode:
        h = ttt_sublayer(h, params.block, token_mask)
    return ad.layer_norm(h, params.lnf_g, params.lnf_b), token_mask


def predict_coarse_actions_batch(batch, params):
    """Coarse action sequence (B, K, d_a), read at state-token positions."""
    h, _ = forward_hidden(batch, params)
    m = params.tokens_per_step
    state_pos = np.arange(batch.context_len) * m + 1
    return params.head(ad.take_rows(h, state_pos, axis=1))


def predict_coarse_actions(ctx, params):
    """Single-context convenience wrapper: returns a (K, d_a) DArray."""
    ctx.validate()
    batch = ContextBatch.from_windows([ctx])
    out = predict_coarse_actions_batch(batch, params)
    k, d_a = out.shape[1], out.shape[2]
    return ad.reshape(out, (k, d_a))
