"""LSTM character decoder with standard and location-aware spatial attention.

Weights follow the row-vector convention ``x @ W``, so a matrix written
``W·x`` in the usual column notation is stored transposed here.
"""

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad

VARIANTS = ("standard", "location")


class Alphabet:
    """Ordered symbol table; index 0 is the null (padding / GO) symbol."""

    NULL = "∅"

    def __init__(self, symbols):
        symbols = list(symbols)
        if not symbols or symbols[0] != self.NULL:
            symbols = [self.NULL] + symbols
        if symbols.count(self.NULL) != 1:
            raise ValueError("null symbol must appear exactly once")
        if len(set(symbols)) != len(symbols):
            raise ValueError("duplicate symbols in alphabet")
        for s in symbols:
            if len(s) != 1:
                raise ValueError(f"symbols must be single characters, got {s!r}")
        self.symbols = symbols
        self.index = {s: i for i, s in enumerate(symbols)}

    null_index = 0

    @classmethod
    def desk(cls):
        return cls("ABCDEFGHIJKLMNOPQRSTUVWXYZ -")

    @classmethod
    def fsns_like(cls):
        """134 symbols: null, printable ASCII, and common French/Latin-1 letters."""
        ascii_ = "".join(chr(c) for c in range(0x20, 0x7F))
        extra = "ÀÂÄÇÈÉÊËÎÏÔÖÙÛÜŸàâäçèéêëîïôöùûüÿŒœÆæ«»"
        return cls(ascii_ + extra)

    def __len__(self):
        return len(self.symbols)

    def __eq__(self, other):
        return isinstance(other, Alphabet) and self.symbols == other.symbols

    def __contains__(self, ch):
        return ch in self.index and ch != self.NULL

    def encode(self, text):
        try:
            return [self.index[ch] for ch in text]
        except KeyError as e:
            raise ValueError(f"character {e.args[0]!r} is not in the alphabet") from None

    def decode(self, indices, strip_null=True):
        chars = [self.symbols[int(i)] for i in indices]
        if strip_null:
            chars = [c for c in chars if c != self.NULL]
        return "".join(chars)

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for s in self.symbols:
                f.write(s + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8", newline="\n") as f:
            text = f.read()
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


@dataclass
class DecoderParams:
    variant: str
    W_c: ad.Tensor      # (V, E)   previous-symbol embedding
    W_u1: ad.Tensor     # (C, E)   previous context into the LSTM input
    W_u2: ad.Tensor     # (C, V)   current context into the logits
    W_o: ad.Tensor      # (H, V)
    W_s: ad.Tensor      # (H, A)
    W_f: ad.Tensor      # (C, A)   W_f1 in the location variant
    V_a: ad.Tensor      # (A, 1)
    lstm_Wx: ad.Tensor  # (E, 4H)  gate order i, f, o, g
    lstm_Wh: ad.Tensor  # (H, 4H)
    lstm_b: ad.Tensor   # (4H,)
    W_f2: ad.Tensor | None = None  # (I, A) row coordinate
    W_f3: ad.Tensor | None = None  # (J, A) column coordinate

    @property
    def lstm_width(self):
        return self.lstm_Wh.shape[0]

    @property
    def n_symbols(self):
        return self.W_c.shape[0]

    @classmethod
    def init(cls, rng, n_symbols, channels, grid, variant="location", lstm_width=256, attn_width=128,
             embed_width=None, std=0.1, forget_bias=1.0, dtype=np.float32):
        if variant not in VARIANTS:
            raise ValueError(f"unknown attention variant {variant!r}")
        e = embed_width or lstm_width
        h = lstm_width

        def w(*shape):
            return ad.parameter(ad.truncated_normal(rng, shape, std, dtype))

        b = np.zeros(4 * h, dtype=dtype)
        b[h:2 * h] = forget_bias
        p = cls(variant=variant, W_c=w(n_symbols, e), W_u1=w(channels, e), W_u2=w(channels, n_symbols),
                W_o=w(h, n_symbols), W_s=w(h, attn_width), W_f=w(channels, attn_width),
                V_a=w(attn_width, 1), lstm_Wx=w(e, 4 * h), lstm_Wh=w(h, 4 * h), lstm_b=ad.parameter(b))
        if variant == "location":
            p.W_f2 = w(grid[0], attn_width)
            p.W_f3 = w(grid[1], attn_width)
        return p

    def named(self, prefix="dec/"):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, ad.Tensor):
                out[prefix + f.name] = v
        return out

    @classmethod
    def from_named(cls, tensors, variant, prefix="dec/"):
        kw = {f.name: tensors.get(prefix + f.name) for f in fields(cls) if f.name != "variant"}
        return cls(variant=variant, **kw)


@dataclass
class DecoderState:
    s: ad.Tensor        # hidden (B, H) or (H,)
    cell: ad.Tensor
    u: ad.Tensor        # context (B, C)
    alpha: ad.Tensor    # (B, I, J)
    prev_char: np.ndarray
    t: int
    steps: int


def _flat_cells(f):
    """(…, I, J, C) -> (…, I·J, C)."""
    d = f.data
    return ad.reshape(d, d.shape[:-3] + (d.shape[-3] * d.shape[-2], d.shape[-1]))


def coordinate_onehots(height, width, dtype=np.float64):
    """One-hot row and column codes for every cell in row-major order."""
    rows, cols = np.divmod(np.arange(height * width), width)
    return np.eye(height, dtype=dtype)[rows], np.eye(width, dtype=dtype)[cols]


def attention_keys(f, params):
    """State-independent part of the tanh argument, one row per cell: (…, I·J, A)."""
    keys = ad.matmul(_flat_cells(f), params.W_f)
    if params.variant == "location":
        if params.W_f2 is None or params.W_f3 is None:
            raise ValueError("location attention needs W_f2 and W_f3")
        if params.W_f2.shape[0] != f.height or params.W_f3.shape[0] != f.width:
            raise ValueError(f"coordinate weights sized for {params.W_f2.shape[0]}x{params.W_f3.shape[0]} "
                             f"grid, feature map is {f.height}x{f.width}")
        e_i, e_j = coordinate_onehots(f.height, f.width, keys.dtype)
        loc = ad.add(ad.matmul(ad.constant(e_i), params.W_f2), ad.matmul(ad.constant(e_j), params.W_f3))
        keys = ad.broadcast_add(keys, loc)
    return keys


def attention_scores(variant, s, f, params, keys=None):
    """Unnormalized attention logits, shape (…, I, J)."""
    if variant != params.variant:
        raise ValueError(f"params are for {params.variant!r} attention, asked for {variant!r}")
    if keys is None:
        keys = attention_keys(f, params)
    q = ad.matmul(s, params.W_s)
    q = ad.reshape(q, q.shape[:-1] + (1, q.shape[-1]))
    pre = ad.tanh(ad.broadcast_add(keys, q))
    a = ad.matmul(pre, params.V_a)
    return ad.reshape(a, a.shape[:-2] + (f.height, f.width))


def attend(scores, f):
    """Joint spatial softmax and the resulting per-channel context vector."""
    if scores.shape[-2:] != (f.height, f.width):
        raise ValueError(f"score grid {scores.shape[-2:]} does not match feature grid {(f.height, f.width)}")
    alpha = ad.softmax(scores, over=(-2, -1))
    n = f.height * f.width
    w = ad.reshape(alpha, alpha.shape[:-2] + (1, n))
    u = ad.matmul(w, _flat_cells(f))
    u = ad.reshape(u, u.shape[:-2] + (u.shape[-1],))
    return alpha, u


def _onehot(idx, n, dtype):
    idx = np.asarray(idx)
    return np.eye(n, dtype=dtype)[idx]


def lstm_step(x, h, c, params, clip=10.0):
    width = params.lstm_width
    z = ad.broadcast_add(ad.add(ad.matmul(x, params.lstm_Wx), ad.matmul(h, params.lstm_Wh)), params.lstm_b)
    i = ad.sigmoid(z[..., :width])
    fg = ad.sigmoid(z[..., width:2 * width])
    o = ad.sigmoid(z[..., 2 * width:3 * width])
    g = ad.tanh(z[..., 3 * width:])
    c_new = ad.clip(ad.add(ad.mul(fg, c), ad.mul(i, g)), -clip, clip)
    h_new = ad.clip(ad.mul(o, ad.tanh(c_new)), -clip, clip)
    return h_new, c_new


def initial_state(f, params, steps, keys=None, batch=None):
    """Zero LSTM state, GO (null) symbol, and u_0 from attending with s_0 = 0."""
    dt = f.data.dtype
    lead = f.data.shape[:-3]
    h = ad.constant(np.zeros(lead + (params.lstm_width,), dtype=dt))
    c = ad.constant(np.zeros(lead + (params.lstm_width,), dtype=dt))
    if keys is None:
        keys = attention_keys(f, params)
    alpha, u = attend(attention_scores(params.variant, h, f, params, keys), f)
    prev = np.zeros(lead, dtype=np.int64)
    return DecoderState(h, c, u, alpha, prev, 0, steps)


def decoder_step(state, f, params, teacher_char=None, keys=None, clip=10.0):
    """One autoregressive step; returns (logits, next state)."""
    if state.t >= state.steps:
        raise IndexError(f"decoder already ran {state.steps} steps")
    dt = f.data.dtype
    onehot = ad.constant(_onehot(state.prev_char, params.n_symbols, dt))
    x = ad.add(ad.matmul(onehot, params.W_c), ad.matmul(state.u, params.W_u1))
    h, c = lstm_step(x, state.s, state.cell, params, clip)
    if keys is None:
        keys = attention_keys(f, params)
    alpha, u = attend(attention_scores(params.variant, h, f, params, keys), f)
    logits = ad.add(ad.matmul(h, params.W_o), ad.matmul(u, params.W_u2))
    if teacher_char is not None:
        nxt = np.asarray(teacher_char, dtype=np.int64)
    else:
        nxt = np.argmax(logits.data, axis=-1)
    return logits, DecoderState(h, c, u, alpha, nxt, state.t + 1, state.steps)


@dataclass
class DecodeResult:
    symbols: np.ndarray   # (…, T) greedy argmax at every step
    logits: list          # T tensors of (…, V)
    alphas: list          # T tensors of (…, I, J)
    states: list


def decode_sequence(f, params, steps, mode="greedy", target=None, clip=10.0):
    """Run exactly ``steps`` decoder steps from the initial state.

    In ``teacher`` mode the ground-truth symbol ``target[..., t]`` is fed as
    history for step t+1; ``greedy`` feeds back the argmax.
    """
    if mode not in ("greedy", "teacher"):
        raise ValueError(f"unknown decode mode {mode!r}")
    if mode == "teacher":
        if target is None:
            raise ValueError("teacher mode needs a target")
        target = np.asarray(target)
        if target.shape[-1] != steps:
            raise ValueError(f"target length {target.shape[-1]} != {steps} steps")
    keys = attention_keys(f, params)
    state = initial_state(f, params, steps, keys)
    logits, alphas, states, symbols = [], [], [], []
    for t in range(steps):
        teach = target[..., t] if mode == "teacher" else None
        lg, state = decoder_step(state, f, params, teach, keys, clip)
        logits.append(lg)
        alphas.append(state.alpha)
        states.append(state)
        symbols.append(np.argmax(lg.data, axis=-1))
    return DecodeResult(np.stack(symbols, axis=-1), logits, alphas, states)


def sequence_loss(logits, target, smoothing=0.9):
    """Mean smoothed cross-entropy over all T steps (and the batch, if any)."""
    target = np.asarray(target)
    if target.shape[-1] != len(logits):
        raise ValueError(f"{len(logits)} steps of logits but target length {target.shape[-1]}")
    per_step = [ad.mean(ad.smoothed_cross_entropy(lg, target[..., t], smoothing)) for t, lg in enumerate(logits)]
    total = per_step[0]
    for term in per_step[1:]:
        total = ad.add(total, term)
    return ad.scale(total, 1.0 / len(per_step))
