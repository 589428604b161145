"""The full recognizer: shared CNN over every view, concatenation, attention decoder."""

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import cnn
from .decoder import Alphabet, DecoderParams, decode_sequence, sequence_loss


@dataclass
class ModelConfig:
    alphabet: list = field(default_factory=lambda: Alphabet.desk().symbols)
    max_len: int = 12
    views: int = 4
    view_size: tuple = (64, 64)
    preset: str = "tiny-2"
    attention: str = "location"
    lstm_width: int = 256
    attn_width: int = 128
    clip: float = 10.0
    init_std: float = 0.1
    conv_init: str = "fixed"   # "fan_in": cap each conv std at sqrt(2 / fan_in)

    def __post_init__(self):
        if isinstance(self.alphabet, Alphabet):
            self.alphabet = self.alphabet.symbols
        self.alphabet = list(self.alphabet)
        self.view_size = tuple(self.view_size)
        if self.conv_init not in ("fixed", "fan_in"):
            raise ValueError(f"conv_init must be 'fixed' or 'fan_in', got {self.conv_init!r}")

    @classmethod
    def fsns(cls, **kw):
        base = dict(alphabet=Alphabet.fsns_like().symbols, max_len=37, views=4, view_size=(150, 150))
        base.update(kw)
        return cls(**base)

    def get_alphabet(self):
        return Alphabet(self.alphabet)

    def extractor(self):
        return cnn.preset(self.preset, self.view_size).validate()

    def grid(self):
        """Concatenated feature-map height and width."""
        h, w, _ = self.extractor().output_shape()
        return h, w * self.views

    def to_dict(self):
        d = asdict(self)
        d["view_size"] = list(self.view_size)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False).encode("utf-8")
        return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


class AttentionOCR:
    def __init__(self, config, params):
        self.config = config
        self.alphabet = config.get_alphabet()
        self.extractor = config.extractor()
        self.params = params

    @classmethod
    def create(cls, config, seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        ex = config.extractor()
        params = cnn.init_params(ex, rng, config.init_std, dtype, cap_fan_in=config.conv_init == "fan_in")
        _, _, channels = ex.output_shape()
        dec = DecoderParams.init(rng, len(config.alphabet), channels, config.grid(), config.attention,
                                 config.lstm_width, config.attn_width, std=config.init_std, dtype=dtype)
        params.update(dec.named())
        return cls(config, params)

    @property
    def decoder_params(self):
        return DecoderParams.from_named(self.params, self.config.attention)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def with_values(self, values):
        """A model sharing this config whose parameters take ``values`` (name -> array)."""
        params = {k: ad.parameter(np.array(values[k], dtype=self.dtype)) for k in self.params}
        return AttentionOCR(self.config, params)

    def _input(self, views):
        if isinstance(views, ad.Tensor):
            return views
        return ad.constant(np.asarray(views, dtype=self.dtype))

    def features(self, views):
        """(B, V, H, W, 3) images in [0, 1] -> concatenated FeatureMap (B, I, V·J, C)."""
        x = self._input(views)
        b, v = x.shape[:2]
        if v != self.config.views:
            raise ValueError(f"model expects {self.config.views} views, got {v}")
        x = ad.reshape(x, (b * v,) + x.shape[2:])
        # center pixel values around zero
        x = ad.broadcast_add(ad.scale(x, 2.0), np.asarray(-1.0, dtype=self.dtype))
        f = cnn.extract_features(x, self.extractor, self.params).data
        i, j, c = f.shape[1:]
        f = ad.reshape(f, (b, v, i, j, c))
        if v == 1:
            return cnn.FeatureMap(ad.reshape(f, (b, i, j, c)))
        # same result as cnn.concat_views over the per-view maps, without V slicing copies
        f = ad.transpose(f, (0, 2, 1, 3, 4))
        return cnn.FeatureMap(ad.reshape(f, (b, i, v * j, c)))

    def decode(self, views, mode="greedy", target=None):
        f = self.features(views)
        res = decode_sequence(f, self.decoder_params, self.config.max_len, mode, target, self.config.clip)
        return res, f

    def loss(self, views, targets, smoothing=0.9):
        res, _ = self.decode(views, "teacher", targets)
        return sequence_loss(res.logits, targets, smoothing)

    def predict(self, views, batch_size=64):
        """Greedy symbol indices (N, T) for a stack of samples."""
        views = np.asarray(views)
        out = []
        with ad.no_grad():
            for s in range(0, len(views), batch_size):
                res, _ = self.decode(views[s:s + batch_size])
                out.append(res.symbols)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.config.max_len), dtype=np.int64)

    def transcribe(self, views, batch_size=64):
        return [self.alphabet.decode(row) for row in self.predict(views, batch_size)]
