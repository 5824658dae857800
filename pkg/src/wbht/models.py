"""The architecture zoo.

Six interchangeable families serve as encoder or generator backbones; the
critic/discriminator is a convolutional stack with a dense feature layer and
a scoring head (linear for the Wasserstein mode, sigmoid otherwise).  The
autoencoder baselines reuse the same family names with their fixed layer
recipes and train by plain MSE.

Construction is deterministic: the same (spec, seed) yields bit-identical
parameters because every draw comes from one ordered stream.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from enum import Enum

from . import tensor as T
from .errors import ConfigurationError, ShapeError
from .layers import (
    Conv1dLayer,
    DenseLayer,
    DropoutLayer,
    LstmLayer,
    MhsaLayer,
    TConv1dLayer,
)
from .params import ParameterSet
from .rng import Rng
from .tensor import Tensor


class ArchFamily(str, Enum):
    FCNN = "fcnn"
    CONV = "conv"
    LSTM = "lstm"
    CONVLSTM = "convlstm"
    CONVMULTIHEAD = "convmultihead"
    LSTMMULTIHEAD = "lstmmultihead"

    @property
    def label(self) -> str:
        return _FAMILY_LABELS[self]


_FAMILY_LABELS = {
    ArchFamily.FCNN: "FCNN",
    ArchFamily.CONV: "Conv",
    ArchFamily.LSTM: "LSTM",
    ArchFamily.CONVLSTM: "ConvLSTM",
    ArchFamily.CONVMULTIHEAD: "ConvMultiHead",
    ArchFamily.LSTMMULTIHEAD: "LSTMMultiHead",
}

ROLES = ("encoder", "generator", "discriminator", "autoencoder_baseline")

BASELINE_LABELS = {
    ArchFamily.FCNN: "AE",
    ArchFamily.CONV: "Conv-AE",
    ArchFamily.LSTM: "LSTM-AE",
    ArchFamily.CONVLSTM: "ConvLSTM-AE",
    ArchFamily.CONVMULTIHEAD: "ConvMultiHead-AE",
    ArchFamily.LSTMMULTIHEAD: "LSTMMultiHead-AE",
}


@dataclass
class ModelSpec:
    """Declarative description of one network variant."""

    role: str
    family: ArchFamily
    window_len: int
    n_features: int
    latent_dim: int = 16
    lstm_hidden: int = 64
    conv_channels: tuple[int, int] = (32, 16)
    attn_dim: int = 64
    n_heads: int = 4
    feature_dim: int = 64          # width of the critic's intermediate features
    gan_mode: str = "wgan"         # decides the discriminator head
    ae_hidden: int = 8             # LSTM-AE hidden size

    def __post_init__(self):
        if isinstance(self.family, str):
            self.family = ArchFamily(self.family)
        if isinstance(self.conv_channels, list):
            self.conv_channels = tuple(self.conv_channels)
        self.validate()

    def validate(self) -> None:
        if self.role not in ROLES:
            raise ConfigurationError(f"unknown role {self.role!r}")
        if self.gan_mode not in ("gan", "wgan"):
            raise ConfigurationError(f"gan_mode must be 'gan' or 'wgan', got {self.gan_mode!r}")
        if self.latent_dim < 1:
            raise ConfigurationError("latent_dim must be >= 1")
        if self.window_len < 1 or self.n_features < 1:
            raise ConfigurationError("window_len and n_features must be >= 1")
        attn = self.family in (ArchFamily.CONVMULTIHEAD, ArchFamily.LSTMMULTIHEAD)
        if attn and self.role in ("encoder", "generator"):
            d = self.lstm_hidden if self.family is ArchFamily.LSTMMULTIHEAD else self.attn_dim
            if d % self.n_heads != 0:
                raise ConfigurationError(
                    f"attention width {d} not divisible by n_heads {self.n_heads}")
        conv_gen = (self.role == "generator"
                    and self.family in (ArchFamily.CONV, ArchFamily.CONVLSTM,
                                        ArchFamily.CONVMULTIHEAD))
        if conv_gen and (self.window_len % 4 != 0 or self.window_len < 4):
            raise ConfigurationError(
                f"convolutional generators need window_len divisible by 4, got {self.window_len}")
        if self.role == "autoencoder_baseline":
            if self.family in (ArchFamily.CONV, ArchFamily.CONVLSTM, ArchFamily.CONVMULTIHEAD):
                if self.window_len % 8 != 0:
                    raise ConfigurationError(
                        f"conv autoencoder baselines need window_len divisible by 8, "
                        f"got {self.window_len}")
            if self.family in (ArchFamily.LSTM, ArchFamily.LSTMMULTIHEAD):
                if self.ae_hidden % self.n_heads != 0 and self.family is ArchFamily.LSTMMULTIHEAD:
                    raise ConfigurationError("ae_hidden must divide by n_heads for attention")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.value
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["conv_channels"] = tuple(d.get("conv_channels", (32, 16)))
        return cls(**d)


class Model:
    """Base: owns a ParameterSet and the training-mode flag for dropout."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.params = ParameterSet()
        self._dropouts: list[DropoutLayer] = []

    def _add(self, name: str, layer):
        for pname, t in layer.parameters():
            self.params.add(f"{name}.{pname}", t)
        if isinstance(layer, DropoutLayer):
            self._dropouts.append(layer)
        return layer

    def set_training(self, flag: bool) -> None:
        for d in self._dropouts:
            d.training = flag

    def _check_input(self, x: Tensor) -> None:
        expected = (self.spec.window_len, self.spec.n_features)
        if x.ndim != 3 or x.shape[1:] != expected:
            raise ShapeError(f"expected windows (B, {expected[0]}, {expected[1]}), got {x.shape}")


def _conv_stack(model: Model, prefix: str, in_ch: int, channels, rng: Rng) -> list:
    layers = []
    prev = in_ch
    for idx, ch in enumerate(channels):
        layers.append(model._add(f"{prefix}.conv{idx}",
                                 Conv1dLayer(prev, ch, 5, 1, 2, "relu", rng)))
        prev = ch
    return layers


def _to_channels(x: Tensor) -> Tensor:
    return T.transpose(x, (0, 2, 1))  # (B, T, F) -> (B, F, T)


def _to_time(x: Tensor) -> Tensor:
    return T.transpose(x, (0, 2, 1))  # (B, C, T) -> (B, T, C)


class Encoder(Model):
    """Maps (B, W, F) windows to latent codes (B, latent_dim)."""

    def __init__(self, spec: ModelSpec, rng: Rng):
        super().__init__(spec)
        fam = spec.family
        W, F, L = spec.window_len, spec.n_features, spec.latent_dim
        c1, c2 = spec.conv_channels
        H = spec.lstm_hidden
        if fam is ArchFamily.FCNN:
            self.d1 = self._add("d1", DenseLayer(W * F, 256, "relu", rng))
            self.d2 = self._add("d2", DenseLayer(256, 128, "relu", rng))
            self.head = self._add("head", DenseLayer(128, L, "none", rng))
        elif fam is ArchFamily.CONV:
            self.convs = _conv_stack(self, "enc", F, (c1, c2), rng)
            self.head = self._add("head", DenseLayer(c2 * W, L, "none", rng))
        elif fam is ArchFamily.LSTM:
            self.lstm = self._add("lstm", LstmLayer(F, H, rng))
            self.head = self._add("head", DenseLayer(H, L, "none", rng))
        elif fam is ArchFamily.CONVLSTM:
            self.convs = _conv_stack(self, "enc", F, (c1, c2), rng)
            self.lstm = self._add("lstm", LstmLayer(c2, H, rng))
            self.head = self._add("head", DenseLayer(H, L, "none", rng))
        elif fam is ArchFamily.CONVMULTIHEAD:
            self.convs = _conv_stack(self, "enc", F, (c1, c2), rng)
            self.proj = self._add("proj", DenseLayer(c2, spec.attn_dim, "relu", rng))
            self.attn = self._add("attn", MhsaLayer(spec.attn_dim, spec.n_heads, rng))
            self.head = self._add("head", DenseLayer(spec.attn_dim, L, "none", rng))
        elif fam is ArchFamily.LSTMMULTIHEAD:
            self.lstm = self._add("lstm", LstmLayer(F, H, rng))
            self.attn = self._add("attn", MhsaLayer(H, spec.n_heads, rng))
            self.head = self._add("head", DenseLayer(H, L, "none", rng))

    def forward(self, x: Tensor) -> Tensor:
        self._check_input(x)
        fam = self.spec.family
        batch = x.shape[0]
        if fam is ArchFamily.FCNN:
            h = x.reshape((batch, -1))
            return self.head.forward(self.d2.forward(self.d1.forward(h)))
        if fam is ArchFamily.CONV:
            h = _to_channels(x)
            for conv in self.convs:
                h = conv.forward(h)
            return self.head.forward(h.reshape((batch, -1)))
        if fam is ArchFamily.LSTM:
            h = self.lstm.forward(x)[:, -1, :]
            return self.head.forward(h)
        if fam is ArchFamily.CONVLSTM:
            h = _to_channels(x)
            for conv in self.convs:
                h = conv.forward(h)
            h = self.lstm.forward(_to_time(h))[:, -1, :]
            return self.head.forward(h)
        if fam is ArchFamily.CONVMULTIHEAD:
            h = _to_channels(x)
            for conv in self.convs:
                h = conv.forward(h)
            h = self.attn.forward(self.proj.forward(_to_time(h)))
            return self.head.forward(h.mean(axis=1))
        # LSTMMULTIHEAD
        h = self.attn.forward(self.lstm.forward(x))[:, -1, :]
        return self.head.forward(h)


class Generator(Model):
    """Maps latent codes (B, latent_dim) to windows (B, W, F); linear output."""

    def __init__(self, spec: ModelSpec, rng: Rng):
        super().__init__(spec)
        fam = spec.family
        W, F, L = spec.window_len, spec.n_features, spec.latent_dim
        c1, c2 = spec.conv_channels
        H = spec.lstm_hidden
        self._seed_len = W // 4
        if fam is ArchFamily.FCNN:
            self.d1 = self._add("d1", DenseLayer(L, 64, "relu", rng))
            self.d2 = self._add("d2", DenseLayer(64, 128, "relu", rng))
            self.head = self._add("head", DenseLayer(128, W * F, "none", rng))
        elif fam is ArchFamily.CONV:
            self.seed = self._add("seed", DenseLayer(L, c2 * self._seed_len, "relu", rng))
            self.t1 = self._add("t1", TConv1dLayer(c2, c1, 2, 2, "relu", rng))
            self.t2 = self._add("t2", TConv1dLayer(c1, F, 2, 2, "none", rng))
        elif fam is ArchFamily.LSTM:
            self.lstm = self._add("lstm", LstmLayer(L, H, rng))
            self.head = self._add("head", DenseLayer(H, F, "none", rng))
        elif fam is ArchFamily.CONVLSTM:
            self.seed = self._add("seed", DenseLayer(L, c2 * self._seed_len, "relu", rng))
            self.t1 = self._add("t1", TConv1dLayer(c2, c1, 2, 2, "relu", rng))
            self.t2 = self._add("t2", TConv1dLayer(c1, c2, 2, 2, "relu", rng))
            self.lstm = self._add("lstm", LstmLayer(c2, H, rng))
            self.head = self._add("head", DenseLayer(H, F, "none", rng))
        elif fam is ArchFamily.CONVMULTIHEAD:
            self.seed = self._add("seed", DenseLayer(L, c2 * self._seed_len, "relu", rng))
            self.t1 = self._add("t1", TConv1dLayer(c2, c1, 2, 2, "relu", rng))
            self.t2 = self._add("t2", TConv1dLayer(c1, c2, 2, 2, "relu", rng))
            self.proj = self._add("proj", DenseLayer(c2, spec.attn_dim, "relu", rng))
            self.attn = self._add("attn", MhsaLayer(spec.attn_dim, spec.n_heads, rng))
            self.head = self._add("head", DenseLayer(spec.attn_dim, F, "none", rng))
        elif fam is ArchFamily.LSTMMULTIHEAD:
            self.lstm = self._add("lstm", LstmLayer(L, H, rng))
            self.attn = self._add("attn", MhsaLayer(H, spec.n_heads, rng))
            self.head = self._add("head", DenseLayer(H, F, "none", rng))

    def _repeat_latent(self, z: Tensor) -> Tensor:
        batch, latent = z.shape
        return T.broadcast_to(z.reshape((batch, 1, latent)),
                              (batch, self.spec.window_len, latent))

    def forward(self, z: Tensor) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.spec.latent_dim:
            raise ShapeError(f"expected latents (B, {self.spec.latent_dim}), got {z.shape}")
        fam = self.spec.family
        W, F = self.spec.window_len, self.spec.n_features
        c2 = self.spec.conv_channels[1]
        batch = z.shape[0]
        if fam is ArchFamily.FCNN:
            h = self.head.forward(self.d2.forward(self.d1.forward(z)))
            return h.reshape((batch, W, F))
        if fam is ArchFamily.CONV:
            h = self.seed.forward(z).reshape((batch, c2, self._seed_len))
            return _to_time(self.t2.forward(self.t1.forward(h)))
        if fam is ArchFamily.LSTM:
            h = self.lstm.forward(self._repeat_latent(z))
            return self.head.forward(h)
        if fam is ArchFamily.CONVLSTM:
            h = self.seed.forward(z).reshape((batch, c2, self._seed_len))
            h = _to_time(self.t2.forward(self.t1.forward(h)))
            return self.head.forward(self.lstm.forward(h))
        if fam is ArchFamily.CONVMULTIHEAD:
            h = self.seed.forward(z).reshape((batch, c2, self._seed_len))
            h = _to_time(self.t2.forward(self.t1.forward(h)))
            return self.head.forward(self.attn.forward(self.proj.forward(h)))
        # LSTMMULTIHEAD
        h = self.lstm.forward(self._repeat_latent(z))
        return self.head.forward(self.attn.forward(h))


class Discriminator(Model):
    """Conv stack + dense feature layer + scalar scoring head.

    The feature layer output (width ``feature_dim``) is the intermediate
    representation used by the encoder loss; the head is a single unit,
    sigmoid in 'gan' mode and linear (unbounded) in 'wgan' mode.
    """

    def __init__(self, spec: ModelSpec, rng: Rng):
        super().__init__(spec)
        W, F = spec.window_len, spec.n_features
        c1, c2 = spec.conv_channels
        self.convs = _conv_stack(self, "disc", F, (c1, c2), rng)
        self.feature_layer = self._add("features", DenseLayer(c2 * W, spec.feature_dim, "relu", rng))
        head_act = "sigmoid" if spec.gan_mode == "gan" else "none"
        self.head = self._add("head", DenseLayer(spec.feature_dim, 1, head_act, rng))

    @property
    def n_d(self) -> int:
        return self.spec.feature_dim

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (scores (B,), features (B, feature_dim))."""
        self._check_input(x)
        batch = x.shape[0]
        h = _to_channels(x)
        for conv in self.convs:
            h = conv.forward(h)
        feats = self.feature_layer.forward(h.reshape((batch, -1)))
        score = self.head.forward(feats).reshape((batch,))
        return score, feats


class AutoencoderBaseline(Model):
    """The fixed-recipe reconstruction baselines; trained with plain MSE.

    Family recipes (encoder filters / decoder filters):
      FCNN            dense F->16->8->16->F per time step
      Conv            conv 32,16,8 (k7 s2) / tconv 16,32,F (k2 s2), dropout
                      0.2 after the first and third conv
      LSTM            LSTM(F->8), repeat last state, LSTM(8->8), dense to F
      ConvLSTM        Conv recipe with an LSTM(8) between encode and decode
      ConvMultiHead   Conv recipe with 4-head attention after the first conv
                      and first tconv
      LSTMMultiHead   LSTM recipe with 4-head attention on the encoder output
    """

    def __init__(self, spec: ModelSpec, rng: Rng):
        super().__init__(spec)
        fam = spec.family
        F, W = spec.n_features, spec.window_len
        hid = spec.ae_hidden
        if fam is ArchFamily.FCNN:
            self.stack = [
                self._add("d0", DenseLayer(F, 16, "relu", rng)),
                self._add("d1", DenseLayer(16, 8, "relu", rng)),
                self._add("d2", DenseLayer(8, 16, "relu", rng)),
                self._add("d3", DenseLayer(16, F, "none", rng)),
            ]
        elif fam in (ArchFamily.CONV, ArchFamily.CONVLSTM, ArchFamily.CONVMULTIHEAD):
            self.c0 = self._add("c0", Conv1dLayer(F, 32, 7, 2, 3, "relu", rng))
            self.drop0 = DropoutLayer(0.2, rng.derive(91))
            self._dropouts.append(self.drop0)
            if fam is ArchFamily.CONVMULTIHEAD:
                self.attn_enc = self._add("attn_enc", MhsaLayer(32, spec.n_heads, rng))
            self.c1 = self._add("c1", Conv1dLayer(32, 16, 7, 2, 3, "relu", rng))
            self.c2 = self._add("c2", Conv1dLayer(16, 8, 7, 2, 3, "relu", rng))
            self.drop2 = DropoutLayer(0.2, rng.derive(92))
            self._dropouts.append(self.drop2)
            if fam is ArchFamily.CONVLSTM:
                self.mid_lstm = self._add("mid_lstm", LstmLayer(8, 8, rng))
            self.t0 = self._add("t0", TConv1dLayer(8, 16, 2, 2, "relu", rng))
            if fam is ArchFamily.CONVMULTIHEAD:
                self.attn_dec = self._add("attn_dec", MhsaLayer(16, spec.n_heads, rng))
            self.t1 = self._add("t1", TConv1dLayer(16, 32, 2, 2, "relu", rng))
            self.t2 = self._add("t2", TConv1dLayer(32, F, 2, 2, "none", rng))
        elif fam in (ArchFamily.LSTM, ArchFamily.LSTMMULTIHEAD):
            self.enc = self._add("enc", LstmLayer(F, hid, rng))
            if fam is ArchFamily.LSTMMULTIHEAD:
                self.attn = self._add("attn", MhsaLayer(hid, spec.n_heads, rng))
            self.dec = self._add("dec", LstmLayer(hid, hid, rng))
            self.head = self._add("head", DenseLayer(hid, F, "none", rng))

    @property
    def label(self) -> str:
        return BASELINE_LABELS[self.spec.family]

    def forward(self, x: Tensor) -> Tensor:
        self._check_input(x)
        fam = self.spec.family
        W = self.spec.window_len
        if fam is ArchFamily.FCNN:
            h = x
            for layer in self.stack:
                h = layer.forward(h)
            return h
        if fam in (ArchFamily.CONV, ArchFamily.CONVLSTM, ArchFamily.CONVMULTIHEAD):
            h = self.drop0.forward(self.c0.forward(_to_channels(x)))
            if fam is ArchFamily.CONVMULTIHEAD:
                h = _to_channels(self.attn_enc.forward(_to_time(h)))
            h = self.c1.forward(h)
            h = self.drop2.forward(self.c2.forward(h))
            if fam is ArchFamily.CONVLSTM:
                h = _to_channels(self.mid_lstm.forward(_to_time(h)))
            h = self.t0.forward(h)
            if fam is ArchFamily.CONVMULTIHEAD:
                h = _to_channels(self.attn_dec.forward(_to_time(h)))
            return _to_time(self.t2.forward(self.t1.forward(h)))
        # LSTM / LSTMMULTIHEAD
        h = self.enc.forward(x)
        if fam is ArchFamily.LSTMMULTIHEAD:
            h = self.attn.forward(h)
        last = h[:, -1, :]
        batch, hid = last.shape
        rep = T.broadcast_to(last.reshape((batch, 1, hid)), (batch, W, hid))
        return self.head.forward(self.dec.forward(rep))


_BUILDERS = {
    "encoder": Encoder,
    "generator": Generator,
    "discriminator": Discriminator,
    "autoencoder_baseline": AutoencoderBaseline,
}


def build_model(spec: ModelSpec, rng: Rng):
    """Deterministically construct the model described by ``spec``."""
    spec.validate()
    return _BUILDERS[spec.role](spec, rng)


def encode(encoder: Encoder, x: Tensor) -> Tensor:
    return encoder.forward(x)


def generate(generator: Generator, z: Tensor) -> Tensor:
    return generator.forward(z)


def discriminate(disc: Discriminator, x: Tensor) -> tuple[Tensor, Tensor]:
    return disc.forward(x)


def autoencoder_forward(baseline: AutoencoderBaseline, x: Tensor) -> Tensor:
    return baseline.forward(x)
