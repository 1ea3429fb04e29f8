"""Toy generative models and the three training protocols under audit.

Generators map latent vectors to tanh-bounded images; discriminators emit
real/fake logits; encoders map images back to latent space. Architectures are
deliberately small (MLP or upsample+conv stacks at 16/32 px): the point of
the package is the audit statistics, not image fidelity.

Training protocols:
  * train_glo   - reconstruction against latent codes fixed before training
  * train_gan   - alternating adversarial training, non-saturating generator
  * train_aegan - autoencoder reconstruction plus weighted adversarial term
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .data import FormatError, ImageDataset
from .optim import AdamState
from .rng import Rng, derive_seed


class TrainingDiverged(FloatingPointError):
    """Loss became non-finite during training."""


def _check_image_shape(shape) -> tuple[int, int, int]:
    c, h, w = shape
    if h != w or h not in (16, 32) or c < 1:
        raise ValueError(f"image_shape must be (c, s, s) with s in {{16, 32}}, got {shape}")
    return (int(c), int(h), int(w))


@dataclass(frozen=True)
class GeneratorSpec:
    architecture: str = "mlp"  # mlp | upconv
    latent_dim: int = 32
    image_shape: tuple[int, int, int] = (1, 32, 32)
    hidden_widths: tuple[int, ...] = (128, 256)
    output_activation: str = "tanh"

    def validate(self) -> None:
        _check_image_shape(self.image_shape)
        if self.latent_dim < 1 or any(wd < 1 for wd in self.hidden_widths):
            raise ValueError("latent_dim and hidden widths must be positive")
        if self.output_activation != "tanh":
            raise ValueError("only tanh output is supported")
        if self.architecture == "upconv":
            stages = {16: 2, 32: 3}[self.image_shape[1]]
            if len(self.hidden_widths) != stages + 1:
                raise ValueError(
                    f"upconv at {self.image_shape[1]} px needs {stages + 1} channel widths"
                )
        elif self.architecture != "mlp":
            raise ValueError(f"unknown generator architecture {self.architecture!r}")


@dataclass(frozen=True)
class DiscriminatorSpec:
    architecture: str = "mlp"  # mlp | conv
    image_shape: tuple[int, int, int] = (1, 32, 32)
    hidden_widths: tuple[int, ...] = (128, 64)

    def validate(self) -> None:
        _check_image_shape(self.image_shape)
        if any(wd < 1 for wd in self.hidden_widths):
            raise ValueError("hidden widths must be positive")
        if self.architecture == "conv":
            if self.image_shape[1] >> len(self.hidden_widths) < 4:
                raise ValueError("too many conv stages for this resolution")
        elif self.architecture != "mlp":
            raise ValueError(f"unknown discriminator architecture {self.architecture!r}")


@dataclass(frozen=True)
class EncoderSpec:
    architecture: str = "mlp"
    latent_dim: int = 32
    image_shape: tuple[int, int, int] = (1, 32, 32)
    hidden_widths: tuple[int, ...] = (256, 128)

    def validate(self) -> None:
        _check_image_shape(self.image_shape)
        if self.latent_dim < 1 or any(wd < 1 for wd in self.hidden_widths):
            raise ValueError("latent_dim and hidden widths must be positive")
        if self.architecture != "mlp":
            raise ValueError(f"unknown encoder architecture {self.architecture!r}")


@dataclass
class Model:
    """A spec plus one flat float64 parameter vector and its layout."""

    kind: str  # generator | discriminator | encoder
    spec: object
    layout: tuple[tuple[str, tuple[int, ...]], ...]
    theta: np.ndarray

    @property
    def n_params(self) -> int:
        return self.theta.size

    def param_views(self) -> list[np.ndarray]:
        out, off = [], 0
        for _, shape in self.layout:
            n = int(np.prod(shape))
            out.append(self.theta[off : off + n].reshape(shape))
            off += n
        return out

    def param_tensors(self, trainable: bool = False) -> dict[str, Tensor]:
        out, off = {}, 0
        for name, shape in self.layout:
            n = int(np.prod(shape))
            out[name] = ad.wrap(self.theta[off : off + n].reshape(shape), requires_grad=trainable)
            off += n
        return out

    def copy(self) -> "Model":
        return Model(self.kind, self.spec, self.layout, self.theta.copy())


# spec-type aliases used in signatures elsewhere
GeneratorModel = Model
DiscriminatorModel = Model
EncoderModel = Model


# ---------------------------------------------------------------------------
# layouts and initialization


def _layout_for(kind: str, spec) -> tuple[tuple[str, tuple[int, ...]], ...]:
    c, s, _ = spec.image_shape
    pixels = c * s * s
    entries: list[tuple[str, tuple[int, ...]]] = []
    if kind == "generator" and spec.architecture == "mlp":
        dims = (spec.latent_dim, *spec.hidden_widths, pixels)
        for i in range(len(dims) - 1):
            entries += [(f"w{i}", (dims[i], dims[i + 1])), (f"b{i}", (dims[i + 1],))]
    elif kind == "generator":  # upconv
        ch = spec.hidden_widths
        entries += [("w_fc", (spec.latent_dim, ch[0] * 16)), ("b_fc", (ch[0] * 16,))]
        for i in range(len(ch) - 1):
            entries += [(f"k{i}", (ch[i + 1], ch[i], 3, 3)), (f"kb{i}", (1, ch[i + 1], 1, 1))]
        entries += [("k_out", (c, ch[-1], 3, 3)), ("kb_out", (1, c, 1, 1))]
    elif kind == "discriminator" and spec.architecture == "conv":
        prev = c
        for i, wd in enumerate(spec.hidden_widths):
            entries += [(f"k{i}", (wd, prev, 3, 3)), (f"kb{i}", (1, wd, 1, 1))]
            prev = wd
        flat = prev * (s >> len(spec.hidden_widths)) ** 2
        entries += [("w_out", (flat, 1)), ("b_out", (1,))]
    else:  # mlp discriminator or encoder
        out_dim = 1 if kind == "discriminator" else spec.latent_dim
        dims = (pixels, *spec.hidden_widths, out_dim)
        for i in range(len(dims) - 1):
            entries += [(f"w{i}", (dims[i], dims[i + 1])), (f"b{i}", (dims[i + 1],))]
    return tuple(entries)


def init_model(spec, seed: int) -> Model:
    """He-initialized model, deterministic in (spec, seed).

    Hidden layers get fan-in-scaled Gaussians (no normalization layers are
    used anywhere, so the scaling carries the conditioning); output layers
    get the gentler 1/sqrt(fan_in) scale.
    """
    spec.validate()
    kind = {GeneratorSpec: "generator", DiscriminatorSpec: "discriminator", EncoderSpec: "encoder"}[
        type(spec)
    ]
    layout = _layout_for(kind, spec)
    rng = Rng(derive_seed(seed, f"init-{kind}"), 0)
    chunks = []
    is_bias = lambda name: name.startswith(("b", "kb"))
    last_weight = [name for name, _ in layout if not is_bias(name)][-1]
    for name, shape in layout:
        n = int(np.prod(shape))
        if is_bias(name):
            chunks.append(np.zeros(n))
            continue
        fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
        scale = (1.0 if name == last_weight else 2.0) / fan_in
        chunks.append(rng.normals(n) * np.sqrt(scale))
    return Model(kind, spec, layout, np.concatenate(chunks))


# ---------------------------------------------------------------------------
# forward passes


def generate(model: Model, z, params: dict[str, Tensor] | None = None) -> Tensor:
    """Run the generator on a latent batch (B, latent_dim) -> (B, c, h, w).

    Differentiable through z (pass a requires_grad Tensor) and through the
    parameters (pass ``model.param_tensors(trainable=True)``).
    """
    if model.kind != "generator":
        raise ValueError(f"generate called on a {model.kind} model")
    spec = model.spec
    zt = z if isinstance(z, Tensor) else Tensor(z)
    if zt.data.ndim != 2 or zt.shape[1] != spec.latent_dim:
        raise ad.ShapeError(f"latent batch must be (B, {spec.latent_dim}), got {zt.shape}")
    P = params if params is not None else model.param_tensors()
    c, s, _ = spec.image_shape
    if spec.architecture == "mlp":
        h = zt
        n_layers = len(spec.hidden_widths) + 1
        for i in range(n_layers - 1):
            h = ad.leaky_relu(ad.matmul(h, P[f"w{i}"]) + P[f"b{i}"])
        out = ad.tanh(ad.matmul(h, P[f"w{n_layers - 1}"]) + P[f"b{n_layers - 1}"])
        return ad.reshape(out, (-1, c, s, s))
    h = ad.leaky_relu(ad.matmul(zt, P["w_fc"]) + P["b_fc"])
    h = ad.reshape(h, (-1, spec.hidden_widths[0], 4, 4))
    for i in range(len(spec.hidden_widths) - 1):
        h = ad.leaky_relu(ad.conv2d(ad.upsample2(h), P[f"k{i}"], padding=1) + P[f"kb{i}"])
    return ad.tanh(ad.conv2d(h, P["k_out"], padding=1) + P["kb_out"])


def discriminate(model: Model, x, params: dict[str, Tensor] | None = None) -> Tensor:
    """Logits (B, 1) for an image batch; apply sigmoid for probabilities."""
    if model.kind != "discriminator":
        raise ValueError(f"discriminate called on a {model.kind} model")
    spec = model.spec
    xt = x if isinstance(x, Tensor) else Tensor(x)
    P = params if params is not None else model.param_tensors()
    if spec.architecture == "conv":
        h = xt
        for i in range(len(spec.hidden_widths)):
            h = ad.avgpool(ad.leaky_relu(ad.conv2d(h, P[f"k{i}"], padding=1) + P[f"kb{i}"]), 2)
        h = ad.reshape(h, (xt.shape[0], -1))
        return ad.matmul(h, P["w_out"]) + P["b_out"]
    h = ad.reshape(xt, (xt.shape[0], -1))
    n_layers = len(spec.hidden_widths) + 1
    for i in range(n_layers - 1):
        h = ad.leaky_relu(ad.matmul(h, P[f"w{i}"]) + P[f"b{i}"])
    return ad.matmul(h, P[f"w{n_layers - 1}"]) + P[f"b{n_layers - 1}"]


def encode(model: Model, x, params: dict[str, Tensor] | None = None) -> Tensor:
    """Latent codes (B, latent_dim) for an image batch."""
    if model.kind != "encoder":
        raise ValueError(f"encode called on a {model.kind} model")
    xt = x if isinstance(x, Tensor) else Tensor(x)
    P = params if params is not None else model.param_tensors()
    h = ad.reshape(xt, (xt.shape[0], -1))
    n_layers = len(model.spec.hidden_widths) + 1
    for i in range(n_layers - 1):
        h = ad.leaky_relu(ad.matmul(h, P[f"w{i}"]) + P[f"b{i}"])
    return ad.matmul(h, P[f"w{n_layers - 1}"]) + P[f"b{n_layers - 1}"]


def sample_latents(n: int, latent_dim: int, rng: Rng) -> np.ndarray:
    """(n, latent_dim) of i.i.d. standard normals from the given stream."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return rng.normals(n, latent_dim)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 32
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    adversarial_weight: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr <= 0 or self.adversarial_weight < 0:
            raise ValueError("lr must be positive and adversarial_weight >= 0")


@dataclass
class GloState:
    model: Model
    pair_latents: np.ndarray  # (N, latent_dim), frozen before training
    pair_indices: np.ndarray
    loss_trace: list[float]
    final_train_mse: float


@dataclass
class GanResult:
    generator: Model
    discriminator: Model
    d_loss_trace: list[float]
    g_loss_trace: list[float]


@dataclass
class AeganResult:
    encoder: Model
    generator: Model
    discriminator: Model
    rec_loss_trace: list[float]
    d_loss_trace: list[float]


def _grad_arrays(tape: Tape, loss: Tensor, params: dict[str, Tensor], layout) -> list[np.ndarray]:
    grads = backward(tape, loss)
    return [grads[tape.node_id_of(params[name])].data for name, _ in layout]


def _batches(n: int, batch_size: int, order: np.ndarray) -> Iterable[np.ndarray]:
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _wrap_nonfinite(err: ad.NonFiniteError, where: str) -> TrainingDiverged:
    return TrainingDiverged(f"non-finite loss during {where}: {err}")


def train_glo(dataset: ImageDataset, spec: GeneratorSpec, cfg: TrainConfig) -> GloState:
    """Fit the generator to reconstruct each image from its own fixed latent.

    The (z_i, x_i) pairs are sampled once from cfg.seed before the first
    step and never updated; only generator parameters move.
    """
    cfg.validate()
    n = len(dataset)
    pair_rng = Rng(derive_seed(cfg.seed, "glo-pairs"), 0)
    pair_latents = pair_rng.normals(n, spec.latent_dim)
    pair_latents.setflags(write=False)
    pair_indices = np.arange(n, dtype=np.intp)

    model = init_model(spec, derive_seed(cfg.seed, "glo-init"))
    adam = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    order_rng = Rng(derive_seed(cfg.seed, "glo-order"), 0)
    views = model.param_views()
    trace: list[float] = []
    try:
        for _ in range(cfg.epochs):
            order = order_rng.permutation(n)
            for idx in _batches(n, cfg.batch_size, order):
                params = model.param_tensors(trainable=True)
                with Tape() as tape:
                    out = generate(model, Tensor(pair_latents[idx]), params)
                    diff = out - Tensor(dataset.images[idx])
                    loss = ad.tmean(ad.mul(diff, diff))
                adam.step(views, _grad_arrays(tape, loss, params, model.layout))
                trace.append(loss.item())
    except ad.NonFiniteError as err:
        raise _wrap_nonfinite(err, f"GLO step {len(trace)}") from err
    final = reconstruction_mse(model, pair_latents, dataset.images)
    return GloState(model, pair_latents, pair_indices, trace, final)


def reconstruction_mse(model: Model, latents: np.ndarray, images: np.ndarray) -> float:
    """Mean over images of per-pixel squared reconstruction error."""
    total = 0.0
    for start in range(0, len(images), 256):
        z = latents[start : start + 256]
        x = images[start : start + 256]
        out = generate(model, z).data
        total += float(((out - x) ** 2).sum())
    return total / float(np.prod(images.shape))


_LOG_EPS = 1e-12


def _adv_d_loss(logits_real: Tensor, logits_fake: Tensor) -> Tensor:
    """Discriminator loss: -E[log D(x)] - E[log(1 - D(fake))]."""
    pr = ad.sigmoid(logits_real)
    pf = ad.sigmoid(logits_fake)
    term_real = ad.tmean(ad.log(pr + _LOG_EPS))
    term_fake = ad.tmean(ad.log(Tensor(np.ones(pf.shape)) - pf + _LOG_EPS))
    return -(term_real + term_fake)


def _adv_g_loss(logits_fake: Tensor) -> Tensor:
    """Non-saturating generator loss: -E[log D(fake)]."""
    return -ad.tmean(ad.log(ad.sigmoid(logits_fake) + _LOG_EPS))


def train_gan(
    dataset: ImageDataset,
    gen_spec: GeneratorSpec,
    disc_spec: DiscriminatorSpec,
    cfg: TrainConfig,
) -> GanResult:
    """Alternating discriminator/generator Adam steps (Goodfellow objective,
    non-saturating generator)."""
    cfg.validate()
    n = len(dataset)
    if n < cfg.batch_size:
        raise ValueError(f"dataset size {n} is smaller than batch_size {cfg.batch_size}")
    gen = init_model(gen_spec, derive_seed(cfg.seed, "gan-gen"))
    disc = init_model(disc_spec, derive_seed(cfg.seed, "gan-disc"))
    adam_g = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    adam_d = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    order_rng = Rng(derive_seed(cfg.seed, "gan-order"), 0)
    z_rng = Rng(derive_seed(cfg.seed, "gan-z"), 0)
    gen_views, disc_views = gen.param_views(), disc.param_views()
    d_trace: list[float] = []
    g_trace: list[float] = []
    try:
        for _ in range(cfg.epochs):
            order = order_rng.permutation(n)
            for idx in _batches(n, cfg.batch_size, order):
                xb = dataset.images[idx]
                b = len(idx)
                # discriminator step; fakes are constants here
                fake = generate(gen, z_rng.normals(b, gen_spec.latent_dim)).data
                dp = disc.param_tensors(trainable=True)
                with Tape() as tape:
                    loss_d = _adv_d_loss(
                        discriminate(disc, Tensor(xb), dp), discriminate(disc, Tensor(fake), dp)
                    )
                adam_d.step(disc_views, _grad_arrays(tape, loss_d, dp, disc.layout))
                d_trace.append(loss_d.item())
                # generator step through a frozen discriminator
                gp = gen.param_tensors(trainable=True)
                with Tape() as tape:
                    fake_t = generate(gen, Tensor(z_rng.normals(b, gen_spec.latent_dim)), gp)
                    loss_g = _adv_g_loss(discriminate(disc, fake_t))
                adam_g.step(gen_views, _grad_arrays(tape, loss_g, gp, gen.layout))
                g_trace.append(loss_g.item())
    except ad.NonFiniteError as err:
        raise _wrap_nonfinite(err, f"GAN step {len(g_trace)}") from err
    return GanResult(gen, disc, d_trace, g_trace)


def train_aegan(
    dataset: ImageDataset,
    gen_spec: GeneratorSpec,
    enc_spec: EncoderSpec,
    disc_spec: DiscriminatorSpec,
    cfg: TrainConfig,
) -> AeganResult:
    """Joint encoder+generator reconstruction with a weighted adversarial
    term on the reconstructions; with adversarial_weight 0 this is exactly
    plain autoencoder training and the discriminator is never touched."""
    cfg.validate()
    if enc_spec.latent_dim != gen_spec.latent_dim:
        raise ValueError("encoder and generator latent dims differ")
    n = len(dataset)
    if n < cfg.batch_size:
        raise ValueError(f"dataset size {n} is smaller than batch_size {cfg.batch_size}")
    lam = cfg.adversarial_weight
    gen = init_model(gen_spec, derive_seed(cfg.seed, "aegan-gen"))
    enc = init_model(enc_spec, derive_seed(cfg.seed, "aegan-enc"))
    disc = init_model(disc_spec, derive_seed(cfg.seed, "aegan-disc"))
    adam_ge = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    adam_d = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    order_rng = Rng(derive_seed(cfg.seed, "aegan-order"), 0)
    ge_views = gen.param_views() + enc.param_views()
    ge_layout = tuple((f"g.{k}", s) for k, s in gen.layout) + tuple(
        (f"e.{k}", s) for k, s in enc.layout
    )
    disc_views = disc.param_views()
    rec_trace: list[float] = []
    d_trace: list[float] = []
    try:
        for _ in range(cfg.epochs):
            order = order_rng.permutation(n)
            for idx in _batches(n, cfg.batch_size, order):
                xb = dataset.images[idx]
                if lam > 0:
                    recon_const = generate(gen, encode(enc, xb).data).data
                    dp = disc.param_tensors(trainable=True)
                    with Tape() as tape:
                        loss_d = _adv_d_loss(
                            discriminate(disc, Tensor(xb), dp),
                            discriminate(disc, Tensor(recon_const), dp),
                        )
                    adam_d.step(disc_views, _grad_arrays(tape, loss_d, dp, disc.layout))
                    d_trace.append(loss_d.item())
                gp = gen.param_tensors(trainable=True)
                ep = enc.param_tensors(trainable=True)
                joint = {f"g.{k}": t for k, t in gp.items()}
                joint.update({f"e.{k}": t for k, t in ep.items()})
                with Tape() as tape:
                    recon = generate(gen, encode(enc, Tensor(xb), ep), gp)
                    diff = recon - Tensor(xb)
                    rec = ad.tmean(ad.mul(diff, diff))
                    loss = rec if lam == 0 else rec + ad.smul(_adv_g_loss(discriminate(disc, recon)), lam)
                adam_ge.step(ge_views, _grad_arrays(tape, loss, joint, ge_layout))
                rec_trace.append(rec.item())
    except ad.NonFiniteError as err:
        raise _wrap_nonfinite(err, f"AEGAN step {len(rec_trace)}") from err
    return AeganResult(enc, gen, disc, rec_trace, d_trace)


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"LAMDL1"
_VERSION = 1
_SPEC_CLASSES = {
    "generator": GeneratorSpec,
    "discriminator": DiscriminatorSpec,
    "encoder": EncoderSpec,
}


def save_model(model: Model, path: str) -> None:
    """Write magic, version, JSON spec descriptor, LE float64 params, CRC32."""
    spec = model.spec
    desc = {"kind": model.kind, **{k: getattr(spec, k) for k in spec.__dataclass_fields__}}
    blob = json.dumps(desc, sort_keys=True).encode("utf-8")
    params = model.theta.astype("<f8").tobytes()
    body = (
        _MAGIC
        + struct.pack("<H", _VERSION)
        + struct.pack("<I", len(blob))
        + blob
        + struct.pack("<Q", model.theta.size)
        + params
    )
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


def load_model(path: str) -> Model:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:6] != _MAGIC:
        raise FormatError(f"{path}: not a model checkpoint")
    if zlib.crc32(raw[:-4]) != struct.unpack("<I", raw[-4:])[0]:
        raise FormatError(f"{path}: checksum mismatch")
    (version,) = struct.unpack("<H", raw[6:8])
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack("<I", raw[8:12])
    desc = json.loads(raw[12 : 12 + blob_len].decode("utf-8"))
    pos = 12 + blob_len
    (count,) = struct.unpack("<Q", raw[pos : pos + 8])
    if len(raw) != pos + 8 + 8 * count + 4:
        raise FormatError(f"{path}: truncated or oversized parameter payload")
    theta = np.frombuffer(raw, dtype="<f8", count=count, offset=pos + 8).astype(np.float64)
    kind = desc.pop("kind")
    spec_cls = _SPEC_CLASSES[kind]
    for key in ("image_shape", "hidden_widths"):
        if key in desc:
            desc[key] = tuple(desc[key])
    spec = spec_cls(**desc)
    spec.validate()
    layout = _layout_for(kind, spec)
    expected = sum(int(np.prod(s)) for _, s in layout)
    if expected != count:
        raise FormatError(f"{path}: parameter count {count} does not match spec ({expected})")
    return Model(kind, spec, layout, theta)
