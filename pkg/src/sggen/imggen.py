"""Object-to-image regularizer: layouts, generator, discriminator, losses.

Object embeddings are tiled to an 8x8 grid, bilinear-warped into their boxes
and summed into a scene layout. A cascaded refinement generator doubles
resolution per module, each module consuming the previous output
concatenated with the layout average-pooled to its resolution; two final
convolutions emit a tanh-squashed RGB image. The conditional discriminator
sees the image concatenated with the layout.

Images are read and written as binary PPM (P6), mapped linearly between
[-1, 1] and [0, 255].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .errors import DataError, ShapeError
from .proposals import Box

LOG_EPS = 1e-7
OBJECT_GRID = 8  # side of the tiled object embedding before warping


@dataclass
class SceneLayout:
    grid: nc.Tensor                 # (Dl, H, W)
    per_object: list = field(default_factory=list)


def compose_layout(objects, height: int, width: int) -> SceneLayout:
    """Sum of per-object layouts; each (embedding, box) pair is tiled to an
    8x8 grid and warped into its box on the canvas."""
    objects = list(objects)
    if not objects:
        raise DataError("compose_layout needs at least one object")
    per_object = []
    for emb, box in objects:
        tiled = nc.tile_spatial(emb, OBJECT_GRID, OBJECT_GRID)
        per_object.append(nc.bilinear_warp(tiled, box, height, width))
    grid = per_object[0]
    for layout in per_object[1:]:
        grid = nc.add(grid, layout)
    return SceneLayout(grid=grid, per_object=per_object)


def scale_box(box: Box, factor: float) -> Box:
    return Box(box.x * factor, box.y * factor, box.w * factor, box.h * factor)


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ConvLayer:
    w: nc.Tensor
    b: nc.Tensor


@dataclass
class GanParams:
    layout_dim: int
    noise_dim: int
    start_res: int
    out_res: int
    hidden: int
    lambda_p: float
    class_embed: nc.Tensor          # (num_classes, layout_dim), GT-object path
    feat_proj: ConvLayer            # object feature -> layout embedding
    modules: list                   # [(ConvLayer, ConvLayer)] per resolution stage
    final1: ConvLayer
    final2: ConvLayer
    disc: list                      # stride-2 ConvLayers
    disc_lin: ConvLayer

    @property
    def n_modules(self) -> int:
        return len(self.modules)

    def generator_tensors(self):
        out = {"class_embed": self.class_embed}
        for i, (c1, c2) in enumerate(self.modules):
            out[f"mod{i}.w1"], out[f"mod{i}.b1"] = c1.w, c1.b
            out[f"mod{i}.w2"], out[f"mod{i}.b2"] = c2.w, c2.b
        out["final1.w"], out["final1.b"] = self.final1.w, self.final1.b
        out["final2.w"], out["final2.b"] = self.final2.w, self.final2.b
        return out

    def proj_tensors(self):
        return {"feat_proj.w": self.feat_proj.w, "feat_proj.b": self.feat_proj.b}

    def disc_tensors(self):
        out = {}
        for i, layer in enumerate(self.disc):
            out[f"disc{i}.w"], out[f"disc{i}.b"] = layer.w, layer.b
        out["disc_lin.w"], out["disc_lin.b"] = self.disc_lin.w, self.disc_lin.b
        return out


def _conv_layer(rng, c_out, c_in, kh, kw) -> ConvLayer:
    scale = 1.0 / np.sqrt(c_in * kh * kw)
    return ConvLayer(
        w=nc.Tensor(rng.normal(0.0, scale, size=(c_out, c_in, kh, kw)), requires_grad=True),
        b=nc.Tensor(np.zeros(c_out), requires_grad=True),
    )


def init_gan(rng, *, num_classes: int, feat_dim: int, layout_dim: int = 16, noise_dim: int = 4,
             start_res: int = 4, out_res: int = 64, hidden: int = 16, lambda_p: float = 1.0) -> GanParams:
    stages = int(np.log2(out_res / start_res))
    if start_res * 2 ** stages != out_res:
        raise DataError(f"output resolution {out_res} is not a power-of-two multiple of {start_res}")
    modules = []
    prev = noise_dim
    for _ in range(stages):
        c1 = _conv_layer(rng, hidden, prev + layout_dim, 3, 3)
        c2 = _conv_layer(rng, hidden, hidden, 3, 3)
        modules.append((c1, c2))
        prev = hidden
    final1 = _conv_layer(rng, hidden, hidden, 3, 3)
    final2 = _conv_layer(rng, 3, hidden, 1, 1)
    disc = []
    c_in = 3 + layout_dim
    res = out_res
    widths = [hidden, hidden * 2, hidden * 2, hidden * 2]
    for w in widths:
        disc.append(_conv_layer(rng, w, c_in, 4, 4))
        c_in = w
        res //= 2
    flat = c_in * res * res
    scale = 1.0 / np.sqrt(flat)
    disc_lin = ConvLayer(
        w=nc.Tensor(rng.normal(0.0, scale, size=(1, flat)), requires_grad=True),
        b=nc.Tensor(np.zeros(1), requires_grad=True),
    )
    return GanParams(
        layout_dim=layout_dim, noise_dim=noise_dim, start_res=start_res, out_res=out_res,
        hidden=hidden, lambda_p=lambda_p,
        class_embed=nc.Tensor(rng.normal(0.0, 0.5, size=(num_classes, layout_dim)), requires_grad=True),
        feat_proj=ConvLayer(
            w=nc.Tensor(rng.normal(0.0, 1.0 / np.sqrt(feat_dim), size=(layout_dim, feat_dim)), requires_grad=True),
            b=nc.Tensor(np.zeros(layout_dim), requires_grad=True),
        ),
        modules=modules, final1=final1, final2=final2, disc=disc, disc_lin=disc_lin,
    )


# ---------------------------------------------------------------------------
# generator / discriminator forward


def sample_noise(rng, p: GanParams) -> nc.Tensor:
    return nc.Tensor(rng.normal(0.0, 1.0, size=(p.noise_dim, p.start_res, p.start_res)))


def generate_image(layout: SceneLayout, noise: nc.Tensor, p: GanParams) -> nc.Tensor:
    """Coarse-to-fine synthesis conditioned on the scene layout; (3, R, R) in [-1, 1]."""
    if layout.grid.shape != (p.layout_dim, p.out_res, p.out_res):
        raise ShapeError(
            f"layout {layout.grid.shape} does not match configuration "
            f"({p.layout_dim}, {p.out_res}, {p.out_res})"
        )
    x = noise
    res = p.start_res
    for c1, c2 in p.modules:
        lay = nc.avg_pool2d(layout.grid, p.out_res // res) if res != p.out_res else layout.grid
        x = nc.concat([x, lay], axis=0)
        x = nc.leaky_relu(nc.conv2d(x, c1.w, stride=1, pad=1) + _chan(c1.b, res))
        x = nc.leaky_relu(nc.conv2d(x, c2.w, stride=1, pad=1) + _chan(c2.b, res))
        x = nc.upsample_nearest(x)
        res *= 2
    x = nc.leaky_relu(nc.conv2d(x, p.final1.w, stride=1, pad=1) + _chan(p.final1.b, res))
    x = nc.conv2d(x, p.final2.w) + _chan(p.final2.b, res)
    return nc.tanh(x)


def _chan(bias: nc.Tensor, res: int) -> nc.Tensor:
    return nc.tile_spatial(bias, res, res)


def discriminate(image: nc.Tensor, layout: SceneLayout, p: GanParams) -> nc.Tensor:
    """Probability that the image is real, conditioned on the layout."""
    x = nc.concat([image, layout.grid], axis=0)
    res = p.out_res
    for layer in p.disc:
        x = nc.leaky_relu(nc.conv2d(x, layer.w, stride=2, pad=1) + _chan(layer.b, res // 2))
        res //= 2
    flat = nc.reshape(x, (x.size,))
    logit = nc.linear(p.disc_lin.w, flat, p.disc_lin.b)
    return nc.at(nc.sigmoid(logit), 0)


# ---------------------------------------------------------------------------
# losses


def pixel_l1(real: nc.Tensor, fake: nc.Tensor) -> nc.Tensor:
    if real.shape != fake.shape:
        raise ShapeError(f"pixel loss needs same-shape images, got {real.shape} vs {fake.shape}")
    return nc.tsum(nc.absval(nc.sub(real, fake)))


def gan_losses(real: nc.Tensor, fake: nc.Tensor, layout: SceneLayout, p: GanParams):
    """(L_D, L_G, L_pixel) for one real/fake pair.

    L_D is the discriminator's ascended objective log D(real) + log(1 - D(fake))
    evaluated with the fake detached; training maximizes it by descending its
    negation. L_G is the generator-side minimized objective
    -log D(fake) + lambda_p * ||real - fake||_1 using the non-saturating
    adversarial term. D outputs are clamped away from {0, 1} before the logs.
    """
    d_real = nc.clamp(discriminate(real, layout, p), LOG_EPS, 1.0 - LOG_EPS)
    d_fake_detached = nc.clamp(discriminate(fake.detach(), layout, p), LOG_EPS, 1.0 - LOG_EPS)
    loss_d = nc.add(nc.log(d_real), nc.log(nc.sub(nc.Tensor(1.0), d_fake_detached)))
    d_fake = nc.clamp(discriminate(fake, layout, p), LOG_EPS, 1.0 - LOG_EPS)
    l_pix = pixel_l1(real, fake)
    loss_g = nc.add(nc.neg(nc.log(d_fake)), nc.mul(nc.Tensor(p.lambda_p), l_pix))
    return loss_d, loss_g, l_pix


# ---------------------------------------------------------------------------
# PPM (P6) image IO


def write_ppm(path, image) -> None:
    arr = image.data if isinstance(image, nc.Tensor) else np.asarray(image)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DataError(f"PPM writer expects a (3,H,W) image, got {arr.shape}")
    _, h, w = arr.shape
    bytes_ = np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(bytes_.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PPM header")
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P6":
        raise DataError(f"{path}: not a binary PPM (P6) file")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError as exc:
        raise DataError(f"{path}: bad PPM header: {exc}") from exc
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 supported, got {maxval}")
    raw = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos)
    if raw.size != w * h * 3:
        raise DataError(f"{path}: pixel payload truncated")
    return raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 127.5 - 1.0
