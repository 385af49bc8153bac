"""Stage I: per-modality coarse saliency with content + adversarial loss.

The generator is a small encoder-decoder (conv-conv-pool blocks mirrored by
upsample-conv-conv blocks, sigmoid head). The discriminator scores an
(image, saliency map) pair resized to 56x56 and has the fixed layer stack
conv1-1 .. fc6. Each modality gets its own independent (G, D) pair, and
the two networks are updated alternately, one batch each.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from qfuse import checkpoint, optim
from qfuse import tensor as T
from qfuse.nn import Conv2d, Dense, Module
from qfuse.tensor import DimensionError, Tensor, no_grad

log = logging.getLogger(__name__)


class GeneratorNet(Module):
    def __init__(self, in_channels=1, widths=(16, 32, 64), seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.arch = {"kind": "generator", "in_channels": in_channels, "widths": list(widths), "seed": seed}
        self.encoder = []
        c = in_channels
        for i, w in enumerate(widths):
            self.encoder.append(Conv2d(f"enc{i + 1}a", c, w, 3, rng, dtype=dtype))
            self.encoder.append(Conv2d(f"enc{i + 1}b", w, w, 3, rng, dtype=dtype))
            c = w
        self.decoder = []
        for i, w in enumerate(reversed(widths)):
            self.decoder.append(Conv2d(f"dec{i + 1}a", c, w, 3, rng, dtype=dtype))
            self.decoder.append(Conv2d(f"dec{i + 1}b", w, w, 3, rng, dtype=dtype))
            c = w
        self.head = Conv2d("head", c, 1, 1, rng, act="sigmoid", dtype=dtype)
        self.depth = len(widths)

    def forward(self, x):
        if not isinstance(x, Tensor):
            x = Tensor(x)
        factor = 2**self.depth
        if x.data.ndim != 4 or x.shape[2] % factor or x.shape[3] % factor:
            raise DimensionError(f"generator input {x.shape} must be [N,C,H,W] with H, W divisible by {factor}")
        for i in range(self.depth):
            x = self.encoder[2 * i + 1](self.encoder[2 * i](x))
            x = T.max_pool2d(x)
        for i in range(self.depth):
            x = T.upsample2x(x)
            x = self.decoder[2 * i + 1](self.decoder[2 * i](x))
        return self.head(x)


class DiscriminatorNet(Module):
    """conv1-1 (1x1) .. conv3-2, three 2x2 pools, fc4 tanh, fc5 tanh, fc6 sigmoid."""

    def __init__(
        self,
        in_channels=2,
        input_size=56,
        depths=(3, 32, 64, 64, 64, 64),
        fc=(100, 2),
        seed=0,
        dtype=np.float32,
    ):
        if input_size % 8:
            raise ValueError("discriminator input size must be divisible by 8")
        rng = np.random.default_rng(seed)
        self.arch = {
            "kind": "discriminator",
            "in_channels": in_channels,
            "input_size": input_size,
            "depths": list(depths),
            "fc": list(fc),
            "seed": seed,
        }
        self.input_size = input_size
        d = depths
        # conv1-1 is listed with pad 1, which would break the 7x7x64 flatten; pad 0 keeps 56 -> 7
        self.convs = [
            Conv2d("conv1_1", in_channels, d[0], 1, rng, pad=0, dtype=dtype),
            Conv2d("conv1_2", d[0], d[1], 3, rng, dtype=dtype),
            Conv2d("conv2_1", d[1], d[2], 3, rng, dtype=dtype),
            Conv2d("conv2_2", d[2], d[3], 3, rng, dtype=dtype),
            Conv2d("conv3_1", d[3], d[4], 3, rng, dtype=dtype),
            Conv2d("conv3_2", d[4], d[5], 3, rng, dtype=dtype),
        ]
        self.flat_dim = (input_size // 8) ** 2 * d[5]
        self.fc4 = Dense("fc4", self.flat_dim, fc[0], rng, act="tanh", dtype=dtype)
        self.fc5 = Dense("fc5", fc[0], fc[1], rng, act="tanh", dtype=dtype)
        self.fc6 = Dense("fc6", fc[1], 1, rng, act="sigmoid", dtype=dtype)

    def features(self, image, saliency):
        image, saliency = T._as_tensor(image), T._as_tensor(saliency)
        s = self.input_size
        if image.shape[2:] != (s, s) or saliency.shape[2:] != (s, s):
            raise DimensionError(f"discriminator expects {s}x{s} inputs, got {image.shape} and {saliency.shape}")
        x = T.concat([image, saliency], axis=1)
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i % 2 == 1:
                x = T.max_pool2d(x)
        return T.flatten(x)

    def forward(self, image, saliency):
        return self.fc6(self.fc5(self.fc4(self.features(image, saliency))))


def build_net(arch, dtype=np.float32):
    kw = {k: v for k, v in arch.items() if k != "kind"}
    if arch["kind"] == "generator":
        return GeneratorNet(dtype=dtype, **kw)
    if arch["kind"] == "discriminator":
        return DiscriminatorNet(dtype=dtype, **kw)
    raise ValueError(f"unknown network kind {arch['kind']!r}")


def load_net(directory):
    net = build_net(checkpoint.read_arch(directory))
    return checkpoint.load_into(net, directory)


def save_net(net, directory):
    checkpoint.save(net, directory, net.arch)


# ---------------------------------------------------------------- losses


def adversarial_loss(d_out):
    """-ln D(I, S_hat), batch mean, probabilities clamped."""
    return T.bce_loss(d_out, 1)


def generator_loss(pred, gt, d_out, lam):
    """Content MSE plus ``lam`` times the adversarial term."""
    content = T.mse_loss(pred, gt)
    if lam == 0:
        return content
    return content + adversarial_loss(d_out) * lam


def discriminator_loss(d_real, d_fake):
    return T.bce_loss(d_real, 1) + T.bce_loss(d_fake, 0)


# ---------------------------------------------------------------- training


@dataclass
class Stage1Config:
    lambda_adv: float = 0.33
    lr: float = 3e-4
    weight_decay: float = 1e-4
    batch_size: int = 8
    iterations: int = 500
    d_size: int = 56
    widths: tuple = (16, 32, 64)
    seed: int = 0


@dataclass
class Stage1Result:
    generators: list
    discriminators: list
    history: list = field(default_factory=list)  # per modality: list of (it, g_loss, d_loss, mse)
    g_steps: list = field(default_factory=list)
    d_steps: list = field(default_factory=list)


def _stack(maps):
    return np.stack([np.asarray(m, dtype=np.float32) for m in maps])[:, None]


def train_pair(images, gts, cfg: Stage1Config, seed):
    """Alternate one G batch and one D batch per iteration for one modality."""
    g = GeneratorNet(1, cfg.widths, seed=seed)
    d = DiscriminatorNet(2, cfg.d_size, seed=seed + 1)
    rng = np.random.default_rng(seed + 2)
    x_all, y_all = _stack(images), _stack(gts)
    n = len(x_all)
    history = []
    g_steps = d_steps = 0
    for it in range(cfg.iterations):
        idx = rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        x, y = Tensor(x_all[idx]), Tensor(y_all[idx])
        x56, y56 = T.resize_bilinear(x, cfg.d_size), T.resize_bilinear(y, cfg.d_size)

        pred = g(x)
        content = T.mse_loss(pred, y)
        if cfg.lambda_adv:
            with d.frozen():
                g_loss = content + adversarial_loss(d(x56, T.resize_bilinear(pred, cfg.d_size))) * cfg.lambda_adv
        else:
            g_loss = content
        T.backward(g_loss)
        optim.adagrad_step(g.parameters(), cfg.lr, cfg.weight_decay)
        g_steps += 1

        fake = T.resize_bilinear(Tensor(pred.data), cfg.d_size)
        d_loss = discriminator_loss(d(x56, y56), d(x56, fake))
        T.backward(d_loss)
        optim.adagrad_step(d.parameters(), cfg.lr, cfg.weight_decay)
        d_steps += 1

        history.append((it, g_loss.item(), d_loss.item(), content.item()))
        if it % 50 == 0:
            log.debug("iter %d g=%.4f d=%.4f mse=%.4f", it, *history[-1][1:])
    return g, d, history, g_steps, d_steps


def stage1_train(dataset, cfg: Stage1Config | None = None):
    """Train one (generator, discriminator) pair per modality."""
    cfg = cfg or Stage1Config()
    if not dataset:
        raise ValueError("stage-I training needs a non-empty dataset")
    if any(s.gt is None for s in dataset):
        raise ValueError("stage-I training needs ground truth for every sample")
    result = Stage1Result([], [])
    for m in range(len(dataset[0].images)):
        g, d, hist, gs, ds = train_pair(
            [s.images[m] for s in dataset], [s.gt for s in dataset], cfg, seed=cfg.seed * 1000 + 10 * m
        )
        result.generators.append(g)
        result.discriminators.append(d)
        result.history.append(hist)
        result.g_steps.append(gs)
        result.d_steps.append(ds)
    return result


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "g_loss", "d_loss", "mse"])
        for it, gl, dl, mse in history:
            w.writerow([it, repr(gl), repr(dl), repr(mse)])


def coarse_inference(net: GeneratorNet, image):
    """Saliency map in (0, 1) for one [H, W] map, an image file path, or an [N,1,H,W] batch."""
    if isinstance(image, (str, Path)):
        from qfuse.imageio import read_image

        image = read_image(image)
    arr = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=np.float32)
    single = arr.ndim == 2
    if single:
        arr = arr[None, None]
    with no_grad():
        out = net(Tensor(arr)).data
    return out[0, 0] if single else out


def batched_inference(net, maps, batch=16):
    out = []
    for i in range(0, len(maps), batch):
        out.extend(coarse_inference(net, _stack(maps[i : i + batch]))[:, 0])
    return out


def mean_mse(net, images, gts):
    preds = batched_inference(net, images)
    return float(np.mean([np.mean((p - g) ** 2) for p, g in zip(preds, gts)]))

