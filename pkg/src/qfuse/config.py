"""Run configuration: one flat JSON object, defaults for every key."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from qfuse.agent import AgentConfig
from qfuse.data import SynthConfig
from qfuse.gan import Stage1Config


class ConfigError(ValueError):
    def __init__(self, key, reason):
        super().__init__(f"config key {key!r}: {reason}")
        self.key = key


@dataclass
class RunConfig:
    # stage I
    lambda_adv: float = 0.33
    adagrad_lr: float = 3e-4
    weight_decay: float = 1e-4
    batch_gan: int = 8
    stage1_iterations: int = 500
    generator_widths: tuple = (16, 32, 64)
    # stage II
    alpha: float = 1e-4
    gamma: float = 0.9
    eta: float = 2.0
    phi: float = 0.04
    delta: float = 0.1
    t_max: int = 20
    replay_capacity: int = 10_000
    batch_q: int = 32
    sync_c: int = 100
    learn_start: int = 500
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    episodes: int = 300
    q_hidden: int = 256
    state_size: int = 56
    # data
    image_size: int = 64
    n_samples: int = 16
    quality: object = "random"
    blur_radius: int = 2
    noise_sigma_max: float = 2.0
    # evaluation
    beta: float = 0.3
    beta_squared: bool = False
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        def need(key, ok, what):
            if not ok:
                raise ConfigError(key, f"{what} (got {getattr(self, key)!r})")

        pos_int = lambda v: isinstance(v, int) and not isinstance(v, bool) and v > 0  # noqa: E731
        unit = lambda v: isinstance(v, (int, float)) and not isinstance(v, bool) and 0 <= v <= 1  # noqa: E731
        positive = lambda v: isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0  # noqa: E731

        for key in ("batch_gan", "stage1_iterations", "t_max", "replay_capacity", "batch_q", "sync_c",
                    "episodes", "q_hidden", "state_size", "n_samples"):
            need(key, pos_int(getattr(self, key)), "must be a positive integer")
        for key in ("lambda_adv", "weight_decay", "noise_sigma_max"):
            v = getattr(self, key)
            need(key, isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0, "must be non-negative")
        for key in ("adagrad_lr", "alpha", "eta", "beta"):
            need(key, positive(getattr(self, key)), "must be positive")
        for key in ("phi", "epsilon_start", "epsilon_end"):
            need(key, unit(getattr(self, key)), "must lie in [0, 1]")
        need("gamma", unit(self.gamma) and self.gamma < 1, "must lie in [0, 1)")
        need("delta", isinstance(self.delta, (int, float)) and 0 < self.delta <= 0.5, "must lie in (0, 0.5]")
        need("learn_start", isinstance(self.learn_start, int) and self.learn_start >= 0, "must be >= 0")
        need("blur_radius", isinstance(self.blur_radius, int) and self.blur_radius >= 0, "must be >= 0")
        need("image_size", pos_int(self.image_size) and self.image_size >= 16 and self.image_size % 8 == 0,
             "must be >= 16 and divisible by 8")
        need("state_size", self.state_size % 8 == 0, "must be divisible by 8")
        need("seed", isinstance(self.seed, int) and not isinstance(self.seed, bool) and self.seed >= 0,
             "must be a non-negative integer")
        need("beta_squared", isinstance(self.beta_squared, bool), "must be true or false")
        widths = tuple(self.generator_widths)
        need("generator_widths", len(widths) >= 1 and all(pos_int(w) for w in widths), "must be positive integers")
        self.generator_widths = widths
        need("image_size", self.image_size % (2 ** len(widths)) == 0, "must be divisible by 2**len(generator_widths)")
        q = self.quality
        if isinstance(q, str):
            need("quality", q == "random", "must be 'random' or a pair in [0, 1]")
        else:
            need("quality", isinstance(q, (list, tuple)) and len(q) == 2 and all(unit(v) for v in q),
                 "must be 'random' or a pair in [0, 1]")
            self.quality = tuple(float(v) for v in q)

    # ------------------------------------------------------------ views

    def synth(self, seed=None, n_samples=None, quality=None):
        return SynthConfig(
            image_size=self.image_size,
            n_samples=self.n_samples if n_samples is None else n_samples,
            quality=self.quality if quality is None else quality,
            blur_radius=self.blur_radius,
            noise_sigma_max=self.noise_sigma_max,
            seed=self.seed if seed is None else seed,
        )

    def stage1(self):
        return Stage1Config(
            lambda_adv=self.lambda_adv,
            lr=self.adagrad_lr,
            weight_decay=self.weight_decay,
            batch_size=self.batch_gan,
            iterations=self.stage1_iterations,
            d_size=self.state_size,
            widths=self.generator_widths,
            seed=self.seed,
        )

    def agent(self):
        return AgentConfig(
            alpha=self.alpha,
            gamma=self.gamma,
            eta=self.eta,
            phi=self.phi,
            delta=self.delta,
            t_max=self.t_max,
            replay_capacity=self.replay_capacity,
            batch_size=self.batch_q,
            sync_c=self.sync_c,
            learn_start=self.learn_start,
            epsilon_start=self.epsilon_start,
            epsilon_end=self.epsilon_end,
            episodes=self.episodes,
            hidden=self.q_hidden,
            state_size=self.state_size,
            seed=self.seed,
        )

    def to_json(self):
        d = asdict(self)
        d["generator_widths"] = list(self.generator_widths)
        if isinstance(self.quality, tuple):
            d["quality"] = list(self.quality)
        return d


KEYS = {f.name for f in fields(RunConfig)}


def from_dict(values):
    unknown = sorted(set(values) - KEYS)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError("?", str(exc)) from None


def _coerce(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load(path=None, overrides=(), seed=None):
    """Read a JSON config (or defaults), apply ``key=value`` overrides and a seed."""
    values = {}
    if path is not None:
        p = Path(path)
        try:
            values = json.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigError("--config", f"file {p} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON in {p}: {exc}") from None
        if not isinstance(values, dict):
            raise ConfigError("--config", "top level must be an object")
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(item, "override must look like key=value")
        values[key.strip()] = _coerce(raw)
    if seed is not None:
        values["seed"] = seed
    return from_dict(values)
