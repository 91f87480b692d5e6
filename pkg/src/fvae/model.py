"""FVAEModel: conditional-flow posterior, decoder and observation scale."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .conditional import COMBINED, GAUSSIAN, HYBRID, NOISY_FLOW, CondOutput, ConditionalFlow
from .nets import Module, ResidualMLP
from .rng import Rng

MODES = {
    "fvae": COMBINED,
    "vae": GAUSSIAN,
    "flow": NOISY_FLOW,
    "hybrid": HYBRID,
}
MODE_ALIASES = {"vae-reduction": "vae", "flow-reduction": "flow"}


@dataclass
class ModelConfig:
    data_dim: int
    latent_dim: int | None = None
    mode: str = "fvae"
    hidden: int = 64
    encoder_blocks: int = 2
    decoder_blocks: int = 2
    flow_layers: int = 4
    coupling_hidden: int = 32
    coupling_blocks: int = 1
    log_scale_clamp: float = 2.0
    noise_sigma: float = 0.05
    tanh_output: bool = False
    seed: int = 0

    def __post_init__(self):
        self.mode = MODE_ALIASES.get(self.mode, self.mode)
        if self.latent_dim is None:
            self.latent_dim = self.data_dim

    def validate(self) -> None:
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode: unknown value {self.mode!r} (expected one of {sorted(MODES)})")
        for name in ("data_dim", "latent_dim", "hidden", "coupling_hidden"):
            if getattr(self, name) < 1:
                problems.append(f"{name}: must be >= 1")
        for name in ("encoder_blocks", "decoder_blocks", "flow_layers", "coupling_blocks"):
            if getattr(self, name) < 0:
                problems.append(f"{name}: must be >= 0")
        if self.mode == "flow" and self.latent_dim != self.data_dim:
            problems.append(f"latent_dim: flow mode needs latent_dim == data_dim ({self.data_dim})")
        if self.mode != "vae" and self.latent_dim < 2 and self.flow_layers > 0:
            problems.append("flow_layers: couplings need latent_dim >= 2")
        if self.noise_sigma <= 0:
            problems.append("noise_sigma: must be positive")
        if self.log_scale_clamp <= 0:
            problems.append("log_scale_clamp: must be positive")
        if problems:
            raise ValueError("invalid model config: " + "; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class FVAEModel(Module):
    """q(x|z) = N(x; decode(z), s2^2 I) with posterior z = F_x(u).

    ``decode`` maps prior space to data space: G(F^-1(z)) for ``fvae``,
    G(z) for ``vae``/``hybrid``, F^-1(z) for ``flow`` (G is the identity).
    """

    _params = ("log_sigma2",)
    _children = ("cf", "decoder")

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        rng = Rng(config.seed)
        self.mode = config.mode
        self.data_dim = config.data_dim
        self.latent_dim = config.latent_dim
        self.cf = ConditionalFlow(
            MODES[config.mode], config.data_dim, config.latent_dim, rng.split(),
            hidden=config.hidden, encoder_blocks=config.encoder_blocks,
            flow_layers=config.flow_layers, coupling_hidden=config.coupling_hidden,
            coupling_blocks=config.coupling_blocks, log_scale_clamp=config.log_scale_clamp,
            noise_sigma=config.noise_sigma)
        if config.mode == "flow":
            self.decoder = None
            self.log_sigma2 = Tensor([[math.log(config.noise_sigma)]])
        else:
            self.decoder = ResidualMLP(config.latent_dim, config.hidden, config.data_dim,
                                       config.decoder_blocks, rng.split(), zero_out=True)
            self.log_sigma2 = Tensor([[0.0]], requires_grad=True)

    @property
    def form(self) -> str:
        return self.cf.form

    @property
    def sigma2(self) -> float:
        return float(np.exp(self.log_sigma2.data[0, 0]))

    def trainable(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def generate(self, v: Tensor) -> Tensor:
        """G applied to the pre-flow (or latent) point."""
        if self.decoder is None:
            return v
        out = self.decoder(v)
        return ad.tanh(out) if self.config.tanh_output else out

    def decode(self, z: Tensor) -> Tensor:
        if self.form in (COMBINED, NOISY_FLOW):
            return self.generate(self.cf.flow.inverse(z))
        return self.generate(z)

    def decode_from(self, out: CondOutput) -> Tensor:
        """Decoder mean for a conditional-flow output, skipping F^-1(F(v))."""
        if out.base is not None:
            return self.generate(out.base)
        return self.generate(out.z)

    def encode(self, x: Tensor) -> Tensor:
        """Noise-free code F_x(0), e.g. F(E(x)) in fvae mode."""
        u = ad.constant(0.0, (x.shape[0], self.latent_dim))
        return self.cf.forward(x, u)[0]

    def reconstruct(self, x: Tensor) -> Tensor:
        u = ad.constant(0.0, (x.shape[0], self.latent_dim))
        return self.decode_from(self.cf.forward_full(x, u))


def build_model(config: ModelConfig | None = None, **kwargs) -> FVAEModel:
    if config is None:
        config = ModelConfig(**kwargs)
    return FVAEModel(config)
