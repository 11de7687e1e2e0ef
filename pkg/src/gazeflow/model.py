"""Transformer policy: patch vision encoder, cross-attention viewer encoder,
and autoregressive fixation decoder emitting (mixture-of-)Gaussian step
policies with exact log-densities.

The policy parameterizes fixations in an unconstrained pre-squash space:
x and y are sigmoid-squashed into [0, 1] and duration is exp-squashed into
(0, inf). Log-densities include the change-of-variables terms, so
``path_log_prob`` is the exact log-density of the squashed scanpath and is
differentiable with respect to all parameters and viewer embeddings.

Everything runs in float64 on CPU; forward passes are read-only and safe to
run concurrently.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterator, Optional

import numpy as np
import torch
from torch import Tensor, nn

from .core import Fixation, Scanpath, StimulusImage

DTYPE = torch.float64
UNIT_EPS = 1e-6  # clamp for inverting the sigmoid squash at the borders

POPULATION = "population"
INDIVIDUAL = "individual"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and policy hyperparameters.

    Defaults are desk-scale; ``full_scale()`` gives the 12-layer 224x224
    preset.
    """

    input_w: int = 64
    input_h: int = 64
    patch: int = 16
    embed_dim: int = 64
    encoder_depth: int = 2
    decoder_depth: int = 2
    viewer_depth: int = 2
    heads: int = 4
    path_length: int = 8
    components: int = 1
    viewer_tokens: int = 4
    mode: str = POPULATION
    t_default: float = 0.25

    def __post_init__(self) -> None:
        if self.input_w % self.patch or self.input_h % self.patch:
            raise ValueError(f"input {self.input_w}x{self.input_h} not divisible by patch {self.patch}")
        if self.embed_dim % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide embed_dim ({self.embed_dim})")
        if self.encoder_depth < 1 or self.decoder_depth < 1:
            raise ValueError("encoder and decoder need at least one layer")
        if self.path_length < 2:
            raise ValueError("path_length must be >= 2 (first fixation is fixed)")
        if self.components < 1:
            raise ValueError("components must be >= 1")
        if self.mode not in (POPULATION, INDIVIDUAL):
            raise ValueError(f"mode must be '{POPULATION}' or '{INDIVIDUAL}'")
        if self.t_default <= 0:
            raise ValueError("t_default must be positive")

    @property
    def n_patches(self) -> int:
        return (self.input_w // self.patch) * (self.input_h // self.patch)

    @staticmethod
    def full_scale(**overrides) -> "ModelConfig":
        base = dict(
            input_w=224,
            input_h=224,
            patch=16,
            embed_dim=768,
            encoder_depth=12,
            decoder_depth=4,
            heads=12,
            path_length=15,
        )
        base.update(overrides)
        return ModelConfig(**base)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Squash maps between pre-squash policy space and fixation space.
# ---------------------------------------------------------------------------


def squash(u: Tensor) -> Tensor:
    """(..., 3) pre-squash values -> (x in [0,1], y in [0,1], t > 0)."""
    return torch.stack([torch.sigmoid(u[..., 0]), torch.sigmoid(u[..., 1]), torch.exp(u[..., 2])], dim=-1)


def unsquash(p: Tensor) -> Tensor:
    """Inverse of :func:`squash`; border coordinates are nudged inside by
    ``UNIT_EPS`` to stay in the invertible domain."""
    xy = torch.clamp(p[..., :2], UNIT_EPS, 1.0 - UNIT_EPS)
    u_xy = torch.log(xy) - torch.log1p(-xy)
    u_t = torch.log(p[..., 2])
    return torch.cat([u_xy, u_t.unsqueeze(-1)], dim=-1)


def squash_log_jacobian(p: Tensor) -> Tensor:
    """log |d squash / du| at the squashed point, summed over the 3 dims."""
    xy = torch.clamp(p[..., :2], UNIT_EPS, 1.0 - UNIT_EPS)
    return torch.log(xy).sum(-1) + torch.log1p(-xy).sum(-1) + torch.log(p[..., 2])


# ---------------------------------------------------------------------------
# Step policy: mixture of diagonal Gaussians over the pre-squash 3-vector.
# ---------------------------------------------------------------------------

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class StepPolicy:
    """Per-step policy parameters (pre-squash space)."""

    weights: Tensor  # (K,), simplex
    means: Tensor  # (K, 3)
    scales: Tensor  # (K, 3), positive

    @property
    def components(self) -> int:
        return int(self.weights.shape[0])

    def log_density(self, u: Tensor) -> Tensor:
        """Mixture log-density of a pre-squash 3-vector; differentiable."""
        z = (u.unsqueeze(0) - self.means) / self.scales
        comp = -0.5 * (z * z).sum(-1) - torch.log(self.scales).sum(-1) - 1.5 * _LOG_2PI
        return torch.logsumexp(torch.log(self.weights) + comp, dim=0)

    def sample(self, generator: torch.Generator) -> Tensor:
        k = int(torch.multinomial(self.weights, 1, generator=generator).item())
        noise = torch.randn(3, generator=generator, dtype=DTYPE)
        return self.means[k] + self.scales[k] * noise

    def greedy(self) -> Tensor:
        k = int(torch.argmax(self.weights).item())
        return self.means[k]


# ---------------------------------------------------------------------------
# Network modules
# ---------------------------------------------------------------------------


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(self.act(self.fc1(x)))


class EncoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, dim * 4)

    def forward(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class VisionEncoder(nn.Module):
    """Patch projection + context token + positional matrix + self-attention."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        patch_dim = 3 * cfg.patch * cfg.patch
        self.proj = nn.Linear(patch_dim, cfg.embed_dim)
        self.cls_token = nn.Parameter(torch.zeros(1, cfg.embed_dim))
        self.pos = nn.Parameter(torch.zeros(cfg.n_patches + 1, cfg.embed_dim))
        self.blocks = nn.ModuleList(EncoderBlock(cfg.embed_dim, cfg.heads) for _ in range(cfg.encoder_depth))
        self.norm = nn.LayerNorm(cfg.embed_dim)

    def patchify(self, image: Tensor) -> Tensor:
        """(3, H, W) -> (n_patches, 3 * patch^2), row-major patch order."""
        p = self.cfg.patch
        c, h, w = image.shape
        patches = image.unfold(1, p, p).unfold(2, p, p)  # (3, nh, nw, p, p)
        return patches.permute(1, 2, 0, 3, 4).reshape(-1, c * p * p)

    def forward(self, image: Tensor) -> Tensor:
        tokens = self.proj(self.patchify(image))
        x = torch.cat([self.cls_token, tokens], dim=0) + self.pos
        x = x.unsqueeze(0)
        for block in self.blocks:
            x = block(x)
        return self.norm(x).squeeze(0)  # (n_patches + 1, d)


class ViewerBlock(nn.Module):
    """Cross-attention layer: image tokens query the viewer embedding."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm_q = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, dim * 4)

    def forward(self, x: Tensor, viewer: Tensor) -> Tensor:
        kv = viewer.unsqueeze(0)
        x = x + self.attn(self.norm_q(x), kv, kv, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class ViewerEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.blocks = nn.ModuleList(ViewerBlock(cfg.embed_dim, cfg.heads) for _ in range(cfg.viewer_depth))

    def forward(self, image_emb: Tensor, viewer: Tensor) -> Tensor:
        x = image_emb.unsqueeze(0)
        for block in self.blocks:
            x = block(x, viewer)
        return x.squeeze(0)


class DecoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.cross_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm3 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, dim * 4)

    def forward(self, x: Tensor, context: Tensor, causal_mask: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.self_attn(h, h, h, attn_mask=causal_mask, need_weights=False)[0]
        x = x + self.cross_attn(self.norm2(x), context, context, need_weights=False)[0]
        return x + self.mlp(self.norm3(x))


class FixationDecoder(nn.Module):
    """Causal decoder over previous fixations, cross-attending to the image
    context; emits step-policy parameters."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.token_embed = nn.Linear(3, cfg.embed_dim)
        self.step_pos = nn.Parameter(torch.zeros(cfg.path_length - 1, cfg.embed_dim))
        self.blocks = nn.ModuleList(DecoderBlock(cfg.embed_dim, cfg.heads) for _ in range(cfg.decoder_depth))
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self.head = nn.Linear(cfg.embed_dim, cfg.components * 7)

    def forward(self, fixations: Tensor, context: Tensor) -> list[StepPolicy]:
        """Policies for steps 2..len(fixations)+1.

        ``fixations`` is (m, 3) with m in [1, path_length - 1]: the already
        available fixations 1..m; output j parameterizes step j + 2.
        """
        m = fixations.shape[0]
        if m < 1 or m > self.cfg.path_length - 1:
            raise ValueError(f"prefix length {m} outside [1, {self.cfg.path_length - 1}]")
        x = (self.token_embed(fixations) + self.step_pos[:m]).unsqueeze(0)
        mask = torch.triu(torch.ones(m, m, dtype=torch.bool), diagonal=1)
        ctx = context.unsqueeze(0)
        for block in self.blocks:
            x = block(x, ctx, mask)
        out = self.head(self.norm(x)).squeeze(0)  # (m, K * 7)
        K = self.cfg.components
        policies = []
        for row in out:
            params = row.view(K, 7)
            policies.append(
                StepPolicy(
                    weights=torch.softmax(params[:, 0], dim=0),
                    means=params[:, 1:4],
                    # the lower bound is a variance floor: without it the
                    # sampled policy collapses onto its own greedy baseline
                    # and policy-gradient exploration dies
                    scales=torch.exp(torch.clamp(params[:, 4:7], -2.0, 5.0)),
                )
            )
        return policies


# ---------------------------------------------------------------------------
# Full policy model
# ---------------------------------------------------------------------------


@dataclass
class RolloutResult:
    scanpath: Scanpath
    log_prob: float
    presquash: np.ndarray  # (T, 3) pre-squash values, row 0 is the fixed start


class PolicyModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = VisionEncoder(cfg)
        self.decoder = FixationDecoder(cfg)
        self.viewer_encoder = ViewerEncoder(cfg) if cfg.mode == INDIVIDUAL else None
        # viewer embeddings are managed outside the module tree: persistence
        # and optimization are explicit, keys are arbitrary strings
        self.viewer_embeddings: dict[str, Tensor] = {}
        self.to(DTYPE)
        self._init_weights()

    def _init_weights(self) -> None:
        for name, p in self.named_parameters():
            if p.ndim >= 2:
                nn.init.trunc_normal_(p, std=0.02)
            elif "bias" in name:
                nn.init.zeros_(p)

    # -- viewer embedding table -------------------------------------------

    def new_viewer_embedding(self, seed: int = 0) -> Tensor:
        gen = torch.Generator().manual_seed(seed)
        tokens = 0.02 * torch.randn(self.cfg.viewer_tokens, self.cfg.embed_dim, generator=gen, dtype=DTYPE)
        return tokens.requires_grad_(True)

    def register_viewer(self, viewer_id: str, tokens: Optional[Tensor] = None, seed: int = 0) -> Tensor:
        if self.cfg.mode != INDIVIDUAL:
            raise ValueError("viewer embeddings require individual mode")
        if tokens is None:
            tokens = self.new_viewer_embedding(seed)
        expected = (self.cfg.viewer_tokens, self.cfg.embed_dim)
        if tuple(tokens.shape) != expected:
            raise ValueError(f"viewer embedding shape {tuple(tokens.shape)} != {expected}")
        self.viewer_embeddings[viewer_id] = tokens
        return tokens

    def viewer_tokens(self, viewer: Optional[str | Tensor]) -> Optional[Tensor]:
        if viewer is None:
            return None
        if isinstance(viewer, Tensor):
            return viewer
        if viewer not in self.viewer_embeddings:
            raise KeyError(f"unknown viewer {viewer!r}")
        return self.viewer_embeddings[viewer]

    # -- forward passes ----------------------------------------------------

    def prepare_image(self, image: StimulusImage) -> Tensor:
        """Resize to the input resolution and scale to [0, 1]."""
        resized = image.resized(self.cfg.input_w, self.cfg.input_h)
        return torch.from_numpy(resized.astype(np.float64) / 255.0).permute(2, 0, 1).contiguous()

    def encode(self, image_tensor: Tensor, viewer: Optional[str | Tensor] = None) -> Tensor:
        """Image embedding, viewer-conditioned when a viewer is given."""
        emb = self.encoder(image_tensor)
        tokens = self.viewer_tokens(viewer)
        if tokens is None:
            return emb  # population-level prediction: viewer encoder bypassed
        if self.viewer_encoder is None:
            raise ValueError("population model cannot condition on a viewer")
        return self.viewer_encoder(emb, tokens)

    def first_fixation(self) -> Fixation:
        return Fixation(0.5, 0.5, self.cfg.t_default)

    def step_policies(self, context: Tensor, fixations: Tensor) -> list[StepPolicy]:
        return self.decoder(fixations, context)

    def path_log_prob(
        self,
        path: Scanpath | np.ndarray,
        image_tensor: Tensor,
        viewer: Optional[str | Tensor] = None,
    ) -> Tensor:
        """Exact log-density of fixations 2..T (step 1 is fixed, not scored)."""
        arr = path.as_array() if isinstance(path, Scanpath) else np.asarray(path, dtype=np.float64)
        if arr.shape[0] != self.cfg.path_length:
            raise ValueError(f"scanpath length {arr.shape[0]} != model path_length {self.cfg.path_length}")
        fix = torch.from_numpy(arr).to(DTYPE)
        context = self.encode(image_tensor, viewer)
        policies = self.step_policies(context, fix[:-1])
        u = unsquash(fix[1:])
        jac = squash_log_jacobian(fix[1:])
        total = torch.zeros((), dtype=DTYPE)
        for i, pol in enumerate(policies):
            total = total + pol.log_density(u[i]) - jac[i]
        return total

    @torch.no_grad()
    def rollout(
        self,
        image: StimulusImage | Tensor,
        viewer: Optional[str | Tensor] = None,
        mode: str = "sample",
        seed: int = 0,
        stimulus_id: Optional[str] = None,
    ) -> RolloutResult:
        """Generate a scanpath; ``sample`` draws from each step policy,
        ``greedy`` takes the dominant component mean."""
        if mode not in ("sample", "greedy"):
            raise ValueError(f"mode must be 'sample' or 'greedy', got {mode}")
        image_tensor = image if isinstance(image, Tensor) else self.prepare_image(image)
        if stimulus_id is None:
            stimulus_id = image.id if isinstance(image, StimulusImage) else "rollout"
        context = self.encode(image_tensor, viewer)
        generator = torch.Generator().manual_seed(seed)

        first = self.first_fixation()
        fix = torch.tensor([[first.x, first.y, first.t]], dtype=DTYPE)
        presquash = [unsquash(fix[0]).numpy()]
        for _ in range(2, self.cfg.path_length + 1):
            policy = self.step_policies(context, fix)[-1]
            u = policy.sample(generator) if mode == "sample" else policy.greedy()
            presquash.append(u.numpy().copy())
            fix = torch.cat([fix, squash(u).unsqueeze(0)], dim=0)

        arr = fix.numpy()
        viewer_id = viewer if isinstance(viewer, str) else None
        scanpath = Scanpath.from_array(stimulus_id, arr, viewer_id)
        log_prob = float(self.path_log_prob(arr, image_tensor, viewer))
        return RolloutResult(scanpath=scanpath, log_prob=log_prob, presquash=np.stack(presquash))

    # -- parameter bookkeeping ----------------------------------------------

    def parameter_groups(self) -> dict[str, list[tuple[str, Tensor]]]:
        """Named parameters bucketed by submodule, plus viewer embeddings."""
        groups: dict[str, list[tuple[str, Tensor]]] = {"encoder": [], "decoder": []}
        if self.viewer_encoder is not None:
            groups["viewer_encoder"] = []
        for name, p in self.named_parameters():
            groups[name.split(".", 1)[0]].append((name, p))
        if self.viewer_embeddings:
            groups["viewer_embeddings"] = [
                (f"viewer_embedding.{vid}", t) for vid, t in sorted(self.viewer_embeddings.items())
            ]
        return groups

    def all_parameters(self, include_viewers: bool = True) -> Iterator[Tensor]:
        yield from self.parameters()
        if include_viewers:
            for _, t in sorted(self.viewer_embeddings.items()):
                yield t
