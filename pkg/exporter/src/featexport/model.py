"""Vision-language encoder with per-stage feature taps.

The vision tower is a standard pre-LN ViT (patch conv, class token,
positional embedding, residual attention blocks, final layer norm and
projection); the text tower is a causal pre-LN transformer over a
byte-level vocabulary whose end-of-text position is projected into the
shared embedding space.

Weights come from a state-dict checkpoint when one is supplied; otherwise
they are initialized deterministically from the config seed so exports
are reproducible without network access. A randomly initialized encoder
is a geometry-faithful stand-in, not a pretrained model; swap in real
weights via ``ExportConfig.model`` pointing at a ``.pt`` state dict.
"""

from __future__ import annotations

import torch
from torch import nn

BYTE_VOCAB = 256
SOT_TOKEN = 256
EOT_TOKEN = 257
VOCAB_SIZE = 258


class ResidualBlock(nn.Module):
    def __init__(self, width: int, heads: int, causal: bool = False):
        super().__init__()
        self.ln_1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.ln_2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, width * 4),
            nn.GELU(),
            nn.Linear(width * 4, width),
        )
        self.causal = causal

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mask = None
        if self.causal:
            n = x.shape[1]
            mask = torch.full((n, n), float("-inf"), device=x.device).triu(1)
        y = self.ln_1(x)
        y, _ = self.attn(y, y, y, need_weights=False, attn_mask=mask)
        x = x + y
        return x + self.mlp(self.ln_2(x))


class VisionTower(nn.Module):
    def __init__(self, input_size: int, patch_size: int, width: int, layers: int,
                 heads: int, embed_dim: int):
        super().__init__()
        self.grid = input_size // patch_size
        self.conv1 = nn.Conv2d(3, width, kernel_size=patch_size, stride=patch_size,
                               bias=False)
        scale = width**-0.5
        self.class_embedding = nn.Parameter(scale * torch.randn(width))
        self.positional_embedding = nn.Parameter(
            scale * torch.randn(self.grid * self.grid + 1, width)
        )
        self.ln_pre = nn.LayerNorm(width)
        self.blocks = nn.ModuleList(
            [ResidualBlock(width, heads) for _ in range(layers)]
        )
        self.ln_post = nn.LayerNorm(width)
        self.proj = nn.Parameter(scale * torch.randn(width, embed_dim))

    def stage_features(self, pixels: torch.Tensor, boundaries, project: bool):
        """Patch-token grids captured after the given (1-based) sublayers.

        Returns a list of (B, grid, grid, d) tensors, class token dropped.
        With ``project`` the final layer norm and projection are applied to
        every captured stage so the features live in the shared text space.
        """
        x = self.conv1(pixels)  # (B, width, grid, grid)
        x = x.flatten(2).transpose(1, 2)  # (B, grid*grid, width)
        cls = self.class_embedding.expand(x.shape[0], 1, -1)
        x = torch.cat([cls, x], dim=1) + self.positional_embedding
        x = self.ln_pre(x)
        wanted = set(boundaries)
        captured = {}
        for depth, block in enumerate(self.blocks, start=1):
            x = block(x)
            if depth in wanted:
                captured[depth] = x
        stages = []
        for depth in boundaries:
            tokens = captured[depth][:, 1:, :]  # drop the class token
            if project:
                tokens = self.ln_post(tokens) @ self.proj
            b, n, d = tokens.shape
            stages.append(tokens.reshape(b, self.grid, self.grid, d))
        return stages


class TextTower(nn.Module):
    """Byte-level causal transformer; the EOT position is the text feature."""

    def __init__(self, width: int, layers: int, heads: int, context: int,
                 embed_dim: int):
        super().__init__()
        self.context = context
        self.token_embedding = nn.Embedding(VOCAB_SIZE, width)
        self.positional_embedding = nn.Parameter(0.01 * torch.randn(context, width))
        self.blocks = nn.ModuleList(
            [ResidualBlock(width, heads, causal=True) for _ in range(layers)]
        )
        self.ln_final = nn.LayerNorm(width)
        self.text_projection = nn.Parameter(width**-0.5 * torch.randn(width, embed_dim))

    def tokenize(self, text: str) -> tuple[torch.Tensor, int]:
        data = list(text.encode("utf-8"))[: self.context - 2]
        tokens = [SOT_TOKEN] + data + [EOT_TOKEN]
        eot_index = len(tokens) - 1
        tokens = tokens + [0] * (self.context - len(tokens))
        return torch.tensor(tokens, dtype=torch.long), eot_index

    def embed(self, texts: list[str]) -> torch.Tensor:
        tokens = []
        eots = []
        for text in texts:
            ids, eot = self.tokenize(text)
            tokens.append(ids)
            eots.append(eot)
        x = self.token_embedding(torch.stack(tokens)) + self.positional_embedding
        for block in self.blocks:
            x = block(x)
        x = self.ln_final(x)
        picked = x[torch.arange(len(texts)), torch.tensor(eots)]
        return picked @ self.text_projection


class VisionLanguageEncoder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.vision = VisionTower(
            cfg.input_size, cfg.patch_size, cfg.vision_width, cfg.vision_layers,
            cfg.vision_heads, cfg.embed_dim,
        )
        self.text = TextTower(
            cfg.text_width, cfg.text_layers, cfg.text_heads, cfg.context_length,
            cfg.embed_dim,
        )


def build_encoder(cfg) -> VisionLanguageEncoder:
    """Deterministically initialized encoder, optionally loading a state dict.

    ``cfg.model`` ending in ``.pt`` is treated as a checkpoint path; any
    other value names the architecture and the weights are seeded from
    ``(cfg.model, cfg.seed)`` for reproducible random initialization.
    """
    with torch.random.fork_rng():
        torch.manual_seed(cfg.seed ^ (hash_model_id(cfg.model) & 0x7FFFFFFF))
        encoder = VisionLanguageEncoder(cfg)
    if cfg.model.endswith(".pt"):
        state = torch.load(cfg.model, map_location="cpu", weights_only=True)
        encoder.load_state_dict(state)
    encoder.eval()
    return encoder.to(cfg.device)


def hash_model_id(model_id: str) -> int:
    out = 0xCBF29CE484222325
    for byte in model_id.encode("utf-8"):
        out = ((out ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return out
