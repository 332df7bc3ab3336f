"""Vision transformer backbone for patch-token extraction.

Implements the ViT-with-registers family: a class token, a small set of
register tokens without grid positions, and learned position embeddings that
are bicubically resized when the input grid differs from the native one.
Only the spatial patch tokens are returned to callers; the class token is
available separately as a whole-image descriptor.

Pretrained weights can be loaded from a state-dict file. Without one, the
model falls back to a seeded random initialization (truncated normal,
std 0.02), which keeps every downstream contract testable: the exported
features are deterministic, correctly shaped, and grid-aligned, just not
semantically meaningful.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

# ImageNet channel statistics, the standard preprocessing of the backbone
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class ModelSpec:
    embed_dim: int
    depth: int
    num_heads: int
    patch_size: int = 14
    num_registers: int = 4
    mlp_ratio: float = 4.0
    native_grid: int = 37          # 518 / 14, the pretraining resolution


MODEL_SPECS = {
    "vit-l14-reg": ModelSpec(embed_dim=1024, depth=24, num_heads=16),
    "vit-s14-reg": ModelSpec(embed_dim=384, depth=12, num_heads=6),
}


class Block(nn.Module):
    def __init__(self, dim, num_heads, mlp_ratio):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, num_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(),
                                 nn.Linear(hidden, dim))

    def forward(self, x):
        y = self.norm1(x)
        x = x + self.attn(y, y, y, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class VisionTransformer(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        d = spec.embed_dim
        self.patch_embed = nn.Conv2d(3, d, kernel_size=spec.patch_size,
                                     stride=spec.patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, d))
        self.register_tokens = nn.Parameter(
            torch.zeros(1, spec.num_registers, d))
        self.pos_embed = nn.Parameter(
            torch.zeros(1, 1 + spec.native_grid ** 2, d))
        self.blocks = nn.ModuleList(
            Block(d, spec.num_heads, spec.mlp_ratio)
            for _ in range(spec.depth))

    def _resized_pos_embed(self, grid: int) -> torch.Tensor:
        cls_pos = self.pos_embed[:, :1]
        patch_pos = self.pos_embed[:, 1:]
        if grid != self.spec.native_grid:
            g = self.spec.native_grid
            patch_pos = patch_pos.reshape(1, g, g, -1).permute(0, 3, 1, 2)
            patch_pos = F.interpolate(patch_pos, size=(grid, grid),
                                      mode="bicubic", align_corners=False)
            patch_pos = patch_pos.permute(0, 2, 3, 1).reshape(1, grid * grid,
                                                              -1)
        return cls_pos, patch_pos

    def tokens_at_layer(self, image: torch.Tensor, layer: int):
        """Patch tokens and class token after the first `layer` blocks.

        image: (1, 3, H, W) normalized. Returns patch tokens shaped
        (grid, grid, dim) and the class token (dim,).
        """
        if not 1 <= layer <= self.spec.depth:
            raise ValueError(f"layer {layer} outside 1..{self.spec.depth}")
        grid = image.shape[-1] // self.spec.patch_size
        x = self.patch_embed(image).flatten(2).transpose(1, 2)  # (1, g*g, d)
        cls_pos, patch_pos = self._resized_pos_embed(grid)
        x = x + patch_pos
        cls = self.cls_token + cls_pos
        x = torch.cat([cls, self.register_tokens, x], dim=1)
        for block in self.blocks[:layer]:
            x = block(x)
        n_prefix = 1 + self.spec.num_registers
        patches = x[0, n_prefix:].reshape(grid, grid, -1)
        return patches, x[0, 0]


def _seeded_init(model: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for p in model.parameters():
        if p.dim() > 1:
            with torch.no_grad():
                p.copy_(torch.nn.init.trunc_normal_(
                    torch.empty_like(p), std=0.02, generator=gen))
        else:
            nn.init.zeros_(p)
    with torch.no_grad():
        for tok in (model.cls_token, model.register_tokens, model.pos_embed):
            tok.copy_(torch.nn.init.trunc_normal_(
                torch.empty_like(tok), std=0.02, generator=gen))


def build_model(name: str = "vit-l14-reg", weights_path=None,
                seed: int = 0, device: str = "cpu"):
    """Construct the backbone; returns (model, weights_source string)."""
    if name not in MODEL_SPECS:
        raise ValueError(f"unknown model {name!r}; "
                         f"choices: {sorted(MODEL_SPECS)}")
    model = VisionTransformer(MODEL_SPECS[name])
    if weights_path is not None:
        state = torch.load(weights_path, map_location="cpu",
                           weights_only=True)
        model.load_state_dict(state)
        source = str(weights_path)
    else:
        _seeded_init(model, seed)
        source = f"random-init(seed={seed})"
    model.eval()
    return model.to(device), source
