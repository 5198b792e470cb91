"""Encoder/decoder depth network with channel-attention feature fusion.

A 4-stage residual encoder produces features at strides /4../32. A
global-context branch pools the deepest features into a per-channel
scene descriptor. The decoder walks back up scale by scale: each
encoder feature passes through a feature-transfer block (FTB), is
fused into the running decoder state through a channel-gated attention
block (AFA), passes another FTB and is bilinearly upsampled. The head
predicts either per-pixel class scores over depth bins or a single
log10-depth channel, at stride /4.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

HEADS = ("classification", "regression")


@dataclass(frozen=True)
class AttentionRecord:
    """Gate vector of one AFA block for one input, entries strictly in (0,1)."""

    block_index: int     # 0 = coarsest fusion block (/32) .. 3 = finest (/4)
    input_id: str
    gate: tuple

    def __post_init__(self):
        g = np.asarray(self.gate, dtype=np.float64)
        if g.ndim != 1 or g.size == 0:
            raise ValueError("gate must be a non-empty vector")
        if np.any(g <= 0) or np.any(g >= 1):
            raise ValueError("gate activations must lie strictly in (0, 1)")
        object.__setattr__(self, "gate", tuple(float(v) for v in g))


@dataclass(frozen=True)
class ModelConfig:
    stage_widths: tuple = (32, 64, 128, 256)
    fusion_width: int | tuple = 64
    num_classes: int = 151
    attention_enabled: bool = True
    head: str = "classification"
    dropout_rate: float = 0.5
    blocks_per_stage: int = 2

    def __post_init__(self):
        if len(self.stage_widths) != 4 or any(w < 1 for w in self.stage_widths):
            raise ValueError("stage_widths must be 4 positive integers")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        if self.head == "classification" and self.num_classes < 2:
            raise ValueError("classification head needs num_classes >= 2")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.blocks_per_stage < 1:
            raise ValueError("blocks_per_stage must be >= 1")
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        if isinstance(self.fusion_width, int):
            object.__setattr__(self, "fusion_width", (self.fusion_width,) * 4)
        else:
            fw = tuple(int(w) for w in self.fusion_width)
            if len(fw) != 4 or any(w < 1 for w in fw):
                raise ValueError("fusion_width must be an int or 4 positive integers")
            object.__setattr__(self, "fusion_width", fw)

    @property
    def fusion_widths(self) -> tuple:
        """Decoder widths per scale, index 0 = finest (/4) .. 3 = coarsest (/32)."""
        return self.fusion_width

    @property
    def head_channels(self) -> int:
        return self.num_classes if self.head == "classification" else 1

    def to_json(self) -> str:
        return json.dumps({
            "stage_widths": list(self.stage_widths),
            "fusion_width": list(self.fusion_width),
            "num_classes": self.num_classes,
            "attention_enabled": self.attention_enabled,
            "head": self.head,
            "dropout_rate": self.dropout_rate,
            "blocks_per_stage": self.blocks_per_stage,
        })

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        obj = json.loads(text)
        obj["stage_widths"] = tuple(obj["stage_widths"])
        fw = obj["fusion_width"]
        obj["fusion_width"] = tuple(fw) if isinstance(fw, list) else fw
        return cls(**obj)


class ResidualBlock(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False),
                                      nn.BatchNorm2d(cout))
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        y = F.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return F.relu(y + self.skip(x))


class Encoder(nn.Module):
    """Residual encoder emitting features at strides /4, /8, /16, /32."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.stage_widths
        stem_w = max(w[0] // 2, 8)
        self.stem = nn.Sequential(nn.Conv2d(3, stem_w, 3, 2, 1, bias=False),
                                  nn.BatchNorm2d(stem_w), nn.ReLU(inplace=True))
        cins = (stem_w, w[0], w[1], w[2])
        self.stages = nn.ModuleList()
        for k in range(4):
            blocks = [ResidualBlock(cins[k], w[k], stride=2)]
            blocks += [ResidualBlock(w[k], w[k]) for _ in range(cfg.blocks_per_stage - 1)]
            self.stages.append(nn.Sequential(*blocks))

    def forward(self, x):
        if x.shape[-2] % 32 or x.shape[-1] % 32:
            raise ValueError(f"input spatial size {tuple(x.shape[-2:])} not divisible by 32")
        feats = []
        y = self.stem(x)
        for stage in self.stages:
            y = stage(y)
            feats.append(y)
        return feats


class GlobalContext(nn.Module):
    """1x1 reduction, global average pooling, broadcast back over space."""

    def __init__(self, cin, cout):
        super().__init__()
        self.reduce = nn.Conv2d(cin, cout, 1)

    def forward(self, x):
        y = self.reduce(x)
        pooled = y.mean(dim=(2, 3), keepdim=True)
        return pooled.expand(-1, -1, x.shape[2], x.shape[3])


class FeatureTransfer(nn.Module):
    """FTB: 1x1 channel unification followed by one residual unit."""

    def __init__(self, cin, cout):
        super().__init__()
        self.proj = nn.Conv2d(cin, cout, 1)
        self.res1 = nn.Conv2d(cout, cout, 3, 1, 1)
        self.res2 = nn.Conv2d(cout, cout, 3, 1, 1)

    def forward(self, x):
        y = self.proj(x)
        return y + self.res2(F.relu(self.res1(y)))


class AttentionFusion(nn.Module):
    """AFA: channel gate from pooled concat features, applied to the low road.

    fused = high + gate * low, with gate in (0,1)^C from a two-layer
    squeeze network over the concatenated global averages.
    """

    def __init__(self, channels):
        super().__init__()
        hidden = max(channels // 4, 1)
        self.squeeze = nn.Conv2d(2 * channels, hidden, 1)
        self.excite = nn.Conv2d(hidden, channels, 1)

    def gate(self, high, low):
        pooled = torch.cat([high, low], dim=1).mean(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.excite(F.relu(self.squeeze(pooled))))

    def forward(self, high, low):
        if high.shape != low.shape:
            raise ValueError(f"AFA inputs must match: {tuple(high.shape)} vs {tuple(low.shape)}")
        a = self.gate(high, low)
        return high + a * low, a[:, :, 0, 0]


class Decoder(nn.Module):
    """Scale-by-scale fusion from /32 back to /4."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attention_enabled = cfg.attention_enabled
        sw, fw = cfg.stage_widths, cfg.fusion_widths
        # index k = 3..0 over scales /32../4
        self.transfer = nn.ModuleList([FeatureTransfer(sw[k], fw[k]) for k in range(4)])
        self.fuse = nn.ModuleList([AttentionFusion(fw[k]) for k in range(4)])
        self.post = nn.ModuleList([FeatureTransfer(fw[k], fw[max(k - 1, 0)]) for k in range(4)])

    def forward(self, feats, g):
        state = g
        gates = []
        for k in (3, 2, 1, 0):
            low = self.transfer[k](feats[k])
            if self.attention_enabled:
                state, gate = self.fuse[k](state, low)
                gates.append(gate)
            else:
                if state.shape != low.shape:
                    raise ValueError("decoder state and transferred feature shapes differ")
                state = state + low
            state = self.post[k](state)
            if k > 0:
                state = F.interpolate(state, scale_factor=2, mode="bilinear",
                                      align_corners=False)
        return state, gates


class PredictionHead(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.drop = nn.Dropout(cfg.dropout_rate)
        self.conv = nn.Conv2d(cfg.fusion_widths[0], cfg.head_channels, 3, 1, 1)

    def forward(self, x):
        return self.conv(self.drop(x))


class DepthNet(nn.Module):
    """Full network; forward returns (raw head output, attention gates).

    The head output is class logits at stride /4 for the classification
    head, or a log10-depth map at stride /4 for the regression head.
    Gates are one (batch, channels) tensor per AFA block ordered from
    the coarsest scale to the finest; the list is empty when attention
    is bypassed.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.context = GlobalContext(cfg.stage_widths[3], cfg.fusion_widths[3])
        self.decoder = Decoder(cfg)
        self.head = PredictionHead(cfg)
        self.apply(init_parameters)

    def forward(self, x):
        feats = self.encoder(x)
        g = self.context(feats[3])
        dec, gates = self.decoder(feats, g)
        return self.head(dec), gates

    def predict_scores(self, x):
        """Per-pixel class distribution (classification) or log10-depth map.

        The softmax is taken in float64 so the per-pixel sums meet the
        score-volume normalization tolerance (float32 sums over 151
        classes can drift past 1e-6).
        """
        out, gates = self.forward(x)
        if self.cfg.head == "classification":
            out = torch.softmax(out.double(), dim=1)
        return out, gates


def init_parameters(module) -> None:
    if isinstance(module, nn.Conv2d):
        nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)
    elif isinstance(module, ResidualBlock):
        # start the block as its skip path (zero last-BN gamma): activation
        # variance stays bounded even before running stats are calibrated
        nn.init.zeros_(module.bn2.weight)
    elif isinstance(module, FeatureTransfer):
        # projection has no ReLU after it, so use linear gain; zero the last
        # residual conv so each FTB starts as its projection -- both keep
        # decoder activation variance bounded (no saturated gates at init)
        nn.init.kaiming_normal_(module.proj.weight, mode="fan_in", nonlinearity="linear")
        nn.init.zeros_(module.res2.weight)
    elif isinstance(module, (GlobalContext, AttentionFusion)):
        conv = module.reduce if isinstance(module, GlobalContext) else module.excite
        nn.init.kaiming_normal_(conv.weight, mode="fan_in", nonlinearity="linear")
    elif isinstance(module, PredictionHead):
        # near-neutral head at init: close-to-uniform class scores, and
        # regression outputs near zero (the l2 loss otherwise starts from
        # arbitrarily scaled predictions and SGD with momentum blows up)
        nn.init.kaiming_normal_(module.conv.weight, mode="fan_in", nonlinearity="linear")
        with torch.no_grad():
            module.conv.weight.mul_(0.1)


def build_model(cfg: ModelConfig, seed: int | None = None) -> DepthNet:
    if seed is not None:
        torch.manual_seed(seed)
    return DepthNet(cfg)


def count_parameters(cfg: ModelConfig) -> int:
    return sum(p.numel() for p in DepthNet(cfg).parameters())


def model_forward(net: DepthNet, image, mode: str = "eval"):
    """Run the network on a (B, 3, H, W) image batch.

    Returns (scores-or-log-depth, gates): softmax class probabilities
    for the classification head, log10-depth for regression. Eval mode
    disables dropout and batch-norm updates, so it is deterministic.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    was_training = net.training
    net.train(mode == "train")
    try:
        if mode == "eval":
            with torch.no_grad():
                return net.predict_scores(_as_tensor(image, net))
        return net.predict_scores(_as_tensor(image, net))
    finally:
        net.train(was_training)


def _as_tensor(image, net):
    if isinstance(image, torch.Tensor):
        return image
    p = next(net.parameters())
    return torch.as_tensor(np.ascontiguousarray(image), dtype=p.dtype, device=p.device)


# ---------------------------------------------------------------------------
# Checkpoints: npz container of shape-tagged little-endian float32 arrays
# plus the model-config JSON and a free-form extra record.


def save_checkpoint(path, net: DepthNet, extra: dict | None = None) -> None:
    arrays = {f"param/{k}": v.detach().cpu().numpy().astype("<f4")
              for k, v in net.state_dict().items()}
    arrays["meta/config"] = np.frombuffer(net.cfg.to_json().encode(), dtype=np.uint8)
    arrays["meta/extra"] = np.frombuffer(json.dumps(extra or {}).encode(), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path) -> tuple[DepthNet, dict]:
    with np.load(path) as z:
        cfg = ModelConfig.from_json(bytes(z["meta/config"]).decode())
        extra = json.loads(bytes(z["meta/extra"]).decode())
        params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    net = DepthNet(cfg)
    reference = net.state_dict()
    if set(params) != set(reference):
        missing = set(reference) - set(params)
        surplus = set(params) - set(reference)
        raise ValueError(f"checkpoint/config parameter mismatch: missing {sorted(missing)}, "
                         f"unexpected {sorted(surplus)}")
    state = {}
    for name, ref in reference.items():
        arr = params[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise ValueError(f"checkpoint parameter {name} has shape {arr.shape}, "
                             f"config requires {tuple(ref.shape)}")
        state[name] = torch.as_tensor(arr).to(ref.dtype)
    net.load_state_dict(state)
    net.eval()
    return net, extra
