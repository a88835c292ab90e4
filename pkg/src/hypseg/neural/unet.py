"""3D U-Net with a coordinate skip connection into the last decoder block.

Blocks are GroupNorm -> 3x3x3 conv -> ReLU. Encoder levels are joined by
2x max pooling; decoder levels upsample by nearest neighbour followed by a
block, then concatenate the encoder skip. The raw coordinate input channels
(1..3) are concatenated after the GroupNorm of the final block, so they reach
its convolution unnormalized. A 1x1x1 conv produces the outputs.

Grids that are not divisible by 2^(levels-1) are zero-padded at the high
end of each axis and the output is cropped back.
"""
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import ConfigError, ShapeError
from .layers import Conv1, Conv3d, GroupNorm, MaxPool2, ReLU, Upsample2, default_groups

COORD_CHANNELS = slice(1, 4)


@dataclass(frozen=True)
class UNetConfig:
    levels: int = 5
    features: tuple = (24, 48, 96, 192, 384)
    blocks: int = 2
    in_channels: int = 4
    out_channels: int = 3
    group_cap: int = 8
    coord_skip: bool = True

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(int(f) for f in self.features))
        if self.levels < 2:
            raise ConfigError("U-Net needs at least 2 levels")
        if len(self.features) != self.levels:
            raise ConfigError(f"{len(self.features)} feature widths for {self.levels} levels")
        if self.blocks < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("blocks and channel counts must be positive")
        if self.coord_skip and self.in_channels < 4:
            raise ConfigError("coordinate skip needs image + 3 coordinate input channels")

    @classmethod
    def hyp(cls, **kw):
        """Whole-structure model: 2 segmentation logits + 1 distance channel."""
        return cls(out_channels=3, **kw)

    @classmethod
    def sub(cls, **kw):
        """Subregion model: background, 10 subregions, 2 fornices."""
        return cls(out_channels=13, **kw)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown unet keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["features"] = list(self.features)
        return d

    @property
    def min_grid(self):
        return 2 ** (self.levels - 1)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


class Block:
    """GroupNorm -> [concat extra channels] -> conv -> ReLU."""

    def __init__(self, net, name, cin, cout, extra=0):
        self.gn = GroupNorm(net.new_params(f"{name}.gn", gamma=np.ones(cin), beta=np.zeros(cin)),
                            default_groups(cin, net.cfg.group_cap))
        fan_in = (cin + extra) * 27
        w = net.rng.standard_normal((cout, cin + extra, 3, 3, 3)) * np.sqrt(2.0 / fan_in)
        self.conv = Conv3d(net.new_params(f"{name}.conv", w=w, b=np.zeros(cout)))
        self.relu = ReLU()
        self.name = name
        self.cin = cin
        self.extra = extra

    def forward(self, x, extra=None):
        h = self.gn.forward(x)
        if self.extra:
            h = np.concatenate([h, extra], axis=1)
        return self.relu.forward(self.conv.forward(h))

    def backward(self, gy):
        g = self.conv.backward(self.relu.backward(gy))
        g_extra = None
        if self.extra:
            g, g_extra = g[:, : self.cin], g[:, self.cin:]
        return self.gn.backward(g), g_extra

    def layers(self):
        return [self.gn, self.conv]


class UNet:
    """Parameter store + forward/backward; doubles as the trainable Model."""

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.params = {}
        self._owner = {}
        f = cfg.features
        self.enc = []
        for lvl in range(cfg.levels):
            cin = cfg.in_channels if lvl == 0 else f[lvl - 1]
            blocks = [Block(self, f"enc{lvl}.b{b}", cin if b == 0 else f[lvl], f[lvl]) for b in range(cfg.blocks)]
            self.enc.append(blocks)
        self.pools = [MaxPool2() for _ in range(cfg.levels - 1)]
        self.ups = []
        self.up_blocks = []
        self.dec = []
        for lvl in range(cfg.levels - 2, -1, -1):
            self.ups.append(Upsample2())
            self.up_blocks.append(Block(self, f"dec{lvl}.up", f[lvl + 1], f[lvl]))
            blocks = []
            for b in range(cfg.blocks):
                cin = 2 * f[lvl] if b == 0 else f[lvl]
                last = lvl == 0 and b == cfg.blocks - 1
                extra = 3 if (last and cfg.coord_skip) else 0
                blocks.append(Block(self, f"dec{lvl}.b{b}", cin, f[lvl], extra))
            self.dec.append(blocks)
        w = self.rng.standard_normal((cfg.out_channels, f[0], 1, 1, 1)) * np.sqrt(2.0 / f[0])
        self.head = Conv1(self.new_params("head", w=w, b=np.zeros(cfg.out_channels)))
        self.adam = AdamState()
        del self.rng
        self._by_prefix = {"head": self.head}
        for blocks in self.enc + [[u] for u in self.up_blocks] + self.dec:
            for b in blocks:
                self._by_prefix[f"{b.name}.gn"] = b.gn
                self._by_prefix[f"{b.name}.conv"] = b.conv

    def new_params(self, prefix, **arrays):
        view = {}
        for k, v in arrays.items():
            key = f"{prefix}.{k}"
            self.params[key] = np.asarray(v, dtype=np.float64)
            view[k] = self.params[key]
        self._owner[prefix] = view
        return view

    # ------------------------------------------------------------ parameters

    def param_count(self):
        return int(sum(p.size for p in self.params.values()))

    def set_params(self, values):
        """Copy ``values`` into the parameter arrays in place."""
        for k, v in values.items():
            if self.params[k].shape != np.shape(v):
                raise ShapeError(f"{k}: expected {self.params[k].shape}, got {np.shape(v)}")
            self.params[k][...] = v

    def final_block(self):
        return self.dec[-1][-1]

    def coord_skip_weights(self):
        """View of the final conv's weights that read the coordinate skip."""
        blk = self.final_block()
        if not blk.extra:
            raise ConfigError("model was built without the coordinate skip")
        return blk.conv.params["w"][:, blk.cin:]

    def all_layers(self):
        out = []
        for blocks in self.enc:
            for b in blocks:
                out += b.layers()
        for up, blocks in zip(self.up_blocks, self.dec):
            out += up.layers()
            for b in blocks:
                out += b.layers()
        return out + [self.head]

    # --------------------------------------------------------------- forward

    def check_input(self, x):
        if x.ndim != 5:
            raise ShapeError(f"U-Net input must be (N, C, D, H, W), got {x.shape}")
        if x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"model expects {self.cfg.in_channels} input channels, got {x.shape[1]}")

    def pad_widths(self, spatial):
        """Zero padding (at the high end) that makes every axis divisible by the pooling factor."""
        m = self.cfg.min_grid
        return [(0, (-int(s)) % m) for s in spatial]

    def forward(self, x, skip_coords=None):
        """Logits (N, out_channels, D, H, W).

        ``skip_coords`` replaces the tensor fed through the coordinate skip
        (default: input channels 1..3); used to isolate that path.
        """
        x = np.asarray(x, dtype=np.float64)
        self.check_input(x)
        coords = x[:, COORD_CHANNELS] if skip_coords is None else np.asarray(skip_coords, dtype=np.float64)
        pads = self.pad_widths(x.shape[2:])
        self._in_shape = x.shape
        if any(p for _, p in pads):
            x = np.pad(x, [(0, 0), (0, 0)] + pads)
            coords = np.pad(coords, [(0, 0), (0, 0)] + pads)
        skips = []
        h = x
        for lvl, blocks in enumerate(self.enc):
            for b in blocks:
                h = b.forward(h)
            if lvl < self.cfg.levels - 1:
                skips.append(h)
                h = self.pools[lvl].forward(h)
        self._skip_channels = []
        for up, up_block, blocks in zip(self.ups, self.up_blocks, self.dec):
            skip = skips.pop()
            h = up_block.forward(up.forward(h))
            self._skip_channels.append(skip.shape[1])
            h = np.concatenate([skip, h], axis=1)
            for b in blocks:
                h = b.forward(h, coords if b.extra else None)
        out = self.head.forward(h)
        D, H, W = self._in_shape[2:]
        return out[:, :, :D, :H, :W]

    def backward(self, gout):
        """Back-propagate d(loss)/d(logits); returns (param_grads, input_grad)."""
        pads = self.pad_widths(self._in_shape[2:])
        if any(p for _, p in pads):
            gout = np.pad(gout, [(0, 0), (0, 0)] + pads)
        g = self.head.backward(gout)
        g_coords = None
        skip_grads = []
        for up, up_block, blocks, cs in zip(reversed(self.ups), reversed(self.up_blocks),
                                            reversed(self.dec), reversed(self._skip_channels)):
            for b in reversed(blocks):
                g, ge = b.backward(g)
                if ge is not None:
                    g_coords = ge if g_coords is None else g_coords + ge
            skip_grads.append(g[:, :cs])
            g = up.backward(up_block.backward(g[:, cs:])[0])
        for lvl in range(self.cfg.levels - 1, -1, -1):
            if lvl < self.cfg.levels - 1:
                g = self.pools[lvl].backward(g) + skip_grads.pop()
            for b in reversed(self.enc[lvl]):
                g, _ = b.backward(g)
        if g_coords is not None:
            g = g.copy()
            g[:, COORD_CHANNELS] += g_coords
        D, H, W = self._in_shape[2:]
        g = g[:, :, :D, :H, :W]
        grads = {}
        for prefix, view in self._owner.items():
            layer = self._by_prefix[prefix]
            for k in view:
                grads[f"{prefix}.{k}"] = layer.grads[k]
        return grads, g

    def predict(self, x):
        """Forward pass for inference; drops the cached backward state.

        Outputs depend only on the parameters, so concurrent calls from
        several threads are safe as long as nobody trains the model.
        """
        out = self.forward(x)
        for layer in self.all_layers():
            layer._ctx = None
        for blocks in self.enc + [[u] for u in self.up_blocks] + self.dec:
            for b in blocks:
                b.relu._ctx = None
        for p in self.pools:
            p._ctx = None
        for u in self.ups:
            u._ctx = None
        return out

    def config_json(self):
        return json.dumps(self.cfg.to_dict(), sort_keys=True)


Model = UNet


def build_unet(cfg, seed=0):
    return UNet(cfg, seed)
