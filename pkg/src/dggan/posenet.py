"""Hand pose estimation module.

A multi-stage convolutional pose machine predicts per-joint heatmaps, a
regression head turns the final heatmaps into root-relative joint depths,
and a transposed-convolution decoder (the depth regularizer) renders those
depths back into a relative depth map that is compared to a target map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ShapeError


def _conv_stack(in_ch, width, out_ch, layers, kernel, final_relu):
    mods, prev = [], in_ch
    for i in range(layers):
        last = i == layers - 1
        out = out_ch if last else width
        mods.append(nn.Conv2d(prev, out, kernel, padding=kernel // 2))
        if not last or final_relu:
            mods.append(nn.ReLU())
        prev = out
    return nn.Sequential(*mods)


class CPM(nn.Module):
    """Convolutional pose machine.

    Shared image features at ``1/stride`` resolution feed every stage; stages
    after the first also see the previous stage's heatmaps. Returns
    ``B x S x K x h x w``.
    """

    def __init__(self, num_joints=21, in_size=64, stride=8, feature_channels=(16, 32, 64),
                 stage_channels=32, stage_kernel=3, num_stages=6, layers_per_stage=7):
        super().__init__()
        n_down = int(round(math.log2(stride)))
        if 2 ** n_down != stride or n_down < 1:
            raise ValueError(f"heatmap stride must be a power of two >= 2, got {stride}")
        if len(feature_channels) != n_down:
            raise ValueError(f"need {n_down} feature blocks for stride {stride}, got {len(feature_channels)}")
        self.num_joints = num_joints
        self.in_size = in_size
        self.stride = stride

        mods, prev = [], 3
        for c in feature_channels:
            mods += [nn.Conv2d(prev, c, 3, padding=1), nn.ReLU(),
                     nn.Conv2d(c, c, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2)]
            prev = c
        self.features = nn.Sequential(*mods)
        self.stages = nn.ModuleList(
            _conv_stack(prev if s == 0 else prev + num_joints, stage_channels, num_joints,
                        layers_per_stage, stage_kernel, final_relu=False)
            for s in range(num_stages)
        )

    @property
    def heatmap_size(self):
        return self.in_size // self.stride

    def forward(self, rgb):
        if rgb.dim() != 4 or rgb.shape[1] != 3 or tuple(rgb.shape[2:]) != (self.in_size, self.in_size):
            raise ShapeError(f"CPM expects B x 3 x {self.in_size} x {self.in_size}, got {tuple(rgb.shape)}")
        feats = self.features(rgb)
        out = [self.stages[0](feats)]
        for stage in self.stages[1:]:
            out.append(stage(torch.cat([feats, out[-1]], dim=1)))
        return torch.stack(out, dim=1)


class RegressionHead(nn.Module):
    """One CPM-style conv stage over the final heatmaps, pooled, then three FC layers."""

    def __init__(self, num_joints=21, channels=32, kernel=3, layers=7, fc=(512, 256)):
        super().__init__()
        self.num_joints = num_joints
        self.convs = _conv_stack(num_joints, channels, channels, layers, kernel, final_relu=True)
        self.pool = nn.AdaptiveAvgPool2d(1)
        dims = [channels] + list(fc)
        mods = []
        for a, b in zip(dims[:-1], dims[1:]):
            mods += [nn.Linear(a, b), nn.ReLU()]
        mods.append(nn.Linear(dims[-1], num_joints))
        self.mlp = nn.Sequential(*mods)

    @property
    def final(self) -> nn.Linear:
        return self.mlp[-1]

    def forward(self, heatmaps):
        if heatmaps.dim() != 4 or heatmaps.shape[1] != self.num_joints:
            raise ShapeError(f"regression head expects B x {self.num_joints} x h x w, got {tuple(heatmaps.shape)}")
        return self.mlp(self.pool(self.convs(heatmaps)).flatten(1))


class DepthRegularizer(nn.Module):
    """Decode ``B x K`` relative depths into a ``B x 1 x n x n`` map in [0, 1].

    Exactly six transposed convolutions. The first ``log2(n)`` double the
    resolution from 1x1; any remaining ones keep it.
    """

    NUM_LAYERS = 6

    def __init__(self, num_joints=21, channels=(128, 64, 32, 16, 8), kernel=4, output_size=64):
        super().__init__()
        n_up = int(round(math.log2(output_size)))
        if 2 ** n_up != output_size or not 1 <= n_up <= self.NUM_LAYERS:
            raise ValueError(f"output_size must be a power of two in [2, 64], got {output_size}")
        if len(channels) != self.NUM_LAYERS - 1:
            raise ValueError("depth regularizer needs 5 hidden channel widths")
        self.num_joints = num_joints
        self.output_size = output_size
        widths = [num_joints] + list(channels) + [1]
        mods = []
        for i in range(self.NUM_LAYERS):
            if i < n_up:
                layer = nn.ConvTranspose2d(widths[i], widths[i + 1], kernel, stride=2, padding=(kernel - 2) // 2)
            else:
                layer = nn.ConvTranspose2d(widths[i], widths[i + 1], 3, stride=1, padding=1)
            mods.append(layer)
            if i < self.NUM_LAYERS - 1:
                mods.append(nn.ReLU())
        self.layers = nn.Sequential(*mods)

    @property
    def transposed_layers(self):
        return [m for m in self.layers if isinstance(m, nn.ConvTranspose2d)]

    def forward(self, z):
        if z.dim() != 2 or z.shape[1] != self.num_joints:
            raise ShapeError(f"depth regularizer expects B x {self.num_joints}, got {tuple(z.shape)}")
        return torch.sigmoid(self.layers(z[:, :, None, None]))


class PoseNet(nn.Module):
    def __init__(self, cpm: CPM, regressor: RegressionHead, regularizer: DepthRegularizer):
        super().__init__()
        self.cpm = cpm
        self.regressor = regressor
        self.regularizer = regularizer

    def forward(self, rgb):
        heatmaps = self.cpm(rgb)
        z = self.regressor(heatmaps[:, -1])
        return heatmaps, z, self.regularizer(z)


def build_posenet(model_cfg) -> PoseNet:
    m = model_cfg
    cpm = CPM(m.num_joints, m.input_size, m.heatmap_stride, m.cpm.feature_channels,
              m.cpm.stage_channels, m.cpm.stage_kernel, m.cpm.num_stages, m.cpm.layers_per_stage)
    reg = RegressionHead(m.num_joints, m.regressor.channels, m.regressor.kernel,
                         m.regressor.layers, m.regressor.fc)
    dr = DepthRegularizer(m.num_joints, m.regularizer.channels, m.regularizer.kernel,
                          m.regularizer.output_size)
    return PoseNet(cpm, reg, dr)


@dataclass(frozen=True)
class LossWeights:
    lambda_z: float = 1.0
    lambda_2d: float = 1.0
    lambda_dep: float = 0.1
    lambda_t: float = 1.0
    lambda_g: float = 0.01

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")
        if self.lambda_t == 0 and self.lambda_g == 0:
            raise ValueError("lambda_t and lambda_g cannot both be zero")

    @classmethod
    def from_config(cls, loss_cfg):
        return cls(loss_cfg.lambda_z, loss_cfg.lambda_2d, loss_cfg.lambda_dep,
                   loss_cfg.lambda_t, loss_cfg.lambda_g)


def loss_2d(pred, target):
    """Intermediate-supervision heatmap loss.

    ``pred`` is ``B x S x K x h x w``, ``target`` is ``B x K x h x w``. Squared
    Frobenius residuals are summed over pixels, averaged over stages and
    joints, then over the batch.
    """
    if pred.dim() != 5 or tuple(pred.shape[:1] + pred.shape[2:]) != tuple(target.shape):
        raise ShapeError(f"heatmap shapes disagree: pred {tuple(pred.shape)}, target {tuple(target.shape)}")
    per_map = ((pred - target[:, None]) ** 2).sum(dim=(-2, -1))
    return per_map.mean(dim=(1, 2)).mean()


def smooth_l1(d, threshold=0.5, continuous=False):
    """Piecewise depth penalty: ``d**2 / 2`` for ``|d| <= threshold``, else ``|d|``.

    As written this jumps at the threshold (0.125 -> 0.5). ``continuous=True``
    subtracts the jump from the linear branch.
    """
    a = d.abs()
    linear = a - (threshold - 0.5 * threshold**2) if continuous else a
    return torch.where(a <= threshold, 0.5 * d**2, linear)


def loss_z(z, z_star, continuous=False):
    if z.shape != z_star.shape:
        raise ShapeError(f"relative depth shapes disagree: {tuple(z.shape)} vs {tuple(z_star.shape)}")
    return smooth_l1(z - z_star, continuous=continuous).mean(dim=-1).mean()


def loss_dep(d, d_star):
    """Mean absolute difference between predicted and target depth maps."""
    if d.shape != d_star.shape:
        raise ShapeError(f"depth map shapes disagree: {tuple(d.shape)} vs {tuple(d_star.shape)}")
    return (d - d_star).abs().mean()


def task_loss(l_z, l_2d, l_dep, w: LossWeights):
    return w.lambda_z * l_z + w.lambda_2d * l_2d + w.lambda_dep * l_dep
