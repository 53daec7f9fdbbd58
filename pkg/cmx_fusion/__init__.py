"""Cross-modal feature rectification and fusion for two-stream segmentation."""

import matplotlib as mpl

from cmx_fusion.config import AblationConfig, NetworkConfig, RunConfig, load_config
from cmx_fusion.fusion import FfmParams, cross_exchange, ffm
from cmx_fusion.network import NetworkParams, forward, predict
from cmx_fusion.rectify import RectifyParams, cm_frm
from cmx_fusion.register import register
from cmx_fusion.training import cross_entropy, metrics, train_step

mpl.use("Agg")

__version__ = "0.1.0"

__all__ = [
    "AblationConfig",
    "FfmParams",
    "NetworkConfig",
    "NetworkParams",
    "RectifyParams",
    "RunConfig",
    "cm_frm",
    "cross_entropy",
    "cross_exchange",
    "ffm",
    "forward",
    "load_config",
    "metrics",
    "predict",
    "register",
    "train_step",
]
