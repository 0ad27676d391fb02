from .blocks import RCAB, ChannelAttention, Corrector, CorrectorConfig, ResBlock, ResidualGroup
from .fab import FAB
from .model import MODES, CLRExtractor, LceModel, SrConfig, count_multadds, count_params
from .module import Conv2d, LayerNorm, Linear, Module
from .swin import FSAB, FSAG, WindowAttention

__all__ = [
    "RCAB", "ChannelAttention", "Corrector", "CorrectorConfig", "ResBlock", "ResidualGroup", "FAB", "MODES",
    "CLRExtractor", "LceModel", "SrConfig", "count_multadds", "count_params", "Conv2d", "LayerNorm", "Linear",
    "Module", "FSAB", "FSAG", "WindowAttention",
]
