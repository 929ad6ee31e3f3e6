"""Wire-protocol server exposing pretrained model components to the
tiled-diffusion engine: a latent denoiser, a tag extractor, and an
optional perceptual scorer. Echo mode serves as the protocol-conformance
double when no models are loaded.
"""

from .adapters import DenoiserAdapter, MetricAdapter, TaggerAdapter, load_factory
from .server import BridgeConfig, BridgeServer, serve

__version__ = "0.1.0"
