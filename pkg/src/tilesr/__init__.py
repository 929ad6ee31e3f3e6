"""Tiled multi-path latent diffusion super-resolution.

Splits a large latent into overlapping fixed-size windows, denoises each
window under its own locally extracted tag condition, and fuses the
per-window results by averaging the overlaps at every timestep. Ships a
toy analytic denoiser and a statistics-based tagger so the whole pipeline
is verifiable end to end; real models attach over a bit-exact wire
protocol.
"""

from .backends import DenoiserRequest, RemoteDenoiser, RemoteTagger, ToyDenoiser, denoise_step, toy_epsilon
from .conditioning import (
    MockTagger,
    PromptAssignment,
    TagCondition,
    assign_local_prompts,
    extract_tags,
    unique_tag_count,
)
from .errors import BackendError, GeometryError, ProtocolError, TileSRError
from .fusion import FusionAccumulator
from .grids import CodecSpec, ImageGrid, LatentGrid, decode, encode, load_image, save_image
from .metrics import MetricReport, evaluate_pair, psnr, ssim
from .pipeline import PipelineConfig, RunReport, run, seeded_noise
from .resize import bicubic_resize
from .schedule import DiffusionSchedule, make_schedule
from .tiling import TilePlan, WindowSpec, crop, describe_plan, image_patch_for, plan_tiles

__version__ = "0.1.0"
