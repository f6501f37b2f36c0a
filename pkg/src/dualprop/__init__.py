"""Flow-guided video inpainting with dual-domain propagation and a
mask-guided sparse transformer, in NumPy/SciPy."""
from .config import ConfigError, PipelineConfig, load_config, parse_config
from .pipeline import run_pipeline

__all__ = ["ConfigError", "PipelineConfig", "load_config", "parse_config", "run_pipeline"]
__version__ = "0.1.0"
