"""Bridge from sample plans and raw videos to STVE embedding stores."""

__version__ = "0.1.0"

from .decode import DecodeFailure, frames_at
from .encoders import EncoderLoadFailure, FrameTextEncoder, TinyEncoder, load_encoder
from .export import ExportJob, ExportReport, export

__all__ = [
    "__version__",
    "DecodeFailure",
    "frames_at",
    "EncoderLoadFailure",
    "FrameTextEncoder",
    "TinyEncoder",
    "load_encoder",
    "ExportJob",
    "ExportReport",
    "export",
]
