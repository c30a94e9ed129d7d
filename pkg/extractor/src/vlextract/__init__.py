"""Export embedding bundles from an image folder with a frozen encoder."""

from .encoder import encoder_names, get_encoder
from .errors import ExtractorError
from .pipeline import ExtractorConfig, extract_text_bases, extract_vision, run_extraction
from .words import fetch_reference_words, parse_word_list

__all__ = [
    "ExtractorConfig",
    "ExtractorError",
    "encoder_names",
    "extract_text_bases",
    "extract_vision",
    "fetch_reference_words",
    "get_encoder",
    "parse_word_list",
    "run_extraction",
]
