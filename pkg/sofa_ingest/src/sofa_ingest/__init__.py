"""Convert SOFA (AES69) HRTF archives into the flat BSMD container."""

__version__ = "0.1.0"

from .convert import (  # noqa: F401
    ConversionError,
    ConversionManifest,
    UnsupportedConvention,
    convert,
    native_to_sofa,
    sofa_to_native,
)
