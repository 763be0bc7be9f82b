"""Exporter error hierarchy."""


class ExporterError(Exception):
    """Base class for exporter failures."""


class ModelLoadError(ExporterError):
    """A requested model backend cannot be constructed."""


class ImageReadError(ExporterError):
    """An input image cannot be read or decoded."""


class ExportError(ExporterError):
    """An export job cannot proceed (bad inputs, strict-mode failure)."""
