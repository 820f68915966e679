class ExtractorError(Exception):
    pass


class ModelLoadError(ExtractorError):
    pass


class ImageDecodeError(ExtractorError):
    pass
