class DatasetError(Exception):
    """Base class for everything that can go wrong reading or writing a scene dataset."""


class ManifestVersionError(DatasetError):
    def __init__(self, found: str, expected: str):
        super().__init__(f"manifest format version {found!r} is not supported (expected {expected!r})")
        self.found    = found
        self.expected = expected


class SampleNotFoundError(DatasetError, KeyError):
    def __init__(self, sample_id: str):
        super().__init__(f"sample {sample_id!r} is not listed in the manifest")
        self.sample_id = sample_id

    def __str__(self) -> str:
        return self.args[0]


class MissingFileError(DatasetError, FileNotFoundError):
    pass


class CorruptFileError(DatasetError):
    pass


class InvariantViolationError(DatasetError):
    pass
