class QGreyboxError(Exception):
    pass


class ConfigError(QGreyboxError):
    pass


class NumericError(QGreyboxError):
    pass


class DatasetError(QGreyboxError):
    pass


class MissingMetaError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


class VersionError(DatasetError):
    pass


class SchemaError(DatasetError):
    def __init__(self, msg, row=None):
        super().__init__(msg if row is None else f"row {row}: {msg}")
        self.row = row


class ProgrammingError(QGreyboxError):
    pass
