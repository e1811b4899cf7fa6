"""Exception types shared across the toolkit."""


class AuditKitError(Exception):
    """Base class for all audit-kit errors."""


class WorkbookParseError(AuditKitError):
    def __init__(self, line_no, reason):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class DuplicateCellError(AuditKitError):
    pass


class UnknownSheetError(AuditKitError):
    pass


class FormulaSyntaxError(AuditKitError):
    def __init__(self, position, expected, src=""):
        self.position = position
        self.expected = expected
        self.src = src
        super().__init__(f"syntax error at position {position}: expected {expected}")


class UnknownNameError(AuditKitError):
    pass


class SheetExistsError(AuditKitError):
    pass


class SchemaError(AuditKitError):
    pass


class EmptyModelError(AuditKitError):
    pass


class NoRootError(AuditKitError):
    pass


class TargetMissingError(AuditKitError):
    pass


class BaselineDirtyError(AuditKitError):
    pass


class NothingToDoError(AuditKitError):
    pass


class CannotConstructError(AuditKitError):
    pass
