"""Exception hierarchy shared across the package."""

from __future__ import annotations


class MdswError(Exception):
    """Base class for every error raised by mdswscan."""


# record model
class MalformedCode(MdswError, ValueError):
    pass


class MalformedRegistration(MdswError, ValueError):
    pass


class UnknownClassDigit(MalformedRegistration):
    pass


class OriginUndetermined(MdswError, LookupError):
    pass


# udi
class UdiError(MdswError, ValueError):
    pass


class EmptyInput(UdiError):
    pass


class BadCheckDigit(UdiError):
    pass


class BadDate(UdiError):
    pass


class MalformedUdi(UdiError):
    pass


class NotFourteenDigits(UdiError):
    pass


# ingest
class IngestError(MdswError):
    pass


class ArchiveUnreadable(IngestError):
    pass


class HeaderMismatch(IngestError):
    pass


class EncodingError(IngestError):
    pass


# filter engine / annotation / analytics
class SpecError(MdswError, ValueError):
    pass


class LexiconError(MdswError, ValueError):
    pass


class UnknownDimension(MdswError, KeyError):
    pass


class SidecarError(MdswError, ValueError):
    pass


class StaleSidecarKey(MdswError, LookupError):
    """A sidecar key that matched no device. Reported in the audit, never raised."""
