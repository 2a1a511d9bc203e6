"""Exception taxonomy shared across modules.

FileFormatError marks malformed on-disk artifacts (message carries the
byte offset); it subclasses ValueError so library callers that only care
about "bad input" keep working.
"""


class FileFormatError(ValueError):
    pass
