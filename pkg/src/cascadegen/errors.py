"""Exception types shared across the package."""


class CascadeError(Exception):
    """Base class for every error raised by cascadegen."""


class DanglingParent(CascadeError):
    def __init__(self, event_id):
        super().__init__(f"event {event_id!r} references a parent that does not exist")
        self.event_id = event_id


class CycleDetected(CascadeError):
    def __init__(self, event_ids):
        ids = sorted(event_ids)
        super().__init__(f"parent chain cycle through {ids[:5]}{'...' if len(ids) > 5 else ''}")
        self.event_ids = ids


class TimeInversion(CascadeError):
    def __init__(self, event_id):
        super().__init__(f"event {event_id!r} is earlier than its parent")
        self.event_id = event_id


class SchemaMismatch(CascadeError):
    pass


class StatsSchemaMismatch(CascadeError):
    pass


class EmptyCorpus(CascadeError):
    pass


class ShapeMismatch(CascadeError):
    pass


class AllLabelsAbsent(CascadeError):
    pass


class BinningMismatch(CascadeError):
    pass


class TooFewObservations(CascadeError):
    pass


class AllScoresAbsent(CascadeError):
    pass


class ParseError(CascadeError):
    def __init__(self, line_no, reason):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class EmptySplit(CascadeError):
    def __init__(self, side):
        super().__init__(f"split produced an empty {side} set")
        self.side = side


class MissingArtifact(CascadeError):
    def __init__(self, name, path=None):
        where = f" (expected at {path})" if path else ""
        super().__init__(f"missing artifact: {name}{where}")
        self.name = name
        self.path = path


class FormatVersionError(CascadeError):
    pass


class ConfigError(CascadeError):
    pass
