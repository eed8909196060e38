"""Exception types shared across the harness.

Grouped here so the CLI can map them to exit codes in one place.
"""


class HarnessError(Exception):
    """Base class for all harness-specific failures."""


# --- manifest ---------------------------------------------------------------

class DuplicateParamError(HarnessError):
    def __init__(self, name):
        super().__init__(f"duplicate parameter name: {name!r}")
        self.name = name


class EmptyExperimentNameError(HarnessError):
    pass


class MalformedManifestError(HarnessError):
    def __init__(self, reason):
        super().__init__(f"malformed manifest: {reason}")
        self.reason = reason


class SchemaVersionUnsupportedError(HarnessError):
    def __init__(self, found):
        super().__init__(f"unsupported manifest schema_version: {found}")
        self.found = found


class AlreadyFinalizedError(HarnessError):
    pass


# --- vcs gate ---------------------------------------------------------------

class NotARepositoryError(HarnessError):
    def __init__(self, path, detail=""):
        msg = f"not a usable git repository: {path}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.path = path


class VcsToolUnavailableError(HarnessError):
    pass


class DirtyWorktreeError(HarnessError):
    def __init__(self, changed_paths):
        preview = ", ".join(changed_paths[:5])
        if len(changed_paths) > 5:
            preview += ", ..."
        super().__init__(
            f"working tree has uncommitted changes ({preview}); "
            "commit them or pass --allow-dirty to snapshot the code instead"
        )
        self.changed_paths = list(changed_paths)


class DestinationNotEmptyError(HarnessError):
    pass


class IoFailureError(HarnessError):
    def __init__(self, path, reason):
        super().__init__(f"I/O failure on {path}: {reason}")
        self.path = path
        self.reason = reason


# --- seeds ------------------------------------------------------------------

class EntropyUnavailableError(HarnessError):
    pass


class EmptyLabelError(HarnessError):
    pass


# --- runner -----------------------------------------------------------------

class CollisionError(HarnessError):
    def __init__(self, path):
        super().__init__(f"run directory already exists: {path}")
        self.path = path


class SpawnFailureError(HarnessError):
    def __init__(self, program, reason=""):
        msg = f"failed to spawn {program!r}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.program = program


# --- events -----------------------------------------------------------------

class StepRegressionError(HarnessError):
    def __init__(self, tag, step, last_step):
        super().__init__(
            f"step {step} for tag {tag!r} regresses below last appended step {last_step}"
        )
        self.tag = tag
        self.step = step
        self.last_step = last_step


class InvalidPayloadError(HarnessError):
    def __init__(self, reason):
        super().__init__(f"invalid event payload: {reason}")
        self.reason = reason


class CorruptLogError(HarnessError):
    def __init__(self, line_no, reason=""):
        msg = f"corrupt event log at line {line_no}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.line_no = line_no


class TagNotFoundError(HarnessError):
    def __init__(self, tag):
        super().__init__(f"tag {tag!r} not present in any run")
        self.tag = tag


class LabelMismatchError(HarnessError):
    pass


class NoConfusionRecordsError(HarnessError):
    pass


# --- hpo --------------------------------------------------------------------

class OutOfBoundsError(HarnessError):
    def __init__(self, name, detail=""):
        msg = f"value out of bounds for parameter {name!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.name = name


class IndexOutOfRangeError(HarnessError):
    pass


class DegenerateDataError(HarnessError):
    pass


class NumericalFailureError(HarnessError):
    pass


class NonFiniteObjectiveError(HarnessError):
    pass


# --- dataprep / demo trainer ------------------------------------------------

class ChannelMismatchError(HarnessError):
    pass


class NonFiniteSampleError(HarnessError):
    pass


class EmptyInputError(HarnessError):
    pass


class DegenerateRatioError(HarnessError):
    pass


class InvalidSpecError(HarnessError):
    pass


class BadLabelError(HarnessError):
    pass


# --- replay -----------------------------------------------------------------

class MissingCommitError(HarnessError):
    pass


class CloneFailureError(HarnessError):
    pass


class CommitNotFoundError(HarnessError):
    def __init__(self, commit_id):
        super().__init__(f"commit not found: {commit_id}")
        self.commit_id = commit_id


class SnapshotHashMismatchError(HarnessError):
    def __init__(self, expected, actual):
        super().__init__(
            f"snapshot hash mismatch: manifest records {expected}, tree hashes to {actual}"
        )
        self.expected = expected
        self.actual = actual


# --- report -----------------------------------------------------------------

class EmptySeriesError(HarnessError):
    pass


class NoRunsFoundError(HarnessError):
    pass
