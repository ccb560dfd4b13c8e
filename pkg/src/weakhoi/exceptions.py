# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)


class ExitCodes(object):
    """
    Process exit codes used by the command line surface. Each exception type below declares which of these it maps
    to.
    """

    SUCCESS = 0
    USAGE = 2
    RUNTIME = 3


class HOIException(Exception):
    # Generic weakhoi exception with a message
    exit_code = ExitCodes.RUNTIME


class InvalidArgument(HOIException, ValueError):
    # An input violated the documented preconditions of an operation
    exit_code = ExitCodes.USAGE


class VocabularyError(InvalidArgument):
    # Malformed vocabulary file or a vocabulary that does not match a checkpoint
    pass


class EmptyBag(HOIException):
    # Raised when a scene yields no human-object pairs, callers skip the image
    pass


class GenerationError(HOIException):
    # The synthetic generator could not place an instance within its retry budget
    pass


class CheckpointError(HOIException):
    # Bad magic, unsupported version or digest mismatch when reading a checkpoint
    exit_code = ExitCodes.USAGE


class DatasetParseError(HOIException):
    """Raised when a JSON-lines record cannot be parsed into a scene or detection.

    The args are (reason, path, line_number) where line_number is 1 based.
    """

    exit_code = ExitCodes.USAGE

    @property
    def reason(self):
        return self.args[0]

    @property
    def path(self):
        return self.args[1] if len(self.args) > 1 else None

    @property
    def line_number(self):
        return self.args[2] if len(self.args) > 2 else None

    @property
    def message(self):
        return "Failed to parse %s line %s: %s" % (self.path or "<stream>", self.line_number, self.reason)

    def __str__(self):
        return self.message


class TrainingDiverged(HOIException):
    """The training loss became non-finite.

    The args are (iteration, batch_id, diagnostics) where diagnostics is a dict of the loss terms and per parameter
    gradient norms captured at the point of failure.
    """

    @property
    def iteration(self):
        return self.args[0]

    @property
    def batch_id(self):
        return self.args[1]

    @property
    def diagnostics(self):
        return self.args[2] if len(self.args) > 2 else {}

    @property
    def message(self):
        terms = ", ".join("%s=%s" % (k, v) for k, v in sorted(self.diagnostics.get("losses", {}).items()))
        return "Training diverged at iteration %d on batch %s: %s" % (self.iteration, self.batch_id, terms or "n/a")

    def __str__(self):
        return self.message


class GradientCheckFailed(HOIException):
    """Analytic gradients disagree with central finite differences.

    The args are (worst_parameter, max_error, tolerance).
    """

    @property
    def worst_parameter(self):
        return self.args[0]

    @property
    def max_error(self):
        return self.args[1]

    @property
    def tolerance(self):
        return self.args[2]

    @property
    def message(self):
        return "Gradient check failed, worst parameter %s has relative error %.3e >= %.1e" % (
            self.worst_parameter,
            self.max_error,
            self.tolerance,
        )

    def __str__(self):
        return self.message
