#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select


class MacmlException(Exception):
    pass


class ConfigException(MacmlException):
    """
    A config or model-spec file could not be read or failed schema validation.
    """

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = errors or {}


class DatasetException(MacmlException):
    pass


class SpecificationException(MacmlException):
    pass


class ContextMismatchException(MacmlException):
    """
    Two fits were compared that do not share data and SJ permutation context.
    """

    pass


class NumericalException(MacmlException):
    pass


class DegenerateVarianceException(NumericalException):
    pass


class SingularProjectionException(NumericalException):
    pass


class NotPositiveDefiniteException(NumericalException):
    pass


class SingularMatrixException(NumericalException):
    pass


class LineSearchException(NumericalException):
    pass


class NonBindingRestrictionException(NumericalException):
    pass


class PsiSolverException(NumericalException):
    def __init__(self, message, residual=None, n_iterations=None):
        super().__init__(message)
        self.residual = residual
        self.n_iterations = n_iterations
