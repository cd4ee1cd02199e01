"""Exceptions the CLI maps to exit codes (config 2, prerequisite 3, numeric 4)."""


class ConfigError(Exception):
    exit_code = 2


class PrerequisiteError(Exception):
    exit_code = 3


class NumericalError(Exception):
    exit_code = 4
