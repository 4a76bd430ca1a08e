"""
Error hierarchy shared by the simulator, the CLI and the HTTP layer.

Domain errors (bad inputs to an operation, numerical failure) exit with 1 and
map to HTTP 422; configuration and I/O problems exit with 2 and map to 400.
"""

from typing import Optional


class SimulationError(Exception):
    exit_code: int = 1
    status_code: int = 422


class DomainError(SimulationError, ValueError):
    """Input outside an operation's domain."""


class SizeError(DomainError):
    pass


class CoverageError(DomainError):
    pass


class FormatError(DomainError):
    pass


class ConsistencyError(DomainError):
    pass


class SingularityError(DomainError):
    pass


class ProbeError(DomainError):
    pass


class DegenerateTraceError(DomainError):
    pass


class ContractError(DomainError):
    pass


class DivergenceError(DomainError):
    def __init__(self, round_t: int, worker: Optional[int], detail: str = "non-finite parameters"):
        self.round_t = round_t
        self.worker = worker
        who = f"worker {worker}" if worker is not None else "parameter server"
        super().__init__(f"{detail} at round {round_t} ({who})")


class ConfigError(SimulationError):
    exit_code = 2
    status_code = 400


class SchemaError(ConfigError):
    pass


class OutputError(ConfigError):
    pass
