"""Exception types shared across the pipeline."""


class SizingError(Exception):
    """Requested array exceeds the configured element budget."""


class ConfigError(Exception):
    """Invalid radio, TDD, scene or manifest configuration."""


class PilotZeroError(Exception):
    """Zero divisor at a downlink position during channel estimation."""

    def __init__(self, k: int, l: int):
        super().__init__(f"zero pilot at subcarrier {k}, symbol {l}")
        self.k = k
        self.l = l


class FormatError(Exception):
    """Bad magic, version, or truncated binary artifact."""


class ChecksumError(FormatError):
    """CRC mismatch in a binary artifact."""


class SplitError(Exception):
    """Dataset split cannot be formed."""


class ArchitectureError(Exception):
    """Detector configuration is infeasible at the given input size."""


class DivergenceError(Exception):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, step: int = -1):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch
        self.step = step


class SearchError(Exception):
    """Architecture search ended with no usable trial."""
