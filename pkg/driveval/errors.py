class DrivevalError(Exception): ...


# World
class SameNodeError(DrivevalError):
    def __init__(self, node):
        self.node = node
        super().__init__(f"Start and goal are the same node: {node!r}")


class UnreachableError(DrivevalError):
    def __init__(self, start, goal):
        self.start = start
        self.goal = goal
        super().__init__(f"Node {goal!r} is not reachable from node {start!r}")


class OffRouteError(DrivevalError):
    def __init__(self, distance, threshold):
        self.distance = distance
        self.threshold = threshold
        super().__init__(f"Pose is {distance:.3f} m from the route (threshold {threshold} m)")


# Vehicle
class NonFiniteInputError(DrivevalError): ...


# Training
class EmptyDatasetError(DrivevalError): ...


class SingularSystemError(DrivevalError): ...


# Persistence
class ArtifactIoError(DrivevalError): ...


class FormatVersionMismatchError(DrivevalError):
    def __init__(self, found, expected):
        self.found = found
        self.expected = expected
        super().__init__(f"Unsupported format version {found!r}, expected {expected!r}")


class CorruptRowError(DrivevalError):
    def __init__(self, row, msg):
        self.row = row
        super().__init__(f"Corrupt data row {row}: {msg}")


# Metrics
class EmptySetError(DrivevalError): ...


class LengthMismatchError(DrivevalError): ...


class NegativeSpeedError(DrivevalError): ...


class NoValidWindowError(DrivevalError): ...


class UnknownClassError(DrivevalError): ...


# Online evaluation
class EmptyResultsError(DrivevalError): ...


# Analysis
class TooFewPointsError(DrivevalError): ...


class ZeroVarianceError(DrivevalError):
    def __init__(self, axis):
        self.axis = axis
        super().__init__(f"Values along {axis!r} have zero variance")


class MissingMetricError(DrivevalError): ...


class EmptyGroupError(DrivevalError): ...


# Configuration
class ConfigError(DrivevalError): ...
