"""Exception hierarchy shared by all modules."""


class BundleDiffError(Exception):
    pass


class ChartOverflow(BundleDiffError):
    pass


class NotPositiveDefinite(BundleDiffError):
    pass


class SingularOrbitMetric(BundleDiffError):
    pass


class GaugeNotTransversal(BundleDiffError):
    pass


class DerivativeFailure(BundleDiffError):
    pass


class UnknownModel(BundleDiffError):
    pass


class ChartExit(BundleDiffError):
    pass


class ProjectionFailure(BundleDiffError):
    pass


class MatrixOverflow(BundleDiffError):
    pass


class StencilOutOfDomain(BundleDiffError):
    pass


class Instability(BundleDiffError):
    pass


class ConfigError(BundleDiffError):
    pass
