class FlowError(RuntimeError):
    """Base class for flow failures."""


class FlowDiverged(FlowError):
    pass


class FlowStuck(FlowError):
    pass


class SolverError(FlowError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
