class TrainingDivergenceError(RuntimeError):
    """
    Raised when a training loss becomes NaN or infinite.

    ``snapshot`` holds whatever the training loop captured at the failing
    iteration (iteration counter, recent losses, weights).
    """

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class PipelineStageError(RuntimeError):
    """
    Wraps a failure inside one experiment stage, naming the stage and sample.
    """

    def __init__(self, stage, sample_id=None, message=''):
        self.stage = stage
        self.sample_id = sample_id
        where = f"stage '{stage}'"
        if sample_id is not None:
            where += f" (sample '{sample_id}')"
        super().__init__(f"{where} failed: {message}" if message else f"{where} failed")
