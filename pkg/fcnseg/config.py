from dataclasses import dataclass, field

from django.core.exceptions import ImproperlyConfigured

from iris_segmentation.runtime import get_setting


@dataclass(frozen=True)
class FcnConfig:
    """
    Training and architecture parameters of the FCN segmenter.

    ``weight_decay`` is 5e-4 and ``skip_init_std`` 1e-4; ``base_width`` and
    ``head_width`` default to the VGG-16 widths (64 and 4096) and only shrink
    for desk-scale runs.
    """
    learning_rate: float = 1e-5
    dropout_probability: float = 0.5
    weight_decay: float = 5e-4
    skip_init_std: float = 1e-4
    iterations: int = 32000
    batch_size: int = 1
    num_classes: int = 2
    base_width: int = 64
    head_width: int = 4096
    seed: int = 0
    log_every: int = field(default_factory=lambda: get_setting('LOG_EVERY'))
    checkpoint_every: int = field(default_factory=lambda: get_setting('CHECKPOINT_EVERY'))

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ImproperlyConfigured(f"learning_rate must be positive, got {self.learning_rate}.")
        if not 0 <= self.dropout_probability < 1:
            raise ImproperlyConfigured(f"dropout_probability must lie in [0, 1), got {self.dropout_probability}.")
        if self.iterations < 1:
            raise ImproperlyConfigured(f"iterations must be at least 1, got {self.iterations}.")
        if self.batch_size < 1:
            raise ImproperlyConfigured(f"batch_size must be at least 1, got {self.batch_size}.")
        if self.num_classes != 2:
            raise ImproperlyConfigured("The FCN segmenter is binary: num_classes must be 2.")
        if self.base_width < 1 or self.head_width < 1:
            raise ImproperlyConfigured("Layer widths must be positive.")
