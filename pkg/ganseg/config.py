from dataclasses import dataclass, field

from django.core.exceptions import ImproperlyConfigured

from iris_segmentation.runtime import get_setting

GENERATOR_ARCHITECTURES = ('unet',)
DISCRIMINATOR_ARCHITECTURES = ('patch',)


def is_power_of_two(value):
    return value > 0 and value & (value - 1) == 0


@dataclass(frozen=True)
class GanConfig:
    """
    Conditional GAN segmenter parameters.

    The generator is a U-shaped encoder-decoder that halves the input down to
    1x1; the discriminator is a patch classifier with
    ``discriminator_downsamples`` stride-2 stages, so a 256 side yields a
    32x32 grid of real/fake scores.
    """
    input_side: int = field(default_factory=lambda: get_setting('GAN_INPUT_SIDE'))
    generator_arch: str = 'unet'
    discriminator_arch: str = 'patch'
    adversarial_weight: float = 1.0
    reconstruction_weight: float = 100.0
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    iterations: int = 32000
    batch_size: int = 1
    base_filters: int = 64
    discriminator_downsamples: int = 3
    dropout_probability: float = 0.5
    init_std: float = 0.02
    seed: int = 0
    log_every: int = field(default_factory=lambda: get_setting('LOG_EVERY'))
    checkpoint_every: int = field(default_factory=lambda: get_setting('CHECKPOINT_EVERY'))

    def __post_init__(self):
        if not is_power_of_two(self.input_side) or self.input_side < 64:
            raise ImproperlyConfigured(
                f"input_side must be a power of two of at least 64, got {self.input_side}."
            )
        if self.generator_arch not in GENERATOR_ARCHITECTURES:
            raise ImproperlyConfigured(f"Unknown generator architecture '{self.generator_arch}'.")
        if self.discriminator_arch not in DISCRIMINATOR_ARCHITECTURES:
            raise ImproperlyConfigured(f"Unknown discriminator architecture '{self.discriminator_arch}'.")
        if self.adversarial_weight < 0 or self.reconstruction_weight < 0:
            raise ImproperlyConfigured("Loss weights must be non-negative.")
        if self.learning_rate <= 0:
            raise ImproperlyConfigured(f"learning_rate must be positive, got {self.learning_rate}.")
        if self.iterations < 1:
            raise ImproperlyConfigured(f"iterations must be at least 1, got {self.iterations}.")
        if self.batch_size < 1 or self.base_filters < 1:
            raise ImproperlyConfigured("batch_size and base_filters must be positive.")
        # the stride-1 layers after the last downsample need at least a 2x2 map
        if not 1 <= self.discriminator_downsamples or self.input_side >> self.discriminator_downsamples < 2:
            raise ImproperlyConfigured(
                f"{self.discriminator_downsamples} discriminator downsamples do not fit a {self.input_side} side."
            )
        if not 0 <= self.dropout_probability < 1:
            raise ImproperlyConfigured(f"dropout_probability must lie in [0, 1), got {self.dropout_probability}.")

    @property
    def patch_grid_side(self):
        return self.input_side >> self.discriminator_downsamples
