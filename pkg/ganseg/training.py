import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from django.core.exceptions import ValidationError

from corpus.samples import BinaryMask
from iris_segmentation.checkpoints import load_checkpoint, save_checkpoint
from iris_segmentation.exceptions import TrainingDivergenceError
from iris_segmentation.runtime import get_device

from .config import GanConfig
from .networks import PatchDiscriminator, UnetGenerator, init_weights

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GanLosses:
    iteration: int
    generator_adversarial: float
    reconstruction: float
    discriminator_real: float
    discriminator_fake: float
    discriminator_accuracy: float


@dataclass
class GanState:
    config: GanConfig
    generator: torch.nn.Module
    discriminator: torch.nn.Module
    generator_optimizer: torch.optim.Optimizer
    discriminator_optimizer: torch.optim.Optimizer
    iteration: int = 0
    losses: list = field(default_factory=list)

    def snapshot(self):
        return {
            'iteration': self.iteration,
            'losses': list(self.losses[-10:]),
            'generator': copy.deepcopy(self.generator.state_dict()),
            'discriminator': copy.deepcopy(self.discriminator.state_dict()),
        }


@dataclass(frozen=True)
class ResizeRecord:
    """
    Original size of an input brought to the fixed GAN side.
    """
    width: int
    height: int
    side: int

    @property
    def is_identity(self):
        return self.width == self.side and self.height == self.side

    def restore(self, mask):
        """
        Bring a ``side x side`` mask (BinaryMask or tensor of labels) back to
        the original size with nearest-neighbour sampling.
        """
        labels = mask.labels if isinstance(mask, BinaryMask) else mask.detach().cpu().numpy()
        labels = np.asarray(labels, dtype=np.uint8).reshape(self.side, self.side)
        if self.is_identity:
            return BinaryMask(labels)
        tensor = torch.from_numpy(labels.astype(np.float32))[None, None]
        restored = F.interpolate(tensor, size=(self.height, self.width), mode='nearest-exact')
        return BinaryMask(restored[0, 0].numpy().astype(np.uint8))


def _adam(module, config):
    return torch.optim.Adam(module.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2))


def build_gan(config):
    """
    Build a freshly initialised generator/discriminator pair with their
    optimizers. Training starts from scratch: every convolution is drawn from
    normal(0, ``config.init_std``).
    """
    generator = UnetGenerator(config.input_side, config.base_filters, config.dropout_probability)
    discriminator = PatchDiscriminator(config.base_filters, config.discriminator_downsamples)
    init_weights(generator, config.init_std)
    init_weights(discriminator, config.init_std)
    device = get_device()
    generator.to(device)
    discriminator.to(device)
    return GanState(
        config=config,
        generator=generator,
        discriminator=discriminator,
        generator_optimizer=_adam(generator, config),
        discriminator_optimizer=_adam(discriminator, config),
    )


def resize_for_gan(data, target_side):
    """
    Resize an image or mask to ``target_side x target_side``.

    Images (``H x W x 3`` uint8) are scaled to [-1, 1] and resized
    bilinearly into a ``3 x side x side`` tensor; masks are resized with
    nearest-neighbour sampling into a ``1 x side x side`` tensor of 0/1.

    Returns:
        tuple: ``(tensor, ResizeRecord)``.

    Raises:
        ValidationError: If the input has no pixels.
    """
    if isinstance(data, BinaryMask):
        tensor = torch.from_numpy(data.labels.astype(np.float32))[None, None]
        mode = 'nearest-exact'
    else:
        array = np.asarray(data)
        if array.ndim < 2 or array.shape[0] == 0 or array.shape[1] == 0:
            raise ValidationError(f"Cannot resize an empty image of shape {array.shape}.")
        if array.ndim == 2:
            array = np.repeat(array[..., None], 3, axis=-1)
        tensor = torch.from_numpy(np.ascontiguousarray(array.transpose(2, 0, 1)).astype(np.float32))[None]
        tensor = tensor / 127.5 - 1.0
        mode = 'bilinear'

    height, width = tensor.shape[-2:]
    record = ResizeRecord(width=int(width), height=int(height), side=target_side)
    if not record.is_identity:
        if mode == 'bilinear':
            tensor = F.interpolate(tensor, size=(target_side, target_side), mode=mode, align_corners=False)
        else:
            tensor = F.interpolate(tensor, size=(target_side, target_side), mode=mode)
    return tensor[0], record


def _finite(*values):
    return all(torch.isfinite(value).item() for value in values)


def gan_step(state, images, masks):
    """
    One alternating update: the discriminator learns real pairs as real and
    generated pairs as fake, then the generator minimises
    ``adversarial_weight * adversarial + reconstruction_weight * L1``.

    Args:
        state (GanState): Updated in place.
        images (Tensor): ``N x 3 x side x side`` in [-1, 1].
        masks (Tensor): ``N x 1 x side x side`` of 0/1.

    Returns:
        GanState: ``state`` with the iteration counter advanced by one.

    Raises:
        ValidationError: If the batch is not at the configured side.
        TrainingDivergenceError: If any loss is not finite.
    """
    config = state.config
    side = config.input_side
    if tuple(images.shape[-2:]) != (side, side) or tuple(masks.shape[-2:]) != (side, side):
        raise ValidationError(f"GAN batches must be {side}x{side}; resize them first.")
    device = next(state.generator.parameters()).device
    images = images.to(device)
    masks = masks.to(device=device, dtype=torch.float32)
    generator, discriminator = state.generator, state.discriminator
    generator.train()
    discriminator.train()

    fake = generator(images)

    real_logits = discriminator(images, masks)
    fake_logits = discriminator(images, fake.detach())
    loss_real = F.binary_cross_entropy_with_logits(real_logits, torch.ones_like(real_logits))
    loss_fake = F.binary_cross_entropy_with_logits(fake_logits, torch.zeros_like(fake_logits))
    if not _finite(loss_real, loss_fake):
        raise TrainingDivergenceError(
            f"Discriminator loss diverged at iteration {state.iteration + 1}.", snapshot=state.snapshot()
        )
    state.discriminator_optimizer.zero_grad()
    (0.5 * (loss_real + loss_fake)).backward()
    state.discriminator_optimizer.step()

    with torch.no_grad():
        correct = (real_logits > 0).float().sum() + (fake_logits <= 0).float().sum()
        accuracy = correct.item() / (real_logits.numel() + fake_logits.numel())

    judged = discriminator(images, fake)
    adversarial = F.binary_cross_entropy_with_logits(judged, torch.ones_like(judged))
    reconstruction = F.l1_loss(fake, masks)
    if not _finite(adversarial, reconstruction):
        raise TrainingDivergenceError(
            f"Generator loss diverged at iteration {state.iteration + 1}.", snapshot=state.snapshot()
        )
    state.generator_optimizer.zero_grad()
    (config.adversarial_weight * adversarial + config.reconstruction_weight * reconstruction).backward()
    state.generator_optimizer.step()

    state.iteration += 1
    state.losses.append(GanLosses(
        iteration=state.iteration,
        generator_adversarial=adversarial.item(),
        reconstruction=reconstruction.item(),
        discriminator_real=loss_real.item(),
        discriminator_fake=loss_fake.item(),
        discriminator_accuracy=accuracy,
    ))
    return state


def _prepare(examples, side):
    if not examples:
        raise ValidationError("Cannot train the GAN without examples.")
    unlabelled = [example.sample_id for example in examples if example.mask is None]
    if unlabelled:
        raise ValidationError(f"Training samples without a mask: {', '.join(unlabelled)}.")
    images, masks = [], []
    for example in examples:
        if example.mask.size != (example.width, example.height):
            raise ValidationError(f"Sample '{example.sample_id}': mask and image sizes differ.")
        images.append(resize_for_gan(example.image, side)[0])
        masks.append(resize_for_gan(example.mask, side)[0])
    return images, masks


def train_gan(state, examples, checkpoint_path=None, loss_trace_path=None):
    """
    Run ``state.config.iterations`` calls of :func:`gan_step` over the
    examples, visiting them in a seeded random order each epoch.

    The loss trace holds one JSON line per step with the four loss columns and
    the discriminator accuracy.
    """
    config = state.config
    images, masks = _prepare(examples, config.input_side)
    generator = torch.Generator().manual_seed(config.seed)
    trace_handle = None
    if loss_trace_path is not None:
        Path(loss_trace_path).parent.mkdir(parents=True, exist_ok=True)
        trace_handle = open(loss_trace_path, 'w', encoding='utf-8')

    order = torch.randperm(len(images), generator=generator)
    cursor = 0
    try:
        for step in range(1, config.iterations + 1):
            batch = []
            while len(batch) < config.batch_size:
                if cursor == len(order):
                    order = torch.randperm(len(images), generator=generator)
                    cursor = 0
                batch.append(int(order[cursor]))
                cursor += 1
            gan_step(state, torch.stack([images[i] for i in batch]), torch.stack([masks[i] for i in batch]))

            losses = state.losses[-1]
            if trace_handle is not None:
                trace_handle.write(json.dumps(asdict(losses)) + '\n')
            if step % config.log_every == 0 or step == 1:
                logger.info(
                    "gan iteration %d/%d G_adv %.4f L1 %.4f D_real %.4f D_fake %.4f D_acc %.2f",
                    state.iteration, config.iterations, losses.generator_adversarial, losses.reconstruction,
                    losses.discriminator_real, losses.discriminator_fake, losses.discriminator_accuracy,
                )
            if checkpoint_path is not None and step % config.checkpoint_every == 0:
                save_gan(state, checkpoint_path)
    finally:
        if trace_handle is not None:
            trace_handle.close()

    if checkpoint_path is not None:
        save_gan(state, checkpoint_path)
    return state


@torch.no_grad()
def predict_gan(state, image):
    """
    Segment an image of any size: resize to the GAN side, threshold the
    generator score at 0.5 and resize the labels back (nearest-neighbour).
    Dropout is off, so repeated calls agree.
    """
    generator = state.generator
    was_training = generator.training
    generator.eval()
    tensor, record = resize_for_gan(image, state.config.input_side)
    device = next(generator.parameters()).device
    scores = generator(tensor[None].to(device))[0, 0]
    generator.train(was_training)
    return record.restore((scores > 0.5).to(torch.uint8))


def save_gan(state, path):
    return save_checkpoint(
        path, 'gan', asdict(state.config),
        generator=state.generator.state_dict(),
        discriminator=state.discriminator.state_dict(),
        generator_optimizer=state.generator_optimizer.state_dict(),
        discriminator_optimizer=state.discriminator_optimizer.state_dict(),
        iteration=state.iteration,
    )


def load_gan(path):
    checkpoint = load_checkpoint(path, 'gan')
    state = build_gan(GanConfig(**checkpoint['config']))
    state.generator.load_state_dict(checkpoint['generator'])
    state.discriminator.load_state_dict(checkpoint['discriminator'])
    state.generator_optimizer.load_state_dict(checkpoint['generator_optimizer'])
    state.discriminator_optimizer.load_state_dict(checkpoint['discriminator_optimizer'])
    state.iteration = checkpoint['iteration']
    state.generator.eval()
    return state
