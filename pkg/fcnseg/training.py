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

from .config import FcnConfig
from .model import DOWNSAMPLING, build_fcn
from .preprocessing import image_to_tensor, mask_to_tensor

logger = logging.getLogger(__name__)


def fcn_loss(logits, target):
    """
    Mean per-pixel two-class cross-entropy.

    Args:
        logits (Tensor): ``N x 2 x H x W`` (or ``2 x H x W``) class scores.
        target (BinaryMask | Tensor): Iris labels of size ``H x W``
            (or ``N x H x W``).

    Raises:
        ValidationError: If the spatial sizes differ.
    """
    if isinstance(target, BinaryMask):
        target = mask_to_tensor(target)
    if logits.dim() == 3:
        logits = logits[None]
    if target.dim() == 2:
        target = target[None]
    if tuple(logits.shape[-2:]) != tuple(target.shape[-2:]) or logits.shape[0] != target.shape[0]:
        raise ValidationError(
            f"Logits {tuple(logits.shape)} do not match target {tuple(target.shape)}."
        )
    return F.cross_entropy(logits, target.to(device=logits.device, dtype=torch.long))


@dataclass
class FcnTrainingResult:
    model: torch.nn.Module
    loss_trace: list = field(default_factory=list)


def _check_examples(examples, config):
    if not examples:
        raise ValidationError("Cannot train the FCN without examples.")
    unlabelled = [example.sample_id for example in examples if example.mask is None]
    if unlabelled:
        raise ValidationError(f"Training samples without a mask: {', '.join(unlabelled)}.")
    for example in examples:
        if example.mask.size != (example.width, example.height):
            raise ValidationError(f"Sample '{example.sample_id}': mask and image sizes differ.")
        if example.width % DOWNSAMPLING or example.height % DOWNSAMPLING:
            raise ValidationError(
                f"Sample '{example.sample_id}' is {example.width}x{example.height}; "
                f"sides must be divisible by {DOWNSAMPLING} (pad it first)."
            )
    if config.batch_size > 1 and len({(e.width, e.height) for e in examples}) > 1:
        raise ValidationError("Batches larger than one need equally sized images.")


def _optimizer(model, config):
    decay, no_decay = [], []
    for name, parameter in model.named_parameters():
        (no_decay if name.endswith('bias') else decay).append(parameter)
    return torch.optim.Adam(
        [
            {'params': decay, 'weight_decay': config.weight_decay},
            {'params': no_decay, 'weight_decay': 0.0},
        ],
        lr=config.learning_rate,
    )


def train_fcn(model, examples, config, checkpoint_path=None, loss_trace_path=None):
    """
    Train with Adam for exactly ``config.iterations`` steps.

    Weight decay acts as L2 regularisation on weights (not biases) inside the
    optimizer step. Loss is logged every ``config.log_every`` steps; the
    model is checkpointed every ``config.checkpoint_every`` steps and at the end.

    Args:
        model (FcnModel): Model to train in place.
        examples (list[LabelledImage]): Images with masks, sides divisible by 32.
        config (FcnConfig): Hyper-parameters.

    Returns:
        FcnTrainingResult: The model and its ``(iteration, loss)`` trace.

    Raises:
        ValidationError: If an example lacks a mask or is badly sized.
        TrainingDivergenceError: If the loss stops being finite.
    """
    _check_examples(examples, config)
    device = get_device()
    images = [image_to_tensor(example.image) for example in examples]
    masks = [mask_to_tensor(example.mask) for example in examples]

    generator = torch.Generator().manual_seed(config.seed)
    model.to(device).train()
    optimizer = _optimizer(model, config)
    trace = []
    trace_handle = None
    if loss_trace_path is not None:
        Path(loss_trace_path).parent.mkdir(parents=True, exist_ok=True)
        trace_handle = open(loss_trace_path, 'w', encoding='utf-8')

    order = torch.randperm(len(examples), generator=generator)
    cursor = 0
    try:
        for iteration in range(1, config.iterations + 1):
            batch = []
            while len(batch) < config.batch_size:
                if cursor == len(order):
                    order = torch.randperm(len(examples), generator=generator)
                    cursor = 0
                batch.append(int(order[cursor]))
                cursor += 1
            inputs = torch.stack([images[i] for i in batch]).to(device)
            targets = torch.stack([masks[i] for i in batch]).to(device)

            loss = fcn_loss(model(inputs), targets)
            if not torch.isfinite(loss):
                raise TrainingDivergenceError(
                    f"FCN loss diverged at iteration {iteration}.",
                    snapshot={'iteration': iteration, 'loss_trace': list(trace)},
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            value = float(loss.detach())
            trace.append((iteration, value))
            if trace_handle is not None:
                trace_handle.write(json.dumps({'iteration': iteration, 'loss': value}) + '\n')
            if iteration % config.log_every == 0 or iteration == 1:
                logger.info("fcn iteration %d/%d loss %.5f", iteration, config.iterations, value)
            if checkpoint_path is not None and iteration % config.checkpoint_every == 0:
                save_fcn(model, checkpoint_path)
    finally:
        if trace_handle is not None:
            trace_handle.close()

    model.eval()
    if checkpoint_path is not None:
        save_fcn(model, checkpoint_path)
    return FcnTrainingResult(model=model, loss_trace=trace)


@torch.no_grad()
def predict_fcn(model, image):
    """
    Segment an ``H x W x 3`` uint8 image (sides divisible by 32) by per-pixel
    argmax over the two class scores.
    """
    was_training = model.training
    model.eval()
    device = next(model.parameters()).device
    logits = model(image_to_tensor(image)[None].to(device))[0]
    model.train(was_training)
    return BinaryMask(logits.argmax(dim=0).cpu().numpy().astype(np.uint8))


def save_fcn(model, path):
    return save_checkpoint(path, 'fcn', asdict(model.config), state_dict=model.state_dict())


def load_fcn(path):
    checkpoint = load_checkpoint(path, 'fcn')
    model = build_fcn(FcnConfig(**checkpoint['config']))
    model.load_state_dict(checkpoint['state_dict'])
    model.eval()
    return model
