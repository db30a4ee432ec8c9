import json
import logging
import math
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from django.core.exceptions import ValidationError

from corpus.imaging import load_image, load_mask
from iris_segmentation.exceptions import TrainingDivergenceError
from iris_segmentation.runtime import get_device

from .detector import GRID_SIZE, VALUES_PER_ANCHOR, DetectorBundle, box_iou_wh, image_to_detector_tensor, kmeans_anchors, save_detector

logger = logging.getLogger(__name__)


def ground_truth_box(sample):
    """
    The sample's annotated iris box, else the tight box of its mask's iris pixels.
    """
    if sample.box is not None:
        return tuple(sample.box)
    if sample.mask_path is None:
        return None
    return load_mask(sample.mask_path).bounding_box()


def _normalised_targets(boxes, sizes):
    """
    ``(cx, cy, w, h)`` in [0, 1] image units for every box.
    """
    targets = []
    for (x_min, y_min, x_max, y_max), (width, height) in zip(boxes, sizes):
        targets.append((
            (x_min + x_max) / 2 / width,
            (y_min + y_max) / 2 / height,
            (x_max - x_min) / width,
            (y_max - y_min) / height,
        ))
    return np.asarray(targets, dtype=np.float64)


def detection_loss(output, targets, anchors, config):
    """
    Single-class anchor loss: coordinate regression and objectness for the
    responsible anchor, no-object penalty everywhere else.

    Args:
        output (Tensor): ``N x (A * 6) x 13 x 13`` raw detector output.
        targets (Tensor): ``N x 4`` normalised ``(cx, cy, w, h)`` boxes.
        anchors (Tensor): ``A x 2`` anchor sizes in grid cells.
    """
    batch = output.shape[0]
    num_anchors = anchors.shape[0]
    pred = output.view(batch, num_anchors, VALUES_PER_ANCHOR, GRID_SIZE, GRID_SIZE)

    responsible = torch.zeros(batch, num_anchors, GRID_SIZE, GRID_SIZE, dtype=torch.bool, device=output.device)
    coord_targets = torch.zeros(batch, 4, device=output.device)
    index = []
    for n, (cx, cy, w, h) in enumerate(targets.tolist()):
        col = min(max(int(cx * GRID_SIZE), 0), GRID_SIZE - 1)
        row = min(max(int(cy * GRID_SIZE), 0), GRID_SIZE - 1)
        best = int(np.argmax(box_iou_wh([(w * GRID_SIZE, h * GRID_SIZE)], anchors.cpu().numpy())[0]))
        responsible[n, best, row, col] = True
        coord_targets[n] = torch.tensor((
            cx * GRID_SIZE - col,
            cy * GRID_SIZE - row,
            math.log(max(w * GRID_SIZE, 1e-6) / float(anchors[best, 0])),
            math.log(max(h * GRID_SIZE, 1e-6) / float(anchors[best, 1])),
        ))
        index.append((n, best, row, col))

    rows = torch.tensor(index, device=output.device)
    chosen = pred[rows[:, 0], rows[:, 1], :, rows[:, 2], rows[:, 3]]
    coord = (
        (torch.sigmoid(chosen[:, 0]) - coord_targets[:, 0]) ** 2
        + (torch.sigmoid(chosen[:, 1]) - coord_targets[:, 1]) ** 2
        + (chosen[:, 2] - coord_targets[:, 2]) ** 2
        + (chosen[:, 3] - coord_targets[:, 3]) ** 2
    ).sum()
    objectness = F.binary_cross_entropy_with_logits(chosen[:, 4], torch.ones_like(chosen[:, 4]), reduction='sum')
    iris_class = F.binary_cross_entropy_with_logits(chosen[:, 5], torch.ones_like(chosen[:, 5]), reduction='sum')
    background = pred[:, :, 4][~responsible]
    noobject = F.binary_cross_entropy_with_logits(background, torch.zeros_like(background), reduction='sum')

    total = (
        config.coord_scale * coord
        + config.object_scale * objectness
        + iris_class
        + config.noobject_scale * noobject
    )
    return total / batch


def train_detector(model, samples, config, checkpoint_path=None, loss_trace_path=None):
    """
    Fine-tune the detector on images and their iris boxes.

    Samples without an explicit box use the tight box of their mask.

    Returns:
        DetectorBundle: The trained model, its k-means anchors and loss trace.

    Raises:
        ValidationError: If there are no samples, or some have neither a box
            nor a non-empty mask (their ids are listed).
    """
    if not samples:
        raise ValidationError("Cannot train the detector without samples.")
    boxes = [ground_truth_box(sample) for sample in samples]
    missing = [sample.id for sample, box in zip(samples, boxes) if box is None]
    if missing:
        raise ValidationError(f"Samples without a ground-truth iris box: {', '.join(missing)}.")

    sizes = [sample.size for sample in samples]
    targets = _normalised_targets(boxes, sizes)
    anchors = kmeans_anchors(targets[:, 2:], k=config.num_anchors, seed=config.seed)
    logger.info("Detector anchors (grid cells): %s", np.round(anchors, 2).tolist())

    device = get_device()
    inputs = torch.stack([
        image_to_detector_tensor(load_image(sample.image_path), model.input_channels, config.input_size)
        for sample in samples
    ])
    targets_tensor = torch.as_tensor(targets, dtype=torch.float32)
    anchors_tensor = torch.as_tensor(anchors, dtype=torch.float32, device=device)

    generator = torch.Generator().manual_seed(config.seed)
    model.to(device).train()
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    loss_trace = []
    trace_handle = None
    if loss_trace_path is not None:
        Path(loss_trace_path).parent.mkdir(parents=True, exist_ok=True)
        trace_handle = open(loss_trace_path, 'w', encoding='utf-8')

    try:
        for iteration in range(1, config.iterations + 1):
            batch = torch.randint(len(samples), (min(config.batch_size, len(samples)),), generator=generator)
            images = inputs[batch].clone()
            batch_targets = targets_tensor[batch].clone()
            flips = torch.rand(len(batch), generator=generator) < config.flip_probability
            images[flips] = images[flips].flip(-1)
            batch_targets[flips, 0] = 1.0 - batch_targets[flips, 0]

            loss = detection_loss(model(images.to(device)), batch_targets, anchors_tensor, config)
            if not torch.isfinite(loss):
                raise TrainingDivergenceError(
                    f"Detector loss diverged at iteration {iteration}.",
                    snapshot={'iteration': iteration, 'loss_trace': list(loss_trace)},
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            value = float(loss.detach())
            loss_trace.append((iteration, value))
            if trace_handle is not None:
                trace_handle.write(json.dumps({'iteration': iteration, 'loss': value}) + '\n')
            if iteration % config.log_every == 0 or iteration == 1:
                logger.info("detector iteration %d/%d loss %.4f", iteration, config.iterations, value)
            if checkpoint_path is not None and iteration % config.checkpoint_every == 0:
                save_detector(DetectorBundle(model, anchors, config, loss_trace), checkpoint_path)
    finally:
        if trace_handle is not None:
            trace_handle.close()

    model.eval()
    bundle = DetectorBundle(model=model, anchors=anchors, config=config, loss_trace=loss_trace)
    if checkpoint_path is not None:
        save_detector(bundle, checkpoint_path)
    return bundle


def box_iou(a, b):
    """
    IoU of two ``(x_min, y_min, x_max, y_max)`` boxes.
    """
    inter_w = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    inter_h = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = inter_w * inter_h
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0
