"""
Single-class iris detector following the Fast-YOLO layout and its output decoding.
"""
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from django.core.exceptions import ImproperlyConfigured
from PIL import Image

from iris_segmentation.checkpoints import load_checkpoint, save_checkpoint
from iris_segmentation.runtime import get_device, get_setting

from .geometry import Detection, roi_for, select_detection

logger = logging.getLogger(__name__)

INPUT_SIZE = 416
GRID_SIZE = 13
VALUES_PER_ANCHOR = 6  # tx, ty, tw, th, objectness, iris class

# (kind, filters, kernel, stride) row by row; pools carry filters=None
LAYERS = (
    ('conv', 16, 3, 1),
    ('max', None, 2, 2),
    ('conv', 32, 3, 1),
    ('max', None, 2, 2),
    ('conv', 64, 3, 1),
    ('max', None, 2, 2),
    ('conv', 128, 3, 1),
    ('max', None, 2, 2),
    ('conv', 256, 3, 1),
    ('max', None, 2, 2),
    ('conv', 512, 3, 1),
    ('max', None, 2, 1),
    ('conv', 1024, 3, 1),
    ('conv', 1024, 3, 1),
)


@dataclass(frozen=True)
class DetectorConfig:
    iterations: int = 4000
    batch_size: int = 8
    learning_rate: float = 1e-3
    input_size: int = INPUT_SIZE
    num_anchors: int = 5
    coord_scale: float = 5.0
    object_scale: float = 5.0
    noobject_scale: float = 1.0
    flip_probability: float = 0.5
    seed: int = 0
    log_every: int = field(default_factory=lambda: get_setting('LOG_EVERY'))
    checkpoint_every: int = field(default_factory=lambda: get_setting('CHECKPOINT_EVERY'))

    def __post_init__(self):
        if self.iterations < 1:
            raise ImproperlyConfigured("Detector iterations must be at least 1.")
        if self.batch_size < 1:
            raise ImproperlyConfigured("Detector batch_size must be at least 1.")
        if self.learning_rate <= 0:
            raise ImproperlyConfigured("Detector learning_rate must be positive.")
        if self.input_size != INPUT_SIZE:
            raise ImproperlyConfigured(f"The detector operates on {INPUT_SIZE}x{INPUT_SIZE} inputs.")


class _SamePool(nn.Module):
    """
    2x2 max-pool with stride 1 that keeps the spatial size (pads right/bottom).
    """

    def __init__(self):
        super().__init__()
        self.pad = nn.ReplicationPad2d((0, 1, 0, 1))
        self.pool = nn.MaxPool2d(2, stride=1)

    def forward(self, x):
        return self.pool(self.pad(x))


class FastYoloDetector(nn.Module):
    def __init__(self, input_channels=3, num_anchors=5):
        super().__init__()
        self.input_channels = input_channels
        self.num_anchors = num_anchors

        layers = []
        channels = input_channels
        for kind, filters, kernel, stride in LAYERS:
            if kind == 'conv':
                layers.append(nn.Sequential(
                    nn.Conv2d(channels, filters, kernel, stride=stride, padding=kernel // 2, bias=False),
                    nn.BatchNorm2d(filters),
                    nn.LeakyReLU(0.1, inplace=True),
                ))
                channels = filters
            elif stride == 2:
                layers.append(nn.MaxPool2d(kernel, stride=stride))
            else:
                layers.append(_SamePool())
        self.backbone = nn.ModuleList(layers)
        self.head = nn.Conv2d(channels, num_anchors * VALUES_PER_ANCHOR, 1)

    def forward(self, x):
        for layer in self.backbone:
            x = layer(x)
        return self.head(x)

    def layer_shapes(self, x):
        """
        Output shape ``(channels, height, width)`` after every layer, head included.
        """
        shapes = []
        for layer in self.backbone:
            x = layer(x)
            shapes.append(tuple(x.shape[1:]))
        shapes.append(tuple(self.head(x).shape[1:]))
        return shapes


def build_detector(input_channels=3, num_anchors=5):
    """
    Build the detector: nine 3x3 convolutions interleaved with six 2x2
    max-pools, then a 1x1 convolution with ``num_anchors * 6`` filters,
    mapping a 416x416 image to a 13x13 grid.

    Raises:
        ImproperlyConfigured: If ``input_channels`` is neither 1 nor 3.
    """
    if input_channels not in (1, 3):
        raise ImproperlyConfigured(f"Detector input must have 1 or 3 channels, got {input_channels}.")
    return FastYoloDetector(input_channels=input_channels, num_anchors=num_anchors)


def load_pretrained_backbone(model, path):
    """
    Copy convolution/batch-norm weights from a state dict, matched by layer
    order, into the backbone.
    """
    state = torch.load(Path(path), map_location='cpu')
    sources = [value for key, value in state.items() if key.endswith('weight') and value.dim() == 4]
    targets = [block[0] for block in model.backbone if isinstance(block, nn.Sequential)]
    for index, (conv, weight) in enumerate(zip(targets, sources)):
        if weight.shape != conv.weight.shape:
            raise ImproperlyConfigured(
                f"Pretrained weight for detector conv {index} has shape {tuple(weight.shape)}, "
                f"expected {tuple(conv.weight.shape)}."
            )
        with torch.no_grad():
            conv.weight.copy_(weight)
    logger.info("Initialised %d detector convolutions from %s", min(len(sources), len(targets)), path)


def image_to_detector_tensor(image, input_channels, input_size=INPUT_SIZE):
    """
    Resize an ``H x W x 3`` uint8 image to the detector input, scaled to [0, 1].
    """
    pil = Image.fromarray(np.asarray(image, dtype=np.uint8))
    pil = pil.convert('L' if input_channels == 1 else 'RGB').resize((input_size, input_size), Image.BILINEAR)
    array = np.asarray(pil, dtype=np.float32) / 255.0
    if array.ndim == 2:
        array = array[None]
    else:
        array = array.transpose(2, 0, 1)
    return torch.from_numpy(np.ascontiguousarray(array))


def box_iou_wh(boxes, anchors):
    """
    IoU of ``(w, h)`` pairs aligned at a common corner, ``len(boxes) x len(anchors)``.
    """
    boxes = np.asarray(boxes, dtype=np.float64)[:, None, :]
    anchors = np.asarray(anchors, dtype=np.float64)[None, :, :]
    inter = np.minimum(boxes[..., 0], anchors[..., 0]) * np.minimum(boxes[..., 1], anchors[..., 1])
    union = boxes[..., 0] * boxes[..., 1] + anchors[..., 0] * anchors[..., 1] - inter
    return inter / union


def kmeans_anchors(box_sizes, k=5, seed=0, max_iterations=100):
    """
    Cluster normalised ``(w, h)`` box sizes with ``1 - IoU`` distance.

    Returns:
        np.ndarray: ``k x 2`` anchor sizes in grid cells, sorted by area.
    """
    sizes = np.asarray(box_sizes, dtype=np.float64)
    if sizes.ndim != 2 or sizes.shape[0] == 0:
        raise ImproperlyConfigured("Anchor clustering needs at least one box.")
    rng = np.random.default_rng(seed)
    centroids = sizes[rng.choice(len(sizes), size=k, replace=len(sizes) < k)].copy()
    assignment = None
    for _ in range(max_iterations):
        nearest = np.argmax(box_iou_wh(sizes, centroids), axis=1)
        if assignment is not None and np.array_equal(nearest, assignment):
            break
        assignment = nearest
        for cluster in range(k):
            members = sizes[assignment == cluster]
            if len(members):
                centroids[cluster] = np.median(members, axis=0)
    anchors = centroids * GRID_SIZE
    return anchors[np.argsort(anchors[:, 0] * anchors[:, 1])]


def decode_detections(output, anchors, image_size, min_confidence=0.01):
    """
    Turn one ``(num_anchors * 6) x 13 x 13`` output map into detections in
    original-image pixels.
    """
    width, height = image_size
    anchors = torch.as_tensor(np.asarray(anchors), dtype=output.dtype)
    num_anchors = anchors.shape[0]
    grid = output.shape[-1]
    pred = output.detach().cpu().view(num_anchors, VALUES_PER_ANCHOR, grid, grid)

    cell_y, cell_x = torch.meshgrid(torch.arange(grid), torch.arange(grid), indexing='ij')
    cx = (torch.sigmoid(pred[:, 0]) + cell_x) / grid
    cy = (torch.sigmoid(pred[:, 1]) + cell_y) / grid
    bw = anchors[:, 0, None, None] * torch.exp(pred[:, 2].clamp(max=10)) / grid
    bh = anchors[:, 1, None, None] * torch.exp(pred[:, 3].clamp(max=10)) / grid
    confidence = torch.sigmoid(pred[:, 4]) * torch.sigmoid(pred[:, 5])

    detections = []
    keep = confidence >= min_confidence
    for x, y, w, h, conf in zip(cx[keep], cy[keep], bw[keep], bh[keep], confidence[keep]):
        box = (
            max(0.0, float(x - w / 2) * width),
            max(0.0, float(y - h / 2) * height),
            min(float(width), float(x + w / 2) * width),
            min(float(height), float(y + h / 2) * height),
        )
        if box[0] < box[2] and box[1] < box[3]:
            detections.append(Detection(box, min(1.0, float(conf))))
    return detections


@dataclass
class DetectorBundle:
    """
    A trained detector together with its anchors and configuration.
    """
    model: FastYoloDetector
    anchors: np.ndarray
    config: DetectorConfig
    loss_trace: list = field(default_factory=list)

    @property
    def input_channels(self):
        return self.model.input_channels


def save_detector(bundle, path):
    return save_checkpoint(
        path,
        'detector',
        asdict(bundle.config),
        input_channels=bundle.input_channels,
        anchors=bundle.anchors.tolist(),
        state_dict=bundle.model.state_dict(),
    )


def load_detector(path):
    checkpoint = load_checkpoint(path, 'detector')
    config = DetectorConfig(**checkpoint['config'])
    model = build_detector(checkpoint['input_channels'], config.num_anchors)
    model.load_state_dict(checkpoint['state_dict'])
    model.eval()
    return DetectorBundle(model=model, anchors=np.asarray(checkpoint['anchors']), config=config)


@torch.no_grad()
def detect(bundle, image):
    """
    Run the detector on an ``H x W x 3`` uint8 image.
    """
    height, width = image.shape[:2]
    model = bundle.model
    was_training = model.training
    model.eval()
    device = get_device()
    tensor = image_to_detector_tensor(image, bundle.input_channels, bundle.config.input_size)
    output = model.to(device)(tensor[None].to(device))[0]
    model.train(was_training)
    return decode_detections(output, bundle.anchors, (width, height))


def locate_iris(bundle, image, threshold=None, pad_fraction=None):
    """
    Detection -> best detection -> padded power-of-two square, or the full
    image when nothing clears the threshold.
    """
    threshold = get_setting('DETECTION_THRESHOLD') if threshold is None else threshold
    pad_fraction = get_setting('ROI_PAD_FRACTION') if pad_fraction is None else pad_fraction
    height, width = image.shape[:2]
    best = select_detection(detect(bundle, image), (width, height), threshold)
    roi = roi_for(best, (width, height), pad_fraction)
    if roi.is_fallback:
        logger.info("No iris detection at or above %.2f; segmenting the full image", threshold)
    return roi
