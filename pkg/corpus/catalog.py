from dataclasses import dataclass
from typing import Optional

from .samples import Spectrum


@dataclass(frozen=True)
class DatasetInfo:
    name: str
    spectrum: Spectrum
    images: int
    subjects: Optional[int]
    resolution: Optional[tuple]


# Nominal figures of the public iris datasets the pipeline is usually run on.
KNOWN_DATASETS = {
    info.name: info
    for info in (
        DatasetInfo('BioSec', Spectrum.NIR, 400, 25, (640, 480)),
        DatasetInfo('CASIA-I3', Spectrum.NIR, 2639, 249, (320, 280)),
        DatasetInfo('CASIA-T4', Spectrum.NIR, 1000, 50, (640, 480)),
        DatasetInfo('IITD-1', Spectrum.NIR, 2240, 224, (320, 240)),
        DatasetInfo('NICE.I', Spectrum.VIS, 945, None, (400, 300)),
        DatasetInfo('CrEye-Iris', Spectrum.VIS, 1000, 120, (400, 300)),
        DatasetInfo('MICHE-I', Spectrum.VIS, 1000, 75, None),
    )
}


def lookup(name):
    return KNOWN_DATASETS.get(name)
