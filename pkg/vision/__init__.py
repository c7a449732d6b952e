from .cache import DescriptorCacheFile, LazyDescriptorStore
from .dird import (
    DirdConfig,
    DirdDescriptor,
    compute_descriptor,
    descriptor_distance,
    extract_descriptor,
    filter_bank_response,
    normalized_distance,
    quantize,
    similarity,
)
from .image import GrayImage, load_image, resample, save_pgm
