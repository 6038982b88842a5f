"""Streaming Wigner distribution deconvolution for 4D-STEM ptychography."""

from .geometry import AcquisitionGeometry, active_mask, overlaps, physical_shift
from .hermite import HermiteBasis, build_basis, default_sigma
from .live import LiveReconstructor, LiveState, finalize, merge
from .reference import wdd_reconstruct
from .simulator import ComplexImage, Dataset4D, apply_poisson, forward, make_probe, make_test_object
from .wiener import WienerFilterBank, build_filter_bank

__version__ = "0.1.0"

__all__ = [
    "AcquisitionGeometry",
    "ComplexImage",
    "Dataset4D",
    "HermiteBasis",
    "LiveReconstructor",
    "LiveState",
    "WienerFilterBank",
    "active_mask",
    "apply_poisson",
    "build_basis",
    "build_filter_bank",
    "default_sigma",
    "finalize",
    "forward",
    "make_probe",
    "make_test_object",
    "merge",
    "overlaps",
    "physical_shift",
    "wdd_reconstruct",
]
