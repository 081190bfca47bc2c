"""Certify and decompose overcomplete random symmetric 3-tensors."""

from .certificate import CertificateReport, certify, default_threshold
from .decomposition import ExtractionConfig, decompose, extract_components, match_components, refine
from .instances import NoiseSpec, add_noise, orthonormal_components, sample_components, sample_instance
from .moment_sdp import certify_via_sdp
from .tensor import ComponentSet, SymmetricTensor3, eval_cubic, from_components, from_dense

__all__ = [
    "CertificateReport", "ComponentSet", "ExtractionConfig", "NoiseSpec", "SymmetricTensor3",
    "add_noise", "certify", "certify_via_sdp", "decompose", "default_threshold", "eval_cubic",
    "extract_components", "from_components", "from_dense", "match_components",
    "orthonormal_components", "refine", "sample_components", "sample_instance",
]
