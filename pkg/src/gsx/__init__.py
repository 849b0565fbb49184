"""Object extraction from 3D Gaussian Splatting scenes.

Pipeline: pretrain a full-scene Gaussian model, distill per-object labels
into a per-Gaussian feature, select the target object's Gaussians, prune
floaters by K-th nearest-neighbor distance, detect occluded regions by
comparing object vs. scene depth, inpaint them on a 2x2 grid of
object-centered views, and fine-tune the object-only model.
"""

from gsx.types import Camera, Gaussian, GaussianCloud, PipelineConfig

__version__ = "0.1.0"

__all__ = ["Camera", "Gaussian", "GaussianCloud", "PipelineConfig", "__version__"]
