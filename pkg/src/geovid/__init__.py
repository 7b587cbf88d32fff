"""geovid: a desk-scale video-to-3D stack on a minimal autodiff kernel.

Subpackages / modules:
  numkit       tensor autodiff, MLP/attention blocks, AdamW, VLT1 files
  geometry     pinhole cameras, depth maps, quaternions
  cta          cross-task adapter with bridge tokens
  recon        global-frame attention backbone, camera and depth heads
  metric_depth bin-based metric depth with center refinement
  scale_align  weighted-least-squares scale recovery
  patch3d      back-projection, positional embeddings, 3D patch tokens
  losses       distillation and joint training objectives
  synthscene   deterministic synthetic scenes (the ground-truth oracle)
  evalmetrics  pose / depth / point-cloud evaluation
  model, train, cli   assembly, two-stage training, command line
"""

__version__ = "0.1.0"
