"""Quality-aware two-modality saliency fusion.

Stage I trains one encoder-decoder saliency generator per modality with
content and adversarial losses; Stage II trains a DQN that adjusts the
fusion weights of the resulting coarse maps.
"""
import os

# must run before numpy loads its BLAS
_threads = os.environ.get("QFUSE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
