"""
Severity parameter tables and fixed numeric constants.

The per-level tables are part of the external contract: changing a value
changes every synthesized dataset. Index i of each tuple is severity level i+1.
"""

import numpy as np

SEVERITY_LEVELS = (1, 2, 3, 4, 5)
MIN_IMAGE_SIDE = 64
CHANNELS = 3

# Luminance weights (ITU-R BT.601)
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

# PSNR sentinel for identical images, and the pseudo-MOS affine map
PSNR_CAP_DB = 100.0
PSEUDO_MOS_FLOOR_DB = 15.0
PSEUDO_MOS_SPAN_DB = 35.0

# Family severity tables, keyed by KADID-style index
GAUSSIAN_BLUR_SIGMA = (0.8, 1.6, 2.4, 3.6, 5.0)
LENS_BLUR_RADIUS = (1.0, 2.0, 3.0, 4.0, 6.0)
MOTION_BLUR_LENGTH = (3, 5, 9, 13, 19)
JPEG2000_SMOOTH_SIGMA = (0.8, 1.2, 1.8, 2.6, 3.6)
JPEG2000_STEP = (0.02, 0.04, 0.08, 0.14, 0.25)
JPEG_QUANT_SCALE = (2, 4, 8, 16, 32)
WHITE_NOISE_SIGMA = (0.015, 0.03, 0.05, 0.08, 0.12)
IMPULSE_NOISE_FRACTION = (0.01, 0.03, 0.07, 0.12, 0.20)
MULTIPLICATIVE_NOISE_SIGMA = (0.05, 0.10, 0.18, 0.28, 0.40)
BRIGHTEN_GAMMA = (1.1, 1.25, 1.5, 1.8, 2.2)
DARKEN_GAMMA = (1.1, 1.25, 1.5, 1.8, 2.2)
MEAN_SHIFT_DELTA = (0.04, 0.08, 0.12, 0.18, 0.25)
JITTER_STD = (0.5, 1.0, 1.5, 2.0, 3.0)
PIXELATE_BLOCK = (2, 3, 4, 6, 8)
HIGH_SHARPEN_AMOUNT = (0.6, 1.2, 2.0, 3.0, 4.5)
HIGH_SHARPEN_SIGMA = 1.0
CONTRAST_FACTOR = (0.85, 0.70, 0.55, 0.40, 0.25)

# Standard JPEG luminance quantization table (quality 50, 0..255 units).
# Effective step in [0,1] units is table * scale / (8 * 255); scale 8 ~ quality 50.
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)
JPEG_BLOCK = 8

# NSS features
MSCN_WINDOW = 7
MSCN_SIGMA = 7.0 / 6.0
MSCN_C = 1.0 / 255.0
AGGD_MIN_SAMPLES = 16
AGGD_ALPHA_GRID = np.arange(0.2, 10.0 + 1e-9, 0.001)
FEATURES_PER_SCALE = 18
FEATURE_SCALES = 2
FEATURE_DIM = FEATURES_PER_SCALE * FEATURE_SCALES

# Numerics shared by the trainable heads
PROB_CLAMP = 1e-12
SOFTMAX_SUM_TOL = 1e-9
ROW_SUM_TOL = 1e-6
GRADCHECK_STEP = 1e-5
# Per-coordinate errors are scaled by at least this gradient magnitude
GRADCHECK_SCALE_FLOOR = 1e-5
L1_KINK_MARGIN = 1e-3
DEFAULT_HIDDEN = 32

# Protocol
DEFAULT_SPLIT_RATIO = 0.8
DEFAULT_REPEATS = 5
GDS_MIN_IMPROVEMENT = 1e-4
PROXY_DISTANCE_EPOCHS = 10
PROXY_DISTANCE_MIN_SAMPLES = 20
PLCC_LOGISTIC_MAX_ITER = 200

CHECKPOINT_VERSION = 1
