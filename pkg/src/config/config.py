import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# --- PATHS ---
# Get the project root directory (parent of src/)
PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

DATA_PATH = os.getenv("NOISELAB_DATA_DIR", os.path.join(PROJECT_ROOT, "data"))
RESULTS_PATH = os.getenv("NOISELAB_RESULTS_DIR", os.path.join(PROJECT_ROOT, "results"))

# --- DATASET FILES ---
# Standard file names inside DATA_PATH/<kind>/ ; ".gz" variants are picked up as well
IDX_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
CIFAR10_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR10_TEST_FILES = ["test_batch.bin"]

# --- MODEL PARAMETERS ---
NUM_CLASSES = 10
VGG_SMALL_LAYOUT = "16,16,M,32,32,M,64,64"  # M = 2x2 max pool
WEIGHTS_MAGIC = b"ANLW"
WEIGHTS_VERSION = 1

BATCHNORM_PARAMS = {
    "momentum": 0.1,
    "eps": 1e-5,
}

# --- TRAINING PARAMETERS ---
OPTIMIZER_DEFAULTS = {
    "lr": 0.05,
    "momentum": 0.9,
    "nesterov": True,
    "weight_decay": 5e-4,
}

SCHEDULE_DEFAULTS = {
    "kind": "step",
    "step_divisor": 5.0,
    "step_period": 50,
    "adaptive_divisor": 2.0,
    "adaptive_patience": 5,
    "min_lr": 0.001,
}

# Noise magnitude sanity cap (|epsilon| <= 1)
MAX_ABS_EPSILON = 1.0

# --- ATTACK / ANALYSIS ---
FGSM_DELTAS = (0, 2, 4, 6, 8)  # pixel units, 0-255 scale
PIXEL_SCALE = 255.0
SIMILARITY_PAIRS = 100

# --- OTHER SETTINGS ---
IS_DEBUG = os.getenv("DEBUG_MODE", "false").lower() == "true"
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
CSV_FLOAT_FORMAT = "%.6f"
