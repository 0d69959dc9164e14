import os

from dotenv import load_dotenv

load_dotenv()

def env_bool(name, default=False):
    v = os.getenv(name)
    if v is None: return default
    return str(v).strip().lower() in ("1", "true", "yes", "y")

OUT_DIR = os.getenv("DYDET_OUT_DIR", "runs/default")
LOG_LEVEL = os.getenv("DYDET_LOG_LEVEL", "INFO")
SEED = int(os.getenv("DYDET_SEED", "0"))
CONF_THRESH = float(os.getenv("DYDET_CONF_THRESH", "0.5"))
NMS_IOU = float(os.getenv("DYDET_NMS_IOU", "0.5"))
MEASURE_LATENCY = env_bool("DYDET_MEASURE_LATENCY", False)
LATENCY_RUNS = int(os.getenv("DYDET_LATENCY_RUNS", "100"))
