import io
import json
import logging

import numpy as np

from dydet.logging_utils import setup_logging


def test_json_lines_carry_context():
    buf = io.StringIO()
    setup_logging("DEBUG", stream=buf)
    logging.getLogger("dydet.testing").info("epoch_done", extra={"context": {"epoch": 2, "loss": np.float64(0.25)}})
    rec = json.loads(buf.getvalue().splitlines()[-1])
    assert rec["msg"] == "epoch_done" and rec["logger"] == "dydet.testing" and rec["level"] == "INFO"
    assert rec["epoch"] == 2 and rec["loss"] == 0.25
    assert rec["ts"].endswith("Z")


def test_level_filters_records():
    buf = io.StringIO()
    setup_logging("WARNING", stream=buf)
    logging.getLogger("dydet.testing").info("quiet")
    logging.getLogger("dydet.testing").warning("loud")
    assert [json.loads(line)["msg"] for line in buf.getvalue().splitlines()] == ["loud"]
