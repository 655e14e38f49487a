"""Checkpoint container for trained denoisers.

Layout: magic bytes ``IFLOW1``, an 8-byte little-endian header length, a
canonical JSON header (layout map, widths, schedule, eigenframe, config,
training metadata), then the raw little-endian float64 parameter blocks,
network weights first and the EMA copy second. Round trips are byte exact.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .datasets import EigenFrame
from .denoiser import DenoiserNet, TrainConfig, TrainedDenoiser
from .schedule import InflationSchedule

MAGIC = b"IFLOW1"


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save(model: TrainedDenoiser, path: str | Path) -> None:
    net = model.net
    header = {
        "d": net.d,
        "hidden": list(net.hidden),
        "embed_dim": net.embed_dim,
        "widths": net.widths,
        "layout": [[name, offset, list(shape)] for name, offset, shape in net.layout],
        "schedule": model.schedule.to_json(),
        "eigenframe": None
        if model.frame is None
        else {
            "mean": model.frame.mean.tolist(),
            "w": model.frame.w.tolist(),
            "sigma0_sq": model.frame.sigma0_sq.tolist(),
        },
        "preprocess": model.preprocess,
        "config": dataclasses.asdict(model.config),
        "metadata": {"loss_curve": [float(x) for x in model.loss_curve]},
    }
    blob = _canonical_json(header)
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(np.ascontiguousarray(model.params, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.ema_params, dtype="<f8").tobytes())


def load(path: str | Path) -> TrainedDenoiser:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    header_len = int.from_bytes(raw[len(MAGIC) : len(MAGIC) + 8], "little")
    start = len(MAGIC) + 8
    header = json.loads(raw[start : start + header_len].decode("utf-8"))

    net = DenoiserNet(header["d"], tuple(header["hidden"]), header["embed_dim"])
    expected = [[name, offset, list(shape)] for name, offset, shape in net.layout]
    if expected != header["layout"]:
        raise ValueError(f"{path}: layout map does not match architecture")

    cfg_dict = dict(header["config"])
    cfg_dict["hidden"] = tuple(cfg_dict["hidden"])
    config = TrainConfig(**cfg_dict)
    schedule = InflationSchedule.from_json(header["schedule"])

    frame = None
    if header["eigenframe"] is not None:
        ef = header["eigenframe"]
        frame = EigenFrame(
            mean=np.asarray(ef["mean"], dtype=float),
            w=np.asarray(ef["w"], dtype=float),
            sigma0_sq=np.asarray(ef["sigma0_sq"], dtype=float),
        )

    body = start + header_len
    n = net.n_params
    params = np.frombuffer(raw, dtype="<f8", count=n, offset=body).astype(float)
    ema = np.frombuffer(raw, dtype="<f8", count=n, offset=body + 8 * n).astype(float)
    if raw[body + 16 * n :]:
        raise ValueError(f"{path}: trailing bytes after parameter blocks")

    return TrainedDenoiser(
        net=net,
        params=params,
        ema_params=ema,
        schedule=schedule,
        config=config,
        frame=frame,
        preprocess=header["preprocess"],
        loss_curve=list(header["metadata"]["loss_curve"]),
    )
