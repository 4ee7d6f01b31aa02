"""Checkpoint archive: a JSON header plus one VCOF-style float32 blob per tensor.

The archive is an uncompressed zip with fixed timestamps, so saving the same
parameters twice produces identical bytes.  Tensors are stored as float32;
loading widens them back to float64.
"""

import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

from . import fileformat
from .coeffs import ConditioningVocabulary
from .errors import FormatError
from .model import ModelConfig, flatten, unflatten

TENSOR_MAGIC = "VCOF"
_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    task: str
    model_config: ModelConfig
    params: dict
    vocabularies: dict = field(default_factory=dict)
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def header(self):
        flat = flatten(self.params)
        return {
            "format": "convhead-checkpoint",
            "version": 1,
            "task": self.task,
            "model_config": self.model_config.to_dict(),
            "vocabularies": {role: {"name": v.name, "labels": list(v.labels)}
                             for role, v in sorted(self.vocabularies.items())},
            "seed": self.seed,
            "meta": self.meta,
            "tensors": [{"name": k, "shape": list(np.shape(v))} for k, v in flat.items()],
        }

    def to_bytes(self):
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
            def put(name, data):
                zf.writestr(zipfile.ZipInfo(name, date_time=_EPOCH), data)
            put("header.json", json.dumps(self.header(), sort_keys=True, indent=1))
            for name, value in flatten(self.params).items():
                arr = np.asarray(value, dtype=np.float64)
                put(f"tensors/{name}.vcof", fileformat.encode_matrix(TENSOR_MAGIC, arr.reshape(1, -1)))
        return buf.getvalue()

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, data, source="<bytes>"):
        try:
            zf = zipfile.ZipFile(io.BytesIO(data))
            header = json.loads(zf.read("header.json"))
        except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
            raise FormatError(f"{source}: not a checkpoint archive ({exc})") from exc
        if header.get("format") != "convhead-checkpoint" or header.get("version") != 1:
            raise FormatError(f"{source}: unsupported checkpoint header")
        flat = {}
        for entry in header["tensors"]:
            name, shape = entry["name"], tuple(entry["shape"])
            try:
                blob = zf.read(f"tensors/{name}.vcof")
            except KeyError as exc:
                raise FormatError(f"{source}: missing tensor {name}") from exc
            mat = fileformat.decode_matrix(TENSOR_MAGIC, blob, source=f"{source}:{name}")
            if mat.size != int(np.prod(shape)):
                raise FormatError(f"{source}: tensor {name} has {mat.size} values, header says {shape}")
            flat[name] = mat.reshape(shape).astype(np.float64)
        vocabs = {role: ConditioningVocabulary(v["name"], v["labels"])
                  for role, v in header["vocabularies"].items()}
        return cls(header["task"], ModelConfig(**header["model_config"]), unflatten(flat),
                   vocabs, header["seed"], header.get("meta", {}))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), source=str(path))
