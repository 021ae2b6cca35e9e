"""
=============================================================================
RUN CONFIGURATION
=============================================================================
One validated RunConfig per CLI invocation, built either from parsed
command-line flags or from a JSON file (`train --config run.json`).

Example run.json:
    {
      "command": "train",
      "seed": 3,
      "lr": 0.01,
      "adapter": {"method": "cdvft", "d_out": 32, "d_in": 32, "m": 2, "p": 32},
      "task": {"kind": "matrix_recovery", "d_out": 32, "d_in": 32, "steps": 2000}
    }

Unknown keys anywhere are rejected before any computation runs.
"""

import json
import logging
from dataclasses import dataclass, field, fields

from cdvft.complexity import AdapterConfig
from cdvft.errors import ConfigError
from cdvft.gradcheck import DEFAULT_TOL
from cdvft.trainer import DEFAULT_LR, ToyTask

logger = logging.getLogger(__name__)

# =============================================================================
# CONFIGURATION CONSTANTS
# =============================================================================
COMMANDS = ('gradcheck', 'bench', 'train', 'merge', 'compare', 'export-dense')
DEFAULT_OUTPUT_DIR = 'output/json'


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    adapter: AdapterConfig = None
    adapters: list = field(default_factory=list)
    layer_set: str = None
    task: ToyTask = None
    lr: float = DEFAULT_LR
    tolerance: float = DEFAULT_TOL
    trials: int = 3
    dims: list = field(default_factory=list)
    repeats: int = 20
    output_dir: str = DEFAULT_OUTPUT_DIR
    checkpoint_path: str = None
    weights_path: str = None
    output_path: str = None

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.adapter is not None:
            self.adapter.validate()
        if self.task is not None:
            self.task.validate()
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.tolerance <= 0:
            raise ConfigError(f"tolerance must be positive, got {self.tolerance}")
        if self.trials < 1 or self.repeats < 1:
            raise ConfigError("trials and repeats must be >= 1")
        if any(d < 1 for d in self.dims):
            raise ConfigError(f"dims must be positive, got {self.dims}")
        if self.command in ('merge', 'export-dense') and not self.checkpoint_path:
            raise ConfigError(f"{self.command} needs a checkpoint path")
        if self.command == 'merge' and not self.weights_path:
            raise ConfigError("merge needs a weights path")
        return self

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        _reject_unknown(cls, data, 'run config')
        if isinstance(data.get('adapter'), dict):
            _reject_unknown(AdapterConfig, data['adapter'], 'adapter')
            data['adapter'] = AdapterConfig(**data['adapter'])
        if isinstance(data.get('task'), dict):
            _reject_unknown(ToyTask, data['task'], 'task')
            try:
                data['task'] = ToyTask(**data['task'])
            except TypeError as e:
                raise ConfigError(f"task: {e}") from e
        try:
            return cls(**data).validate()
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def from_json_file(cls, path):
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        logger.info(f"Loaded run config: {path}")
        return cls.from_dict(data)


def _reject_unknown(cls, data, where):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
