"""
Artifact writing for pipeline runs.

Every file lands atomically (temporary file in the target directory, then
``os.replace``) and opens with a provenance header naming the tool version and
the digest of the effective config. JSON artifacts carry the same provenance
under ``_meta``.
"""

import hashlib
import json
import logging
import math
import os
import tempfile
from dataclasses import asdict
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import pandas as pd

from evacanalytics import __version__
from pipeline.config import PipelineConfig, emit_config

logger = logging.getLogger(__name__)

TOOL_NAME = 'evacanalytics'
CSV_FLOAT_FORMAT = '%.10g'


def file_digest(path: Union[str, Path]) -> str:
    h = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(value: Any) -> Any:
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, 'item'):
        return _jsonable(value.item())
    return value


class ArtifactWriter:
    def __init__(self, cfg: PipelineConfig, out_dir: Optional[Union[str, Path]] = None):
        self.cfg = cfg
        self.out_dir = Path(out_dir if out_dir is not None else cfg.output_dir)
        self.config_text = emit_config(cfg)
        self.config_digest = hashlib.sha256(self.config_text.encode('utf-8')).hexdigest()
        self.written: dict[str, str] = {}

    @property
    def header(self) -> str:
        return f'# {TOOL_NAME} {__version__} config_sha256={self.config_digest}\n'

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def _write_atomic(self, name: str, text: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        target = self.path(name)
        fd, tmp = tempfile.mkstemp(prefix=f'.{name}.', dir=self.out_dir)
        try:
            with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as f:
                f.write(text)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.written[name] = file_digest(target)
        logger.debug('Wrote %s', target)
        return target

    def write_text(self, name: str, text: str, header: bool = True) -> Path:
        return self._write_atomic(name, (self.header if header else '') + text)

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        body = frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')
        return self.write_text(name, body)

    def write_json(self, name: str, payload: Any) -> Path:
        meta = {'tool': TOOL_NAME, 'version': __version__, 'config_sha256': self.config_digest}
        if isinstance(payload, Mapping):
            document = {**_jsonable(payload), '_meta': meta}
        else:
            document = {'items': _jsonable(payload), '_meta': meta}
        return self._write_atomic(name, json.dumps(document, indent=2, sort_keys=True) + '\n')

    def write_config(self) -> Path:
        return self.write_text('config.env', self.config_text)

    def write_manifest(self, inputs: Mapping[str, Optional[Union[str, Path]]]) -> Path:
        """Input digests, parameter values and the digest of every artifact written so far."""
        manifest = {
            'inputs': {
                name: {'path': str(path), 'sha256': file_digest(path)}
                for name, path in sorted(inputs.items())
                if path and Path(path).is_file()
            },
            'parameters': asdict(self.cfg),
            'artifacts': dict(sorted(self.written.items())),
        }
        return self.write_json('manifest.json', manifest)
