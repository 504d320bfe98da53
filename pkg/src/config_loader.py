"""Loading and validation of JSON configurations"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

from src.cone_geometry import Direction
from src.ensembles import MatrixLaw
from src.exceptions import ConfigError, LabError
from src.harness import ExperimentSpec
from src.walk_engine import SimulationPlan

logger = logging.getLogger(__name__)


class ConfigLoader:
    """Reads ensembles, simulation plans and experiment specs from JSON files"""

    def __init__(self, base_dir: Union[str, Path, None] = None):
        self.base_dir = Path(base_dir) if base_dir is not None else None

    def _resolve(self, file_path: Union[str, Path]) -> Path:
        path = Path(file_path)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        return path

    def load_json(self, file_path: Union[str, Path]) -> Dict[str, Any]:
        """
        Load a JSON object from file

        Args:
            file_path: Path to the JSON file

        Returns:
            Parsed dictionary
        """
        path = self._resolve(file_path)
        try:
            with open(path, encoding='utf-8') as handle:
                data = json.load(handle)
        except FileNotFoundError:
            raise FileNotFoundError(f"File not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"Invalid JSON in {path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must hold a JSON object")
        return data

    def ensemble_spec(self, data: Dict[str, Any], relative_to: Path) -> Dict[str, Any]:
        """Embedded ensemble, or the ensemble file it references relative to the experiment spec file"""
        ensemble = data.get('ensemble')
        if isinstance(ensemble, dict):
            return ensemble
        if isinstance(ensemble, str):
            return ConfigLoader(relative_to).load_json(ensemble)
        raise ConfigError("Spec needs an 'ensemble' object or file reference")

    def load_ensemble(self, file_path: Union[str, Path]) -> MatrixLaw:
        return MatrixLaw.from_json(self.load_json(file_path))

    def load_plan(self, file_path: Union[str, Path]) -> SimulationPlan:
        """Simulation plan: ensemble, start, n, num_traj, seed and optional thresholds"""
        path = self._resolve(file_path)
        data = self.load_json(path)
        law = MatrixLaw.from_json(self.ensemble_spec(data, path.parent))
        try:
            start = Direction.from_json(data['start']) if 'start' in data else Direction.barycenter(law.dim)
            dual = Direction.from_json(data['dual_start']) if data.get('dual_start') is not None else None
            return SimulationPlan(
                law=law, start=start, n=int(data['n']), num_traj=int(data['num_traj']),
                seed=int(data.get('seed', 0)), retain_matrices=bool(data.get('retain_matrices', False)),
                dual_start=dual, thresholds=tuple(float(y) for y in data.get('thresholds', ())),
            )
        except KeyError as e:
            raise ConfigError(f"Plan {path} is missing field {e}")
        except (TypeError, LabError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"Plan {path} is malformed: {e}")

    def load_experiment(self, file_path: Union[str, Path], **overrides: Any) -> ExperimentSpec:
        """Experiment spec for the harness, with its ensemble resolved and top-level fields overridden"""
        path = self._resolve(file_path)
        data = self.load_json(path)
        data = dict(data, ensemble=self.ensemble_spec(data, path.parent), **overrides)
        logger.info(f"Loaded experiment spec {path}")
        return ExperimentSpec.from_json(data)
