import os
import sys
from pathlib import Path

import torch

from dadkit.utils import resolve_device
from runners.budget_runner import BudgetRunner
from runners.build_cache_runner import BuildCacheRunner
from runners.chart_runner import ChartRunner
from runners.diagnose_runner import DiagnoseRunner
from runners.eval_runner import EvalRunner
from runners.experiment_runner import ExperimentRunner
from runners.prepare_data_runner import PrepareDataRunner
from runners.train_runner import TrainRunner
from runners.train_vq_runner import TrainVQRunner

RUNNERS = {
    runner.command: runner
    for runner in (
        PrepareDataRunner,
        TrainVQRunner,
        BuildCacheRunner,
        TrainRunner,
        EvalRunner,
        DiagnoseRunner,
        ChartRunner,
        BudgetRunner,
        ExperimentRunner,
    )
}


def get_env(var, default=None):
    val = os.getenv(var)
    if not val and default is None:
        print(f"Error: Environment variable {var} is not set.")
        sys.exit(1)
    return val or default


def artifact_dir() -> Path:
    p = Path(get_env("DAD_HOME", str(Path.home() / ".cache" / "dadkit"))).expanduser()
    p.mkdir(parents=True, exist_ok=True)
    return p


def device() -> torch.device:
    return resolve_device(os.getenv("DAD_DEVICE") or None)


# ----------------------------
# Runner selection
# ----------------------------
def get_runner(command: str, args, *, home: Path | None = None, dev: torch.device | None = None):
    try:
        cls = RUNNERS[command]
    except KeyError:
        raise ValueError(f"Unknown command: {command}") from None
    return cls(args, home=home or artifact_dir(), device=dev or device())
