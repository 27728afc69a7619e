from dataclasses import dataclass
from pathlib import Path

from dadkit.errors import ConfigError
from dadkit.trainer import BudgetRow, TrainLog, budget_report, write_budget_csv
from runners.runner import Runner, parse_named_paths


@dataclass
class BudgetResult:
    rows: list[BudgetRow]
    path: Path | None = None


class BudgetRunner(Runner[BudgetResult]):
    """Relative training cost of runs whose train logs were written by ``train``."""

    command = "budget"

    def output_dir(self) -> Path:
        return Path(self.args.out).parent if self.args.out else self.home

    def run(self) -> BudgetResult:
        paths = parse_named_paths(self.args.log, "--log")
        if not paths:
            raise ConfigError("budget needs at least one --log name=path")
        baseline = self.args.baseline or next(iter(paths))
        logs = {name: TrainLog.read_csv(path) for name, path in paths.items()}
        rows = budget_report(logs, baseline)
        result = BudgetResult(rows)
        if self.args.out:
            result.path = write_budget_csv(rows, self.args.out)
            self.manifest.outputs = {"budget": str(result.path)}
        self.manifest.inputs = {k: str(v) for k, v in paths.items()}
        return result

    def summary(self, result: BudgetResult) -> str:
        lines = [f"{'run':<12} {'attack steps':>12} {'cost':>12} {'relative':>9}"]
        for r in result.rows:
            lines.append(f"{r.name:<12} {r.attack_steps_per_sample:>12.2f} {r.cost:>12} {r.relative:>8.2f}x")
        if result.path:
            lines.append(f"Budget table written to {result.path}")
        return "\n".join(lines)
