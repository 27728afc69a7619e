from dataclasses import dataclass
from pathlib import Path

from dadkit.data import load_dataset
from dadkit.diagnostics.chart import ChartRow, chart_data, write_chart_csv
from dadkit.errors import ConfigError
from dadkit.evaluator import load_suite_manifest, materialize
from dadkit.model import load_classifier
from runners.runner import Runner, parse_named_paths


@dataclass
class ChartResult:
    path: Path
    rows: list[ChartRow]


class ChartRunner(Runner[ChartResult]):
    command = "chart-data"

    def output_dir(self) -> Path:
        return Path(self.args.out).parent

    def run(self) -> ChartResult:
        models = {name: load_classifier(p, map_location=self.device) for name, p in parse_named_paths(self.args.model, "--model").items()}
        if not models:
            raise ConfigError("chart-data needs at least one --model")
        manifest = load_suite_manifest(self.args.suites)
        clean_path = self.args.clean or manifest.base
        if clean_path is None:
            raise ConfigError("chart-data needs --clean or a BASE entry in the suite manifest")
        clean = load_dataset(clean_path)
        suites = materialize(manifest, clean if manifest.base is not None else None)
        rows = chart_data(models, clean, suites, n_batches=self.args.batches, batch_size=self.args.batch_size, device=self.device)
        path = write_chart_csv(rows, self.args.out)

        self.manifest.inputs = {"suites": str(self.args.suites), "clean": str(clean_path)}
        self.manifest.outputs = {"chart": str(path)}
        return ChartResult(path, rows)

    def summary(self, result: ChartResult) -> str:
        lines = [f"{r.model:>12} {r.suite:>16}  w={r.wasserstein:.4f}  acc={r.accuracy:.2f}" for r in result.rows]
        lines.append(f"Chart data written to {result.path}")
        return "\n".join(lines)
