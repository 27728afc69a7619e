from dataclasses import dataclass, field
from pathlib import Path

from dadkit import model as model_mod
from dadkit.config import parse_float
from dadkit.data import load_dataset
from dadkit.errors import ConfigError
from dadkit.evaluator import (
    RobustnessReport,
    adversarial_accuracy,
    fgsm_config,
    load_suite_manifest,
    materialize,
    pgd_config,
    report,
    write_report_csv,
)
from dadkit.model import load_classifier
from runners.runner import Runner, parse_named_paths


@dataclass
class EvalResult:
    reports: list[RobustnessReport]
    report_path: Path | None = None
    # model -> attack name -> accuracy
    adversarial: dict[str, dict[str, float]] = field(default_factory=dict)


class EvalRunner(Runner[EvalResult]):
    command = "eval"

    def output_dir(self) -> Path:
        return Path(self.args.report).parent if self.args.report else self.home

    def run(self) -> EvalResult:
        models = parse_named_paths(self.args.model, "--model")
        if not models:
            raise ConfigError("eval needs at least one --model")
        manifest = load_suite_manifest(self.args.suites)
        base = load_dataset(manifest.base) if manifest.base is not None else None
        suites = materialize(manifest, base)
        baseline = load_classifier(self.args.baseline, map_location=self.device) if self.args.baseline else None

        result = EvalResult(reports=[])
        for name, path in models.items():
            model = load_classifier(path, map_location=self.device)
            result.reports.append(
                report(
                    model,
                    manifest,
                    name=name,
                    baseline=baseline,
                    suites=suites,
                    base=base,
                    device=self.device,
                    workers=self.args.workers,
                )
            )
            self.manifest.fingerprints[name] = model_mod.fingerprint(model).hex()
            if self.args.adversarial:
                result.adversarial[name] = self.adversarial(model, base)

        if self.args.report:
            result.report_path = write_report_csv(result.reports, self.args.report)
            self.manifest.outputs = {"report": str(result.report_path)}
        self.manifest.inputs = {"suites": str(self.args.suites), **{k: str(v) for k, v in models.items()}}
        if self.args.baseline:
            self.manifest.inputs["baseline"] = str(self.args.baseline)
        return result

    def adversarial(self, model, base) -> dict[str, float]:
        dataset = load_dataset(self.args.data) if self.args.data else base
        if dataset is None:
            raise ConfigError("--adversarial needs --data or a BASE entry in the suite manifest")
        try:
            eps = parse_float(self.args.adversarial)
        except ValueError as e:
            raise ConfigError(f"--adversarial: {e}") from e
        return {
            "fgsm": adversarial_accuracy(model, dataset, fgsm_config(eps), device=self.device),
            f"pgd{self.args.pgd_steps}": adversarial_accuracy(
                model, dataset, pgd_config(eps, self.args.pgd_steps), device=self.device
            ),
        }

    def summary(self, result: EvalResult) -> str:
        suites = list(result.reports[0].accuracies)
        header = ["model", *suites, "avg", "mce"]
        rows = [header]
        for r in result.reports:
            mce = "-" if r.mce is None else f"{r.mce:.1f}"
            rows.append([r.model, *(f"{v:.2f}" for v in r.accuracies.values()), f"{r.average:.2f}", mce])
        widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in rows]
        for name, scores in result.adversarial.items():
            lines.append(f"{name} adversarial: " + ", ".join(f"{k}={v:.2f}" for k, v in scores.items()))
        if result.report_path:
            lines.append(f"Report written to {result.report_path}")
        return "\n".join(lines)
