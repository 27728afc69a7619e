from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

from dadkit.diagnostics.distributions import EmpiricalDistribution
from dadkit.diagnostics.instances import lemma31_instance, lemma33_instance, lemma34_instance, run_instances
from dadkit.diagnostics.transport import GroundMetric, tv_distance, wasserstein_lp
from dadkit.errors import ConfigError
from runners.runner import Runner


@dataclass
class DiagnoseResult:
    check: str
    trials: int = 0
    passed: int = 0
    # Smallest slack (or rhs - lhs) seen over all trials.
    worst_margin: float | None = None
    values: dict[str, float] = field(default_factory=dict)


class DiagnoseRunner(Runner[DiagnoseResult]):
    command = "diagnose"

    def output_dir(self) -> Path:
        return Path(self.args.out) if getattr(self.args, "out", None) else self.home

    def run(self) -> DiagnoseResult:
        check = self.args.check
        self.manifest.command = f"diagnose-{check}"
        if check == "wasserstein":
            return self.distances()

        trials, seed, workers = self.args.trials, self.seed, self.args.workers
        self.manifest.seed = seed
        if check == "lemma31":
            outcomes = run_instances(lemma31_instance, trials, seed, workers)
            margins = [o.slack for o in outcomes]
        elif check == "lemma33":
            make = partial(lemma33_instance, epsilon_b=self.args.epsilon_b)
            outcomes = run_instances(make, trials, seed, workers)
            margins = [self.args.epsilon_b - o.distance for o in outcomes]
        elif check == "lemma34":
            outcomes = run_instances(lemma34_instance, trials, seed, workers)
            margins = [o.rhs - o.lhs for o in outcomes]
        else:
            raise ConfigError(f"Unknown check: {check}")
        return DiagnoseResult(
            check=check,
            trials=trials,
            passed=sum(o.holds for o in outcomes),
            worst_margin=min(margins) if margins else None,
        )

    def distances(self) -> DiagnoseResult:
        if not (self.args.p and self.args.q):
            raise ConfigError("diagnose wasserstein needs --p and --q distribution files")
        p = EmpiricalDistribution.load(self.args.p)
        q = EmpiricalDistribution.load(self.args.q)
        metric = GroundMetric(self.args.label_scale)
        self.manifest.inputs = {"p": str(self.args.p), "q": str(self.args.q)}
        return DiagnoseResult(
            check="wasserstein",
            values={
                "tv": tv_distance(p, q),
                "w1": wasserstein_lp(p, q, metric),
                "w2": wasserstein_lp(p, q, metric, order=2),
            },
        )

    def summary(self, result: DiagnoseResult) -> str:
        if result.values:
            return "\n".join(f"{k}: {v!r}" for k, v in result.values.items())
        margin = "n/a" if result.worst_margin is None else repr(result.worst_margin)
        status = "OK" if result.passed == result.trials else "VIOLATED"
        return f"{result.check}: {result.passed}/{result.trials} instances hold [{status}] (smallest margin {margin})"
