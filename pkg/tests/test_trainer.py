import pytest
import torch
import torch.nn.functional as F

from conftest import record_for
from dadkit.adversary import AttackConfig
from dadkit.data import ImageDataset, shuffled_batches
from dadkit.errors import DivergenceError, MissingInputError
from dadkit.model import LinearClassifier
from dadkit.objectives import DistillConfig, Objective
from dadkit.trainer import (
    TrainConfig,
    TrainLog,
    budget_report,
    build_optimizer,
    check_inputs,
    train,
    write_budget_csv,
)


def config(objective="ce", epochs=2, **overrides) -> TrainConfig:
    return TrainConfig(
        epochs=epochs,
        batch_size=4,
        lr=0.01,
        objective=DistillConfig(objective=objective),
        attack=AttackConfig(epsilon=0.05, steps=1, step_size=0.05),
        **overrides,
    )


def fresh_student(seed=5) -> LinearClassifier:
    torch.manual_seed(seed)
    return LinearClassifier(3, (3, 8, 8))


def test_ce_objective_is_plain_erm(tiny_dataset):
    cfg = config("ce", epochs=3)
    trained, _ = train(fresh_student(), tiny_dataset, cfg)

    manual = fresh_student()
    optimizer, scheduler = build_optimizer(manual, cfg, -(-len(tiny_dataset) // cfg.batch_size))
    for epoch in range(cfg.epochs):
        manual.train()
        for batch in shuffled_batches(tiny_dataset, cfg.batch_size, cfg.seed, epoch):
            loss = F.cross_entropy(manual(batch.images), batch.labels)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            scheduler.step()

    for ours, theirs in zip(trained.parameters(), manual.parameters()):
        torch.testing.assert_close(ours, theirs)


def test_log_counts_epochs(tiny_dataset):
    _, log = train(fresh_student(), tiny_dataset, config("ce", epochs=3))
    assert log.epochs == 3
    assert len(log.epoch_losses) == 3
    assert log.epoch_forward() == [len(tiny_dataset)] * 3
    assert log.total_backward == 3 * len(tiny_dataset)
    assert log.total_attack_steps == 0


@pytest.mark.parametrize("epochs", [1, 2, 4])
def test_dad_budget_ratio(tiny_dataset, linear_model, epochs):
    cache = [record_for(tiny_dataset, i) for i in range(len(tiny_dataset))]
    _, base = train(fresh_student(), tiny_dataset, config("ce", epochs=epochs))
    _, dad = train(fresh_student(), tiny_dataset, config("dad", epochs=epochs), teacher=linear_model, cache=cache)
    assert dad.total_attack_steps == 0
    rows = {r.name: r for r in budget_report({"baseline": base, "dad": dad})}
    assert rows["baseline"].relative == 1.0
    assert rows["dad"].relative == pytest.approx(2 + 1 / (2 * epochs))
    assert rows["dad"].attack_steps_per_sample == 0.0


@pytest.mark.parametrize("objective", ["at", "dat"])
def test_adversarial_training_budget_ratio(tiny_dataset, tiny_disc, objective):
    _, base = train(fresh_student(), tiny_dataset, config("ce"))
    _, adv = train(fresh_student(), tiny_dataset, config(objective), discretizer=tiny_disc)
    rows = {r.name: r for r in budget_report({"baseline": base, objective: adv})}
    assert rows[objective].relative == pytest.approx(3.0)
    assert rows[objective].attack_steps_per_sample == pytest.approx(1.0)


def test_every_objective_trains(tiny_dataset, linear_model, tiny_disc):
    cache = [record_for(tiny_dataset, i, accepted=i % 2 == 0) for i in range(len(tiny_dataset))]
    for objective in Objective:
        student, log = train(
            fresh_student(),
            tiny_dataset,
            config(objective.value, epochs=1),
            teacher=linear_model,
            cache=cache,
            discretizer=tiny_disc,
        )
        assert not student.training
        assert torch.isfinite(torch.tensor(log.epoch_losses)).all(), objective


def test_teacher_is_not_updated(tiny_dataset, linear_model):
    before = [p.detach().clone() for p in linear_model.parameters()]
    cache = [record_for(tiny_dataset, 0)]
    train(fresh_student(), tiny_dataset, config("dad"), teacher=linear_model, cache=cache)
    for old, new in zip(before, linear_model.parameters()):
        assert torch.equal(old, new)


def test_missing_inputs(tiny_dataset, linear_model):
    with pytest.raises(MissingInputError, match="teacher"):
        train(fresh_student(), tiny_dataset, config("kd"))
    with pytest.raises(MissingInputError, match="cache"):
        train(fresh_student(), tiny_dataset, config("dad"), teacher=linear_model)
    with pytest.raises(MissingInputError, match="discretizer"):
        check_inputs(Objective.DAT, teacher=None, cache=None, discretizer=None)
    check_inputs(Objective.CE, teacher=None, cache=None, discretizer=None)


def test_divergence_is_reported():
    images = torch.full((4, 3, 8, 8), float("nan"))
    ds = ImageDataset.from_tensors(images, [0, 1, 2, 0], num_classes=3, name="nan")
    with pytest.raises(DivergenceError) as info:
        train(fresh_student(), ds, config("ce"))
    assert info.value.epoch == 0
    assert info.value.batch == 0


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    assert TrainConfig(optimizer="adam", schedule="constant").schedule.value == "constant"


def test_train_log_csv(tmp_path, tiny_dataset):
    _, log = train(fresh_student(), tiny_dataset, config("ce"))
    loaded = TrainLog.read_csv(log.write_csv(tmp_path / "logs" / "ce.csv"))
    assert loaded.objective == "ce"
    assert loaded.epochs == log.epochs
    assert loaded.dataset_size == len(tiny_dataset)
    assert loaded.epoch_losses == log.epoch_losses
    assert loaded.forward == log.forward
    assert loaded.cost == log.cost


def make_log(epochs, forward, backward, attack_steps=0, size=10) -> TrainLog:
    return TrainLog(
        objective="x",
        epochs=epochs,
        dataset_size=size,
        epoch_losses=[0.0] * epochs,
        forward=[forward],
        backward=[backward],
        attack_steps=[attack_steps],
        wall_clock=[0.0],
    )


def test_budget_report_errors():
    base = make_log(2, 20, 20)
    with pytest.raises(ValueError, match="baseline"):
        budget_report({"other": base})
    with pytest.raises(ValueError, match="epochs"):
        budget_report({"baseline": base, "long": make_log(3, 30, 30)})
    with pytest.raises(ValueError, match="samples"):
        budget_report({"baseline": base, "big": make_log(2, 40, 40, size=20)})
    with pytest.raises(ValueError, match="zero"):
        budget_report({"baseline": make_log(2, 0, 0)})


def test_budget_csv(tmp_path):
    rows = budget_report({"baseline": make_log(2, 20, 20), "at": make_log(2, 40, 40, attack_steps=20)})
    path = write_budget_csv(rows, tmp_path / "budget.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "run,attack_steps_per_sample,cost,relative"
    assert lines[2] == "at,1.000,120,3.000"
