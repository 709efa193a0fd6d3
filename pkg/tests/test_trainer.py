import numpy as np
import pytest

from aptkit import dataio, synth, trainer
from aptkit.errors import MissingKeyError, NonFiniteLossError
from aptkit.head import AptHead, CategoryPrompts, HeadConfig, ProposalBatch


@pytest.fixture(scope="module")
def small_fixture():
    cfg = synth.SynthConfig(seed=7, d=32, m=4, n_train=96, n_val=24, ambiguity=1)
    ds = synth.generate(cfg)
    train_anns, _ = dataio.apply_linking(ds.train_annotations)
    val_anns, _ = dataio.apply_linking(ds.val_annotations)
    prompts = trainer.load_prompts(ds.store, ds.categories)
    train_batch = trainer.assemble_proposals(train_anns, ds.store, ds.categories)
    val_batch = trainer.assemble_proposals(val_anns, ds.store, ds.categories)
    return prompts, train_batch, val_batch


def small_config(**kw):
    kw.setdefault("seed", 7)
    kw.setdefault("epochs", 4)
    kw.setdefault("batch_size", 32)
    return trainer.TrainConfig(**kw)


def params_bytes(head):
    return b"".join(arr.tobytes() for _, arr in sorted(head.parameters().items()))


def test_config_validation():
    with pytest.raises(ValueError, match="batch_size"):
        trainer.TrainConfig(batch_size=1)
    with pytest.raises(ValueError, match="epochs"):
        trainer.TrainConfig(epochs=0)
    with pytest.raises(ValueError, match="learning_rate"):
        trainer.TrainConfig(learning_rate=-0.1)
    with pytest.raises(ValueError, match="apt_layers"):
        trainer.TrainConfig(apt_layers=4)


def test_zero_learning_rate_leaves_weights_unchanged(small_fixture):
    prompts, train_batch, _ = small_fixture
    config = small_config(learning_rate=0.0, epochs=2)
    rng = np.random.default_rng(0)
    head = AptHead(prompts.d, config.head, rng=rng)
    head.randomize(rng)
    before = params_bytes(head)
    trainer.train(config, train_batch, prompts, head=head)
    assert params_bytes(head) == before


def test_loss_decreases_on_synthetic_fixture(small_fixture):
    prompts, train_batch, val_batch = small_fixture
    _, report = trainer.train(small_config(epochs=12), train_batch, prompts, val_batch=val_batch)
    assert len(report.epoch_losses) == 12
    assert report.epoch_losses[-1] < report.epoch_losses[0]
    assert all(np.isfinite(loss) for loss in report.epoch_losses)


def test_same_seed_reproduces_report_and_weights(small_fixture):
    prompts, train_batch, val_batch = small_fixture
    head1, rep1 = trainer.train(small_config(), train_batch, prompts, val_batch=val_batch)
    head2, rep2 = trainer.train(small_config(), train_batch, prompts, val_batch=val_batch)
    assert rep1.epoch_losses == rep2.epoch_losses
    assert rep1.final_accuracy == rep2.final_accuracy
    assert params_bytes(head1) == params_bytes(head2)


def test_momentum_zero_step_is_exactly_minus_lr_grad(small_fixture):
    prompts, train_batch, _ = small_fixture
    lr = 1e-3
    config = small_config(learning_rate=lr, momentum=0.0, epochs=1,
                          batch_size=train_batch.n)
    rng = np.random.default_rng(1)
    head = AptHead(prompts.d, config.head, rng=rng)
    head.randomize(rng)
    snapshot = {k: v.copy() for k, v in head.parameters().items()}

    reference = AptHead(prompts.d, config.head, rng=np.random.default_rng(1))
    for key, arr in reference.parameters().items():
        arr[...] = snapshot[key]
    # replicate the loop's seeded shuffle so the summation order matches
    perm = np.random.default_rng(config.seed).permutation(train_batch.n)
    _, grads = reference.loss_and_grads(prompts.vectors, train_batch.take(perm), train=True)

    trainer.train(config, train_batch, prompts, head=head)
    for key, arr in head.parameters().items():
        expected = snapshot[key] - lr * grads[key]
        assert np.array_equal(arr, expected), key


def test_lr_step_decay_changes_trajectory(small_fixture):
    prompts, train_batch, _ = small_fixture
    constant = small_config(epochs=4)
    decayed = small_config(epochs=4, lr_step_epochs=1, lr_step_gamma=0.1)
    _, rep_const = trainer.train(constant, train_batch, prompts)
    _, rep_decay = trainer.train(decayed, train_batch, prompts)
    assert rep_const.epoch_losses[0] == rep_decay.epoch_losses[0]  # same first epoch
    assert rep_const.epoch_losses[1:] != rep_decay.epoch_losses[1:]


def test_prompts_unchanged_by_training(small_fixture):
    prompts, train_batch, _ = small_fixture
    raw = prompts.vectors.tobytes()
    trainer.train(small_config(epochs=3), train_batch, prompts)
    assert prompts.vectors.tobytes() == raw


def test_short_batches_are_dropped(small_fixture):
    prompts, train_batch, _ = small_fixture
    sub = train_batch.take(np.arange(33))  # 32 + a dangling 1-row batch
    config = small_config(epochs=1, batch_size=32)
    _, report = trainer.train(config, sub, prompts)
    assert len(report.epoch_losses) == 1


def test_non_finite_loss_reports_batch(small_fixture):
    prompts, train_batch, _ = small_fixture
    config = small_config(head=HeadConfig(tau=1e-5), epochs=1)
    with pytest.raises(NonFiniteLossError, match="epoch 0"):
        trainer.train(config, train_batch, prompts)


def test_evaluate_accuracy_perfect_and_subset():
    d = 8
    rng = np.random.default_rng(3)
    vectors = np.eye(3, d)
    prompts = CategoryPrompts(names=["a", "b", "c"], splits=["base"] * 3, vectors=vectors)
    head = AptHead(d, HeadConfig(use_ocr=False, use_vision=False, tau=0.5))
    vision = np.eye(3, d) + 0.01 * rng.normal(size=(3, d))
    batch = ProposalBatch(vision=vision, ocr=np.zeros((3, d)), labels=np.array([0, 1, 2]))
    assert trainer.evaluate_accuracy(head, prompts, batch) == 1.0
    # single-category subset forces that prediction
    only_b = trainer.evaluate_accuracy(head, prompts, batch, subset=[1])
    assert only_b == pytest.approx(1 / 3)


def test_assemble_lists_missing_keys_exhaustively(small_fixture):
    cfg = synth.SynthConfig(seed=3, d=16, m=2, n_train=4, n_val=1, ambiguity=0)
    ds = synth.generate(cfg)
    anns, _ = dataio.apply_linking(ds.train_annotations)
    store = ds.store
    removed = [k for k in list(store.entries) if k.startswith("img:")][:3]
    for k in removed:
        del store.entries[k]
    with pytest.raises(MissingKeyError) as err:
        trainer.assemble_proposals(anns, store, ds.categories)
    for k in removed:
        assert k in str(err.value)


def test_assemble_restricts_and_remaps_labels():
    cfg = synth.SynthConfig(seed=3, d=16, m=4, n_train=4, n_val=1, ambiguity=0, n_novel=2)
    ds = synth.generate(cfg)
    anns, _ = dataio.apply_linking(ds.train_annotations)
    base = ds.categories.indices_for_split("base")
    batch = trainer.assemble_proposals(anns, ds.store, ds.categories, restrict_to=base)
    assert set(np.unique(batch.labels)) <= set(range(len(base)))
    full = trainer.assemble_proposals(anns, ds.store, ds.categories)
    assert batch.n < full.n


def test_report_file_round_trip(tmp_path, small_fixture):
    prompts, train_batch, val_batch = small_fixture
    _, report = trainer.train(small_config(epochs=2), train_batch, prompts, val_batch=val_batch)
    path = tmp_path / "report.jsonl"
    trainer.write_report(report, path)
    lines = [ln for ln in path.read_text().splitlines() if ln]
    import json

    parsed = [json.loads(ln) for ln in lines]
    assert parsed[0]["type"] == "config"
    assert parsed[0]["head"]["tau"] == report.config["head"]["tau"]
    epochs = [p for p in parsed if p["type"] == "epoch"]
    assert [e["mean_loss"] for e in epochs] == report.epoch_losses
    assert parsed[-1]["accuracy"] == report.final_accuracy
    assert "wall" not in path.read_text()
