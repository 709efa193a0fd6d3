import json

import pytest

from aptkit import checkpoint, dataio, synth
from aptkit.cli import main
from aptkit.head import AptHead, HeadConfig


@pytest.fixture()
def fixture_dir(tmp_path):
    config = synth.SynthConfig(seed=5, d=16, m=4, n_train=24, n_val=8, ambiguity=1)
    synth.write_dataset(synth.generate(config), tmp_path / "fx")
    return tmp_path / "fx"


def run(argv):
    return main([str(a) for a in argv])


def read_jsonl(path):
    return [json.loads(ln) for ln in path.read_text().splitlines() if ln.strip()]


# ---------------------------------------------------------------------------
# link
# ---------------------------------------------------------------------------

def test_link_iom_beats_iou_on_contained_boxes(fixture_dir, tmp_path, capsys):
    out_iom = tmp_path / "iom.jsonl"
    out_iou = tmp_path / "iou.jsonl"
    assert run(["link", fixture_dir / "train.jsonl", "--out", out_iom, "--metric", "iom"]) == 0
    rate_iom = capsys.readouterr().out
    assert run(["link", fixture_dir / "train.jsonl", "--out", out_iou, "--metric", "iou"]) == 0
    rate_iou = capsys.readouterr().out

    def linked_count(path):
        return sum(
            1 for ann in dataio.parse_annotations(path)
            for e in ann.elements if e.description
        )

    assert linked_count(out_iom) > linked_count(out_iou)
    assert "rate" in rate_iom and "rate" in rate_iou


def test_link_threshold_one_links_nothing(fixture_dir, tmp_path):
    out = tmp_path / "out.jsonl"
    assert run(["link", fixture_dir / "train.jsonl", "--out", out, "--threshold", "1.0"]) == 0
    for ann in dataio.parse_annotations(out):
        assert all(e.description == "" for e in ann.elements)


def test_link_output_reparses(fixture_dir, tmp_path):
    out = tmp_path / "out.jsonl"
    assert run(["link", fixture_dir / "train.jsonl", "--out", out]) == 0
    anns = dataio.parse_annotations(out)
    assert anns and all(e.description is not None for a in anns for e in a.elements)


def test_link_parse_error_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"image_id": "x"}\n', encoding="utf-8")
    assert run(["link", bad, "--out", tmp_path / "out.jsonl"]) == 2
    assert "error" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _link_all(fixture_dir, tmp_path):
    linked = {}
    for split in ("train", "val"):
        out = tmp_path / f"{split}-linked.jsonl"
        assert run(["link", fixture_dir / f"{split}.jsonl", "--out", out]) == 0
        linked[split] = out
    return linked


def train_args(fixture_dir, linked, tmp_path, suffix="", extra=()):
    return [
        "train", linked["train"],
        "--val-annotations", linked["val"],
        "--embeddings", fixture_dir / "embeddings.apte",
        "--categories", fixture_dir / "categories.txt",
        "--checkpoint-out", tmp_path / f"head{suffix}.apte",
        "--report-out", tmp_path / f"report{suffix}.jsonl",
        "--seed", "3", "--epochs", "3", "--batch-size", "16",
        *extra,
    ]


def test_train_writes_report_and_checkpoint(fixture_dir, tmp_path, capsys):
    linked = _link_all(fixture_dir, tmp_path)
    assert run(train_args(fixture_dir, linked, tmp_path)) == 0
    out = capsys.readouterr().out
    assert "# head.tau=0.01" in out
    records = read_jsonl(tmp_path / "report.jsonl")
    assert records[0]["type"] == "config"
    assert records[0]["head"]["tau"] == 0.01
    assert sum(1 for r in records if r["type"] == "epoch") == 3
    head = checkpoint.load_head(tmp_path / "head.apte")
    assert head.d == 16


def test_train_same_seed_bitwise_identical_outputs(fixture_dir, tmp_path):
    linked = _link_all(fixture_dir, tmp_path)
    assert run(train_args(fixture_dir, linked, tmp_path, suffix="1")) == 0
    assert run(train_args(fixture_dir, linked, tmp_path, suffix="2")) == 0
    ck1 = (tmp_path / "head1.apte").read_bytes()
    ck2 = (tmp_path / "head2.apte").read_bytes()
    assert ck1 == ck2
    assert (tmp_path / "report1.jsonl").read_bytes() == (tmp_path / "report2.jsonl").read_bytes()


def test_train_missing_embeddings_listed(fixture_dir, tmp_path, capsys):
    linked = _link_all(fixture_dir, tmp_path)
    store = dataio.read_embeddings(fixture_dir / "embeddings.apte")
    removed = [k for k in store.entries if k.startswith("img:train")][:2]
    for key in removed:
        del store.entries[key]
    crippled = tmp_path / "crippled.apte"
    dataio.write_embeddings(store, crippled)
    argv = train_args(fixture_dir, linked, tmp_path)
    argv[argv.index("--embeddings") + 1] = crippled
    assert run(argv) == 1
    err = capsys.readouterr().err
    for key in removed:
        assert key in err


def test_train_config_file_flag_precedence(fixture_dir, tmp_path, capsys):
    linked = _link_all(fixture_dir, tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 7, "head": {"tau": 0.5}}), encoding="utf-8")
    argv = train_args(fixture_dir, linked, tmp_path, extra=["--config", cfg])
    # --epochs 3 on the command line overrides the file's 7; tau comes from the file
    assert run(argv) == 0
    records = read_jsonl(tmp_path / "report.jsonl")
    assert records[0]["epochs"] == 3
    assert records[0]["head"]["tau"] == 0.5


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def test_eval_perfect_fixture_gives_map_one(tmp_path, capsys):
    config = synth.SynthConfig(seed=5, d=16, m=3, n_train=4, n_val=6,
                               ambiguity=0, vision_noise=0.0, n_novel=1)
    ds = synth.generate(config)
    fx = tmp_path / "fx"
    synth.write_dataset(ds, fx)
    linked = tmp_path / "val-linked.jsonl"
    assert run(["link", fx / "val.jsonl", "--out", linked]) == 0
    ck = tmp_path / "baseline.apte"
    checkpoint.save_head(AptHead(16, HeadConfig()), ck)

    report_out = tmp_path / "eval.jsonl"
    assert run(["eval", linked, "--checkpoint", ck,
                "--embeddings", fx / "embeddings.apte",
                "--categories", fx / "categories.txt",
                "--split", "all", "--report-out", report_out]) == 0
    final = read_jsonl(report_out)[-1]
    assert final["type"] == "map"
    assert final["value"] == 1.0
    assert "mAP(all) = 1.0000" in capsys.readouterr().out

    assert run(["eval", linked, "--checkpoint", ck,
                "--embeddings", fx / "embeddings.apte",
                "--categories", fx / "categories.txt",
                "--split", "novel", "--report-out", report_out]) == 0
    novel = read_jsonl(report_out)
    assert [r for r in novel if r["type"] == "ap"][0]["category"] == "cat02"


def test_eval_precomputed_detections(tmp_path):
    from aptkit.evaluator import DetectionRecord, write_detections
    from aptkit.geometry import Box

    config = synth.SynthConfig(seed=5, d=16, m=2, n_train=4, n_val=2,
                               ambiguity=0, elements_per_image=1)
    ds = synth.generate(config)
    fx = tmp_path / "fx"
    synth.write_dataset(ds, fx)
    anns = ds.val_annotations
    dets = [DetectionRecord(image_id=a.image_id, box=e.box, category=e.category,
                            score=0.9 - 0.05 * i)
            for i, a in enumerate(anns) for e in a.elements]
    det_path = tmp_path / "dets.jsonl"
    write_detections(dets, det_path)
    report_out = tmp_path / "eval.jsonl"
    assert run(["eval", fx / "val.jsonl", "--detections", det_path,
                "--categories", fx / "categories.txt", "--report-out", report_out]) == 0
    assert read_jsonl(report_out)[-1]["value"] == 1.0

    # leaving out a zero-area box in the detections file is a parse error
    det_path.write_text('{"image_id": "val-00000", "bbox": [0,0,0,5], "category": "cat00", "score": 0.5}\n')
    assert run(["eval", fx / "val.jsonl", "--detections", det_path,
                "--categories", fx / "categories.txt"]) == 2


def test_eval_dim_mismatch_errors(fixture_dir, tmp_path, capsys):
    linked = _link_all(fixture_dir, tmp_path)
    ck = tmp_path / "wrong.apte"
    checkpoint.save_head(AptHead(32, HeadConfig()), ck)
    code = run(["eval", linked["val"], "--checkpoint", ck,
                "--embeddings", fixture_dir / "embeddings.apte",
                "--categories", fixture_dir / "categories.txt"])
    assert code == 1
    assert "dim" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

def test_ablate_fusion_axis(fixture_dir, tmp_path, capsys):
    out = tmp_path / "ablate.jsonl"
    assert run(["ablate", fixture_dir, "--axes", "fusion", "--epochs", "2",
                "--seed", "3", "--out", out]) == 0
    rows = read_jsonl(out)
    fusions = [r["fusion"] for r in rows if "fusion" in r]
    assert fusions == ["sum", "multiply", "attention"]
    for r in rows:
        assert 0.0 <= r["val_accuracy"] <= 1.0
    assert "frozen-baseline" in capsys.readouterr().out


def test_ablate_tuning_axis(fixture_dir, tmp_path):
    out = tmp_path / "ablate.jsonl"
    assert run(["ablate", fixture_dir, "--axes", "tuning", "--epochs", "2",
                "--seed", "3", "--out", out]) == 0
    rows = [r for r in read_jsonl(out) if "tuning" in r]
    assert [r["tuning"] for r in rows] == [
        "prompt-both", "prompt-ocr-vis-vis", "prompt-vis-vis-ocr", "vis-both"]


def test_ablate_unknown_axis(fixture_dir, capsys):
    assert run(["ablate", fixture_dir, "--axes", "flavor"]) == 1
    assert "unknown ablation axis" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# synth + inspect
# ---------------------------------------------------------------------------

def test_synth_and_inspect(tmp_path, capsys):
    out = tmp_path / "fx"
    assert run(["synth", "--out", out, "--seed", "9", "--d", "16", "--m", "3",
                "--n-train", "4", "--n-val", "2", "--ambiguity", "1"]) == 0
    capsys.readouterr()
    assert run(["inspect", out / "embeddings.apte"]) == 0
    text = capsys.readouterr().out
    assert "kind: embedding-store" in text
    assert "dim: 16" in text


def test_inspect_checkpoint(tmp_path, capsys):
    ck = tmp_path / "head.apte"
    checkpoint.save_head(AptHead(16, HeadConfig()), ck)
    assert run(["inspect", ck]) == 0
    assert "kind: head-checkpoint" in capsys.readouterr().out


def test_inspect_garbage_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.apte"
    bad.write_bytes(b"NOPE" + b"\x00" * 20)
    assert run(["inspect", bad]) == 2
    assert "bad magic" in capsys.readouterr().err
