import csv
import json
import random
from pathlib import Path

import pytest

from conftest import perturb_document
from sceneforge.caption_codec import format_caption
from sceneforge.cli import main, sweep_key
from sceneforge.fixtures import GOLDEN_BODY, SWEEP_GRID, write_sweep_grid
from sceneforge.records import load_documents
from sceneforge.supervision import CaptionDocument, SupervisionParams, TimeSegment

CORPUS = Path(__file__).parent / "data" / "caption_corpus.txt"


def write_captions(path: Path, docs) -> Path:
    path.write_text("\n\n".join(format_caption(d) for d in docs) + "\n", encoding="utf-8")
    return path


def shifted(doc: CaptionDocument, delta: float) -> CaptionDocument:
    events = [
        e.__class__(e.type_tag, e.description, tuple(TimeSegment(s.start_s + delta, s.end_s + delta) for s in e.segments))
        for e in doc.events
    ]
    return CaptionDocument.from_events(events, doc.params, doc.duration_s + delta)


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory, library_dir):
    out = tmp_path_factory.mktemp("cli") / "data"
    code = main(
        [
            "generate",
            "--template", str(library_dir / "template.json"),
            "--sources", str(library_dir / "sources.jsonl"),
            "--count", "4",
            "--seed", "11",
            "--out", str(out),
        ]
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def ref_docs(small_dataset):
    return [d.document for d in load_documents(small_dataset)]


def test_generate_writes_manifest(small_dataset):
    manifest = json.loads((small_dataset / "manifest.json").read_text())
    assert len(manifest["scenes"]) == 4
    assert manifest["sources"]["name"] == "sources.jsonl"


def test_generate_zero_count(tmp_path, library_dir):
    args = ["generate", "--template", str(library_dir / "template.json"), "--sources", str(library_dir / "sources.jsonl")]
    assert main(args + ["--count", "0", "--seed", "1", "--out", str(tmp_path / "z")]) == 0
    assert json.loads((tmp_path / "z" / "manifest.json").read_text())["scenes"] == []


def test_generate_bad_template_is_data_error(tmp_path, library_dir):
    (tmp_path / "t.json").write_text(json.dumps({"name": "x", "roles": {}}))
    args = ["generate", "--template", str(tmp_path / "t.json"), "--sources", str(library_dir / "sources.jsonl")]
    assert main(args + ["--count", "1", "--seed", "1", "--out", str(tmp_path / "o")]) == 2


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as info:
        main(["generate", "--count", "1"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["bogus"])
    assert info.value.code == 1


def test_evaluate_self_is_perfect(small_dataset, tmp_path, capsys):
    report = tmp_path / "r.json"
    assert main(["evaluate", "--refs", str(small_dataset), "--preds", str(small_dataset), "--report", str(report)]) == 0
    dataset = json.loads(report.read_text())["dataset"]
    assert (dataset["seg_f1"], dataset["evt_f1"], dataset["hal_pct"], dataset["conf"], dataset["spec"]) == (1.0, 1.0, 0.0, 1.0, 1.0)
    assert "EvtF1 1.000" in capsys.readouterr().out


def test_evaluate_caption_text_predictions(small_dataset, ref_docs, tmp_path):
    preds = write_captions(tmp_path / "p.txt", ref_docs)
    report = tmp_path / "r.json"
    assert main(["evaluate", "--refs", str(small_dataset), "--preds", str(preds), "--report", str(report)]) == 0
    assert json.loads(report.read_text())["dataset"]["evt_f1"] == 1.0


def test_evaluate_shift_beyond_collar(small_dataset, ref_docs, tmp_path):
    preds = write_captions(tmp_path / "p.txt", [shifted(d, 1.5) for d in ref_docs])
    report = tmp_path / "r.json"
    assert main(["evaluate", "--refs", str(small_dataset), "--preds", str(preds), "--report", str(report)]) == 0
    counts = json.loads(report.read_text())["dataset"]["evt_counts"]
    assert counts["fp"] > 0 and counts["fn"] > 0


def test_unparseable_prediction_scores_empty(small_dataset, ref_docs, tmp_path):
    text = "\n\n".join([format_caption(d) for d in ref_docs[:3]] + ["[sfx] broken from <|1.00|>s"])
    (tmp_path / "p.txt").write_text(text + "\n")
    report = tmp_path / "r.json"
    assert main(["evaluate", "--refs", str(small_dataset), "--preds", str(tmp_path / "p.txt"), "--report", str(report)]) == 0
    clips = json.loads(report.read_text())["clips"]
    assert "p.txt:" in clips[3]["parse_error"]
    assert clips[3]["report"]["n_pred"] == 0


def test_evaluate_count_mismatch(small_dataset, ref_docs, tmp_path):
    preds = write_captions(tmp_path / "p.txt", ref_docs[:2])
    assert main(["evaluate", "--refs", str(small_dataset), "--preds", str(preds)]) == 2


def test_evaluate_missing_file(small_dataset, tmp_path):
    assert main(["evaluate", "--refs", str(small_dataset), "--preds", str(tmp_path / "none.txt")]) == 2


def test_http_judge_without_url_is_usage_error(small_dataset, monkeypatch):
    monkeypatch.delenv("FORGE_JUDGE_URL", raising=False)
    assert main(["evaluate", "--refs", str(small_dataset), "--preds", str(small_dataset), "--judge", "http"]) == 1


def test_unreachable_judge_is_backend_error(small_dataset, monkeypatch):
    monkeypatch.setenv("FORGE_JUDGE_URL", "http://127.0.0.1:9")
    args = ["evaluate", "--refs", str(small_dataset), "--preds", str(small_dataset), "--judge", "http"]
    assert main(args + ["--judge-url", "http://unused.invalid"]) == 3


def make_prediction_sets(root: Path, ref_docs, grid):
    root.mkdir()
    rng = random.Random(0)
    for style, merge, act, res in grid:
        key = sweep_key(SupervisionParams(style, merge, act, res))
        write_captions(root / f"{key}.txt", [perturb_document(rng, d) for d in ref_docs])
    return root


def test_sweep_table_has_one_row_per_tuple(small_dataset, ref_docs, tmp_path):
    grid = write_sweep_grid(tmp_path / "grid.json")
    preds = make_prediction_sets(tmp_path / "preds", ref_docs, SWEEP_GRID)
    report = tmp_path / "sweep.csv"
    assert main(["sweep", "--grid", str(grid), "--refs", str(small_dataset), "--preds", str(preds), "--report", str(report)]) == 0
    rows = list(csv.DictReader(report.open()))
    assert list(rows[0]) == ["Style", "Merge", "Activity", "Resolution", "EvtF1", "SegF1", "Hal%", "Conf", "Spec"]
    assert [(r["Style"], float(r["Merge"]), float(r["Activity"]), float(r["Resolution"])) for r in rows] == list(SWEEP_GRID)


def test_single_tuple_sweep_equals_evaluate(small_dataset, ref_docs, tmp_path):
    (tmp_path / "grid.json").write_text(json.dumps([{"style": "brief", "merge": 0.25, "activity": 0.05, "resolution": 0.1}]))
    preds = make_prediction_sets(tmp_path / "preds", ref_docs, SWEEP_GRID[:1])
    sweep_report, eval_report = tmp_path / "s.json", tmp_path / "e.json"
    main(["sweep", "--grid", str(tmp_path / "grid.json"), "--refs", str(small_dataset), "--preds", str(preds), "--report", str(sweep_report)])
    [pred_file] = preds.iterdir()
    main(["evaluate", "--refs", str(small_dataset), "--preds", str(pred_file), "--report", str(eval_report)])
    assert json.loads(sweep_report.read_text())["details"][0]["dataset"] == json.loads(eval_report.read_text())["dataset"]


def test_sweep_duplicate_tuple(small_dataset, tmp_path):
    entry = {"style": "brief", "merge": 0.25, "activity": 0.05, "resolution": 0.1}
    (tmp_path / "grid.json").write_text(json.dumps([entry, dict(entry, merge=0.250001)]))
    assert main(["sweep", "--grid", str(tmp_path / "grid.json"), "--refs", str(small_dataset), "--preds", str(tmp_path)]) == 2


def test_sweep_missing_prediction_set(small_dataset, tmp_path, capsys):
    grid = write_sweep_grid(tmp_path / "grid.json")
    assert main(["sweep", "--grid", str(grid), "--refs", str(small_dataset), "--preds", str(tmp_path)]) == 2
    assert "brief_merge0.25_act0.05_res0.10" in capsys.readouterr().err


def test_parse_golden_body(tmp_path):
    (tmp_path / "golden.txt").write_text(GOLDEN_BODY + "\n")
    assert main(["parse", str(tmp_path / "golden.txt"), "--out", str(tmp_path / "g.jsonl")]) == 0
    [line] = (tmp_path / "g.jsonl").read_text().splitlines()
    assert len(json.loads(line)["events"]) == 3


def test_parse_empty_file(tmp_path):
    (tmp_path / "empty.txt").write_text("")
    assert main(["parse", str(tmp_path / "empty.txt"), "--out", str(tmp_path / "e.jsonl")]) == 0
    assert (tmp_path / "e.jsonl").read_text() == ""


def test_parse_error_reports_position(tmp_path, capsys):
    (tmp_path / "bad.txt").write_text(GOLDEN_BODY + "\n\n[sfx] Dog from <|2.00|>s too <|3.00|>s.\n")
    assert main(["parse", str(tmp_path / "bad.txt"), "--out", str(tmp_path / "b.jsonl")]) == 2
    assert "bad.txt:3:" in capsys.readouterr().err


def test_corpus_parse_format_round_trip(tmp_path):
    records, once, twice = tmp_path / "c.jsonl", tmp_path / "once.txt", tmp_path / "twice.txt"
    assert main(["parse", str(CORPUS), "--out", str(records)]) == 0
    assert main(["format", str(records), "--out", str(once)]) == 0
    assert main(["format", str(once), "--out", str(twice)]) == 0
    assert once.read_text() == twice.read_text()
    assert len(load_documents(once)) == 100


def test_format_plain_without_header(tmp_path):
    (tmp_path / "golden.txt").write_text(GOLDEN_BODY)
    out = tmp_path / "plain.txt"
    assert main(["format", str(tmp_path / "golden.txt"), "--out", str(out), "--timestamp-style", "plain", "--no-header"]) == 0
    assert out.read_text().startswith("[music] Background jazz music plays softly from 0.0s to 10.0s.")


def test_timeline_command(small_dataset, tmp_path):
    out = tmp_path / "t.svg"
    assert main(["timeline", str(small_dataset), "--index", "1", "--out", str(out)]) == 0
    assert out.read_text().startswith("<svg")
    assert main(["timeline", str(small_dataset), "--index", "99", "--out", str(out)]) == 2
    (tmp_path / "empty.txt").write_text("")
    assert main(["timeline", str(tmp_path / "empty.txt"), "--out", str(out)]) == 0
    assert 'class="lane"' not in out.read_text()
