from ppfpose.report import (
    format_summary_text,
    read_jsonl,
    recall_figure,
    summarize_by_object,
    timings_figure,
    vsd_histogram_figure,
    write_jsonl,
    write_summary_csv,
    write_timings_csv,
)

RECORDS = [
    {"type": "evaluation", "scene_id": "s1", "obj_id": "a", "vsd": 0.1, "correct": True},
    {"type": "evaluation", "scene_id": "s2", "obj_id": "a", "vsd": 0.6, "correct": False},
    {"type": "evaluation", "scene_id": "s3", "obj_id": "b", "vsd": None, "correct": False},
    {"type": "evaluation", "scene_id": "s4", "obj_id": "b", "vsd": 0.0, "correct": True},
]


def test_summary_rows():
    rows = summarize_by_object(RECORDS)
    assert [r["obj_id"] for r in rows] == ["a", "b"]
    a, b = rows
    assert a["n_targets"] == 2 and a["n_correct"] == 1 and a["recall"] == 0.5
    assert b["n_detected"] == 1
    assert a["mean_vsd"] == 0.35


def test_summary_text_has_average_row():
    text = format_summary_text(summarize_by_object(RECORDS))
    assert "average" in text
    assert "0.500" in text


def test_jsonl_roundtrip(tmp_path):
    path = tmp_path / "r.jsonl"
    with open(path, "w") as fh:
        write_jsonl(RECORDS, fh)
    assert read_jsonl(path) == RECORDS


def test_csv_and_figures_written(tmp_path):
    rows = summarize_by_object(RECORDS)
    write_summary_csv(rows, tmp_path / "summary.csv")
    recall_figure(rows, tmp_path / "recall.png")
    vsd_histogram_figure([r["vsd"] for r in RECORDS], 0.35, tmp_path / "hist.png")
    timing_rows = [
        {"scene_id": "s1", "timings_ms": {"preprocess": 10, "match": 50,
                                          "cluster": 2, "verify": 30, "total": 92}},
        {"scene_id": "s2", "timings_ms": {"preprocess": 12, "match": 55,
                                          "cluster": 3, "verify": 28, "total": 98}},
    ]
    write_timings_csv(timing_rows, tmp_path / "timings.csv")
    timings_figure(timing_rows, tmp_path / "timings.png")
    for name in ("summary.csv", "recall.png", "hist.png", "timings.csv", "timings.png"):
        assert (tmp_path / name).stat().st_size > 0
    header = (tmp_path / "summary.csv").read_text().splitlines()[0]
    assert header == "obj_id,n_targets,n_detected,n_correct,recall,mean_vsd"
