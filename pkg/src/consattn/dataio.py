"""File formats: datasets and predictions as one JSON record per line,
reports as JSON documents.

Records are serialized with sorted keys and tight separators so that
write -> read -> write reproduces the file byte for byte (Python float repr
round-trips exactly).
"""

import json

import numpy as np

from .synth import Dataset, SynthConfig, SyntheticExample


def dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _box_list(arr):
    return [[float(v) for v in row] for row in np.asarray(arr).reshape(-1, 4)]


def write_dataset(ds, path):
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "kind": "header",
            "config": ds.config.to_dict(),
            "inventory": [list(w) for w in ds.inventory],
        }
        fh.write(dumps(header) + "\n")
        for ex in ds.examples:
            rec = {
                "kind": "example",
                "id": ex.example_id,
                "ocr": {
                    "feat": [[float(v) for v in row] for row in ex.ocr_appearance],
                    "box": _box_list(ex.ocr_boxes),
                    "tok": [int(t) for t in ex.ocr_tokens],
                },
                "obj": {
                    "feat": [[float(v) for v in row] for row in ex.obj_appearance],
                    "box": _box_list(ex.obj_boxes),
                    "label": None if ex.obj_labels is None else [int(v) for v in ex.obj_labels],
                },
                "q": [int(t) for t in ex.question_tokens],
                "bnd": [int(b) for b in ex.boundaries],
                "ans": ex.answer,
                "words": [int(w) for w in ex.word_ids],
            }
            fh.write(dumps(rec) + "\n")


def read_dataset(path):
    ds = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec["kind"] == "header":
                cfg = SynthConfig.from_dict(rec["config"])
                ds = Dataset(config=cfg, inventory=[tuple(w) for w in rec["inventory"]])
            elif rec["kind"] == "example":
                if ds is None:
                    raise ValueError(f"{path}: example record before header")
                d_fr = ds.config.d_fr
                labels = rec["obj"]["label"]
                ds.examples.append(SyntheticExample(
                    example_id=rec["id"],
                    ocr_appearance=np.array(rec["ocr"]["feat"], dtype=np.float64).reshape(-1, d_fr),
                    ocr_boxes=np.array(rec["ocr"]["box"], dtype=np.float64).reshape(-1, 4),
                    ocr_tokens=np.array(rec["ocr"]["tok"], dtype=np.int64),
                    obj_appearance=np.array(rec["obj"]["feat"], dtype=np.float64).reshape(-1, d_fr),
                    obj_boxes=np.array(rec["obj"]["box"], dtype=np.float64).reshape(-1, 4),
                    question_tokens=np.array(rec["q"], dtype=np.int64),
                    boundaries=np.array(rec["bnd"], dtype=bool),
                    answer=int(rec["ans"]),
                    word_ids=np.array(rec["words"], dtype=np.int64),
                    obj_labels=None if labels is None else np.array(labels, dtype=np.int64),
                ))
            else:
                raise ValueError(f"{path}: unknown record kind {rec['kind']!r}")
    if ds is None:
        raise ValueError(f"{path}: no header record found")
    return ds


def write_predictions(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps({"id": rec["id"], "predicted": rec["predicted"],
                            "gold": rec["gold"]}) + "\n")


def read_predictions(path):
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_report(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2, ensure_ascii=False)
        fh.write("\n")


def read_report(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
