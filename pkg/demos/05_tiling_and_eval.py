"""
Tiling a scene and scoring detections.

Writes a small DOTA-style workspace to a temporary directory, then drives
the command-line tools on it: ``crop`` tiles the scenes, and ``eval`` scores
a hand-made result set whose single class has the precision-recall sequence
TP, FP, TP over two objects. Its 11-point AP works out to 28/33.
"""

import json
import tempfile
from pathlib import Path

from aerialdet.cli import main
from aerialdet.dota_io import DetectionRecord, write_results


def label(box, cls="plane"):
    x1, y1, x2, y2 = box
    return f"{x1} {y1} {x2} {y1} {x2} {y2} {x1} {y2} {cls} 0\n"


with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)
    (root / "ann").mkdir()
    (root / "ann" / "P0001.txt").write_text(label((100, 100, 180, 160)) + label((1300, 900, 1380, 990), "ship"))
    (root / "manifest.json").write_text(json.dumps({"P0001": [1525, 1525]}))

    print("$ aerialdet crop --manifest manifest.json --ann-dir ann --out patches")
    main(["crop", "--manifest", str(root / "manifest.json"), "--ann-dir", str(root / "ann"), "--out", str(root / "patches")])
    print((root / "patches" / "patches.txt").read_text())

    (root / "gt").mkdir()
    (root / "gt" / "img.txt").write_text(label((0, 0, 10, 10)) + label((20, 20, 30, 30)))
    write_results([DetectionRecord("img", "plane", 0.9, (0, 0, 10, 10)),
                   DetectionRecord("img", "plane", 0.8, (50, 50, 60, 60)),
                   DetectionRecord("img", "plane", 0.7, (20, 20, 30, 30))], root / "results")
    print("$ aerialdet eval --results results --gt gt")
    main(["eval", "--results", str(root / "results"), "--gt", str(root / "gt"), "--csv", str(root / "r.csv")])
    print((root / "r.csv").read_text())
    print(f"28/33 = {28 / 33:.6f}")
