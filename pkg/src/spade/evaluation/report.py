"""Per-split and per-band metric reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from ..scenes import VocabSplit, tag_distance_band
from .metrics import IOU_THRESHOLD, aggregate, scene_hits

SECTIONS = ("closed", "OvR", "OvD+R", "DR", "NDR")
NO_INSTANCES = "no instances"
NO_SPLIT = "no vocabulary split"
DEFAULT_KS = (50, 100)


@dataclass
class MetricsReport:
    ks: tuple[int, ...]
    sections: dict[str, dict | str] = field(default_factory=dict)
    n_scenes: int = 0
    iou_threshold: float = IOU_THRESHOLD

    def metric(self, section: str, name: str) -> float | None:
        entry = self.sections.get(section)
        return entry.get(name) if isinstance(entry, dict) else None

    def to_dict(self) -> dict:
        return {"ks": list(self.ks), "n_scenes": self.n_scenes, "iou_threshold": self.iou_threshold, "sections": self.sections}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(tuple(d["ks"]), d["sections"], d["n_scenes"], d["iou_threshold"])

    def to_table(self) -> str:
        """Aligned text table, recalls in percent."""
        cols = [f"{m}@{k}" for k in self.ks for m in ("R", "mR")] + ["#GT"]
        rows = [["split"] + cols]
        for name in SECTIONS:
            entry = self.sections.get(name, NO_INSTANCES)
            if isinstance(entry, str):
                rows.append([name, entry])
                continue
            vals = [f"{100 * entry[f'{m}@{k}']:.2f}" for k in self.ks for m in ("R", "mR")]
            rows.append([name] + vals + [str(entry["n_gt"])])
        full = [r for r in rows if len(r) > 2]
        widths = [max(len(r[0]) for r in rows)] + [max(len(r[i]) for r in full) for i in range(1, len(cols) + 1)]
        lines = []
        for r in rows:
            if len(r) == 2:
                lines.append(f"{r[0]:<{widths[0]}}  {r[1]}")
            else:
                lines.append("  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r)))
        return "\n".join(lines) + "\n"


def _selectors(scenes, split: VocabSplit | None):
    bands = [tag_distance_band(sc) for sc in scenes]
    sel = {
        "closed": lambda i, r: True,
        "DR": lambda i, r: bands[i][r] == "DR",
        "NDR": lambda i, r: bands[i][r] == "NDR",
    }
    if split is not None:
        novel_p, novel_o = set(split.novel_predicates), set(split.novel_objects)

        def ovd(i, r):
            s, p, o = scenes[i].relations[r]
            cats = (scenes[i].objects[s].category_id, scenes[i].objects[o].category_id)
            return p in novel_p or any(c in novel_o for c in cats)

        sel["OvR"] = lambda i, r: scenes[i].relations[r][1] in novel_p
        sel["OvD+R"] = ovd
    return sel


def split_report(predictions, scenes, split: VocabSplit | None = None, ks=DEFAULT_KS, iou_threshold: float = IOU_THRESHOLD) -> MetricsReport:
    """Closed-vocabulary, novel-triplet (OvR / OvD+R) and distance-band views.

    The open-vocabulary and band views restrict the ground truth only;
    predictions are always ranked over the full vocabulary.
    """
    ks = tuple(int(k) for k in ks)
    hits = {k: [scene_hits(p, sc, k, iou_threshold) for p, sc in zip(predictions, scenes)] for k in ks}
    report = MetricsReport(ks, {}, len(scenes), iou_threshold)
    sel = _selectors(scenes, split)
    for name in SECTIONS:
        if name not in sel:
            report.sections[name] = NO_SPLIT
            continue
        results = [aggregate(hits[k], scenes, k, sel[name]) for k in ks]
        if results[0].n_gt == 0:
            report.sections[name] = NO_INSTANCES
            continue
        entry: dict = {"n_gt": results[0].n_gt}
        for res in results:
            entry[f"R@{res.k}"] = res.recall
            entry[f"mR@{res.k}"] = res.mean_recall
            entry[f"per_predicate@{res.k}"] = {str(p): v for p, v in res.per_predicate.items()}
        report.sections[name] = entry
    return report
