# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import csv
import json
import logging

from weakhoi.exceptions import DatasetParseError
from weakhoi.learning import METRIC_NAMES
from weakhoi.model import Detection

log = logging.getLogger(__name__)


def save_detections(detections, path):
    with open(path, mode="w", encoding="utf-8") as fd:
        for det in detections:
            fd.write(json.dumps(det.to_dict(), sort_keys=True))
            fd.write("\n")
    log.info("Wrote %d detections to %s" % (len(detections), path))


def load_detections(path):
    """Reads a JSON lines detections file, every malformed line raises DatasetParseError."""
    detections = []
    with open(path, mode="r", encoding="utf-8") as fd:
        for line_number, line in enumerate(fd, start=1):
            if not line.strip():
                continue
            try:
                detections.append(Detection.from_dict(json.loads(line)))
            except KeyError as err:
                raise DatasetParseError("missing field %s" % err, path, line_number) from err
            except (TypeError, ValueError, AttributeError) as err:
                raise DatasetParseError(str(err), path, line_number) from err
    return detections


def write_json(data, path):
    with open(path, mode="w", encoding="utf-8") as fd:
        json.dump(data, fd, indent=2, sort_keys=True)
        fd.write("\n")


def write_metrics_csv(history, path):
    """One row per training iteration with every loss term."""
    with open(path, mode="w", encoding="utf-8", newline="") as fd:
        writer = csv.writer(fd)
        writer.writerow(("iteration",) + METRIC_NAMES)
        for metrics in history:
            writer.writerow([metrics["iteration"]] + [repr(float(metrics[n])) for n in METRIC_NAMES])


def write_pr_csv(result, path):
    """The ranked precision/recall points of every evaluated class."""
    with open(path, mode="w", encoding="utf-8", newline="") as fd:
        writer = csv.writer(fd)
        writer.writerow(("hoi_id", "rank", "recall", "precision"))
        for hoi_id in sorted(result.per_class):
            entry = result.per_class[hoi_id]
            for rank, (recall, precision) in enumerate(zip(entry.recall, entry.precision), start=1):
                writer.writerow((hoi_id, rank, repr(float(recall)), repr(float(precision))))


def write_embeddings_csv(rows, path):
    """
    :param rows: Iterable of (label, feature vector).
    :return: The number of rows written.
    """
    count = 0
    with open(path, mode="w", encoding="utf-8", newline="") as fd:
        writer = csv.writer(fd)
        for label, vector in rows:
            writer.writerow([label] + [repr(float(v)) for v in vector])
            count += 1
    log.info("Wrote %d embeddings to %s" % (count, path))
    return count


def format_table(result, vocabulary):
    """Human readable summary of an EvalResult, one line per class followed by the three mAP values."""
    lines = [
        "Protocol: %s" % result.protocol,
        "%-6s %-36s %-8s %6s %8s" % ("hoi", "prompt", "split", "gt", "AP"),
    ]
    for hoi_id in sorted(result.per_class):
        entry = result.per_class[hoi_id]
        combo = vocabulary.combo(hoi_id)
        prompt = vocabulary.make_prompt((combo.verb_id, combo.object_id))
        split = "rare" if hoi_id in result.rare else "non-rare"
        lines.append("%-6d %-36s %-8s %6d %8.4f" % (hoi_id, prompt[:36], split, entry.gt_count, entry.ap))

    lines.append("mAP full %.4f  rare %.4f  non-rare %.4f" % (result.mAP_full, result.mAP_rare, result.mAP_nonrare))
    return "\n".join(lines)
