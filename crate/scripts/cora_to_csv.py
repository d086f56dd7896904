#!/usr/bin/env python3
"""Convert Cora citation XML into the A.csv / B.csv / truth_links.csv layout.

Each <NEWREFERENCE> element starts with its cluster key as leading text,
followed by tagged fields. References are dealt alternately to A and B
within each cluster; every A/B pair sharing a cluster is a true link.

    python3 scripts/cora_to_csv.py cora.xml out/
"""

import argparse
import csv
import itertools
import re
import xml.etree.ElementTree as ET
from collections import defaultdict
from pathlib import Path

FIELDS = ["author", "title", "venue", "year", "pages", "publisher"]


def text_of(el):
    return " ".join("".join(el.itertext()).split())


def first_token(el):
    lead = (el.text or "").strip()
    return lead.split()[0] if lead else ""


def parse(path):
    raw = Path(path).read_text(encoding="utf-8", errors="replace")
    raw = re.sub(r"&(?!amp;|lt;|gt;|quot;|apos;)", "&amp;", raw)
    root = ET.fromstring(f"<root>{raw}</root>")
    for i, ref in enumerate(root.iter("NEWREFERENCE")):
        row = {f: "" for f in FIELDS}
        for el in ref.iter():
            if el.tag in row and not row[el.tag]:
                row[el.tag] = text_of(el)
        year = re.search(r"\b(1[89]\d\d|20\d\d)\b", row["year"] or text_of(ref))
        row["year"] = year.group(1) if year else ""
        yield first_token(ref) or f"ref{i}", row


def convert(src, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    clusters = defaultdict(list)
    for key, row in parse(src):
        clusters[key].append(row)
    sides = {"A": [], "B": []}
    links = []
    next_id = 0
    for key in sorted(clusters):
        members = {"A": [], "B": []}
        for j, row in enumerate(clusters[key]):
            side = "A" if j % 2 == 0 else "B"
            sides[side].append((next_id, row))
            members[side].append(next_id)
            next_id += 1
        links.extend(itertools.product(members["A"], members["B"]))
    for side, rows in sides.items():
        with open(out / f"{side}.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["id", *FIELDS])
            for rid, row in rows:
                w.writerow([rid, *(row[k] for k in FIELDS)])
    with open(out / "truth_links.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["a_id", "b_id"])
        w.writerows(links)
    return len(sides["A"]), len(sides["B"]), len(links)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("xml")
    ap.add_argument("out")
    args = ap.parse_args()
    a, b, n = convert(args.xml, args.out)
    print(f"wrote {a} + {b} records and {n} links to {args.out}")


if __name__ == "__main__":
    main()
