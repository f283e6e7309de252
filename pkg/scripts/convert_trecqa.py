#!/usr/bin/env python3
"""Convert the jacana TREC-QA XML files to the TSV format read by answer-select.

Usage: convert_trecqa.py SRC_DIR DST_DIR

Expects TRAIN-ALL.xml, TRAIN.xml, DEV.xml and TEST.xml (any case) in SRC_DIR and
writes train-all.tsv, train.tsv, dev.tsv and test.tsv to DST_DIR.
"""

import argparse
import sys
from pathlib import Path

from answer_select.data import convert_xml

NAMES = ("train-all", "train", "dev", "test")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("src", type=Path)
    parser.add_argument("dst", type=Path)
    args = parser.parse_args(argv)
    files = {p.stem.lower(): p for p in args.src.glob("*.xml")}
    missing = [n for n in NAMES if n not in files]
    if missing:
        print(f"missing XML files in {args.src}: {', '.join(missing)}", file=sys.stderr)
        return 2
    args.dst.mkdir(parents=True, exist_ok=True)
    for name in NAMES:
        split = convert_xml(files[name], args.dst / f"{name}.tsv")
        nq, npairs, pct = split.stats()
        print(f"{name:<10} {nq:>5} questions {npairs:>6} pairs {pct:5.1f}% positive")
    return 0


if __name__ == "__main__":
    sys.exit(main())
