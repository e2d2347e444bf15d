#!/usr/bin/env python3
"""Register the ANHIR training pairs and report MMrTRE, AMrTRE and robustness.

Needs the dataset on disk: the pair table (CSV with "Source image",
"Source landmarks", "Target image", "Target landmarks" and "status"
columns) and the files it references, relative to the table's directory.
"""

import argparse
from pathlib import Path

from ngfreg import io
from ngfreg.evaluation import MetricsReport
from ngfreg.experiments import run_anhir


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("table", help="ANHIR pair table")
    parser.add_argument("--root", help="dataset directory (default: the table's directory)")
    parser.add_argument("--config", help="pipeline configuration (INI)")
    parser.add_argument("--limit", type=int, help="only the first N training pairs")
    parser.add_argument("--out", default="anhir_metrics.json")
    args = parser.parse_args()

    cfg = io.read_config(args.config) if args.config else None
    root = args.root or Path(args.table).parent
    report = MetricsReport(run_anhir(args.table, root, cfg, args.limit))
    io.write_metrics(args.out, report.to_dict())
    for key, value in report.summary().items():
        print(f"{key:16s} {value}")


if __name__ == "__main__":
    main()
