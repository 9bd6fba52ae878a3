"""Run every registered experiment and print its wall time and trace hash.

Usage: python scripts/run_all_experiments.py [--out DIR] [--threads K] [--only PREFIX]
Experiments whose datasets are unavailable are reported and skipped.
"""

import argparse
import hashlib
import sys
import time
from pathlib import Path

from carlo import datasets as ds
from carlo import experiments as ex
from carlo.cli import write_plotdata, write_trace


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out")
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--only", default="", help="Run only ids starting with this prefix.")
    args = ap.parse_args(argv)
    failed = 0
    for id_, _, _, tags in ex.list_experiments():
        if not id_.startswith(args.only):
            continue
        missing = [t for t in tags if not ds.available(t)]
        if missing:
            print(f"{id_:<36} skipped (missing {','.join(missing)})")
            continue
        out = Path(args.out) / id_
        t0 = time.perf_counter()
        try:
            res = ex.run(ex.ExperimentSpec(id_, workers=args.threads, out_dir=str(out)))
        except Exception as e:  # report and keep going
            print(f"{id_:<36} FAILED {type(e).__name__}: {e}")
            failed += 1
            continue
        wall = time.perf_counter() - t0
        out.mkdir(parents=True, exist_ok=True)
        write_trace(out / "trace.csv", res.param_names, res.chains)
        write_plotdata(out / "plotdata", res.plotdata)
        digest = hashlib.sha256((out / "trace.csv").read_bytes()).hexdigest()[:16]
        print(f"{id_:<36} {wall:7.2f}s  {digest}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
