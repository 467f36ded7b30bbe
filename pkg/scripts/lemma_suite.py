"""Run every lemma check and list failures."""
import argparse
import time

from omnibounds.lemmas import run_lemma_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--m", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    t0 = time.time()
    rows = run_lemma_suite(a.m, a.seed)
    bad = [r for r in rows if not r["pass"]]
    for r in bad:
        print("FAIL", r["check"], r.get("family"))
    print(f"{len(rows) - len(bad)}/{len(rows)} checks passed in {time.time() - t0:.1f}s")


if __name__ == "__main__":
    main()
