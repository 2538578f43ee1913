#!/usr/bin/env python3
"""Fetch MovieLens100k ratings into data/ml-100k/u.data.

Tries the GroupLens archive first. When that host is unreachable, falls back
to the copy bundled inside the pytorch-widedeep wheel (fetched with pip
download). Rows are written as user, item, rating, timestamp in the original
u.data order.
"""
import argparse
import io
import pathlib
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

GROUPLENS_URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
EXPECTED_ROWS = 100000


def from_grouplens():
    with urllib.request.urlopen(GROUPLENS_URL, timeout=30) as resp:
        archive = zipfile.ZipFile(io.BytesIO(resp.read()))
    return archive.read("ml-100k/u.data")


def from_widedeep_wheel():
    import pandas as pd

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q",
             "-d", tmp, "pytorch-widedeep==1.7.0"],
            check=True)
        wheel = next(pathlib.Path(tmp).glob("*.whl"))
        blob = zipfile.ZipFile(wheel).read(
            "pytorch_widedeep/datasets/data/MovieLens100k_data.parquet.brotli")
    frame = pd.read_parquet(io.BytesIO(blob))
    frame = frame[["user_id", "movie_id", "rating", "timestamp"]]
    return frame.to_csv(sep="\t", header=False, index=False).encode()


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/ml-100k/u.data")
    args = parser.parse_args()

    try:
        payload = from_grouplens()
    except Exception as err:  # network or archive failure
        print(f"grouplens download failed ({err}); using wheel copy",
              file=sys.stderr)
        payload = from_widedeep_wheel()

    rows = payload.count(b"\n")
    if rows != EXPECTED_ROWS:
        print(f"warning: {rows} rows, expected {EXPECTED_ROWS}",
              file=sys.stderr)
    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(payload)
    print(f"wrote {out} ({len(payload)} bytes)")


if __name__ == "__main__":
    main()
