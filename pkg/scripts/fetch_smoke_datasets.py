#!/usr/bin/env python3
"""Build the bundled UCR smoke datasets (GunPoint, Coffee, ItalyPowerDemand).

The UCR archive itself is not reachable from the build sandbox, but copies of
these three datasets ship inside the ``pyts`` and ``aeon`` wheels. This script
downloads those wheels (no install), pulls the split files out and rewrites
them in the archive's ``<Name>/<Name>_TRAIN.tsv`` layout.

    python scripts/fetch_smoke_datasets.py --out data/UCR
"""

import argparse
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

SOURCES = {
    "GunPoint": ("pyts", "pyts/datasets/cached_datasets/UCR/GunPoint/GunPoint_{split}.txt", "txt"),
    "Coffee": ("pyts", "pyts/datasets/cached_datasets/UCR/Coffee/Coffee_{split}.txt", "txt"),
    "ItalyPowerDemand": ("aeon", "aeon/datasets/data/ItalyPowerDemand/ItalyPowerDemand_{split}.ts", "ts"),
}


def _rows_from_txt(text):
    for line in text.splitlines():
        fields = line.split()
        if fields:
            yield fields[0], fields[1:]


def _rows_from_ts(text):
    in_data = False
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.lower() == "@data":
            in_data = True
            continue
        if in_data:
            values, label = line.rsplit(":", 1)
            yield label, values.split(",")


def _fmt_label(label):
    value = float(label)
    return str(int(value)) if value.is_integer() else label


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("data/UCR"))
    args = parser.parse_args(argv)

    with tempfile.TemporaryDirectory() as tmp:
        wheels = {}
        for package in sorted({src[0] for src in SOURCES.values()}):
            subprocess.run(
                [sys.executable, "-m", "pip", "download", package, "--no-deps", "-q", "-d", tmp],
                check=True,
            )
            wheels[package] = next(Path(tmp).glob(f"{package}-*.whl"))

        for name, (package, member, fmt) in SOURCES.items():
            target = args.out / name
            target.mkdir(parents=True, exist_ok=True)
            with zipfile.ZipFile(wheels[package]) as zf:
                for split in ("TRAIN", "TEST"):
                    text = zf.read(member.format(split=split)).decode()
                    rows = _rows_from_txt(text) if fmt == "txt" else _rows_from_ts(text)
                    lines = [
                        "\t".join([_fmt_label(label)] + [repr(float(v)) for v in values])
                        for label, values in rows
                    ]
                    path = target / f"{name}_{split}.tsv"
                    path.write_text("\n".join(lines) + "\n")
                    print(f"{path}: {len(lines)} series")


if __name__ == "__main__":
    main()
