"""Build the ~2 MB public-domain character corpus used by the desk-scale LM check.

The Project Gutenberg Shakespeare plays ship inside the ``shakespeare`` sdist
on PyPI. This script downloads it with pip (or reuses a local archive),
concatenates the modern-spelling plays in sorted order until the byte budget
is reached, and writes ``data/shakespeare.txt`` plus its contiguous 90/5/5
split as ``shakespeare_{train,valid,test}.txt`` for config-driven runs.

    python3 scripts/fetch_corpus.py [--archive shakespeare-0.6.tar.gz] [--bytes 2000000]
"""

import argparse
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

from compressive.data import split_corpus

ROOT = Path(__file__).resolve().parents[1]


def download(dest):
    subprocess.run([sys.executable, "-m", "pip", "download", "shakespeare==0.6", "--no-deps",
                    "--no-binary", ":all:", "-d", str(dest)], check=True)
    return next(Path(dest).glob("shakespeare-*.tar.gz"))


def build(archive, budget):
    with tarfile.open(archive) as tar:
        members = sorted((m for m in tar.getmembers()
                          if m.name.endswith("_gut.txt") and "/texts/" in m.name),
                         key=lambda m: m.name)
        chunks, size = [], 0
        for member in members:
            text = tar.extractfile(member).read().decode("utf-8", errors="replace")
            text = text.replace("\r\n", "\n").lstrip("\ufeff")
            chunks.append(text)
            size += len(text.encode("utf-8"))
            if size >= budget:
                break
    return "\n\n".join(chunks).encode("utf-8")[:budget].decode("utf-8", errors="ignore")


def write_splits(out, text):
    for name, part in zip(("train", "valid", "test"), split_corpus(text)):
        out.with_name(f"{out.stem}_{name}{out.suffix}").write_text(part, encoding="utf-8")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--archive", type=Path)
    parser.add_argument("--bytes", type=int, default=2_000_000)
    parser.add_argument("--out", type=Path, default=ROOT / "data" / "shakespeare.txt")
    parser.add_argument("--split-only", action="store_true",
                        help="only re-split an existing --out file")
    args = parser.parse_args()
    if args.split_only:
        write_splits(args.out, args.out.read_text(encoding="utf-8"))
        return
    with tempfile.TemporaryDirectory() as tmp:
        archive = args.archive or download(tmp)
        text = build(archive, args.bytes)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(text, encoding="utf-8")
    write_splits(args.out, text)
    print(f"wrote {len(text.encode('utf-8'))} bytes to {args.out}")


if __name__ == "__main__":
    main()
