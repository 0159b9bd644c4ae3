#!/usr/bin/env python3
"""Download and normalize the benchmark datasets into data/.

Produces the file names the acceptance tests look for:

    data/grqc.txt        collaboration network (undirected edge list)
    data/facebook.txt    ego-network union (undirected edge list)
    data/cora.edges      citation network (undirected edge list)
    data/cora.labels     one class per paper, node<TAB>class
    data/drug_gene.tsv   bipartite drug-gene interactions

Sources are the canonical hosting pages:

    https://snap.stanford.edu/data/ca-GrQc.html
    https://snap.stanford.edu/data/ego-Facebook.html
    https://linqs.org/datasets/  (cora)
    https://snap.stanford.edu/biodata/datasets/10002/10002-ChG-Miner.html

Everything goes through stdlib urllib; rerunning skips files that already
exist unless --force is given.
"""

import argparse
import gzip
import io
import sys
import tarfile
import urllib.request
from pathlib import Path

DATASETS = {
    "grqc": "https://snap.stanford.edu/data/ca-GrQc.txt.gz",
    "facebook": "https://snap.stanford.edu/data/facebook_combined.txt.gz",
    "cora": "https://linqs-data.soe.ucsc.edu/public/lbc/cora.tgz",
    "drug_gene": ("https://snap.stanford.edu/biodata/datasets/10002/files/"
                  "ChG-Miner_miner-chem-gene.tsv.gz"),
}


def download(url: str) -> bytes:
    print(f"  fetching {url}")
    req = urllib.request.Request(url, headers={"User-Agent": "fetch-data/1.0"})
    with urllib.request.urlopen(req, timeout=120) as resp:
        return resp.read()


def write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")
    n_lines = text.count("\n")
    print(f"  wrote {path} ({n_lines} lines)")


def fetch_grqc(dest: Path) -> None:
    """Gzipped whitespace edge list with '#' comments; both directions of
    each collaboration are listed, the loader collapses them."""
    raw = gzip.decompress(download(DATASETS["grqc"]))
    write_text(dest / "grqc.txt", raw.decode("utf-8"))


def fetch_facebook(dest: Path) -> None:
    raw = gzip.decompress(download(DATASETS["facebook"]))
    write_text(dest / "facebook.txt", raw.decode("utf-8"))


def fetch_cora(dest: Path) -> None:
    """The archive holds cora.cites (tab pairs: cited citing) and
    cora.content (paper id, 1433 word flags, class).  We keep the edge
    pairs as-is and reduce content rows to node<TAB>class."""
    blob = download(DATASETS["cora"])
    edges = labels = None
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
        for member in tar.getmembers():
            name = member.name.rsplit("/", 1)[-1]
            if name == "cora.cites":
                edges = tar.extractfile(member).read().decode("utf-8")
            elif name == "cora.content":
                labels = tar.extractfile(member).read().decode("utf-8")
    if edges is None or labels is None:
        raise RuntimeError("cora archive is missing cora.cites/cora.content")
    write_text(dest / "cora.edges", edges)
    rows = []
    for line in labels.splitlines():
        parts = line.split("\t")
        if len(parts) < 2:
            continue
        rows.append(f"{parts[0]}\t{parts[-1]}")
    write_text(dest / "cora.labels", "\n".join(rows) + "\n")


def fetch_drug_gene(dest: Path) -> None:
    """Tab-separated drug<TAB>gene pairs; the '#'-prefixed header line is
    treated as a comment by the loader."""
    raw = gzip.decompress(download(DATASETS["drug_gene"]))
    write_text(dest / "drug_gene.tsv", raw.decode("utf-8"))


FETCHERS = {
    "grqc": (fetch_grqc, ("grqc.txt",)),
    "facebook": (fetch_facebook, ("facebook.txt",)),
    "cora": (fetch_cora, ("cora.edges", "cora.labels")),
    "drug_gene": (fetch_drug_gene, ("drug_gene.tsv",)),
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dest", default=None,
                        help="target directory (default: <repo>/data)")
    parser.add_argument("--only", choices=sorted(FETCHERS), nargs="*",
                        help="fetch just these datasets")
    parser.add_argument("--force", action="store_true",
                        help="re-download even if the files exist")
    args = parser.parse_args(argv)

    dest = Path(args.dest) if args.dest \
        else Path(__file__).resolve().parent.parent / "data"
    dest.mkdir(parents=True, exist_ok=True)

    names = args.only or sorted(FETCHERS)
    failures = []
    for name in names:
        fetcher, outputs = FETCHERS[name]
        if not args.force and all((dest / out).exists() for out in outputs):
            print(f"{name}: already present, skipping (--force re-downloads)")
            continue
        print(f"{name}:")
        try:
            fetcher(dest)
        except Exception as exc:  # keep going; report at the end
            print(f"  FAILED: {exc}", file=sys.stderr)
            failures.append(name)
    if failures:
        print(f"failed: {', '.join(failures)}", file=sys.stderr)
        return 1
    print("done")
    return 0


if __name__ == "__main__":
    sys.exit(main())
