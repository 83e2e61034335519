"""Readers for genotype tables, SNP-to-gene maps and trait files.

Every parse error names the file, line and column it came from.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .kernels import GenotypeMatrix
from .scan import GenePartition

log = logging.getLogger(__name__)


class ParseError(ValidationError):
    def __init__(self, path, line, column, message):
        loc = f"{path}:{line}" + (f":{column}" if column is not None else "")
        super().__init__(f"{loc}: {message}")
        self.path, self.line, self.column = str(path), line, column


def _read_lines(path) -> list:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except UnicodeDecodeError as exc:
        raise ValidationError(f"{path}: not a text file") from exc
    return text.splitlines()


def _split(line: str, delim: str | None = None) -> list:
    if delim is None:
        delim = "\t" if "\t" in line else ","
    return [c.strip() for c in next(csv.reader([line], delimiter=delim))]


def load_genotypes(path, impute: bool = False) -> GenotypeMatrix:
    """Comma-separated genotypes: ``id,<snp ids...>`` header, one row per individual.

    Cells are 0, 1, 2 or ``NA``. ``NA`` is rejected unless ``impute`` is set,
    in which case it becomes the most frequent observed code of that SNP.
    """
    lines = [(i + 1, ln) for i, ln in enumerate(_read_lines(path)) if ln.strip()]
    if not lines:
        raise ParseError(path, 1, None, "file is empty")
    hline, header = lines[0][0], _split(lines[0][1], ",")
    if len(header) < 2 or header[0].lower() != "id":
        raise ParseError(path, hline, 1, "header must start with 'id' followed by SNP ids")
    snp_ids = header[1:]
    seen = {}
    for j, s in enumerate(snp_ids):
        if not s:
            raise ParseError(path, hline, j + 2, "empty SNP id")
        if s in seen:
            raise ParseError(path, hline, j + 2, f"duplicate SNP id {s!r}")
        seen[s] = j
    if len(lines) == 1:
        raise ParseError(path, hline + 1, None, "no genotype rows after header")
    ids, rows = [], []
    id_seen = set()
    for lineno, ln in lines[1:]:
        cells = _split(ln, ",")
        if len(cells) != len(header):
            raise ParseError(path, lineno, None, f"expected {len(header)} fields, found {len(cells)}")
        ind = cells[0]
        if not ind:
            raise ParseError(path, lineno, 1, "empty individual id")
        if ind in id_seen:
            raise ParseError(path, lineno, 1, f"duplicate individual id {ind!r}")
        id_seen.add(ind)
        row = []
        for j, c in enumerate(cells[1:]):
            if c in ("0", "1", "2"):
                row.append(int(c))
            elif c.upper() == "NA":
                if not impute:
                    raise ParseError(path, lineno, j + 2,
                                     f"missing genotype for SNP {snp_ids[j]!r}; pass the imputation flag to fill it")
                row.append(-1)
            else:
                raise ParseError(path, lineno, j + 2, f"invalid genotype {c!r} (expected 0, 1, 2 or NA)")
        ids.append(ind)
        rows.append(row)
    values = np.array(rows, dtype=np.int64)
    missing = values < 0
    if missing.any():
        for j in np.flatnonzero(missing.any(axis=0)):
            obs = values[~missing[:, j], j]
            if obs.size == 0:
                raise ValidationError(f"{path}: SNP {snp_ids[j]!r} has no observed genotypes")
            counts = np.bincount(obs, minlength=3)
            values[missing[:, j], j] = int(np.argmax(counts))
        log.info("imputed %d missing genotypes", int(missing.sum()))
    try:
        return GenotypeMatrix(values, snp_ids, ids)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def load_gene_map(path, snp_ids: Sequence[str]):
    """Tab-separated ``snp_id<TAB>gene_id`` lines.

    Genes are ordered by first appearance. Returns ``(partition, n_unmapped)``
    where ``n_unmapped`` counts genotype SNPs absent from the map.
    """
    index = {s: j for j, s in enumerate(snp_ids)}
    genes: dict = {}
    assigned: dict = {}
    for lineno, ln in enumerate(_read_lines(path), start=1):
        if not ln.strip() or ln.lstrip().startswith("#"):
            continue
        cells = _split(ln, "\t")
        if len(cells) != 2:
            raise ParseError(path, lineno, None, f"expected 2 tab-separated fields, found {len(cells)}")
        snp, gene = cells
        if lineno == 1 and snp.lower() == "snp_id" and gene.lower() == "gene_id":
            continue
        if snp not in index:
            raise ParseError(path, lineno, 1, f"SNP {snp!r} is not in the genotype file")
        if snp in assigned:
            if assigned[snp] != gene:
                raise ParseError(path, lineno, 2,
                                 f"SNP {snp!r} mapped to both {assigned[snp]!r} and {gene!r}")
            continue
        if not gene:
            raise ParseError(path, lineno, 2, "empty gene id")
        assigned[snp] = gene
        genes.setdefault(gene, []).append(index[snp])
    if not genes:
        raise ValidationError(f"{path}: no SNP-to-gene assignments")
    unmapped = len(snp_ids) - len(assigned)
    if unmapped:
        log.warning("%d SNPs are not mapped to any gene and are excluded", unmapped)
    return GenePartition(tuple((g, tuple(cols)) for g, cols in genes.items())), unmapped


def load_trait(path, individual_ids: Sequence[str] | None = None):
    """``id,value`` (or tab-separated) lines, optional ``id`` header.

    With ``individual_ids`` the values are reordered to that order and every
    id must match exactly. Returns ``(values, ids)``.
    """
    ids, vals = [], []
    seen = set()
    for lineno, ln in enumerate(_read_lines(path), start=1):
        if not ln.strip():
            continue
        cells = _split(ln)
        if len(cells) != 2:
            raise ParseError(path, lineno, None, f"expected 2 fields (id, value), found {len(cells)}")
        ind, raw = cells
        if not ids and ind.lower() == "id":
            continue
        try:
            v = float(raw)
        except ValueError:
            raise ParseError(path, lineno, 2, f"non-numeric trait value {raw!r}") from None
        if not math.isfinite(v):
            raise ParseError(path, lineno, 2, f"trait value {raw!r} is not finite")
        if ind in seen:
            raise ParseError(path, lineno, 1, f"duplicate id {ind!r}")
        seen.add(ind)
        ids.append(ind)
        vals.append(v)
    if not ids:
        raise ValidationError(f"{path}: no trait values")
    if individual_ids is None:
        return np.array(vals), ids
    pos = {ind: k for k, ind in enumerate(ids)}
    known = set(individual_ids)
    for ind in ids:
        if ind not in known:
            raise ValidationError(f"{path}: id {ind!r} is not in the genotype file")
    missing = [ind for ind in individual_ids if ind not in pos]
    if missing:
        raise ValidationError(f"{path}: no trait value for id {missing[0]!r}")
    return np.array([vals[pos[i]] for i in individual_ids]), list(individual_ids)


@dataclass(frozen=True)
class Dataset:
    genotypes: GenotypeMatrix
    partition: GenePartition
    trait: np.ndarray | None = None
    n_unmapped: int = 0


def load_dataset(genotypes, gene_map=None, trait=None, impute: bool = False) -> Dataset:
    G = load_genotypes(genotypes, impute=impute)
    if gene_map is None:
        partition, unmapped = GenePartition((("gene", tuple(range(G.n_snps))),)), 0
    else:
        partition, unmapped = load_gene_map(gene_map, G.snp_ids)
    y = None
    if trait is not None:
        y, _ = load_trait(trait, G.individual_ids)
    return Dataset(G, partition, y, unmapped)
