"""Command-line entry point: ``gxgkm {kernel,test,scan,simulate}``.

Exit status is 0 on success, 1 on invalid input, 2 on numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import NumericError, ValidationError
from .fileio import load_dataset
from .kernels import gene_kernel, interaction_kernel, inverse_maf_weights
from .scan import (Stage1Policy, export_edges, format_edges, format_results,
                   precompute_gene_kernels, two_stage_scan)
from .score_tests import interaction_test, overall_test
from .simulate import read_descriptor, run_study

log = logging.getLogger("gxgkm")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _write(text: str, path: str | None):
    if not text.endswith("\n"):
        text += "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _gene_columns(ds, gene_id):
    for g, cols in ds.partition.genes:
        if g == gene_id:
            return cols
    raise ValidationError(f"gene {gene_id!r} is not in the gene map")


def _kernel_for(ds, gene_id, weights):
    sub = ds.genotypes.columns(_gene_columns(ds, gene_id))
    w = inverse_maf_weights(sub) if weights == "inv-maf" else None
    return gene_kernel(sub, w)


def cmd_kernel(args) -> int:
    ds = load_dataset(args.genotypes, args.gene_map, impute=args.impute)
    gene = args.gene or ds.partition.gene_ids[0]
    K = _kernel_for(ds, gene, args.weights)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    ids = list(ds.genotypes.individual_ids)
    w.writerow(["id"] + ids)
    for ind, row in zip(ids, K):
        w.writerow([ind] + [f"{v:.12g}" for v in row])
    _write(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_test(args) -> int:
    ds = load_dataset(args.genotypes, args.gene_map, args.trait, impute=args.impute)
    K1 = _kernel_for(ds, args.gene1, args.weights)
    K2 = _kernel_for(ds, args.gene2, args.weights)
    K3 = interaction_kernel(K1, K2)
    overall = overall_test(ds.trait, K1, K2, K3)
    inter = interaction_test(ds.trait, K1, K2, K3)
    vc = inter.null_fit.components
    lines = [
        "\t".join(["gene1", "gene2", "statistic", "p_overall", "statistic_interaction",
                   "p_interaction", "null_sigma2", "null_tau1", "null_tau2"]),
        "\t".join([args.gene1, args.gene2, f"{overall.statistic:.6g}", f"{overall.p_value:.3e}",
                   f"{inter.statistic:.6g}", f"{inter.p_value:.3e}",
                   f"{vc.sigma2:.6g}", f"{vc.tau1:.6g}", f"{vc.tau2:.6g}"]),
    ]
    _write("\n".join(lines), None)
    return EXIT_OK


def cmd_scan(args) -> int:
    ds = load_dataset(args.genotypes, args.gene_map, args.trait, impute=args.impute)
    if ds.n_unmapped:
        log.warning("%d SNPs not in the gene map were excluded", ds.n_unmapped)
    policy = Stage1Policy.parse(args.stage1)
    store = precompute_gene_kernels(ds.genotypes, ds.partition, args.weights)
    records = two_stage_scan(ds.trait, store, policy, args.alpha2, threads=args.threads)
    _write(format_results(records), args.out)
    if args.edges:
        _write(format_edges(export_edges(records, args.edge_cut)), args.edges)
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        text = Path(args.descriptor).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read {args.descriptor}: {exc.strerror or exc}") from exc
    desc = read_descriptor(text)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.threads is not None:
        over["threads"] = args.threads
    if over:
        desc = replace(desc, **over)
    table = run_study(desc)
    _write(table.to_tsv(), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gxgkm", description="Gene-centric gene-gene interaction tests with kernel machines.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(sp, trait=True):
        sp.add_argument("--genotypes", required=True, help="CSV: id,<snp ids>; cells 0/1/2/NA")
        sp.add_argument("--gene-map", help="TSV: snp_id<TAB>gene_id")
        if trait:
            sp.add_argument("--trait", required=True, help="id,value lines")
        sp.add_argument("--impute", action="store_true", help="fill NA with the per-SNP modal genotype")
        sp.add_argument("--weights", choices=("none", "inv-maf"), default="none")

    k = sub.add_parser("kernel", help="print one gene's kernel matrix as CSV")
    data_args(k, trait=False)
    k.add_argument("--gene", help="gene id (default: first gene)")
    k.add_argument("-o", "--out")
    k.set_defaults(func=cmd_kernel)

    t = sub.add_parser("test", help="overall and interaction tests for one gene pair")
    data_args(t)
    t.add_argument("--gene1", required=True)
    t.add_argument("--gene2", required=True)
    t.set_defaults(func=cmd_test)

    s = sub.add_parser("scan", help="two-stage scan over all gene pairs")
    data_args(s)
    s.add_argument("-o", "--out", required=True, help="results TSV")
    s.add_argument("--stage1", default="bonferroni:0.05", help="fixed:<c> or bonferroni:<alpha>")
    s.add_argument("--alpha2", type=float, default=0.05)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--seed", type=int, default=0, help="unused by the deterministic scan; accepted for uniformity")
    s.add_argument("--edges", help="edge-list TSV for network tools")
    s.add_argument("--edge-cut", type=float, default=0.05)
    s.set_defaults(func=cmd_scan)

    m = sub.add_parser("simulate", help="run a study descriptor and write the rejection table")
    m.add_argument("--descriptor", required=True)
    m.add_argument("-o", "--out")
    m.add_argument("--seed", type=int)
    m.add_argument("--threads", type=int)
    m.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
