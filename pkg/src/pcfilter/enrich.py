"""Pathway enrichment scores from a 2x2 overlap table.

Given a background universe of N1 genes, an input list of N2, a pathway of
K and an overlap of k, the table

              in pathway    not in pathway
  in list          k          N2 - k
  not in list    K - k    N1 - K - N2 + k

yields the odds ratio, the hypergeometric upper-tail (Fisher exact) p-value
and the Enrichr-style combined score z * ln(p), where z measures how far
the pathway's observed rank deviates from its rank under random gene-list
permutations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import inf, log

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import ValidationError

# sentinel for 0/0 odds-ratio cells; keeps CSV columns numeric
DEGENERATE = -1.0

DEFAULT_PERMUTATIONS = 1000

ENRICH_COLUMNS = ("pathway", "k", "K", "OR", "p", "combined_score")


@dataclass(frozen=True)
class EnrichmentTable:
    """Counts (N1, N2, K, k) with 0 <= k <= min(N2, K) and N2, K <= N1."""

    N1: int
    N2: int
    K: int
    k: int

    def __post_init__(self):
        for name in ("N1", "N2", "K", "k"):
            val = getattr(self, name)
            if int(val) != val:
                raise ValidationError(f"{name} must be an integer, got {val!r}")
            object.__setattr__(self, name, int(val))
        if self.N1 < 1:
            raise ValidationError(f"N1 must be positive, got {self.N1}")
        if not 0 <= self.N2 <= self.N1:
            raise ValidationError(f"need 0 <= N2 <= N1, got N2={self.N2}, N1={self.N1}")
        if not 0 <= self.K <= self.N1:
            raise ValidationError(f"need 0 <= K <= N1, got K={self.K}, N1={self.N1}")
        if not 0 <= self.k <= min(self.N2, self.K):
            raise ValidationError(
                f"need 0 <= k <= min(N2, K), got k={self.k}, N2={self.N2}, K={self.K}"
            )
        if self.N1 - self.K - self.N2 + self.k < 0:
            raise ValidationError(
                "table cell N1 - K - N2 + k is negative; counts are inconsistent"
            )


def odds_ratio(t: EnrichmentTable) -> float:
    """k (N1 - K - N2 + k) / ((N2 - k)(K - k)).

    A zero denominator with a nonzero numerator returns +inf; 0/0 returns
    the DEGENERATE sentinel (-1.0), which no genuine ratio can produce.
    """
    num = t.k * (t.N1 - t.K - t.N2 + t.k)
    den = (t.N2 - t.k) * (t.K - t.k)
    if den == 0:
        return DEGENERATE if num == 0 else inf
    return num / den


def _log_comb(n, r):
    return gammaln(n + 1) - gammaln(r + 1) - gammaln(n - r + 1)


def fisher_exact_p(t: EnrichmentTable) -> float:
    """Hypergeometric upper tail: sum over i >= k of C(K,i) C(N1-K, N2-i) / C(N1,N2).

    Accumulated in log space so universes around 2e4 genes stay stable.
    """
    hi = min(t.N2, t.K)
    i = np.arange(t.k, hi + 1)
    if i.size == 0:
        return 1.0
    log_terms = (
        _log_comb(t.K, i) + _log_comb(t.N1 - t.K, t.N2 - i) - _log_comb(t.N1, t.N2)
    )
    return float(min(1.0, np.exp(logsumexp(log_terms))))


def combined_score(z: float, p: float, magnitude: bool = False) -> float:
    """z * ln(p); magnitude=True reports |z * ln(p)| instead."""
    p = float(p)
    if not 0.0 < p <= 1.0:
        raise ValidationError(f"p must lie in (0, 1], got {p!r}")
    score = float(z) * log(p)
    return abs(score) if magnitude else score


def permutation_z(
    observed_rank: int,
    n_pathways: int,
    rng,
    n_permutations: int = DEFAULT_PERMUTATIONS,
) -> float:
    """Rank-deviation z-score against a uniform random-rank null.

    Rank 1 is the most enriched pathway, so enrichment shows as a rank far
    below the permuted mean and z < 0.  A zero permutation spread returns 0.
    """
    if not 1 <= observed_rank <= n_pathways:
        raise ValidationError(
            f"observed_rank must lie in [1, {n_pathways}], got {observed_rank}"
        )
    if n_permutations < 2:
        raise ValidationError("n_permutations must be at least 2")
    perm_ranks = rng.integers(1, n_pathways + 1, size=n_permutations)
    sd = perm_ranks.std(ddof=1)
    if sd == 0.0:
        return 0.0
    return float((observed_rank - perm_ranks.mean()) / sd)


def load_membership(path) -> dict:
    """Read a two-column delimited file (gene_id, pathway_id) into
    {pathway: set of genes}.  A header row naming the columns is optional;
    comma or tab delimiters are sniffed from the first line."""
    pathways: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise ValidationError(f"{path}: empty membership file")
        delim = "\t" if "\t" in first else ","
        fh.seek(0)
        reader = csv.reader(fh, delimiter=delim)
        for lineno, row in enumerate(reader, start=1):
            if not row or not "".join(row).strip():
                continue
            if len(row) < 2:
                raise ValidationError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            gene, pathway = row[0].strip(), row[1].strip()
            if lineno == 1 and {gene.lower(), pathway.lower()} & {"gene_id", "pathway_id"}:
                continue
            if not gene or not pathway:
                raise ValidationError(f"{path}:{lineno}: blank gene or pathway id")
            pathways.setdefault(pathway, set()).add(gene)
    if not pathways:
        raise ValidationError(f"{path}: no membership rows")
    return pathways


def enrich_gene_list(
    gene_list,
    membership: dict,
    universe=None,
    rng=None,
    n_permutations: int = DEFAULT_PERMUTATIONS,
    magnitude: bool = False,
) -> list[dict]:
    """Score every pathway against the input list; rows sorted by p.

    universe defaults to the union of all pathway memberships plus the
    input list.  Ranks for the permutation z come from the Fisher p
    ordering (rank 1 = smallest p); ties keep pathway-name order.
    """
    genes = {str(g).strip() for g in gene_list if str(g).strip()}
    if not genes:
        raise ValidationError("gene list is empty")
    if not membership:
        raise ValidationError("membership table is empty")
    if universe is None:
        members = set().union(*membership.values())
        universe = members | genes
    else:
        universe = {str(g).strip() for g in universe}
        missing = genes - universe
        if missing:
            raise ValidationError(
                f"{len(missing)} input genes outside the universe, e.g. {sorted(missing)[:3]}"
            )
    n1 = len(universe)
    n2 = len(genes & universe) if universe else len(genes)
    if rng is None:
        rng = np.random.default_rng(0)

    scored = []
    for pathway in sorted(membership):
        members = membership[pathway] & universe
        table = EnrichmentTable(N1=n1, N2=n2, K=len(members), k=len(members & genes))
        scored.append((pathway, table, fisher_exact_p(table)))
    scored.sort(key=lambda item: (item[2], item[0]))

    rows = []
    n_pathways = len(scored)
    for rank, (pathway, table, p) in enumerate(scored, start=1):
        z = permutation_z(rank, n_pathways, rng, n_permutations)
        rows.append(
            {
                "pathway": pathway,
                "k": table.k,
                "K": table.K,
                "OR": odds_ratio(table),
                "p": p,
                "combined_score": combined_score(z, p, magnitude=magnitude),
            }
        )
    return rows


def odds_ratio_ratio(or_a: float, or_b: float) -> float:
    """Ratio of two odds ratios; degenerate or zero inputs are rejected."""
    for val in (or_a, or_b):
        if val == DEGENERATE:
            raise ValidationError("cannot form a ratio with a degenerate odds ratio")
    if or_b == 0.0 or or_b == inf:
        raise ValidationError(f"denominator odds ratio must be finite nonzero, got {or_b}")
    return or_a / or_b
