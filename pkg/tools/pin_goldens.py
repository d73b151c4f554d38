#!/usr/bin/env python3
"""Pin the golden reference metrics from the brute-force oracle.

Run once; the output is committed at tests/goldens/pinned_seed42.json and
the engine is tested against it. Goldens are produced exclusively by the
oracle so the engine can never certify itself.
"""

import json
import sys
import time
from itertools import combinations
from pathlib import Path

from speciesrag.oracle import oracle_pipeline
from speciesrag.simlab import SimConfig, generate_instance, sweep_query_sigma

OUT = Path(__file__).resolve().parent.parent / "tests" / "goldens" / "pinned_seed42.json"

M, K = 30, 10
KS = (1, 5, 10, 30)
NOISE_SWEEP = (0.4, 0.8, 1.2)
BOUNDED_POOL = 200


def mrr_dict(run):
    return {str(k): v for k, v in run.mrr.items()}


def main() -> int:
    t0 = time.time()
    pinned_cfg = SimConfig()
    instance = generate_instance(pinned_cfg)
    encoder_ids = [e for e, _ in pinned_cfg.cross_encoders]

    subsets = [[e] for e in encoder_ids]
    subsets += [list(p) for p in combinations(encoder_ids, 2)]
    subsets.append(list(encoder_ids))

    subsets_no_rerank = {}
    for subset in subsets:
        run = oracle_pipeline(instance, encoder_ids=subset, m=M, k=K, rerank_enabled=False, ks=KS)
        subsets_no_rerank["+".join(subset)] = mrr_dict(run)
        print(f"[{time.time()-t0:7.1f}s] no-rerank {'+'.join(subset)}: mrr@1={run.mrr[1]:.4f}")

    full = oracle_pipeline(instance, m=M, k=K, rerank_enabled=True, ks=KS)
    print(f"[{time.time()-t0:7.1f}s] rerank ensemble: mrr@1={full.mrr[1]:.4f} recall@{K}={full.recall_at_k:.4f}")

    sweep = {}
    for cfg_i, inst_i in zip(
        NOISE_SWEEP, sweep_query_sigma(pinned_cfg, list(NOISE_SWEEP))
    ):
        run = oracle_pipeline(inst_i, m=M, k=K, rerank_enabled=True, ks=(1,))
        sweep[str(cfg_i)] = run.mrr[1]
        print(f"[{time.time()-t0:7.1f}s] sweep sigma_query={cfg_i}: mrr@1={run.mrr[1]:.4f}")

    bounded_cfg = SimConfig(
        n_species=2000, n_queries=200, query_species_pool=BOUNDED_POOL, query_sigma=0.4
    )
    bounded_inst = generate_instance(bounded_cfg)
    scope = frozenset(bounded_inst.kb.species_ids()[:BOUNDED_POOL])
    open_run = oracle_pipeline(bounded_inst, m=M, k=K, rerank_enabled=True, ks=(1,))
    bounded_run = oracle_pipeline(
        bounded_inst, m=M, k=K, rerank_enabled=True, ks=(1,), scope=scope
    )
    print(
        f"[{time.time()-t0:7.1f}s] bounded/open: open mrr@1={open_run.mrr[1]:.4f} "
        f"bounded mrr@1={bounded_run.mrr[1]:.4f}"
    )

    goldens = {
        "produced_by": "tools/pin_goldens.py (brute-force oracle)",
        "m": M,
        "k": K,
        "ks": list(KS),
        "pinned": {
            "sim_config": pinned_cfg.to_dict(),
            "subsets_no_rerank": subsets_no_rerank,
            "ensemble_rerank": mrr_dict(full),
            "recall_at_k": full.recall_at_k,
        },
        "noise_sweep": {"sigmas": list(NOISE_SWEEP), "mrr1": sweep},
        "bounded_open": {
            "sim_config": bounded_cfg.to_dict(),
            "scope_size": BOUNDED_POOL,
            "open_mrr1": open_run.mrr[1],
            "bounded_mrr1": bounded_run.mrr[1],
        },
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    with open(OUT, "w", encoding="utf-8") as fh:
        json.dump(goldens, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"[{time.time()-t0:7.1f}s] wrote {OUT}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
