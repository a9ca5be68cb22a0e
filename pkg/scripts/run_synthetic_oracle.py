"""Train one model on a synthetic listening test and report the ground-truth checks."""

import argparse
import logging
import time
from dataclasses import replace

import torch

from ldnet.features import FeatureStore
from ldnet.model import FAMILIES, ModelConfig, build_model
from ldnet.objectives import ObjectiveConfig
from ldnet.synthgen import SynthSpec, generate, oracle_checks
from ldnet.trainer import compatible_modes, prepare, recipe, train


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--family", default="ldnet_ml", choices=FAMILIES)
    parser.add_argument("--encoder", default="mobilenet_v3")
    parser.add_argument("--decoder", default="ffn")
    parser.add_argument("--steps", type=int, default=5000)
    parser.add_argument("--batch-size", type=int, default=4)
    parser.add_argument("--validate-every", type=int, default=1000)
    parser.add_argument("--bias-std", type=float, default=SynthSpec().listener_bias_std)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(args.threads)

    t0 = time.perf_counter()
    res = generate(replace(SynthSpec(), listener_bias_std=args.bias_std))
    feats = FeatureStore(res.dataset.samples, waveforms=res.waveforms)
    mc, ds = prepare(ModelConfig(family=args.family, encoder=args.encoder, decoder=args.decoder), res.dataset)
    cfg = replace(recipe(mc), total_steps=args.steps, batch_size=args.batch_size,
                  validate_every=args.validate_every)
    result = train(build_model(mc, args.seed), ds, ObjectiveConfig(), cfg, feats, seed=args.seed)
    print(f"best step {result.best_step}, valid system SRCC {result.best_srcc:.3f}")
    for mode in compatible_modes(mc):
        rep = oracle_checks(result.model, res, feats, mode=mode)
        pearson = "n/a" if rep.bias_pearson is None else f"{rep.bias_pearson:.3f}"
        print(f"{mode:14s} system SRCC vs truth {rep.system_srcc:.3f}  offset/bias Pearson {pearson}  "
              f"offset std {rep.offset_std:.3f}")
    print(f"elapsed {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
