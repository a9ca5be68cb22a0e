"""Print trainable parameter counts for the named model configurations."""

import argparse

from ldnet.model import ModelConfig, build_model, count_parameters

CONFIGS = {
    "mbnet": dict(family="mbnet", encoder="mbnet_conv", decoder="rnn"),
    "ldnet-mbnetconv-rnn": dict(family="ldnet", encoder="mbnet_conv", decoder="rnn"),
    "ldnet-v2-rnn": dict(family="ldnet", encoder="mobilenet_v2", decoder="rnn"),
    "ldnet-v3-rnn": dict(family="ldnet", encoder="mobilenet_v3", decoder="rnn"),
    "ldnet-v3-ffn": dict(family="ldnet", encoder="mobilenet_v3", decoder="ffn"),
    "ldnet-mn": dict(family="ldnet_mn", encoder="mobilenet_v3", decoder="rnn", mean_net="ffn"),
    "ldnet-ml": dict(family="ldnet_ml", encoder="mobilenet_v3", decoder="ffn"),
}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--listeners", type=int, default=270, help="real training listeners M")
    args = parser.parse_args()
    for name, kw in CONFIGS.items():
        lc = args.listeners + (kw["family"] == "ldnet_ml")
        n = count_parameters(build_model(ModelConfig(listener_count=lc, **kw)))
        print(f"{name:22s} {n:>10,d}  ({n / 1e6:.2f}M)")


if __name__ == "__main__":
    main()
