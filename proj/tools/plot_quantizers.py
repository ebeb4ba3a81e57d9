#!/usr/bin/env python3
"""Plot the per-layer activation binary sets from `adabin inspect` output.

    adabin inspect --checkpoint run/last.ckpt > q.json
    python3 tools/plot_quantizers.py q.json -o quantizers.png
    python3 tools/plot_quantizers.py q.json --check   # schema check only
"""

import argparse
import json
import sys

STATS = {"min", "max", "mean"}
LAYER_KEYS = {
    "name": str,
    "weight_mode": str,
    "activation_mode": str,
    "alpha_a": (int, float),
    "beta_a": (int, float),
    "binary_set": list,
    "all_positive": bool,
    "alpha_w": dict,
    "beta_w": dict,
}


def validate(doc):
    errors = []
    for key in ("model", "binary_layers", "maxout", "all_positive_layers"):
        if key not in doc:
            errors.append(f"missing top-level key '{key}'")
    for i, layer in enumerate(doc.get("binary_layers", [])):
        for key, kind in LAYER_KEYS.items():
            if not isinstance(layer.get(key), kind):
                errors.append(f"binary_layers[{i}].{key} missing or not {kind}")
        for key in ("alpha_w", "beta_w"):
            if isinstance(layer.get(key), dict) and set(layer[key]) != STATS:
                errors.append(f"binary_layers[{i}].{key} must hold exactly {sorted(STATS)}")
        bs = layer.get("binary_set")
        if isinstance(bs, list) and (len(bs) != 2 or bs[0] > bs[1]):
            errors.append(f"binary_layers[{i}].binary_set must be [lower, upper]")
        if isinstance(bs, list) and len(bs) == 2 and layer.get("all_positive") != (bs[0] > 0):
            errors.append(f"binary_layers[{i}].all_positive disagrees with binary_set")
    flagged = {l["name"] for l in doc.get("binary_layers", []) if l.get("all_positive")}
    if set(doc.get("all_positive_layers", [])) != flagged:
        errors.append("all_positive_layers does not match the flagged layers")
    for i, m in enumerate(doc.get("maxout", [])):
        for key in ("gamma_plus", "gamma_minus"):
            if not isinstance(m.get(key), dict) or set(m[key]) != STATS:
                errors.append(f"maxout[{i}].{key} must hold {sorted(STATS)}")
    return errors


def plot(doc, out):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    layers = doc["binary_layers"]
    names = [l["name"] for l in layers]
    lo = [l["binary_set"][0] for l in layers]
    hi = [l["binary_set"][1] for l in layers]
    centre = [l["beta_a"] for l in layers]
    xs = range(len(layers))

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(max(6, len(layers) * 0.5), 7), sharex=True)
    ax1.vlines(xs, lo, hi, color="tab:blue", linewidth=3, label="activation set")
    ax1.scatter(xs, centre, color="tab:orange", zorder=3, label="beta_a")
    ax1.axhline(0.0, color="grey", linewidth=0.5)
    for x, l in zip(xs, layers):
        if l["all_positive"]:
            ax1.annotate("+", (x, hi[x]), ha="center", va="bottom", color="tab:red")
    ax1.set_ylabel("value")
    ax1.legend(loc="best")

    ax2.errorbar(
        xs,
        [l["alpha_w"]["mean"] for l in layers],
        yerr=[
            [l["alpha_w"]["mean"] - l["alpha_w"]["min"] for l in layers],
            [l["alpha_w"]["max"] - l["alpha_w"]["mean"] for l in layers],
        ],
        fmt="o",
        label="alpha_w",
    )
    ax2.errorbar(
        xs,
        [l["beta_w"]["mean"] for l in layers],
        yerr=[
            [l["beta_w"]["mean"] - l["beta_w"]["min"] for l in layers],
            [l["beta_w"]["max"] - l["beta_w"]["mean"] for l in layers],
        ],
        fmt="s",
        label="beta_w",
    )
    ax2.set_xticks(list(xs))
    ax2.set_xticklabels(names, rotation=60, ha="right")
    ax2.legend(loc="best")
    fig.suptitle(doc["model"])
    fig.tight_layout()
    fig.savefig(out, dpi=120)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawTextHelpFormatter)
    ap.add_argument("report", help="JSON written by `adabin inspect`")
    ap.add_argument("-o", "--out", default="quantizers.png")
    ap.add_argument("--check", action="store_true", help="validate the schema and exit")
    args = ap.parse_args()
    with open(args.report) as f:
        doc = json.load(f)
    errors = validate(doc)
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    if errors:
        return 1
    if args.check:
        print(f"ok: {len(doc['binary_layers'])} binary layers, {len(doc['maxout'])} maxout layers")
        return 0
    plot(doc, args.out)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
