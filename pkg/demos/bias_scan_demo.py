"""Slide a gold document through every slot and measure the model's score.

The "lost in the middle" effect: a causal model's log-probability for the
correct answer changes with the gold document's position among the
distractors. Under the pine mode the curve is flat by construction. This
script sweeps the gold position with both modes and prints the curves.
"""

from posinv import (
    AttentionMode,
    Model,
    ModelConfig,
    SegmentedPrompt,
    continuation_logprob,
    init_random,
    tokenize,
)

NEEDLE = "Document: the secret code is 73.\n"
DISTRACTORS = [
    "Document: the sky was grey all week.\n",
    "Document: trains run every ten minutes.\n",
    "Document: the cafe closes at noon.\n",
    "Document: nothing notable happened today.\n",
]
PREFIX = "Answer using the documents.\n\n"
SUFFIX = "\nQuestion: what is the secret code?\nAnswer: "
GOLD = list("73".encode("utf-8"))


def main():
    config = ModelConfig(
        n_layers=2, n_heads=4, n_kv_heads=2, d_model=64, d_head=16,
        d_ff=128, vocab_size=260,
    )
    model = Model(config, init_random(config, seed=7))
    k = len(DISTRACTORS) + 1
    print(f"gold position sweep over {k} slots, metric: gold-token logprob\n")
    print("position  " + "".join(f"{m:>12s}" for m in ("vanilla", "pine")))
    curves = {m: [] for m in ("vanilla", "pine")}
    for p in range(k):
        row = [f"{p:<10d}"]
        for variant in ("vanilla", "pine"):
            docs = list(DISTRACTORS)
            docs.insert(p, NEEDLE)
            tokens, layout = tokenize(SegmentedPrompt(PREFIX, tuple(docs), SUFFIX))
            lp = continuation_logprob(model, tokens, layout, AttentionMode(variant), GOLD)
            curves[variant].append(lp)
            row.append(f"{lp:12.6f}")
        print("".join(row))
    for variant, values in curves.items():
        spread = max(values) - min(values)
        print(f"\n{variant}: spread across positions = {spread:.3e}")


if __name__ == "__main__":
    main()
