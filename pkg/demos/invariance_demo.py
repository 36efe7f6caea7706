"""Shuffle the documents in a prompt and watch which attention modes care.

A standard causal transformer gives different outputs when order-agnostic
documents (retrieved passages, candidate answers) are permuted. The pine
mode replaces inter-document causal attention with bidirectional attention
and re-assigns key positions by importance, which makes the output an
exact function of the document *set*. This script demonstrates both
behaviors on a tiny randomly initialized model.
"""

from posinv import (
    AttentionMode,
    Model,
    ModelConfig,
    SegmentedPrompt,
    enumerate_orders,
    init_random,
    run_suite,
)

# The fixtures/ directory holds realistic judge and retrieval prompts in
# the same format; this inline prompt keeps the demo fast.
PROMPT = SegmentedPrompt(
    "Answer from the notes.\n",
    (
        "Note: the key is under the mat.\n",
        "Note: the door is green.\n",
        "Note: rain expected at noon.\n",
    ),
    "Question: where is the key?\nAnswer: ",
)


def main():
    config = ModelConfig(
        n_layers=2, n_heads=4, n_kv_heads=2, d_model=64, d_head=16,
        d_ff=128, vocab_size=260,
    )
    model = Model(config, init_random(config, seed=7))
    prompt = PROMPT
    print(f"prompt: {prompt.k} documents, trying all {prompt.k}! orderings\n")

    orders = enumerate_orders(prompt.k, limit=6)
    for variant in ("vanilla", "nia", "pcw", "pine"):
        rep = run_suite(model, prompt, AttentionMode(variant), orders, new_tokens=12)
        verdict = "invariant" if rep.max_abs_logit_diff <= 1e-4 else "ORDER-SENSITIVE"
        print(f"{variant:8s} max |logit spread| = {rep.max_abs_logit_diff:.3e}  -> {verdict}")
        if not rep.outputs_identical:
            distinct = {tuple(o) for o in rep.greedy_outputs}
            print(f"         {len(distinct)} distinct greedy continuations across orderings")
    print("\nvanilla and nia depend on where each document sits; pcw and pine do not.")


if __name__ == "__main__":
    main()
