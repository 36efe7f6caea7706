"""Attention modes: visibility masks, position assignment, and dispatch.

Seven variants share one row-wise attention core:

  vanilla          causal mask, input positions
  nia              causal mask minus inter-document pairs, input positions
  pcw              nia mask, all documents sharing one position block
  sp               pcw plus 1/k rescaling of suffix->document attention
  pine             bidirectional inter-document mask, importance-sorted
                   key positions (most important closest to the query)
  pine_noreassign  pine mask, input positions (ablation; not invariant)
  pine_reverse     pine with the sort direction flipped

The single shared core guarantees that whenever two modes produce the
same mask and positions (e.g. k <= 1), their outputs are bitwise equal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import pine
from .kernels import NumericError, row_softmax
from .prompts import SequenceLayout
from .rope import rotate

VARIANTS = ("vanilla", "nia", "pcw", "sp", "pine", "pine_noreassign", "pine_reverse")
PINE_FAMILY = ("pine", "pine_noreassign", "pine_reverse")
SEPARATE_DOC_MASK = ("nia", "pcw", "sp")


@dataclass(frozen=True)
class AttentionMode:
    variant: str
    aggregation: str = "mean"  # pine family only; ignored elsewhere

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown attention mode {self.variant!r}")
        if self.aggregation not in ("mean", "sum", "max"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")

    @property
    def is_pine_family(self) -> bool:
        return self.variant in PINE_FAMILY

    @property
    def reassigns(self) -> bool:
        return self.variant in ("pine", "pine_reverse")

    @property
    def direction(self) -> str:
        return "reversed" if self.variant == "pine_reverse" else "closer"


def doc_id_array(layout: SequenceLayout, total_len: int) -> np.ndarray:
    """Document number per storage index; -1 for prefix/suffix tokens."""
    ids = np.full(total_len, -1, dtype=np.int64)
    for j, (s, e) in enumerate(layout.doc_spans):
        ids[s:e] = j
    return ids


def build_mask(mode: AttentionMode, layout: SequenceLayout, total_len: int) -> np.ndarray:
    """Boolean visibility matrix; entry [q, k] says query q may see key k."""
    m = np.tril(np.ones((total_len, total_len), dtype=bool))
    if layout.k >= 2:
        ids = doc_id_array(layout, total_len)
        in_doc = ids >= 0
        cross = in_doc[:, None] & in_doc[None, :] & (ids[:, None] != ids[None, :])
        if mode.variant in SEPARATE_DOC_MASK:
            m &= ~cross
        elif mode.is_pine_family:
            m |= cross
    return m


def shared_block_positions(layout: SequenceLayout, total_len: int) -> np.ndarray:
    """PCW/SP positions: every document starts at the prefix boundary;
    the suffix continues after the longest document."""
    pos = np.arange(total_len, dtype=np.int64)
    max_len = max((e - s for s, e in layout.doc_spans), default=0)
    for s, e in layout.doc_spans:
        pos[s:e] = layout.prefix_len + np.arange(e - s, dtype=np.int64)
    tail = layout.prefix_len + max_len
    pos[layout.suffix_start : total_len] = tail + np.arange(
        total_len - layout.suffix_start, dtype=np.int64
    )
    return pos


def assign_positions(
    mode: AttentionMode,
    layout: SequenceLayout,
    q_index: int,
    ordered_docs: list[int] | None = None,
    total_len: int | None = None,
) -> pine.PositionMap:
    """Position map for one query under a mode.

    For the re-assigning modes the caller supplies the importance-sorted
    document order of the query's group (from pine.group_ordering).
    """
    total_len = total_len if total_len is not None else layout.n
    if mode.reassigns and layout.k >= 2:
        if ordered_docs is None:
            raise ValueError(f"mode {mode.variant} requires an importance ordering")
        group = _group_of(layout, q_index)
        if group is not None:
            pos = pine.pine_key_positions(layout, ordered_docs, group, total_len)
        else:
            pos = np.arange(total_len, dtype=np.int64)
    elif mode.variant in ("pcw", "sp"):
        pos = shared_block_positions(layout, total_len)
    else:
        pos = np.arange(total_len, dtype=np.int64)
    return pine.PositionMap(query_position=int(pos[q_index]), key_positions=pos)


def _group_of(layout: SequenceLayout, q_index: int) -> pine.QueryGroup | None:
    if q_index >= layout.suffix_start:
        return pine.QueryGroup("token", q_index, q_index + 1)
    j = layout.doc_of(q_index)
    if j is None:
        return None
    s, e = layout.doc_spans[j]
    return pine.QueryGroup("doc", s, e, doc_index=j)


def sp_rescale(weights: np.ndarray, layout: SequenceLayout, q_index: int, k: int) -> np.ndarray:
    """Scale document-key attention of suffix/decoded queries by 1/k and
    renormalize; other queries (and k=0) pass through unchanged."""
    if k <= 1 or q_index < layout.suffix_start:
        # 1/k scaling with k <= 1 is the identity; skipping it keeps the
        # row bitwise equal to the unrescaled computation.
        return weights
    flags = doc_id_array(layout, len(weights)) >= 0
    return _rescale(weights, flags, k)


def _rescale(weights: np.ndarray, doc_flags: np.ndarray, k: int) -> np.ndarray:
    scaled = np.where(doc_flags, weights / np.float32(k), weights)
    return (scaled / scaled.sum()).astype(weights.dtype, copy=False)


def attention_forward(
    mode: AttentionMode,
    q_raw: np.ndarray,
    k_raw: np.ndarray,
    v: np.ndarray,
    layout: SequenceLayout,
    q_indices: list[int] | None = None,
    rope_theta: float = 10000.0,
    canonical: bool = True,
) -> np.ndarray:
    """One layer of multi-head attention under a mode.

    q_raw: [t, n_heads, d_head] pre-rotation queries for the rows being
    computed; k_raw/v: [s, n_kv_heads, d_head] covering all cached
    tokens.  q_indices maps query rows to storage indices (prefill: the
    identity; decode: the new token's index).  Returns [t, n_heads, d].

    With canonical=True the value reduction runs in ascending assigned-
    position order (ties broken by document content hash), which makes
    order-invariant modes bitwise invariant under document permutation.
    """
    t, n_heads, d_head = q_raw.shape
    s, n_kv, _ = k_raw.shape
    rep = n_heads // n_kv
    if q_indices is None:
        q_indices = list(range(t))
    mask = build_mask(mode, layout, s)
    ids = doc_id_array(layout, s)
    doc_flags = ids >= 0
    # Secondary sort key: content hash of the owning document (0 outside
    # documents, where assigned positions are already unique).
    hash_key = np.zeros(s, dtype=np.uint64)
    for j, (ds, de) in enumerate(layout.doc_spans):
        hash_key[ds:de] = np.uint64(layout.doc_hashes[j])

    needs_ordering = mode.reassigns and layout.k >= 2
    shared_pos: np.ndarray | None = None
    if not needs_ordering:
        shared_pos = assign_positions(mode, layout, 0, total_len=s).key_positions

    out = np.zeros((t, n_heads, d_head), dtype=q_raw.dtype)
    scale = 1.0 / np.sqrt(np.float32(d_head))
    for h in range(n_heads):
        g = h // rep
        k_h = k_raw[:, g, :]
        v_h = v[:, g, :]
        group_pos: dict[tuple, np.ndarray] = {}
        for i, qi in enumerate(q_indices):
            if needs_ordering:
                group = _group_of(layout, qi)
                if group is None:
                    pos = np.arange(s, dtype=np.int64)
                else:
                    key = (group.kind, group.q_start)
                    if key not in group_pos:
                        ordered, _ = pine.group_ordering(
                            _full_or_local(q_raw, q_indices, group, h, i, qi),
                            k_h,
                            layout,
                            group,
                            d_head,
                            mode.aggregation,
                            mode.direction,
                        )
                        group_pos[key] = pine.pine_key_positions(layout, ordered, group, s)
                    pos = group_pos[key]
            else:
                pos = shared_pos
            visible = np.nonzero(mask[qi, :s])[0]
            if visible.size == 0:
                raise NumericError(f"fully masked attention row for query {qi}")
            kp = pos[visible]
            if canonical:
                order = np.lexsort((visible, hash_key[visible], kp))
                visible = visible[order]
                kp = kp[order]
            q_rot = rotate(q_raw[i, h, :][None, :], [int(pos[qi])], rope_theta)[0]
            k_rot = rotate(k_h[visible], kp, rope_theta)
            logits = k_rot @ q_rot
            w = row_softmax(logits[None, :], scale=scale)[0]
            if mode.variant == "sp" and layout.k > 1 and qi >= layout.suffix_start:
                w = _rescale(w, doc_flags[visible], layout.k)
            out[i, h, :] = w @ v_h[visible]
    return out


def _full_or_local(q_raw, q_indices, group: pine.QueryGroup, h: int, i: int, qi: int):
    """Query rows of a group within the q_raw buffer.

    During prefill q_raw covers the whole sequence and a document
    group's rows are at their storage indices; during decode q_raw holds
    only the new token, which is necessarily its own token group.
    """
    if group.kind == "token":
        return q_raw[i : i + 1, h, :]
    first = q_indices[0]
    return q_raw[group.q_start - first : group.q_end - first, h, :]
