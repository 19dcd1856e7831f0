"""Nucleus (top-p) sampling over the decoder, sliding-window generation,
and the per-step choice-count diagnostic.

At each step the last-position logits are divided by the temperature,
softmaxed, and reduced to the smallest descending-probability prefix whose
cumulative mass reaches p; the next token is drawn from that renormalized
set. When the sequence outgrows the model context the window keeps the
Composer and Tempo tokens, drops any BOS, and then drops whole bars from
the front.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, ContextOverflow, PrimerTooShort
from .model import Decoder, composer_ids_from_tokens
from .tokens import BAR_ID, BOS_ID, EOS_ID, PAD_ID, decode_ids


@dataclass(frozen=True)
class SamplerConfig:
    p: float = 0.99
    temperature: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ConfigError(f"p must lie in (0, 1], got {self.p}")
        if self.temperature <= 0.0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    weights = np.exp(shifted)
    return weights / weights.sum()


def nucleus(probs: np.ndarray, p: float):
    """Smallest descending-probability prefix with cumulative mass >= p.

    Returns (kept token ids, renormalized probabilities). Ties are broken
    by token id via the stable sort, so the result is deterministic.
    """
    order = np.argsort(-probs, kind="stable")
    cumulative = np.cumsum(probs[order])
    cut = int(np.searchsorted(cumulative, p, side="left"))
    cut = min(cut, len(order) - 1)
    kept = order[:cut + 1]
    kept_probs = probs[kept]
    return kept, kept_probs / kept_probs.sum()


def slide_window(ids: list, context: int) -> list:
    """Trim an over-long sequence to fit the context.

    Keeps the two-token Composer/Tempo prefix, drops a leading BOS first,
    then whole bars from the front. A single bar larger than the context is
    hard-truncated from the left as a last resort.
    """
    out = list(ids)
    while len(out) > context:
        head, body = out[:2], out[2:]
        if body and body[0] == BOS_ID:
            body = body[1:]
        else:
            try:
                nxt = body.index(BAR_ID, 1)
                body = body[nxt:]
            except ValueError:
                body = body[-(context - 2):]
        out = head + body
    return out


def next_distribution(model: Decoder, window: list, temperature: float = 1.0) -> np.ndarray:
    """Probability distribution over the next token after `window`."""
    ids = torch.tensor([list(window)], dtype=torch.long)
    composer_ids = composer_ids_from_tokens(ids)
    with torch.no_grad():
        logits = model(ids, composer_ids)
    return softmax(logits[0, -1].numpy() / temperature)


def sample(model: Decoder, prompt_ids, rng, sampler: SamplerConfig | None = None,
           max_new: int = 512) -> list:
    """Extend the prompt by up to max_new sampled tokens.

    Returns the full sequence (prompt plus generated tokens); generation
    stops early when EOS is drawn. `rng` is a numpy Generator.
    """
    sampler = sampler if sampler is not None else SamplerConfig()
    prompt = [int(i) for i in prompt_ids]
    context = model.config.context
    if len(prompt) > context:
        raise ContextOverflow(
            f"prompt length {len(prompt)} exceeds context {context}")
    sequence = list(prompt)
    window = list(prompt)
    for _ in range(max_new):
        window = slide_window(window, context)
        probs = next_distribution(model, window, sampler.temperature)
        kept, kept_probs = nucleus(probs, sampler.p)
        token = int(kept[rng.choice(len(kept), p=kept_probs)])
        sequence.append(token)
        window.append(token)
        if token == EOS_ID:
            break
    return sequence


def generate_batch(model: Decoder, prompts, rng, sampler: SamplerConfig | None = None,
                   max_new: int = 512) -> list:
    """Sample continuations for many prompts in lockstep.

    Equivalent per-sequence math to sample(); per-step draws are taken from
    the shared rng in prompt order, so results depend on the batch layout
    but are deterministic for a fixed seed.
    """
    sampler = sampler if sampler is not None else SamplerConfig()
    context = model.config.context
    sequences = []
    windows = []
    for prompt in prompts:
        ids = [int(i) for i in prompt]
        if len(ids) > context:
            raise ContextOverflow(
                f"prompt length {len(ids)} exceeds context {context}")
        sequences.append(list(ids))
        windows.append(list(ids))
    done = [False] * len(prompts)
    for _ in range(max_new):
        active = [i for i, d in enumerate(done) if not d]
        if not active:
            break
        for i in active:
            windows[i] = slide_window(windows[i], context)
        width = max(len(windows[i]) for i in active)
        batch = torch.full((len(active), width), PAD_ID, dtype=torch.long)
        for row, i in enumerate(active):
            batch[row, :len(windows[i])] = torch.tensor(windows[i], dtype=torch.long)
        composer_ids = composer_ids_from_tokens(batch)
        with torch.no_grad():
            logits = model(batch, composer_ids)
        for row, i in enumerate(active):
            last = logits[row, len(windows[i]) - 1].numpy() / sampler.temperature
            kept, kept_probs = nucleus(softmax(last), sampler.p)
            token = int(kept[rng.choice(len(kept), p=kept_probs)])
            sequences[i].append(token)
            windows[i].append(token)
            if token == EOS_ID:
                done[i] = True
    return sequences


def nearest_rank(sorted_values, pct: float):
    """Nearest-rank percentile: value at rank ceil(pct/100 * n), 1-based."""
    n = len(sorted_values)
    rank = max(1, math.ceil(pct / 100.0 * n))
    return sorted_values[min(rank, n) - 1]


def clamp_summary(counts):
    """(p10, p90, mean of the list with outliers clamped to those bounds)."""
    ordered = sorted(counts)
    lo = nearest_rank(ordered, 10)
    hi = nearest_rank(ordered, 90)
    clamped = [min(max(c, lo), hi) for c in counts]
    return lo, hi, sum(clamped) / len(clamped)


@dataclass(frozen=True)
class ChoiceCounts:
    counts: tuple
    p10: int
    p90: int
    clamped_mean: float
    generated: tuple


def choice_count(model: Decoder, primer_ids, rng,
                 sampler: SamplerConfig | None = None,
                 max_steps: int = 256) -> ChoiceCounts:
    """Generate the bar after a >= 4-bar primer, recording nucleus sizes.

    The primer must decode as a valid sequence of at least four complete
    bars ending at a bar boundary. Generation stops once the next bar is
    closed (the second generated Bar token), at EOS, or after max_steps.
    The summary clamps per-step counts to the nearest-rank 10th and 90th
    percentiles before averaging.
    """
    sampler = sampler if sampler is not None else SamplerConfig()
    primer = [int(i) for i in primer_ids if int(i) != PAD_ID]
    score = decode_ids(primer)
    if len(score.bars) < 4:
        raise PrimerTooShort(
            f"primer decodes to {len(score.bars)} bars, need at least 4")
    if primer and primer[-1] == EOS_ID:
        primer = primer[:-1]
    context = model.config.context
    if len(primer) > context:
        raise ContextOverflow(
            f"primer length {len(primer)} exceeds context {context}")
    window = list(primer)
    counts = []
    generated = []
    bars_opened = 0
    for _ in range(max_steps):
        window = slide_window(window, context)
        probs = next_distribution(model, window, sampler.temperature)
        kept, kept_probs = nucleus(probs, sampler.p)
        counts.append(len(kept))
        token = int(kept[rng.choice(len(kept), p=kept_probs)])
        generated.append(token)
        window.append(token)
        if token == EOS_ID:
            break
        if token == BAR_ID:
            bars_opened += 1
            if bars_opened >= 2:
                break
    lo, hi, mean = clamp_summary(counts)
    return ChoiceCounts(tuple(counts), lo, hi, mean, tuple(generated))
