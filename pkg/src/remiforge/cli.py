"""Command-line interface: every pipeline stage as a subcommand.

Exit codes: 0 success, 1 usage error, 2 data error. Diagnostics go to
stderr; results go to files (written atomically) or stdout. Passing the
global --run-manifest option additionally records subcommand, config hash,
seed, paths, wall time, and version to a JSON file on success.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import click

from . import __version__
from . import corpus as corpus_mod
from . import metrics as metrics_mod
from . import midi_io
from . import style as style_mod
from . import tokens as tokens_mod
from .embeddings import frechet_distance, load_embeddings
from .errors import GrammarError, RemiForgeError, TooFewBars, TooFewChords
from .score import quantize_tempo
from .tokens import BAR_ID, PAD_ID, VOCAB

COMPOSER_CHOICES = {
    "none": None,
    "bach": "Bach",
    "mozart": "Mozart",
    "beethoven": "Beethoven",
    "chopin": "Chopin",
}


def _atomic_write_bytes(path, data: bytes) -> None:
    target = Path(path)
    parent = target.parent if str(target.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(dir=parent, prefix=f".{target.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, target)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _atomic_write_text(path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def _emit_text(out, text: str) -> None:
    if out:
        _atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _emit_json(out, payload) -> None:
    _emit_text(out, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _finish(ctx, subcommand: str, config: dict, inputs, outputs, seed=None) -> None:
    target = (ctx.obj or {}).get("run_manifest")
    if not target:
        return
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    manifest = {
        "subcommand": subcommand,
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "wall_time_seconds": time.monotonic() - ctx.obj["t0"],
        "version": __version__,
    }
    _atomic_write_text(target, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _parse_composer(_ctx, _param, value):
    if value is None:
        return value
    key = value.strip().lower()
    if key not in COMPOSER_CHOICES:
        raise click.BadParameter(
            f"unknown composer {value!r}; choose from {sorted(COMPOSER_CHOICES)}")
    return COMPOSER_CHOICES[key]


def _parse_topn(_ctx, _param, value):
    try:
        parsed = tuple(int(part) for part in value.split(","))
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}")
    if not parsed or any(n < 1 for n in parsed):
        raise click.BadParameter("top-n values must be positive integers")
    return parsed


def _read_token_ids(path) -> list:
    """Token text (names) or newline-separated decimal ids, auto-detected."""
    words = Path(path).read_text(encoding="utf-8").split()
    if not words:
        raise RemiForgeError(f"{path} contains no tokens")
    if all(word.isdigit() for word in words):
        ids = [int(word) for word in words]
        for i in ids:
            VOCAB.name_of(i)
        return ids
    return VOCAB.to_ids(words)


def _decode_lenient(ids):
    """Decode a generated sequence, trimming a trailing partial bar if needed."""
    work = [int(i) for i in ids if int(i) != PAD_ID]
    while True:
        try:
            return tokens_mod.decode_ids(work)
        except GrammarError:
            bar_positions = [k for k, t in enumerate(work) if t == BAR_ID]
            if len(bar_positions) < 2:
                raise
            work = work[:bar_positions[-1]]


def _scores_from_dir(directory):
    """Sorted (filename, Score) pairs for every .mid/.midi in a directory."""
    root = Path(directory)
    if not root.is_dir():
        raise RemiForgeError(f"{directory} is not a directory")
    files = sorted(p for p in root.iterdir()
                   if p.suffix.lower() in (".mid", ".midi"))
    if not files:
        raise RemiForgeError(f"no .mid/.midi files in {directory}")
    return [(p.name, midi_io.parse_midi(p.read_bytes())) for p in files]


@click.group()
@click.version_option(__version__, prog_name="remiforge")
@click.option("--run-manifest", type=click.Path(dir_okay=False), default=None,
              help="Write a JSON run manifest (with wall time) on success.")
@click.pass_context
def cli(ctx, run_manifest):
    """Composer-style symbolic music toolkit."""
    ctx.obj = {"run_manifest": run_manifest, "t0": time.monotonic()}


@cli.command()
@click.argument("input", type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Token file to write (default: stdout).")
@click.option("--ids", is_flag=True, help="Emit decimal token ids, not names.")
@click.pass_context
def tokenize(ctx, input, out, ids):
    """Convert a MIDI file to token text, repairing overlong notes."""
    score = corpus_mod.repair_overlong_notes(
        midi_io.parse_midi(Path(input).read_bytes()))
    names = tokens_mod.encode(score)
    if ids:
        text = tokens_mod.format_tokens(VOCAB.to_ids(names))
    else:
        text = tokens_mod.format_tokens(names)
    _emit_text(out, text)
    _finish(ctx, "tokenize", {"input": input, "ids": ids}, [input],
            [out] if out else [])


@cli.command()
@click.argument("input", type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="MIDI file to write (default: stdout).")
@click.pass_context
def detokenize(ctx, input, out):
    """Convert token text (names or ids) back to a MIDI file."""
    score = tokens_mod.decode_ids(_read_token_ids(input))
    data = midi_io.write_midi(score)
    if out:
        _atomic_write_bytes(out, data)
    else:
        sys.stdout.buffer.write(data)
    _finish(ctx, "detokenize", {"input": input}, [input], [out] if out else [])


@cli.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(dir_okay=False),
              help="CSV with header path,category,composer.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def index(ctx, manifest_path, out):
    """Build a binary corpus index from a manifest CSV."""
    idx = corpus_mod.build_index(manifest_path)
    _atomic_write_bytes(out, corpus_mod.index_bytes(idx))
    click.echo(f"indexed {len(idx.entries)} files", err=True)
    _finish(ctx, "index", {"manifest": manifest_path}, [manifest_path], [out])


@cli.command("segment-stats")
@click.option("--index", "index_path", required=True, type=click.Path(dir_okay=False))
@click.option("--context", default=256, show_default=True)
@click.option("--samples", default=16, show_default=True)
@click.option("--stage", type=click.Choice(["pretrain", "finetune"]),
              default="pretrain", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def segment_stats(ctx, index_path, context, samples, stage, seed, out):
    """Draw a sample batch and report per-segment and aggregate statistics."""
    import numpy as np

    idx = corpus_mod.load_index(index_path)
    rng = np.random.default_rng(seed)
    segments = corpus_mod.sample_batch(idx, samples, context, stage, rng)
    rows = []
    source_counts: dict = {}
    for seg in segments:
        path, start_bar, end_bar = seg.source
        rows.append({
            "source": path,
            "start_bar": start_bar,
            "end_bar": end_bar,
            "attention_length": seg.attention_length,
            "composer_token": VOCAB.name_of(seg.ids[0]),
        })
        source_counts[path or ""] = source_counts.get(path or "", 0) + 1
    lengths = [seg.attention_length for seg in segments]
    payload = {
        "stage": stage,
        "context": context,
        "samples": samples,
        "seed": seed,
        "segments": rows,
        "aggregates": {
            "mean_attention_length": sum(lengths) / len(lengths),
            "min_attention_length": min(lengths),
            "max_attention_length": max(lengths),
            "pad_fraction": 1.0 - sum(lengths) / (len(lengths) * context),
            "draws_per_source": source_counts,
        },
    }
    _emit_json(out, payload)
    _finish(ctx, "segment-stats",
            {"index": index_path, "context": context, "samples": samples,
             "stage": stage}, [index_path], [out] if out else [], seed=seed)


@cli.command()
@click.option("--in", "in_dir", required=True, type=click.Path(file_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def metrics(ctx, in_dir, out):
    """Objective metrics per MIDI file: entropy, groove, structureness."""
    rows = []
    for name, score in _scores_from_dir(in_dir):
        row = {"file": name, "H": metrics_mod.pitch_class_entropy(score)}
        try:
            row["GS"] = metrics_mod.mean_groove_similarity(score)
        except TooFewBars:
            row["GS"] = None
        try:
            si = metrics_mod.structureness_defaults(score)
            row["SI_short"] = si["short"]
            row["SI_mid"] = si["mid"]
            row["SI_long"] = si["long"]
        except TooFewBars:
            row["SI_short"] = row["SI_mid"] = row["SI_long"] = None
        rows.append(row)
    _emit_json(out, rows)
    _finish(ctx, "metrics", {"in": in_dir}, [in_dir], [out] if out else [])


@cli.command()
@click.option("--in", "in_dir", required=True, type=click.Path(file_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def chords(ctx, in_dir, out):
    """Per-bar template chords for every MIDI file in a directory."""
    rows = []
    for name, score in _scores_from_dir(in_dir):
        labels = [str(c) if c is not None else None
                  for _, c in style_mod.extract_chords(score)]
        rows.append({"file": name, "chords": labels})
    _emit_json(out, rows)
    _finish(ctx, "chords", {"in": in_dir}, [in_dir], [out] if out else [])


def _mine_grouped(pairs):
    """Window counts per composer plus pooled, from (name, Score) pairs."""
    grouped: dict = {"all": {}}
    files: dict = {"all": 0}
    for name, score in pairs:
        chord_list = [c for _, c in style_mod.extract_chords(score)]
        try:
            table = style_mod.mine_progressions(chord_list)
        except TooFewChords:
            click.echo(f"note: {name} has fewer than 4 chords, skipped", err=True)
            continue
        targets = ["all"]
        if score.composer is not None:
            targets.append(score.composer)
        for target in targets:
            bucket = grouped.setdefault(target, {})
            files[target] = files.get(target, 0) + 1
            for prog, count in table.counts.items():
                bucket[prog] = bucket.get(prog, 0) + count
    return grouped, files


@cli.command()
@click.option("--real", "real_dir", required=True, type=click.Path(file_okay=False))
@click.option("--model", "model_dir", required=True, type=click.Path(file_okay=False))
@click.option("--topn", default="10,15,20", show_default=True, callback=_parse_topn)
@click.option("--k", default=20, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def progressions(ctx, real_dir, model_dir, topn, k, out):
    """Compare mined 4-chord progressions between two MIDI directories.

    Files are grouped by the composer tag embedded in each MIDI; a pooled
    "all" group always appears.
    """
    real_groups, real_files = _mine_grouped(_scores_from_dir(real_dir))
    model_groups, model_files = _mine_grouped(_scores_from_dir(model_dir))
    names = sorted(set(real_groups) | set(model_groups))
    names.remove("all")
    names.append("all")
    report = {"k": k, "topn": list(topn), "groups": {}}
    for name in names:
        entry = {
            "real_files": real_files.get(name, 0),
            "model_files": model_files.get(name, 0),
            "real_windows": sum(real_groups.get(name, {}).values()),
            "model_windows": sum(model_groups.get(name, {}).values()),
        }
        if real_groups.get(name) and model_groups.get(name):
            real_table = style_mod.ProgressionTable.from_counts(real_groups[name])
            model_table = style_mod.ProgressionTable.from_counts(model_groups[name])
            entry["overlap"] = {
                str(n): style_mod.topn_overlap(model_table, real_table, n)
                for n in topn
            }
            entry["truncated"] = {
                str(n): min(len(model_table.ranked), len(real_table.ranked)) < n
                for n in topn
            }
            entry["mAP"] = style_mod.map_at_k(
                model_table.ranked, real_table.ranked[:k], k)
            entry["NDCG"] = style_mod.ndcg_at_k(
                model_table.ranked, real_table.ranked[:k], k)
        else:
            entry["overlap"] = None
            entry["truncated"] = None
            entry["mAP"] = None
            entry["NDCG"] = None
        report["groups"][name] = entry
    _emit_json(out, report)
    _finish(ctx, "progressions",
            {"real": real_dir, "model": model_dir, "topn": list(topn), "k": k},
            [real_dir, model_dir], [out] if out else [])


@cli.command()
@click.option("--a", "path_a", required=True, type=click.Path(dir_okay=False))
@click.option("--b", "path_b", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def fad(ctx, path_a, path_b):
    """Frechet distance between two embedding files (CSV or binary)."""
    set_a = load_embeddings(path_a)
    set_b = load_embeddings(path_b)
    distance = frechet_distance(set_a, set_b)
    click.echo(str(round(distance, 9)))
    _finish(ctx, "fad", {"a": path_a, "b": path_b}, [path_a, path_b], [])


@cli.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(dir_okay=False), help="TOML run description.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default="checkpoint.bin", show_default=True,
              type=click.Path(dir_okay=False))
@click.pass_context
def train(ctx, config_path, seed, out):
    """Train from a TOML config; writes a checkpoint and <out>.run.json."""
    import torch

    from . import training as training_mod
    from .model import checkpoint_bytes

    torch.set_num_threads(1)
    run = training_mod.load_train_config(config_path)
    model, summary = training_mod.train(run, seed, log=sys.stderr)
    _atomic_write_bytes(out, checkpoint_bytes(model))
    run_json_path = f"{out}.run.json"
    _atomic_write_text(run_json_path,
                       json.dumps(summary, indent=2, sort_keys=True) + "\n")
    click.echo(f"final loss {summary['final_loss']:.6f}", err=True)
    _finish(ctx, "train", {"config_hash": summary["config_hash"]},
            [config_path, run.index_path], [out, run_json_path], seed=seed)


@cli.command()
@click.option("--checkpoint", "checkpoint_path", required=True,
              type=click.Path(dir_okay=False))
@click.option("--seed", default=0, show_default=True)
@click.option("--composer", default=None, callback=_parse_composer,
              help="Conditioning composer (none/bach/mozart/beethoven/chopin).")
@click.option("--tempo", default=120, show_default=True,
              help="Prompt tempo in BPM (quantized to the tempo classes).")
@click.option("--primer", "primer_path", type=click.Path(dir_okay=False),
              default=None, help="Token file to continue from.")
@click.option("--max-new", default=512, show_default=True)
@click.option("--p", default=0.99, show_default=True)
@click.option("--temperature", default=1.0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help=".mid/.midi writes MIDI; anything else token text.")
@click.pass_context
def sample(ctx, checkpoint_path, seed, composer, tempo, primer_path, max_new,
           p, temperature, out):
    """Generate a token sequence (optionally rendered to MIDI)."""
    import numpy as np
    import torch

    from . import sampling as sampling_mod
    from .model import load_checkpoint
    from .tokens import BOS_ID, composer_token

    torch.set_num_threads(1)
    model = load_checkpoint(checkpoint_path)
    if primer_path is not None:
        prompt = _read_token_ids(primer_path)
        if composer is not None:
            prompt[0] = VOCAB.id_of(composer_token(composer))
    else:
        tempo_class = quantize_tempo(tempo)
        prompt = [
            VOCAB.id_of(composer_token(composer)),
            VOCAB.id_of(f"Tempo_{tempo_class}"),
            BOS_ID,
        ]
    sampler = sampling_mod.SamplerConfig(p=p, temperature=temperature)
    rng = np.random.default_rng(seed)
    sequence = sampling_mod.sample(model, prompt, rng, sampler, max_new=max_new)
    if out and Path(out).suffix.lower() in (".mid", ".midi"):
        score = _decode_lenient(sequence)
        _atomic_write_bytes(out, midi_io.write_midi(score))
    else:
        _emit_text(out, tokens_mod.format_tokens(VOCAB.to_tokens(sequence)))
    _finish(ctx, "sample",
            {"checkpoint": checkpoint_path, "composer": composer, "tempo": tempo,
             "primer": primer_path, "max_new": max_new, "p": p,
             "temperature": temperature},
            [checkpoint_path] + ([primer_path] if primer_path else []),
            [out] if out else [], seed=seed)


@cli.command()
@click.option("--checkpoint", "checkpoint_path", required=True,
              type=click.Path(dir_okay=False))
@click.option("--primer", "primer_path", required=True,
              type=click.Path(dir_okay=False),
              help="Token file decoding to at least 4 complete bars.")
@click.option("--seed", default=0, show_default=True)
@click.option("--composer", default=None, callback=_parse_composer)
@click.option("--p", default=0.99, show_default=True)
@click.option("--temperature", default=1.0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def choices(ctx, checkpoint_path, primer_path, seed, composer, p, temperature, out):
    """Choice-count diagnostic: nucleus sizes while generating the next bar."""
    import numpy as np
    import torch

    from . import sampling as sampling_mod
    from .model import load_checkpoint
    from .tokens import composer_token

    torch.set_num_threads(1)
    model = load_checkpoint(checkpoint_path)
    primer = _read_token_ids(primer_path)
    if composer is not None:
        primer[0] = VOCAB.id_of(composer_token(composer))
    sampler = sampling_mod.SamplerConfig(p=p, temperature=temperature)
    rng = np.random.default_rng(seed)
    result = sampling_mod.choice_count(model, primer, rng, sampler)
    payload = {
        "counts": list(result.counts),
        "p10": result.p10,
        "p90": result.p90,
        "clamped_mean": result.clamped_mean,
        "generated": [VOCAB.name_of(i) for i in result.generated],
    }
    _emit_json(out, payload)
    _finish(ctx, "choices",
            {"checkpoint": checkpoint_path, "primer": primer_path,
             "composer": composer, "p": p, "temperature": temperature},
            [checkpoint_path, primer_path], [out] if out else [], seed=seed)


@cli.command()
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def vocab(ctx, out):
    """Dump the 170-token vocabulary as id<TAB>name lines."""
    _emit_text(out, VOCAB.tsv())
    _finish(ctx, "vocab", {}, [], [out] if out else [])


def main(argv=None) -> int:
    """Entry point mapping exceptions onto the documented exit codes."""
    try:
        cli.main(args=argv, prog_name="remiforge", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        if exc.ctx is not None:
            click.echo(exc.ctx.get_help(), err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except RemiForgeError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return 2
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
