"""Command-line client over the toolkit: pipeline verbs for data and
training, analysis verbs for reports, and `serve` for the live game API.

Every verb accepts --config (flat INI-style sections per module), --seed,
and --out; command-line options override config values.
"""

from __future__ import annotations

import configparser
import logging
from pathlib import Path

import click
import numpy as np

from . import checkpoint, contexts as ctx_mod, corpus, evaluation, synthetic
from .encoders import CodeCache, fit_pc_autoencoder, read_point_cloud
from .listener import ListenerConfig, build_examples, train_listener
from .speaker import (SpeakerConfig, build_speaker_examples, pragmatic_top1,
                      train_speaker)

logger = logging.getLogger(__name__)


def _load_config(path: str | None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path:
        parser.read(path)
    return parser


def _cfg(ctx, section: str, key: str, fallback=None, cast=str):
    parser: configparser.ConfigParser = ctx.obj["config"]
    if parser.has_option(section, key):
        raw = parser.get(section, key)
        return cast(raw) if cast is not bool else parser.getboolean(section, key)
    return fallback


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="Keyed-text config with sections per module.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default="out",
              show_default=True, help="Output directory.")
@click.pass_context
def main(ctx, config_path, seed, out_dir):
    """Reference-game toolkit: contexts, listeners, speakers, analyses, and
    a live game service."""
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["config"] = _load_config(config_path)
    ctx.obj["seed"] = seed
    ctx.obj["out"] = Path(out_dir)
    ctx.obj["out"].mkdir(parents=True, exist_ok=True)


# -- data ---------------------------------------------------------------------


@main.command()
@click.option("--n-families", type=int, default=40, show_default=True)
@click.option("--n-loose", type=int, default=40, show_default=True)
@click.option("--n-trials", type=int, default=2000, show_default=True)
@click.option("--hard-fraction", type=float, default=0.5, show_default=True)
@click.pass_context
def synthesize(ctx, n_families, n_loose, n_trials, hard_fraction):
    """Generate a synthetic attribute world plus templated trials."""
    seed, out = ctx.obj["seed"], ctx.obj["out"]
    world = synthetic.generate_world(n_families=n_families, n_loose=n_loose,
                                     seed=seed)
    trials = synthetic.generate_trials(world, n_trials, seed=seed,
                                       hard_fraction=hard_fraction)
    synthetic.save_world(world, out / "world.json")
    corpus.write_trials(trials, out / "trials.tsv")
    click.echo(f"wrote {len(world.attributes)} objects -> {out/'world.json'}")
    click.echo(f"wrote {len(trials)} trials -> {out/'trials.tsv'}")


@main.command("build-contexts")
@click.option("--codes", "codes_path", type=click.Path(exists=True),
              required=False, help="Embedding matrix ('n d' header + rows).")
@click.option("--ids", "ids_path", type=click.Path(exists=True),
              required=False, help="Object id list, one per line.")
@click.option("--world", "world_path", type=click.Path(exists=True),
              required=False, help="Synthetic world (features as embeddings).")
@click.option("--n-seeds", type=int, default=1000, show_default=True)
@click.option("--knn", type=int, default=2, show_default=True)
@click.option("--duplicate-threshold", type=float, default=None)
@click.pass_context
def build_contexts(ctx, codes_path, ids_path, world_path, n_seeds, knn,
                   duplicate_threshold):
    """Build hard/easy triplet contexts from an embedded collection."""
    out = ctx.obj["out"]
    if world_path:
        world = synthetic.load_world(world_path)
        ids = sorted(world.attributes)
        index = ctx_mod.EmbeddingIndex(
            object_ids=ids, codes=np.stack([world.features(o) for o in ids]))
    elif codes_path and ids_path:
        index = ctx_mod.EmbeddingIndex.load(codes_path, ids_path)
    else:
        raise click.UsageError("provide --world or both --codes and --ids")
    built = ctx_mod.build_contexts(index, n_seeds=n_seeds, k=knn,
                                   duplicate_threshold=duplicate_threshold)
    ctx_mod.write_contexts(built, out / "contexts.tsv")
    click.echo(f"wrote {len(built)} contexts -> {out/'contexts.tsv'}")


@main.command()
@click.option("--trials", "trials_path", type=click.Path(exists=True),
              required=True)
@click.option("--min-count", type=int, default=2, show_default=True)
@click.option("--split-mode", type=click.Choice(
    ["language_generalization", "object_generalization"]),
    default="object_generalization", show_default=True)
@click.pass_context
def preprocess(ctx, trials_path, min_count, split_mode):
    """Tokenize trials, build the vocabulary from the training split, and
    persist both the vocabulary and the split indices."""
    seed, out = ctx.obj["seed"], ctx.obj["out"]
    trials = corpus.read_trials(trials_path)
    split = corpus.make_split(trials, split_mode, seed=seed)
    stems = corpus.collect_stems([t.speaker_text for t in trials]
                                 + [t.listener_text or "" for t in trials])
    train_tokens = [corpus.trial_tokens(trials[i], stems) for i in split.train]
    vocab = corpus.build_vocabulary(train_tokens, min_count=min_count)
    vocab.save(out / "vocab.txt")
    with (out / "split.txt").open("w") as fh:
        for name, part in (("train", split.train), ("val", split.val),
                           ("test", split.test)):
            fh.write(f"{name}\t{','.join(map(str, part))}\n")
    click.echo(f"vocabulary: {len(vocab)} tokens -> {out/'vocab.txt'}")
    click.echo(f"split ({split_mode}): {len(split.train)}/{len(split.val)}"
               f"/{len(split.test)} -> {out/'split.txt'}")


@main.command("fit-encoders")
@click.option("--pc-dir", type=click.Path(exists=True), required=True,
              help="Directory of (n, 3) point-cloud text files.")
@click.option("--bottleneck", type=int, default=128, show_default=True)
@click.option("--epochs", type=int, default=200, show_default=True)
@click.pass_context
def fit_encoders(ctx, pc_dir, bottleneck, epochs):
    """Fit the point-cloud autoencoder and cache per-object codes. (Image
    codes need a locally supplied classifier backbone; see the README.)"""
    seed, out = ctx.obj["seed"], ctx.obj["out"]
    paths = sorted(Path(pc_dir).glob("*.txt"))
    if not paths:
        raise click.UsageError(f"no .txt point clouds in {pc_dir}")
    clouds = [read_point_cloud(p) for p in paths]
    fitted = fit_pc_autoencoder(clouds, bottleneck=bottleneck, epochs=epochs,
                                seed=seed)
    cache = CodeCache(out / "codes.npz")
    for path, cloud in zip(paths, clouds):
        cache.put(path.stem, pc_code=fitted.encode(cloud))
    cache.save()
    click.echo(f"autoencoder best loss {fitted.log['best_loss']:.4g}; "
               f"{len(paths)} codes -> {out/'codes.npz'}")


# -- training -------------------------------------------------------------------


def _load_world_data(ctx, trials_path, world_path, split_mode):
    trials = corpus.read_trials(trials_path)
    world = synthetic.load_world(world_path)
    reps = synthetic.build_representations(world)
    split = corpus.make_split(trials, split_mode, seed=ctx.obj["seed"])
    stems = corpus.collect_stems([t.speaker_text for t in trials])
    train_tokens = [corpus.trial_tokens(trials[i], stems) for i in split.train]
    vocab = corpus.build_vocabulary(train_tokens, min_count=2)
    return world, trials, reps, split, stems, vocab


_COMMON_TRAIN_OPTS = [
    click.option("--trials", "trials_path", type=click.Path(exists=True),
                 required=True),
    click.option("--world", "world_path", type=click.Path(exists=True),
                 required=True),
    click.option("--split-mode", type=click.Choice(
        ["language_generalization", "object_generalization"]),
        default="object_generalization", show_default=True),
    click.option("--epochs", type=int, default=None,
                 help="Override the architecture's default epoch budget."),
]


def _add_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return wrap


@main.command("train-listener")
@_add_options(_COMMON_TRAIN_OPTS)
@click.option("--architecture", type=click.Choice(
    ["baseline", "early_context", "combined_interpretation"]),
    default="baseline", show_default=True)
@click.option("--attention/--no-attention", default=True, show_default=True)
@click.option("--name", default="listener", show_default=True,
              help="Checkpoint file stem.")
@click.pass_context
def train_listener_cmd(ctx, trials_path, world_path, split_mode, epochs,
                       architecture, attention, name):
    """Train a neural listener and save its checkpoint."""
    seed, out = ctx.obj["seed"], ctx.obj["out"]
    world, trials, reps, split, stems, vocab = _load_world_data(
        ctx, trials_path, world_path, split_mode)
    overrides = dict(modalities="image", image_dim=world.feature_dim,
                     use_attention=attention)
    if epochs is not None:
        overrides["max_epochs"] = epochs
    config = ListenerConfig.for_architecture(architecture, **overrides)
    train = build_examples(trials, split.train, vocab, reps, config, stems)
    val = build_examples(trials, split.val, vocab, reps, config, stems)
    listener = train_listener(config, train, val, vocab, seed=seed)
    path = out / f"{name}.pt"
    checkpoint.save_listener(listener, path)
    click.echo(f"best val accuracy {listener.log['best_val_accuracy']:.4f} "
               f"(epoch {listener.log['best_epoch']}) -> {path}")


@main.command("train-speaker")
@_add_options(_COMMON_TRAIN_OPTS)
@click.option("--selection-listener", "listener_path",
              type=click.Path(exists=True), required=True,
              help="Listener checkpoint used for model selection.")
@click.option("--context-aware/--context-unaware", default=True,
              show_default=True)
@click.option("--name", default="speaker", show_default=True)
@click.pass_context
def train_speaker_cmd(ctx, trials_path, world_path, split_mode, epochs,
                      listener_path, context_aware, name):
    """Train a literal (or context-unaware) speaker with listener-based
    model selection, and save its checkpoint."""
    seed, out = ctx.obj["seed"], ctx.obj["out"]
    world, trials, reps, split, stems, vocab = _load_world_data(
        ctx, trials_path, world_path, split_mode)
    selection = checkpoint.load_listener(listener_path)
    config = SpeakerConfig(modality="image", image_dim=world.feature_dim,
                           context_aware=context_aware,
                           **({"max_epochs": epochs} if epochs else {}))
    train = build_speaker_examples(trials, split.train, vocab, reps,
                                   stems=stems)
    val = build_speaker_examples(trials, split.val, vocab, reps, stems=stems)
    speaker = train_speaker(config, train, val, vocab, selection, seed=seed)
    path = out / f"{name}.pt"
    checkpoint.save_speaker(speaker, path)
    click.echo(f"best val accuracy {speaker.log['best_val_accuracy']:.4f} "
               f"(epoch {speaker.log['best_epoch']}) -> {path}")


# -- analysis -------------------------------------------------------------------


def _test_examples(ctx, trials_path, world_path, split_mode, listener):
    world, trials, reps, split, stems, _ = _load_world_data(
        ctx, trials_path, world_path, split_mode)
    return build_examples(trials, split.test, listener.vocab, reps,
                          listener.config, stems)


@main.command()
@click.option("--listener", "listener_path", type=click.Path(exists=True),
              required=True)
@click.option("--trials", "trials_path", type=click.Path(exists=True),
              required=True)
@click.option("--world", "world_path", type=click.Path(exists=True),
              required=True)
@click.option("--split-mode", default="object_generalization",
              show_default=True)
@click.pass_context
def evaluate(ctx, listener_path, trials_path, world_path, split_mode):
    """Held-out listener accuracy with subpopulation breakdown."""
    out = ctx.obj["out"]
    listener = checkpoint.load_listener(listener_path)
    examples = _test_examples(ctx, trials_path, world_path, split_mode,
                              listener)
    report = evaluation.evaluate_listener(listener, examples)
    evaluation.write_report(report, out / "report.txt")
    evaluation.write_report_records([report], out / "report.csv")
    click.echo(evaluation.format_report(report))


@main.command()
@click.option("--attention-listener", "att_path", type=click.Path(exists=True),
              required=True, help="Attention source (trained with attention).")
@click.option("--eval-listener", "eval_path", type=click.Path(exists=True),
              required=True, help="Probe (trained without attention).")
@click.option("--trials", "trials_path", type=click.Path(exists=True),
              required=True)
@click.option("--world", "world_path", type=click.Path(exists=True),
              required=True)
@click.option("--order", type=click.Choice(list(evaluation.WORD_LESION_ORDERS)),
              default="high_to_low", show_default=True)
@click.option("--fractions", default="0,0.25,0.5,0.75,1",
              show_default=True)
@click.pass_context
def lesion(ctx, att_path, eval_path, trials_path, world_path, order,
           fractions):
    """Word-lesion accuracy curve (plot-ready CSV)."""
    out, seed = ctx.obj["out"], ctx.obj["seed"]
    att = checkpoint.load_listener(att_path)
    probe = checkpoint.load_listener(eval_path)
    examples = _test_examples(ctx, trials_path, world_path,
                              "object_generalization", probe)
    curve = evaluation.word_lesion_curve(
        att, probe, examples, order,
        fractions=[float(f) for f in fractions.split(",")], seed=seed)
    evaluation.write_curve_csv(curve, out / f"lesion_{order}.csv")
    for fraction, accuracy in curve:
        click.echo(f"fraction {fraction:.2f}: accuracy {accuracy:.4f}")


@main.command()
@click.option("--speaker", "speaker_path", type=click.Path(exists=True),
              required=True)
@click.option("--internal-listener", "internal_path",
              type=click.Path(exists=True), required=True)
@click.option("--eval-listener", "eval_path", type=click.Path(exists=True),
              required=True)
@click.option("--trials", "trials_path", type=click.Path(exists=True),
              required=True)
@click.option("--world", "world_path", type=click.Path(exists=True),
              required=True)
@click.option("--alphas", default="0,0.3,0.6,0.9", show_default=True)
@click.option("--betas", default="0,0.5,1", show_default=True)
@click.option("--n-samples", type=int, default=50, show_default=True)
@click.pass_context
def sweep(ctx, speaker_path, internal_path, eval_path, trials_path,
          world_path, alphas, betas, n_samples):
    """Accuracy grid over the length-penalty / rationality plane."""
    out, seed = ctx.obj["out"], ctx.obj["seed"]
    speaker = checkpoint.load_speaker(speaker_path)
    internal = checkpoint.load_listener(internal_path)
    probe = checkpoint.load_listener(eval_path)
    examples = _test_examples(ctx, trials_path, world_path,
                              "object_generalization", probe)
    alpha_values = [float(a) for a in alphas.split(",")]
    beta_values = [float(b) for b in betas.split(",")]
    grid, best = evaluation.sweep_alpha_beta(
        speaker, internal, probe, examples, alpha_values, beta_values,
        n=n_samples, seed=seed)
    evaluation.write_grid_csv(grid, alpha_values, beta_values,
                              out / "sweep.csv")
    click.echo(f"best cell alpha={best[0]} beta={best[1]} "
               f"accuracy={grid.max():.4f} -> {out/'sweep.csv'}")


@main.command()
@click.option("--trials", "trials_path", type=click.Path(exists=True),
              required=True)
@click.option("--min-count", type=int, default=30, show_default=True)
@click.pass_context
def pmi(ctx, trials_path, min_count):
    """Distinctive-word table: ln P(word|hard) / P(word)."""
    out = ctx.obj["out"]
    trials = corpus.read_trials(trials_path)
    stems = corpus.collect_stems([t.speaker_text for t in trials])
    labeled = [(corpus.trial_tokens(t, stems), t.difficulty) for t in trials]
    rows = evaluation.pmi_table(labeled, min_count=min_count)
    evaluation.write_curve_csv(rows, out / "pmi.csv", header=("word", "pmi"))
    for word, value in rows[:10]:
        click.echo(f"{word:<15}{value:+.4f}")
    click.echo(f"{len(rows)} words -> {out/'pmi.csv'}")


@main.command()
@click.option("--speaker", "speaker_path", type=click.Path(exists=True),
              required=True)
@click.option("--internal-listener", "internal_path",
              type=click.Path(exists=True), required=True)
@click.option("--trials", "trials_path", type=click.Path(exists=True),
              required=True)
@click.option("--world", "world_path", type=click.Path(exists=True),
              required=True)
@click.option("--alpha", type=float, default=0.6, show_default=True)
@click.option("--beta", type=float, default=1.0, show_default=True)
@click.option("--n-samples", type=int, default=50, show_default=True)
@click.option("--limit", type=int, default=100, show_default=True)
@click.pass_context
def generate(ctx, speaker_path, internal_path, trials_path, world_path,
             alpha, beta, n_samples, limit):
    """Generation manifest: top-1 re-ranked utterance per context, with all
    candidate scores, for human-evaluation export."""
    out, seed = ctx.obj["out"], ctx.obj["seed"]
    speaker = checkpoint.load_speaker(speaker_path)
    internal = checkpoint.load_listener(internal_path)
    world = synthetic.load_world(world_path)
    reps = synthetic.build_representations(world)
    trials = corpus.read_trials(trials_path)[:limit]
    path = out / "generation.tsv"
    with path.open("w") as fh:
        for i, trial in enumerate(trials):
            objects = [reps[oid] for oid in trial.object_ids]
            top, ranked = pragmatic_top1(speaker, objects, trial.target_index,
                                         internal, alpha=alpha, beta=beta,
                                         n=n_samples, seed=seed + i)
            all_scores = ",".join(f"{s.pragmatic_score:.6g}" for s in ranked)
            fh.write(f"{trial.context_id}\t{trial.target_id}\t"
                     f"{' '.join(top.tokens)}\t{top.pragmatic_score:.6g}\t"
                     f"{all_scores}\n")
    click.echo(f"{len(trials)} generations -> {path}")


# -- service --------------------------------------------------------------------


@main.command()
@click.option("--world", "world_path", type=click.Path(exists=True),
              required=True)
@click.option("--trials", "trials_path", type=click.Path(exists=True),
              required=True, help="Context source for game rounds.")
@click.option("--store", "store_dir", type=click.Path(), default=None,
              help="Persistence directory (default: <out>/store).")
@click.option("--speaker", "speaker_path", type=click.Path(exists=True),
              default=None, help="Speaker checkpoint (scripted if omitted).")
@click.option("--internal-listener", "internal_path",
              type=click.Path(exists=True), default=None)
@click.option("--listener", "listener_path", type=click.Path(exists=True),
              default=None, help="Listener checkpoint (scripted if omitted).")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.pass_context
def serve(ctx, world_path, trials_path, store_dir, speaker_path,
          internal_path, listener_path, host, port):
    """Run the live game service (human vs trained or scripted agents)."""
    import uvicorn

    from .service import ContextPool, GameServer, RecordStore
    from .service.agents import (NeuralListenerAgent, NeuralSpeakerAgent,
                                 ScriptedListenerAgent, ScriptedSpeakerAgent)
    from .service.app import create_app

    out = ctx.obj["out"]
    world = synthetic.load_world(world_path)
    reps = synthetic.build_representations(world)
    trials = corpus.read_trials(trials_path)
    if speaker_path and internal_path:
        speaker_agent = NeuralSpeakerAgent(
            speaker=checkpoint.load_speaker(speaker_path),
            internal_listener=checkpoint.load_listener(internal_path),
            representations=reps)
    else:
        speaker_agent = ScriptedSpeakerAgent(world)
    if listener_path:
        listener_agent = NeuralListenerAgent(
            listener=checkpoint.load_listener(listener_path),
            representations=reps)
    else:
        listener_agent = ScriptedListenerAgent(world)
    server = GameServer(
        store=RecordStore(store_dir or out / "store"),
        contexts=ContextPool.from_trials(trials),
        speaker_agent=speaker_agent, listener_agent=listener_agent,
        object_labels={oid: world.object_label(oid)
                       for oid in world.attributes})
    uvicorn.run(create_app(server), host=host, port=port)


if __name__ == "__main__":
    main()
