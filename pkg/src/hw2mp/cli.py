"""Command-line entry points.

Every subcommand reads a flat ``key = value`` config file (``--config``) and
``--set key=value`` overrides, writes its artifacts under ``out_dir`` and
stamps the config hash into every CSV and checkpoint.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import torch

from .checkpoint import CheckpointError, load_checkpoint, load_module_state, module_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, config_hash, parse_config, write_config
from .data import (ALPHABET, CorpusStats, DoesNotFit, UnsupportedCharacter, make_synthetic_corpus,
                   read_manifest, split_dataset, to_tensors, write_manifest)
from .losses import LabelTooLong
from .metrics import average_levenshtein, fhd, word_accuracy
from .networks import Recognizer, UNetGenerator
from .training import (MissingGenerator, NumericalFailure, PairedData, build_train_state, generate,
                       heldout_l1, recognize, train_gan, train_recognizer)

log = logging.getLogger("hw2mp")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

METRICS_HEADER = ["step", "L_w", "L_c", "recon_L1", "total"]
REPORT_HEADER = ["metric", "value", "n", "config_hash"]
SWEEP_HEADER = ["hidden_dim", "word_accuracy", "ave_LD", "final_ctc_loss", "n", "config_hash"]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _dtype(cfg: RunConfig) -> torch.dtype:
    return torch.float64 if cfg.precision == "float64" else torch.float32


def load_splits(cfg: RunConfig):
    """Train/test samples and the corpus statistics fitted on the training split."""
    if cfg.manifest:
        if not os.path.exists(cfg.manifest):
            raise FileNotFoundError(f"manifest not found: {cfg.manifest}")
        samples = read_manifest(cfg.manifest)
    else:
        samples = make_synthetic_corpus(list(cfg.vocab), cfg.n_samples, cfg.data_seed,
                                        strength=cfg.distortion_strength)
    if len(samples) < 2:
        raise ValueError("need at least two samples to split")
    train, test = split_dataset(samples, cfg.split_ratio, cfg.data_seed)
    if not test:
        raise ValueError("test split is empty; lower split_ratio or add samples")
    stats = CorpusStats.fit([s.hw_image for s in train] + [s.mp_image for s in train])
    return train, test, stats


def _lexicon(cfg: RunConfig, samples) -> list[str]:
    return sorted({s.label for s in samples} | (set(cfg.vocab) if not cfg.manifest else set()))


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _report(path: str, metrics: dict, n: int, cfg_hash: str) -> None:
    _write_csv(path, REPORT_HEADER, [(k, repr(float(v)), n, cfg_hash) for k, v in metrics.items()])


def _generator_meta(cfg: RunConfig) -> dict:
    return {"kind": "generator", "levels": cfg.gen_levels, "base_channels": cfg.gen_base_channels,
            "max_channels": cfg.gen_max_channels, "z_channels": cfg.z_channels,
            "norm": cfg.gen_norm}


def load_generator(path: str) -> UNetGenerator:
    ckpt = load_checkpoint(path)
    meta = ckpt.meta
    if meta.get("kind") != "generator":
        raise CheckpointError(f"{path} does not hold a generator")
    gen = UNetGenerator(meta["levels"], meta["base_channels"], meta["max_channels"], meta["z_channels"],
                        norm=meta.get("norm", True))
    gen = gen.to(torch.from_numpy(next(iter(ckpt.arrays.values()))).dtype)
    load_module_state(gen, ckpt)
    return gen.eval()


def _recognizer_meta(model: Recognizer, cfg: RunConfig, hidden: int) -> dict:
    return {"kind": "recognizer", "num_classes": len(ALPHABET) + 1, "mode": model.mode, "hidden": hidden,
            "channels": list(cfg.hwr_channels), "width_pools": cfg.hwr_width_pools,
            "images": cfg.hwr_images}


def load_recognizer(path: str) -> Recognizer:
    ckpt = load_checkpoint(path)
    meta = ckpt.meta
    if meta.get("kind") != "recognizer":
        raise CheckpointError(f"{path} does not hold a recognizer")
    model = Recognizer(meta["num_classes"], mode=meta["mode"], hidden=meta["hidden"],
                       channels=tuple(meta["channels"]), width_pools=meta["width_pools"])
    load_module_state(model, ckpt)
    return model.eval()


def _generator_for(cfg: RunConfig, mode: str):
    if mode == "handwritten":
        return None
    if not cfg.generator_checkpoint:
        raise MissingGenerator(f"hwr_mode={mode} needs generator_checkpoint")
    return load_generator(cfg.generator_checkpoint)


def _fit_recognizer(cfg: RunConfig, train_t, hidden: int, generator):
    hw, mp, labels, _ = train_t
    images = mp if (cfg.hwr_mode == "handwritten" and cfg.hwr_images == "machine_print") else hw
    return train_recognizer(images, labels, mode=cfg.hwr_mode, generator=generator, hidden=hidden,
                            epochs=cfg.hwr_epochs, lr=cfg.hwr_lr, batch_size=cfg.hwr_batch_size,
                            seed=cfg.seed, width_pools=cfg.hwr_width_pools, channels=cfg.hwr_channels)


def _score_recognizer(cfg: RunConfig, model, test_t, generator, lexicon):
    hw, mp, labels, _ = test_t
    images = mp if (cfg.hwr_mode == "handwritten" and cfg.hwr_images == "machine_print") else hw
    greedy = recognize(model, images, generator)
    beam = recognize(model, images, generator, decode="lexicon-beam", lexicon=lexicon,
                     beam_width=cfg.beam_width)
    return {"word_accuracy": word_accuracy(beam, labels), "ave_LD": average_levenshtein(beam, labels),
            "word_accuracy_greedy": word_accuracy(greedy, labels),
            "ave_LD_greedy": average_levenshtein(greedy, labels)}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_render_data(cfg: RunConfig, args) -> int:
    samples = make_synthetic_corpus(list(cfg.vocab), cfg.n_samples, cfg.data_seed,
                                    strength=cfg.distortion_strength)
    data_dir = os.path.join(cfg.out_dir, "data")
    path = write_manifest(samples, data_dir)
    train, _ = split_dataset(samples, cfg.split_ratio, cfg.data_seed)
    CorpusStats.fit([s.hw_image for s in train] + [s.mp_image for s in train]).to_json(
        os.path.join(data_dir, "stats.json"))
    log.info("wrote %d samples to %s", len(samples), path)
    return EXIT_OK


def cmd_train_gan(cfg: RunConfig, args) -> int:
    h = config_hash(cfg)
    dtype = _dtype(cfg)
    train, test, stats = load_splits(cfg)
    stats.to_json(os.path.join(cfg.out_dir, "stats.json"))
    data = PairedData.from_tensors(to_tensors(train, stats, dtype), seed=cfg.seed)
    te_hw, te_mp, _, _ = to_tensors(test, stats, dtype)
    state = build_train_state(cfg.hp, cfg, cfg.seed, dtype)
    l1_start = heldout_l1(state.generator, te_hw, te_mp)
    ckpt_dir = os.path.join(cfg.out_dir, "checkpoints")

    def save_all(root: str, step: int) -> None:
        save_checkpoint(module_checkpoint(state.generator, step, h, _generator_meta(cfg)),
                        os.path.join(root, "generator"))
        save_checkpoint(module_checkpoint(state.word_disc, step, h, {"kind": "word_disc"}),
                        os.path.join(root, "word_disc"))
        save_checkpoint(module_checkpoint(state.char_disc, step, h, {"kind": "char_disc"}),
                        os.path.join(root, "char_disc"))

    def callback(st) -> None:
        if cfg.checkpoint_every and st.step % cfg.checkpoint_every == 0:
            save_all(os.path.join(ckpt_dir, f"step_{st.step:06d}"), st.step)

    try:
        train_gan(state, data, cfg.gan_steps, callback=callback, log_every=cfg.log_every)
    finally:
        _write_csv(os.path.join(cfg.out_dir, "metrics.csv"), METRICS_HEADER,
                   [[rec["step"]] + [repr(rec[k]) for k in METRICS_HEADER[1:]] for rec in state.history])
    save_all(cfg.out_dir, state.step)
    l1_end = heldout_l1(state.generator, te_hw, te_mp)
    _report(os.path.join(cfg.out_dir, "gan_report.csv"),
            {"heldout_l1_initial": l1_start, "heldout_l1_final": l1_end}, len(test), h)
    log.info("held-out L1 %.4f -> %.4f", l1_start, l1_end)
    return EXIT_OK


def cmd_train_hwr(cfg: RunConfig, args) -> int:
    h = config_hash(cfg)
    generator = _generator_for(cfg, cfg.hwr_mode)
    train, test, stats = load_splits(cfg)
    dtype = _dtype(cfg)
    train_t, test_t = to_tensors(train, stats), to_tensors(test, stats)
    if dtype != torch.float32:
        log.info("recognizers train in float32")
    model, curve = _fit_recognizer(cfg, train_t, cfg.hwr_hidden, generator)
    _write_csv(os.path.join(cfg.out_dir, "hwr_curve.csv"), ["epoch", "ctc_loss"],
               [(e, repr(v)) for e, v in enumerate(curve)])
    scores = _score_recognizer(cfg, model, test_t, generator, _lexicon(cfg, train + test))
    _report(os.path.join(cfg.out_dir, "hwr_report.csv"), scores, len(test), h)
    save_checkpoint(module_checkpoint(model, cfg.hwr_epochs, h, _recognizer_meta(model, cfg, cfg.hwr_hidden)),
                    os.path.join(cfg.out_dir, "recognizer"))
    log.info("recognizer word accuracy %.3f", scores["word_accuracy"])
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    h = config_hash(cfg)
    if not cfg.generator_checkpoint:
        raise ConfigError("evaluate needs generator_checkpoint")
    if not cfg.recognizer_checkpoint:
        raise ConfigError("evaluate needs recognizer_checkpoint")
    generator = load_generator(cfg.generator_checkpoint)
    recognizer = load_recognizer(cfg.recognizer_checkpoint)
    if recognizer.mode != "handwritten":
        raise ConfigError("evaluate reads generated machine print with a single-path recognizer")
    train, test, stats = load_splits(cfg)
    hw, mp, labels, _ = to_tensors(test, stats, next(generator.parameters()).dtype)
    gen = generate(generator, hw).float()
    mp = mp.float()
    noise = torch.randn(gen.shape, generator=torch.Generator().manual_seed(cfg.seed))
    preds = recognize(recognizer, gen, decode="lexicon-beam", lexicon=_lexicon(cfg, train + test),
                      beam_width=cfg.beam_width)
    metrics = {
        "fhd": fhd(mp, gen, recognizer),
        "fhd_noise": fhd(mp, noise, recognizer),
        "ave_LD": average_levenshtein(preds, labels),
        "word_accuracy": word_accuracy(preds, labels),
        "heldout_l1": float((gen - mp).abs().mean()),
    }
    _report(os.path.join(cfg.out_dir, "eval_report.csv"), metrics, len(test), h)
    for k, v in metrics.items():
        log.info("%s %.4f", k, v)
    return EXIT_OK


def cmd_sweep_hidden_dim(cfg: RunConfig, args) -> int:
    h = config_hash(cfg)
    generator = _generator_for(cfg, cfg.hwr_mode)
    train, test, stats = load_splits(cfg)
    train_t, test_t = to_tensors(train, stats), to_tensors(test, stats)
    lexicon = _lexicon(cfg, train + test)
    rows = []
    for hidden in cfg.hidden_dims:
        model, curve = _fit_recognizer(cfg, train_t, hidden, generator)
        scores = _score_recognizer(cfg, model, test_t, generator, lexicon)
        rows.append((hidden, repr(scores["word_accuracy"]), repr(scores["ave_LD"]), repr(curve[-1]),
                     len(test), h))
        log.info("hidden %d: word accuracy %.3f", hidden, scores["word_accuracy"])
    path = os.path.join(cfg.out_dir, "sweep.csv")
    _write_csv(path, SWEEP_HEADER, rows)
    plot_sweep(path, os.path.join(cfg.out_dir, "sweep.png"))
    return EXIT_OK


def cmd_plot(cfg: RunConfig, args) -> int:
    made = 0
    sources = {
        "metrics": args.metrics or os.path.join(cfg.out_dir, "metrics.csv"),
        "sweep": args.sweep or os.path.join(cfg.out_dir, "sweep.csv"),
        "curve": args.curve or os.path.join(cfg.out_dir, "hwr_curve.csv"),
    }
    for kind, path in sources.items():
        if not os.path.exists(path):
            explicit = getattr(args, kind)
            if explicit:
                raise FileNotFoundError(f"{kind} CSV not found: {path}")
            continue
        out = os.path.join(cfg.out_dir, f"{kind}.{args.format}")
        {"metrics": plot_losses, "sweep": plot_sweep, "curve": plot_curve}[kind](path, out)
        made += 1
    if not made:
        raise FileNotFoundError(f"no metrics.csv, sweep.csv or hwr_curve.csv in {cfg.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_losses(csv_path: str, out_path: str) -> None:
    rows = _read_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path} has no rows")
    plt = _pyplot()
    steps = [int(r["step"]) for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    for ax, key in zip(axes, ("L_w", "L_c", "recon_L1")):
        ax.plot(steps, [float(r[key]) for r in rows], lw=0.8)
        ax.set_title(key)
        ax.set_xlabel("generator step")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def plot_sweep(csv_path: str, out_path: str) -> None:
    rows = _read_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path} has no rows")
    plt = _pyplot()
    dims = [int(r["hidden_dim"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(dims, [float(r["word_accuracy"]) for r in rows], "o-", label="word accuracy")
    ax.set_xscale("log", base=2)
    ax.set_xticks(dims, [str(d) for d in dims])
    ax.set_xlabel("BiLSTM hidden dimension")
    ax.set_ylabel("word accuracy")
    ax2 = ax.twinx()
    ax2.plot(dims, [float(r["ave_LD"]) for r in rows], "s--", color="tab:red", label="ave. LD")
    ax2.set_ylabel("average edit distance")
    fig.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def plot_curve(csv_path: str, out_path: str) -> None:
    rows = _read_csv(csv_path)
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([int(r["epoch"]) for r in rows], [float(r["ctc_loss"]) for r in rows], "o-", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("CTC loss")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

COMMANDS = {
    "render-data": (cmd_render_data, "render a synthetic paired corpus and its manifest"),
    "train-gan": (cmd_train_gan, "train the handwriting-to-machine-print translator"),
    "train-hwr": (cmd_train_hwr, "train a CTC recognizer"),
    "evaluate": (cmd_evaluate, "score a generator with FHD, edit distance and word accuracy"),
    "sweep-hidden-dim": (cmd_sweep_hidden_dim, "train recognizers over several BiLSTM widths"),
    "plot": (cmd_plot, "draw loss curves and sweep charts from CSV files"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hw2mp", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable, wins over the file)")
        p.add_argument("--out-dir", help="output directory (same as --set out_dir=...)")
        p.add_argument("--seed", type=int, help="run seed (same as --set seed=...)")
        p.add_argument("-q", "--quiet", action="store_true")
        if name == "plot":
            p.add_argument("--metrics", help="GAN metrics CSV")
            p.add_argument("--sweep", help="hidden-dimension sweep CSV")
            p.add_argument("--curve", help="recognizer training curve CSV")
            p.add_argument("--format", choices=("png", "svg"), default="png")
    return parser


def config_from_args(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return parse_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        torch.set_num_threads(cfg.threads)
        os.makedirs(cfg.out_dir, exist_ok=True)
        write_config(cfg, os.path.join(cfg.out_dir, f"config_{args.command}.txt"))
        return COMMANDS[args.command][0](cfg, args)
    except (ConfigError, MissingGenerator) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (CheckpointError, DoesNotFit, UnsupportedCharacter, LabelTooLong, OSError, ValueError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
