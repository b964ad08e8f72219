"""Command-line driver: corpus synthesis, training, extraction, scoring, evaluation and reports.

Every command writes into a run directory and is deterministic for a fixed
config and seed when run with ``--threads 1``.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import shutil
import sys
from pathlib import Path

import toml
from threadpoolctl import threadpool_limits

from .augment import AugmentPolicy, make_offline_set
from .corpus import Corpus, CorpusSpec, build_corpus, build_trials, count_pairs
from .evaluation import (TestCondition, average_min_dcf, compute_eer, det_points, dump_embeddings,
                         evaluate_conditions, extract_embeddings, metric_row, read_embedding_map,
                         read_metrics, score_trials, table_conditions, tag_utt, write_det,
                         write_metrics)
from .features import FbankConfig
from .network import NetConfig, SpeakerNet
from .training import (TrainConfig, paired_eval_set, reference_mse, run_training,
                       write_epoch_logs)
from .trials import ScoreSet, TrialSet, pool_scores

logger = logging.getLogger("spkrobust")

RUN_ROOT_ENV = "SPKROBUST_RUNS"
SECTIONS = {"corpus": CorpusSpec, "features": FbankConfig, "augment": AugmentPolicy,
            "net": NetConfig, "train": TrainConfig}


class CliError(Exception):
    pass


@dataclasses.dataclass
class ExperimentConfig:
    corpus: CorpusSpec
    features: FbankConfig
    augment: AugmentPolicy
    net: NetConfig
    train: TrainConfig
    corpus_seed: int = 7
    eval_seed: int = 1234
    offline_copies: int = 1

    @classmethod
    def from_dict(cls, raw: dict):
        raw = dict(raw)
        unknown = set(raw) - set(SECTIONS) - {"corpus_seed", "eval_seed", "offline_copies"}
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        parts = {}
        for name, kind in SECTIONS.items():
            section = dict(raw.pop(name, {}))
            known = {f.name for f in dataclasses.fields(kind)}
            bad = set(section) - known
            if bad:
                raise CliError(f"unknown keys in [{name}]: {sorted(bad)}")
            if name == "corpus" and "noise_duration_s" in section:
                section["noise_duration_s"] = tuple(section["noise_duration_s"])
            if name == "augment" and "babble_k_range" in section:
                section["babble_k_range"] = tuple(section["babble_k_range"])
            try:
                parts[name] = kind(**section)
            except (TypeError, ValueError) as exc:
                raise CliError(f"invalid [{name}] section: {exc}") from exc
        return cls(**parts, **raw)

    @classmethod
    def load(cls, path=None, seed=None):
        raw = {}
        if path is not None:
            try:
                raw = toml.load(path)
            except (OSError, toml.TomlDecodeError) as exc:
                raise CliError(f"cannot read config {path}: {exc}") from exc
        cfg = cls.from_dict(raw)
        if seed is not None:
            cfg.train = dataclasses.replace(cfg.train, seed=seed)
            cfg.corpus_seed = seed
        return cfg

    def to_dict(self):
        out = {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}
        out.update(corpus_seed=self.corpus_seed, eval_seed=self.eval_seed,
                   offline_copies=self.offline_copies)
        return out


def run_dir(arg, default_name):
    if arg:
        return Path(arg)
    root = os.environ.get(RUN_ROOT_ENV)
    if not root:
        raise CliError(f"no output directory given and ${RUN_ROOT_ENV} is unset")
    return Path(root) / default_name


def echo_config(cfg: ExperimentConfig, out: Path, source=None):
    """Copy the given config file verbatim and write the fully resolved one next to it."""
    out.mkdir(parents=True, exist_ok=True)
    if source is not None and Path(source).resolve() != (out / "config.toml").resolve():
        shutil.copyfile(source, out / "config.toml")
    (out / "resolved_config.toml").write_text(toml.dumps(cfg.to_dict()))


def cmd_synth_corpus(args, cfg: ExperimentConfig):
    out = run_dir(args.out, "corpus")
    spec = dataclasses.asdict(cfg.corpus)
    n_spk, n_utt = spec.pop("n_speakers"), spec.pop("utts_per_speaker")
    manifest = build_corpus(n_spk, n_utt, cfg.corpus_seed, out, **spec)
    n_tar, n_non = count_pairs(manifest)
    trials = build_trials(manifest, n_tar, n_non, cfg.corpus_seed)
    trials.write(out / "trials.txt")
    print(f"{len(manifest.utts)} utterances, {len(manifest.noises)} noise clips, "
          f"{len(trials)} trials -> {out}")


def _net_config(cfg: ExperimentConfig, corpus: Corpus):
    return dataclasses.replace(cfg.net, n_classes=len(corpus.speaker_index),
                               n_mels=cfg.features.n_mels)


def cmd_train(args, cfg: ExperimentConfig):
    corpus = Corpus.open(args.corpus)
    out = run_dir(args.out, f"{cfg.train.mode}-{cfg.train.within}-seed{cfg.train.seed}")
    echo_config(cfg, out, args.config)
    offline = None
    if cfg.train.mode == "offline":
        offline = out / "offline"
        make_offline_set(corpus, cfg.augment, cfg.offline_copies, cfg.train.seed, offline)
    net, logs = run_training(corpus, cfg.train, _net_config(cfg, corpus), cfg.features, cfg.augment,
                             offline_dir=offline,
                             progress=lambda log: print(f"epoch {log.epoch}: id {log.id_loss:.4f} "
                                                        f"within {log.within_loss:.5f}", flush=True))
    net.save(out / "model.ckpt")
    pairs = paired_eval_set(corpus, cfg.augment, cfg.eval_seed, cfg.features)
    pair_mse = reference_mse(net, pairs)
    ref = pair_mse
    if args.reference:
        ref = reference_mse(SpeakerNet.load(Path(args.reference) / "model.ckpt"), pairs)
    for log in logs:
        log.reference_mse = ref
    write_epoch_logs(logs, out / "train_log.csv")
    (out / "pair_mse.txt").write_text(f"{pair_mse:.9g}\n")
    print(f"paired clean/noisy embedding MSE {pair_mse:.6g} -> {out}")


def _condition(args):
    return TestCondition.parse(args.condition) if args.condition else TestCondition()


def cmd_extract(args, cfg: ExperimentConfig):
    corpus = Corpus.open(args.corpus)
    net = SpeakerNet.load(args.checkpoint)
    cond = _condition(args)
    ids = corpus.test_ids() if args.split == "test" else corpus.train_ids()
    emb = extract_embeddings(net, corpus, ids, cond, cfg.eval_seed, cfg.features)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_embeddings(((tag_utt(u, cond), corpus.utts[u].spk_id, emb[u]) for u in ids), out)
    print(f"{len(ids)} embeddings -> {out}")


def cmd_score(args, cfg: ExperimentConfig):
    emb = {u.split("#")[0]: v for u, v in read_embedding_map(args.embeddings).items()}
    scores = score_trials(emb, TrialSet.read(args.trials))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    scores.write(args.out)
    eer, _ = compute_eer(scores)
    print(f"{len(scores.scores)} trials scored; EER {100 * eer:.2f}%")


def cmd_eval(args, cfg: ExperimentConfig):
    out = run_dir(args.out, "eval")
    out.mkdir(parents=True, exist_ok=True)
    if args.scores:
        cond = _condition(args)
        scores = {cond.name: ScoreSet.read(args.scores)}
        rows = [metric_row(cond.noise_type, cond.snr_db, scores[cond.name])]
        pooled = scores[cond.name]
    else:
        if not (args.checkpoint and args.corpus):
            raise CliError("eval needs --scores, or --checkpoint with --corpus")
        corpus = Corpus.open(args.corpus)
        trials = TrialSet.read(args.trials or Path(args.corpus) / "trials.txt")
        conds = ([TestCondition.parse(args.condition)] if args.condition
                 else [TestCondition()] + table_conditions())
        scores, rows = evaluate_conditions(SpeakerNet.load(args.checkpoint), corpus, trials, conds,
                                           cfg.eval_seed, cfg.features)
        (out / "scores").mkdir(exist_ok=True)
        for name, s in scores.items():
            s.write(out / "scores" / f"{name.replace(':', '_')}.txt")
        noisy = [s for name, s in scores.items() if name != "original"]
        pooled = pool_scores(noisy) if noisy else scores["original"]
    write_metrics(rows, out / "metrics.csv")
    write_det(det_points(pooled), out / "det.csv")
    print(format_table([(out.name, rows)]))


def cmd_det(args, cfg: ExperimentConfig):
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_det(det_points(ScoreSet.read(args.scores)), args.out)
    print(f"DET points -> {args.out}")


def _row_key(row):
    return (row.condition, row.snr)


def format_table(runs):
    """Side-by-side EER (%) and DCF per condition for ``[(name, rows), ...]``."""
    keys = []
    for _, rows in runs:
        for r in rows:
            if _row_key(r) not in keys:
                keys.append(_row_key(r))
    header = f"{'condition':<12}{'snr':>5}" + "".join(f"{name[:18]:>20}" for name, _ in runs)
    lines = [header, f"{'':<17}" + "".join(f"{'EER%   DCF':>20}" for _ in runs)]
    for key in keys:
        cells = []
        for _, rows in runs:
            r = next((r for r in rows if _row_key(r) == key), None)
            cells.append(f"{'-':>20}" if r is None else f"{100 * r.eer:>12.2f}{r.dcf:>8.4f}")
        lines.append(f"{key[0]:<12}{key[1]:>5}" + "".join(cells))
    return "\n".join(lines)


def relative_reduction(base: float, new: float) -> float:
    """Percentage reduction of `new` relative to `base` (positive = better)."""
    if base == 0:
        return 0.0 if new == 0 else float("-inf")
    return 100.0 * (base - new) / base


def report(run_dirs):
    runs = [(Path(d).name, read_metrics(Path(d) / "metrics.csv")) for d in run_dirs]
    text = [format_table(runs)]
    base_name, base_rows = runs[0]
    base = {_row_key(r): r for r in base_rows}
    for name, rows in runs[1:]:
        text.append(f"\nrelative reduction of {name} vs {base_name}:")
        for r in rows:
            b = base.get(_row_key(r))
            if b is not None:
                text.append(f"  {r.condition:<12}{r.snr:>5}  EER {relative_reduction(b.eer, r.eer):+7.1f}%"
                            f"  DCF {relative_reduction(b.dcf, r.dcf):+7.1f}%")
    return "\n".join(text)


def cmd_report(args, cfg: ExperimentConfig):
    text = report(args.runs)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment config")
    common.add_argument("--seed", type=int, help="override the training and corpus seed")
    common.add_argument("--threads", type=int, help="BLAS thread cap; 1 gives bit-reproducible runs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="spkrobust", parents=[common],
                                description="Noise-robust speaker embedding experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-corpus", parents=[common], help="generate the synthetic corpus")
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth_corpus)

    s = sub.add_parser("train", parents=[common], help="train one system")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out")
    s.add_argument("--reference", help="run directory of a softmax-only model for the reference MSE")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("extract", parents=[common], help="dump embeddings")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--condition", help="TYPE:SNR, e.g. music:5 (default: original audio)")
    s.add_argument("--split", choices=("test", "train"), default="test")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("score", parents=[common], help="cosine-score a trial list")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--trials", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("eval", parents=[common], help="EER/minDCF per condition")
    s.add_argument("--scores")
    s.add_argument("--checkpoint")
    s.add_argument("--corpus")
    s.add_argument("--trials")
    s.add_argument("--condition")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("det", parents=[common], help="DET curve points from a score file")
    s.add_argument("--scores", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_det)

    s = sub.add_parser("report", parents=[common], help="compare run directories")
    s.add_argument("runs", nargs="+")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, args.seed)
        if args.threads is not None:
            if args.threads < 1:
                raise CliError("--threads must be >= 1")
            with threadpool_limits(limits=args.threads):
                args.func(args, cfg)
        else:
            args.func(args, cfg)
    except (CliError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
