"""Experiment orchestration: staged, fingerprinted, resumable.

Workdir layout::

    corpus/{train,dev,eval}/*.wav, corpus/protocol_<split>.txt   (unless corpus_dir is given)
    irs/CHxx.wav                                                 (unless ir_dir is given)
    sim/<split>/*.wav, sim/protocol_<split>.txt
    features/*.lfcc
    models/<strategy>_s<seed>.spck, models/<strategy>_s<seed>_history.csv
    scores/<strategy>_s<seed>.txt
    report/...
    stages.json, .lock

A stage is skipped when the hash of its config subset and input files
matches the one recorded in stages.json and its outputs still exist.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .audio_io import ORIG_CHANNEL, Manifest, parse_protocol, read_wav, write_protocol
from .channel import (
    average_magnitude_spectrum,
    default_irs,
    load_ir,
    save_ir,
    simulate_dataset,
)
from .dsp import DEFAULT_LFCC, FeatureStore, extract_features
from .errors import ChanRobustError, MissingChannel, ValidationError
from .metrics import (
    ScoreSet,
    channel_stats,
    det_band,
    det_curve,
    per_channel_eer,
    score_histogram,
    score_trials,
)
from .neuro import Checkpoint
from .synthcorpus import SynthConfig, generate_corpus
from .trainer import (
    DEFAULT_SEEN,
    DEFAULT_UNSEEN,
    STRATEGIES,
    TrainConfig,
    build_dev_view,
    build_training_view,
    coerce_fields,
    save_run,
    train,
)

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "eval")


class WorkdirLocked(ChanRobustError):
    pass


@dataclass
class ExperimentConfig:
    workdir: Path = Path("work")
    strategies: tuple = STRATEGIES
    seeds: tuple = (0,)
    seen_channels: tuple = DEFAULT_SEEN
    unseen_channels: tuple = DEFAULT_UNSEEN
    corpus_dir: Path | None = None
    ir_dir: Path | None = None
    ir_taps: int = 256
    ir_seed: int = 1234
    score_frames: int | None = None  # None: full-length scoring
    hist_bins: int = 40
    figures: bool = True
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.workdir = Path(self.workdir)
        self.strategies = tuple(self.strategies)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.seen_channels = tuple(self.seen_channels)
        self.unseen_channels = tuple(self.unseen_channels)
        if not self.strategies:
            raise ValidationError("at least one strategy is required")
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise ValidationError(f"unknown strategies {bad}; choose from {STRATEGIES}")
        if not self.seeds:
            raise ValidationError("at least one seed is required")
        if not self.seen_channels:
            raise ValidationError("at least one seen channel is required")
        overlap = set(self.seen_channels) & set(self.unseen_channels)
        if overlap:
            raise ValidationError(f"channels {sorted(overlap)} are both seen and unseen")
        if ORIG_CHANNEL in self.seen_channels + self.unseen_channels:
            raise ValidationError(f"{ORIG_CHANNEL!r} is not a simulated channel")
        if len(set(self.channels)) != len(self.channels):
            raise ValidationError("duplicate channel ids")
        # one class per seen channel plus the original
        self.train = self.train.replace(n_channels=len(self.seen_channels) + 1)

    @property
    def channels(self) -> tuple:
        return self.seen_channels + self.unseen_channels

    def run_config(self, strategy: str, seed: int) -> TrainConfig:
        return self.train.replace(strategy=strategy, seed=seed)

    def replace(self, **kw) -> "ExperimentConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return ExperimentConfig(**d)


def _list(v: str) -> tuple:
    return tuple(x for x in v.replace(",", " ").split() if x)


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read an INI file with [experiment], [synth] and [train] sections.

    Missing file or sections leave the defaults. ``overrides`` replace
    [experiment] values after parsing.
    """
    exp, synth, tr = {}, {}, {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as e:
            raise ValidationError(f"{path}: {e}") from None
        unknown = set(parser.sections()) - {"experiment", "synth", "train"}
        if unknown:
            raise ValidationError(f"{path}: unknown sections {sorted(unknown)}")
        exp = dict(parser["experiment"]) if parser.has_section("experiment") else {}
        synth = dict(parser["synth"]) if parser.has_section("synth") else {}
        tr = dict(parser["train"]) if parser.has_section("train") else {}
    for k in ("strategy", "seed"):
        if k in tr:
            raise ValidationError(f"[train] {k} is set per run; use [experiment] {k}s")

    kw = {}
    for k, v in exp.items():
        if k in ("strategies", "seeds", "seen_channels", "unseen_channels"):
            kw[k] = _list(v)
        elif k in ("corpus_dir", "ir_dir"):
            kw[k] = Path(v) if v else None
        elif k in ("ir_taps", "ir_seed", "hist_bins"):
            kw[k] = _int(k, v)
        elif k == "score_frames":
            kw[k] = _int(k, v) if v else None
        elif k == "figures":
            kw[k] = coerce_fields(ExperimentConfig, {k: v})[k]
        elif k == "workdir":
            kw[k] = Path(v)
        else:
            raise ValidationError(f"unknown [experiment] key {k!r}")
    kw.update({k: v for k, v in overrides.items() if v is not None})
    if "seeds" in kw:
        kw["seeds"] = tuple(_int("seeds", s) for s in kw["seeds"])
    return ExperimentConfig(
        synth=SynthConfig(**coerce_fields(SynthConfig, synth)),
        train=TrainConfig.from_mapping(tr),
        **kw,
    )


def _int(k, v) -> int:
    try:
        return int(v)
    except (TypeError, ValueError):
        raise ValidationError(f"{k}: expected an integer, got {v!r}") from None


_digest_cache: dict = {}


def file_digest(path) -> str:
    path = Path(path)
    st = path.stat()
    key = (str(path.resolve()), st.st_size, st.st_mtime_ns)
    if key not in _digest_cache:
        h = hashlib.sha256()
        with open(path, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                h.update(block)
        _digest_cache[key] = h.hexdigest()
    return _digest_cache[key]


def stage_fingerprint(config_subset: dict, inputs: Sequence[Path]) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(config_subset, sort_keys=True, default=str).encode())
    for p in sorted(Path(p) for p in inputs):
        h.update(p.name.encode())
        h.update(file_digest(p).encode())
    return h.hexdigest()


class Lock:
    """Exclusive per-workdir lock file holding the owner's pid."""

    def __init__(self, workdir):
        self.path = Path(workdir) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                if self._stale():
                    self.path.unlink(missing_ok=True)
                    continue
                raise WorkdirLocked(f"{self.path.parent} is in use by another invocation "
                                    f"(remove {self.path} if that process is gone)") from None
            with os.fdopen(fd, "w") as fh:
                fh.write(str(os.getpid()))
            return self
        raise WorkdirLocked(f"could not acquire {self.path}")

    def _stale(self) -> bool:
        try:
            pid = int(self.path.read_text().strip())
        except (OSError, ValueError):
            return False
        try:
            os.kill(pid, 0)
        except ProcessLookupError:
            return True
        except PermissionError:
            return False
        return False

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


class Pipeline:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.root = cfg.workdir
        self.state_path = self.root / "stages.json"
        self.current_stage = None
        self.ran: list = []
        self.skipped: list = []
        self._done: set = set()
        self._features = None

    # paths ------------------------------------------------------------
    @property
    def corpus_root(self) -> Path:
        return Path(self.cfg.corpus_dir) if self.cfg.corpus_dir else self.root / "corpus"

    @property
    def ir_root(self) -> Path:
        return Path(self.cfg.ir_dir) if self.cfg.ir_dir else self.root / "irs"

    @property
    def report_dir(self) -> Path:
        return self.root / "report"

    def model_path(self, strategy, seed) -> Path:
        return self.root / "models" / f"{strategy}_s{seed}.spck"

    def score_path(self, strategy, seed) -> Path:
        return self.root / "scores" / f"{strategy}_s{seed}.txt"

    # manifests ---------------------------------------------------------
    def orig(self, split) -> Manifest:
        return parse_protocol(self.corpus_root / f"protocol_{split}.txt", self.corpus_root / split, split)

    def sim(self, split) -> Manifest:
        return parse_protocol(self.root / "sim" / f"protocol_{split}.txt", self.root / "sim" / split, split)

    def eval_manifest(self) -> Manifest:
        sim = self.sim("eval")
        return Manifest(self.orig("eval").records + [r for r in sim if r.channel_id in self.cfg.channels], "eval")

    def irs(self) -> list:
        wanted = self.cfg.channels
        found = {p.stem: p for p in sorted(self.ir_root.glob("*.wav"))}
        missing = [c for c in wanted if c not in found]
        if missing:
            raise MissingChannel(f"no impulse response for {missing} in {self.ir_root}")
        return [load_ir(found[c]) for c in wanted]

    @property
    def features(self) -> FeatureStore:
        if self._features is None:
            self._features = FeatureStore(self.root / "features")
        return self._features

    # stage bookkeeping -------------------------------------------------
    def _load_state(self) -> dict:
        if self.state_path.exists():
            return json.loads(self.state_path.read_text())
        return {}

    def _stage(self, name: str, config_subset: dict, inputs: Sequence[Path],
               body: Callable[[], Sequence[Path]]) -> bool:
        """Run ``body`` unless its fingerprint is unchanged; return True if it ran."""
        if name in self._done:
            return False
        self.current_stage = name
        fp = stage_fingerprint(config_subset, inputs)
        state = self._load_state()
        prev = state.get(name)
        if prev and prev["fingerprint"] == fp and all((self.root / p).exists() for p in prev["outputs"]):
            log.info("stage %s: up to date", name)
            self.skipped.append(name)
            self._done.add(name)
            return False
        log.info("stage %s: running", name)
        outputs = [Path(p) for p in body()]
        state = self._load_state()
        state[name] = {
            "fingerprint": fp,
            "outputs": sorted(os.path.relpath(p, self.root) for p in outputs),
        }
        self.root.mkdir(parents=True, exist_ok=True)
        self.state_path.write_text(json.dumps(state, indent=1, sort_keys=True))
        self.ran.append(name)
        self._done.add(name)
        return True

    def _protocols(self, which=("orig", "sim"), splits=SPLITS) -> list:
        out = []
        for split in splits:
            if "orig" in which:
                out.append(self.corpus_root / f"protocol_{split}.txt")
            if "sim" in which:
                out.append(self.root / "sim" / f"protocol_{split}.txt")
        return out

    def _audio_inputs(self, manifests) -> list:
        return [Path(r.audio_path) for m in manifests for r in m]

    def _feature_inputs(self, manifests) -> list:
        return [self.features.path(r.trial_id) for m in manifests for r in m]

    # stages ----------------------------------------------------------
    def gen_corpus(self) -> None:
        if self.cfg.corpus_dir is not None:
            self.current_stage = "gen-corpus"
            for split in SPLITS:
                self.orig(split).check_paths()
            return

        def body():
            ms = generate_corpus(self.cfg.synth, self.corpus_root)
            return self._protocols(("orig",)) + [Path(r.audio_path) for m in ms.values() for r in m]

        self._stage("gen-corpus", {"synth": asdict(self.cfg.synth)}, [], body)

    def make_irs(self) -> None:
        if self.cfg.ir_dir is not None:
            return

        def body():
            self.ir_root.mkdir(parents=True, exist_ok=True)
            paths = []
            for ir in default_irs(self.cfg.ir_taps, self.cfg.ir_seed):
                p = self.ir_root / f"{ir.channel_id}.wav"
                save_ir(ir, p)
                paths.append(p)
            return paths

        self._stage("irs", {"taps": self.cfg.ir_taps, "seed": self.cfg.ir_seed}, [], body)

    def simulate(self) -> None:
        self.gen_corpus()
        self.make_irs()
        irs = self.irs()
        seen = set(self.cfg.seen_channels)
        origs = [self.orig(s) for s in SPLITS]
        inputs = self._protocols(("orig",)) + self._audio_inputs(origs) + \
            [self.ir_root / f"{c}.wav" for c in self.cfg.channels]

        def body():
            outputs = []
            for m in origs:
                # unseen channels exist only in the eval split
                bank = irs if m.split == "eval" else [ir for ir in irs if ir.channel_id in seen]
                sim = simulate_dataset(m, bank, self.root / "sim" / m.split)
                p = self.root / "sim" / f"protocol_{m.split}.txt"
                write_protocol(sim, p, with_channel=True)
                outputs += [p] + [Path(r.audio_path) for r in sim]
            return outputs

        self._stage("simulate", {"seen": self.cfg.seen_channels, "unseen": self.cfg.unseen_channels},
                    inputs, body)

    def extract(self) -> None:
        self.simulate()
        ms = [self.orig(s) for s in SPLITS] + [self.sim(s) for s in SPLITS]

        def body():
            outputs = []
            for m in ms:
                for r in m:
                    self.features.put(r.trial_id, extract_features(read_wav(r.audio_path)))
                    outputs.append(self.features.path(r.trial_id))
            return outputs

        self._stage("extract", {"lfcc": asdict(DEFAULT_LFCC)},
                    self._protocols() + self._audio_inputs(ms), body)

    def train(self) -> None:
        self.extract()
        cfg = self.cfg
        data = {s: (self.orig(s), self.sim(s)) for s in ("train", "dev")}
        for strategy in cfg.strategies:
            for seed in cfg.seeds:
                rc = cfg.run_config(strategy, seed)
                view, labels = build_training_view(*data["train"], strategy, cfg.seen_channels)
                dev = build_dev_view(*data["dev"], rc, cfg.seen_channels)
                inputs = self._protocols(splits=("train", "dev")) + self._feature_inputs([view, dev])

                def body(rc=rc, view=view, dev=dev, labels=labels):
                    ckpt, hist = train(view, dev, rc, self.features, labels)
                    path = save_run(ckpt, hist, self.root / "models", f"{rc.strategy}_s{rc.seed}")
                    return [path, path.with_name(f"{path.stem}_history.csv")]

                self._stage(f"train:{strategy}:s{seed}",
                            {"train": asdict(rc), "seen": cfg.seen_channels}, inputs, body)

    def score(self) -> None:
        self.train()
        m = self.eval_manifest()
        feat_inputs = self._protocols(splits=("eval",)) + self._feature_inputs([m])
        for strategy in self.cfg.strategies:
            for seed in self.cfg.seeds:
                model = self.model_path(strategy, seed)
                out = self.score_path(strategy, seed)

                def body(model=model, out=out):
                    s = score_trials(Checkpoint.load(model), m, self.features, self.cfg.score_frames)
                    out.parent.mkdir(parents=True, exist_ok=True)
                    s.write(out)
                    return [out]

                self._stage(f"score:{strategy}:s{seed}", {"frames": self.cfg.score_frames},
                            [model] + feat_inputs, body)

    def _score_sets(self) -> dict:
        m = self.eval_manifest()
        return {(st, sd): ScoreSet.read(self.score_path(st, sd), m)
                for st in self.cfg.strategies for sd in self.cfg.seeds}

    def _report_config(self) -> dict:
        c = self.cfg
        return {"strategies": c.strategies, "seeds": c.seeds, "seen": c.seen_channels,
                "unseen": c.unseen_channels, "bins": c.hist_bins, "figures": c.figures}

    def _score_inputs(self) -> list:
        return [self.score_path(st, sd) for st in self.cfg.strategies for sd in self.cfg.seeds]

    def evaluate(self) -> None:
        self.score()
        self._stage("eval", self._report_config(), self._score_inputs(), lambda: write_eval_report(self))
        self.write_manifest()

    def det(self) -> None:
        self.score()
        self._stage("det", self._report_config(), self._score_inputs(), lambda: write_det_report(self))
        self.write_manifest()

    def spectra(self) -> None:
        self.simulate()
        m = self.eval_manifest()
        self._stage("spectra", {"channels": self.cfg.channels, "figures": self.cfg.figures},
                    self._protocols(splits=("eval",)) + self._audio_inputs([m]),
                    lambda: write_spectra_report(self, m))
        self.write_manifest()

    def run(self) -> Path:
        self.evaluate()
        self.det()
        self.spectra()
        return self.report_dir

    def write_manifest(self) -> Path:
        """List every report artifact with its kind and digest."""
        rd = self.report_dir
        rows = []
        for p in sorted(rd.rglob("*")):
            if p.is_file() and p.name != "manifest.csv":
                rel = p.relative_to(rd).as_posix()
                rows.append((rel, _artifact_kind(rel), file_digest(p)))
        path = rd / "manifest.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "artifact", "sha256"])
            w.writerows(rows)
        return path


def _artifact_kind(rel: str) -> str:
    name = rel.rsplit("/", 1)[-1]
    kinds = [
        ("eer_by_channel", "per-channel EER table"),
        ("channel_stats", "seen-channel average and spread"),
        ("det_band", "mean DET band over seen channels"),
        ("det_", "DET curve"),
        ("hist_", "score histogram"),
        ("spectrum_", "average magnitude spectrum"),
        ("summary", "experiment summary"),
    ]
    prefix = "figure: " if name.endswith(".png") else ""
    for key, kind in kinds:
        if name.startswith(key):
            return prefix + kind
    return prefix + "other"


def _channel_order(cfg: ExperimentConfig) -> list:
    return [ORIG_CHANNEL, *cfg.channels]


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_eval_report(p: Pipeline) -> list:
    cfg = p.cfg
    sets = p._score_sets()
    chans = _channel_order(cfg)
    outputs = []
    summary_rows = []
    summary = {"seen_channels": list(cfg.seen_channels), "unseen_channels": list(cfg.unseen_channels),
               "seeds": list(cfg.seeds), "strategies": {}}
    mean_eers = {}
    for strategy in cfg.strategies:
        sdir = p.report_dir / strategy
        (sdir / "hist").mkdir(parents=True, exist_ok=True)
        per_seed = {}
        for seed in cfg.seeds:
            s = sets[(strategy, seed)]
            eers = per_channel_eer(s, chans)
            per_seed[seed] = eers
            for c in chans:
                summary_rows.append((strategy, seed, "eval", c, eers[c]))
            lo, hi = float(s.scores.min()), float(s.scores.max())
            for c in chans:
                h = score_histogram(s.for_channel(c), cfg.hist_bins, (lo, hi) if lo < hi else None)
                path = sdir / "hist" / f"hist_{c}_s{seed}.csv"
                h.to_csv(path)
                outputs.append(path)
        mean = {c: float(np.mean([per_seed[sd][c] for sd in cfg.seeds])) for c in chans}
        mean_eers[strategy] = mean

        path = sdir / "eer_by_channel.csv"
        with open(path, "w") as fh:
            fh.write("channel,eer_mean," + ",".join(f"eer_s{sd}" for sd in cfg.seeds) + "\n")
            for c in chans:
                fh.write(",".join([c, _fmt(mean[c])] + [_fmt(per_seed[sd][c]) for sd in cfg.seeds]) + "\n")
        outputs.append(path)

        path = sdir / "channel_stats.csv"
        block = {}
        with open(path, "w") as fh:
            fh.write("seed,avg_seen,std_seen,avg_shifted,eer_orig,"
                     + ",".join(f"eer_{c}" for c in cfg.unseen_channels) + "\n")
            for sd in cfg.seeds:
                st = channel_stats(per_seed[sd], cfg.seen_channels, cfg.unseen_channels)
                shifted = float(np.mean([per_seed[sd][c] for c in cfg.channels]))
                fh.write(",".join([str(sd), _fmt(st.avg), _fmt(st.std), _fmt(shifted),
                                   _fmt(per_seed[sd][ORIG_CHANNEL])]
                                  + [_fmt(st.unseen[c]) for c in cfg.unseen_channels]) + "\n")
                block[str(sd)] = {"eer": {c: per_seed[sd][c] for c in chans}, "avg_seen": st.avg,
                                  "std_seen": st.std, "avg_shifted": shifted}
        outputs.append(path)
        summary["strategies"][strategy] = block

        if cfg.figures:
            from .plotting import plot_histograms

            worst = max(cfg.channels, key=lambda c: mean[c])
            sd = cfg.seeds[0]
            hists = {}
            for c in dict.fromkeys([ORIG_CHANNEL, worst]):
                s = sets[(strategy, sd)]
                hists[c] = score_histogram(s.for_channel(c), cfg.hist_bins,
                                           (float(s.scores.min()), float(s.scores.max())))
            outputs.append(plot_histograms(hists, p.report_dir / "figures" / f"hist_{strategy}.png",
                                           f"{strategy}, seed {sd}"))

    path = p.report_dir / "summary.csv"
    with open(path, "w") as fh:
        fh.write("strategy,seed,split,channel,eer\n")
        for st, sd, split, c, e in summary_rows:
            fh.write(f"{st},{sd},{split},{c},{_fmt(e)}\n")
    outputs.append(path)

    path = p.report_dir / "summary.json"
    path.write_text(json.dumps(summary, indent=1, sort_keys=True))
    outputs.append(path)

    path = p.report_dir / "summary.txt"
    path.write_text(summary_table(summary, cfg))
    outputs.append(path)

    if cfg.figures:
        from .plotting import plot_eer_bars

        outputs.append(plot_eer_bars(mean_eers, chans, p.report_dir / "figures" / "eer_by_channel.png",
                                     "EER by channel, mean over seeds"))
    return outputs


def summary_table(summary: dict, cfg: ExperimentConfig) -> str:
    """Fixed-width EER (%) table, one row per strategy, averaged over seeds."""
    chans = _channel_order(cfg)
    head = f"{'strategy':<10}" + "".join(f"{c:>7}" for c in chans) + \
        f"{'avg_seen':>10}{'std_seen':>10}{'avg_shift':>10}"
    lines = [f"EER (%) on eval, mean over seeds {list(cfg.seeds)}; "
             f"seen {cfg.seen_channels[0]}..{cfg.seen_channels[-1]}, unseen {', '.join(cfg.unseen_channels)}",
             head, "-" * len(head)]
    for strategy, block in summary["strategies"].items():
        runs = list(block.values())
        row = f"{strategy:<10}"
        for c in chans:
            row += f"{100 * np.mean([r['eer'][c] for r in runs]):7.2f}"
        for k in ("avg_seen", "std_seen", "avg_shifted"):
            row += f"{100 * np.mean([r[k] for r in runs]):10.2f}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def write_det_report(p: Pipeline) -> list:
    cfg = p.cfg
    sets = p._score_sets()
    outputs = []
    for strategy in cfg.strategies:
        ddir = p.report_dir / strategy / "det"
        ddir.mkdir(parents=True, exist_ok=True)
        for seed in cfg.seeds:
            s = sets[(strategy, seed)]
            curves = {}
            for c in _channel_order(cfg):
                curves[c] = det_curve(s.for_channel(c))
                path = ddir / f"det_{c}_s{seed}.csv"
                curves[c].to_csv(path)
                outputs.append(path)
            band = det_band([curves[c] for c in cfg.seen_channels])
            path = ddir / f"det_band_seen_s{seed}.csv"
            band.to_csv(path)
            outputs.append(path)
            if cfg.figures and seed == cfg.seeds[0]:
                from .plotting import plot_det

                outputs.append(plot_det(curves, band, p.report_dir / "figures" / f"det_{strategy}.png",
                                        f"{strategy}, seed {seed}"))
    return outputs


def write_spectra_report(p: Pipeline, m: Manifest) -> list:
    """Average spectra of eval trials: per key on the original channel, bona fide per channel."""
    cfg = p.cfg
    sdir = p.report_dir / "spectra"
    sdir.mkdir(parents=True, exist_ok=True)
    outputs = []
    groups = {f"{ORIG_CHANNEL}_spoof": [r for r in m if r.channel_id == ORIG_CHANNEL and not r.is_bonafide]}
    for c in _channel_order(cfg):
        groups[f"{c}_bonafide"] = [r for r in m if r.channel_id == c and r.is_bonafide]
    curves = {}
    for name, recs in groups.items():
        curve = average_magnitude_spectrum([read_wav(r.audio_path) for r in recs])
        path = sdir / f"spectrum_{name}.csv"
        curve.to_csv(path)
        outputs.append(path)
        curves[name] = curve
    if cfg.figures:
        from .plotting import plot_spectra

        fig_dir = p.report_dir / "figures"
        outputs.append(plot_spectra({k: curves[k] for k in (f"{ORIG_CHANNEL}_bonafide", f"{ORIG_CHANNEL}_spoof")},
                                    fig_dir / "spectra_keys.png", "original channel, by key"))
        outputs.append(plot_spectra({k: v for k, v in curves.items() if k.endswith("_bonafide")},
                                    fig_dir / "spectra_channels.png", "bona fide, by channel",
                                    reference=f"{ORIG_CHANNEL}_bonafide"))
    return outputs


def run_experiment(cfg: ExperimentConfig) -> Path:
    with Lock(cfg.workdir):
        return Pipeline(cfg).run()
