"""Command-line pipeline: synth -> features -> train -> score -> eval,
plus embedding export.

Every option resolves with precedence CLI flag > AEGM_<NAME> environment
variable > --config key=value file > built-in default, and the resolved
set is echoed to run_config.resolved next to the outputs. Subcommands
hold a lock file in their output directory, and exit codes are stable:
0 success, 1 runtime failure, 2 usage error.
"""

import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as dat
from . import features as feat
from . import metrics as met
from . import model as mdl
from . import scoring as sco
from . import training as trn
from .audio import load_wav
from .errors import AegmError, ConfigHashMismatch, LockHeld

ENV_PREFIX = "AEGM_"
LOCK_NAME = ".aegm.lock"
RESOLVED_NAME = "run_config.resolved"


@dataclass(frozen=True)
class Opt:
    name: str
    type_: type = str
    default: object = None
    help: str = ""
    flag: bool = False
    required: bool = False


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _read_config_file(path):
    values = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise AegmError(f"config file {path}: bad line {line!r} (expected key=value)")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _resolve(args, opts):
    file_vals = _read_config_file(args.config) if args.config else {}
    resolved = {}
    for o in opts:
        value = getattr(args, o.name)
        if value is None:
            raw = os.environ.get(ENV_PREFIX + o.name.upper())
            if raw is None:
                raw = file_vals.get(o.name)
            if raw is not None:
                value = _parse_bool(raw) if o.flag else o.type_(raw)
            else:
                value = o.default
        if value is None and o.required:
            print(f"usage error: --{o.name.replace('_', '-')} is required "
                  f"(flag, {ENV_PREFIX}{o.name.upper()}, or config file)", file=sys.stderr)
            raise SystemExit(2)
        resolved[o.name] = value
    return resolved


def _write_resolved(out_dir, resolved):
    lines = []
    for key in sorted(resolved):
        value = resolved[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key}={'' if value is None else value}")
    (Path(out_dir) / RESOLVED_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


@contextmanager
def _dir_lock(out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockHeld(f"{lock} exists; another command is using this directory "
                       "(remove the file if it is stale)") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _int_list(text):
    return tuple(int(v) for v in str(text).split(",") if v != "")

def _float_list(text):
    return tuple(float(v) for v in str(text).split(",") if v != "")


# --- synth ----------------------------------------------------------------

SYNTH_OPTS = [
    Opt("out", str, required=True, help="dataset output directory"),
    Opt("seed", int, 0, "generator seed"),
    Opt("sections", int, 3, "number of sections M"),
    Opt("train_clips", int, 60, "train clips per section"),
    Opt("test_normal", int, 20, "test normal clips per section"),
    Opt("test_anomaly", int, 20, "test anomaly clips per section"),
    Opt("clip_seconds", float, 2.0, "clip length in seconds"),
    Opt("machine", str, "synth", "machine name for the layout"),
    Opt("noise_snr_db", float, 20.0, "white-noise SNR in dB"),
    Opt("base_freqs", _float_list, (500.0, 900.0, 1400.0), "per-section fundamentals (Hz, comma list)"),
    Opt("anomaly_kinds", str, ",".join(dat.ANOMALY_KINDS),
        "comma list drawn round-robin per anomaly clip"),
]


def cmd_synth(cfg):
    spec = dat.SynthSpec(
        num_sections=cfg["sections"],
        clips_per_section_train=cfg["train_clips"],
        test_normal=cfg["test_normal"],
        test_anomaly=cfg["test_anomaly"],
        clip_seconds=cfg["clip_seconds"],
        base_freqs=tuple(cfg["base_freqs"]),
        noise_snr_db=cfg["noise_snr_db"],
        anomaly_kinds=tuple(k for k in cfg["anomaly_kinds"].split(",") if k),
        seed=cfg["seed"],
        machine=cfg["machine"],
    )
    clips = dat.synth_generate(spec, cfg["out"])
    n_train = sum(1 for c in clips if c.split == "train")
    print(f"wrote {n_train} train + {len(clips) - n_train} test wavs under {cfg['out']}")
    return 0


# --- features ---------------------------------------------------------------

FEATURE_OPTS = [
    Opt("data", str, required=True, help="dataset root (DCASE layout)"),
    Opt("machine", str, required=True, help="machine subdirectory to process"),
    Opt("out", str, required=True, help="feature cache directory"),
    Opt("feature", str, feat.LOG_MEL, "feature kind: logmel or stft"),
    Opt("n_fft", int, 1024, "frame/FFT size in samples"),
    Opt("hop", int, 512, "hop size in samples"),
    Opt("n_mels", int, 128, "mel channels (logmel only)"),
    Opt("context", int, 5, "stacked context frames"),
    Opt("fmin", float, 0.0, "mel filterbank low edge (Hz)"),
    Opt("fmax", float, 8000.0, "mel filterbank high edge (Hz)"),
    Opt("stft_power", float, 1.0, "exponent on STFT magnitudes (stft only)"),
]


def _feature_config(cfg):
    return feat.FeatureConfig(
        feature_kind=cfg["feature"], n_fft=cfg["n_fft"], hop=cfg["hop"],
        n_mels=cfg["n_mels"], context_frames=cfg["context"],
        fmin=cfg["fmin"], fmax=cfg["fmax"], stft_power=cfg["stft_power"])


def _feature_path(out_dir, meta):
    return Path(out_dir) / meta.machine / meta.split / (meta.path.stem + ".feat")


def cmd_features(cfg):
    fcfg = _feature_config(cfg)
    clips = dat.scan_dcase(cfg["data"], cfg["machine"])
    out_dir = Path(cfg["out"])
    want_hash = fcfg.config_hash()
    written = skipped = 0
    for meta in clips:
        dest = _feature_path(out_dir, meta)
        dest.parent.mkdir(parents=True, exist_ok=True)
        if dest.exists():
            try:
                header = feat.peek_feature_header(dest)
            except AegmError:
                header = {}
            if (header.get("config_hash") == want_hash
                    and dest.stat().st_mtime >= meta.path.stat().st_mtime):
                skipped += 1
                continue
        clip = load_wav(meta.path)
        fm = feat.extract(clip, fcfg, section_id=meta.section_id,
                          section_code=meta.section_code)
        feat.save_features(dest, fm, fcfg)
        written += 1
    dat.write_manifest(clips, out_dir / dat.MANIFEST_NAME,
                       relative_to=Path(cfg["data"]))
    print(f"features: {written} written, {skipped} up-to-date under {out_dir}")
    return 0


def _load_feature_set(features_dir, split):
    """All (FeatureMatrix, header, ClipMeta) for one split of a feature dir."""
    features_dir = Path(features_dir)
    manifest = features_dir / dat.MANIFEST_NAME
    if not manifest.is_file():
        raise AegmError(
            f"no {dat.MANIFEST_NAME} in {features_dir}; generate features first: "
            f"aegm features --data <DATA> --machine <MACHINE> --out {features_dir}")
    entries = []
    for meta in dat.read_manifest(manifest):
        if split != "all" and meta.split != split:
            continue
        dest = features_dir / meta.machine / meta.split / (Path(meta.path).stem + ".feat")
        if not dest.is_file():
            raise AegmError(
                f"missing feature file {dest}; regenerate: aegm features "
                f"--data <DATA> --machine {meta.machine} --out {features_dir}")
        fm, header = feat.load_features(dest)
        entries.append((fm, header, meta))
    if not entries:
        raise AegmError(f"no {split} features found under {features_dir}")
    hashes = {h["config_hash"] for _f, h, _m in entries}
    if len(hashes) != 1:
        raise ConfigHashMismatch(
            f"{features_dir} mixes feature configs {sorted(hashes)}; "
            "rerun aegm features with one configuration")
    return entries


# --- train ------------------------------------------------------------------

TRAIN_OPTS = [
    Opt("features", str, required=True, help="feature cache directory"),
    Opt("out", str, required=True, help="run directory (checkpoints, log)"),
    Opt("epochs", int, 600, "training epochs"),
    Opt("batch_size", int, 32, "rows per batch"),
    Opt("lr_gae", float, 0.001, "learning rate, encoder+decoders"),
    Opt("lr_ac", float, 0.00001, "learning rate, classification head"),
    Opt("seed", int, 0, "init/shuffle seed"),
    Opt("checkpoint_every", int, 0, "also checkpoint every N epochs (0 = final only)"),
    Opt("encoder_layers", _int_list, (128, 128, 128, 128), "hidden widths, comma list"),
    Opt("bottleneck", int, 8, "bottleneck dimension"),
    Opt("no_batch_norm", flag=True, type_=bool, default=False, help="disable batch norm"),
    Opt("plain_ae", flag=True, type_=bool, default=False,
        help="ablation: single decoder, no classification head"),
    Opt("differentiable_weights", flag=True, type_=bool, default=False,
        help="backprop through the adaptive loss weights (experimental)"),
    Opt("augment", flag=True, type_=bool, default=False, help="low-frequency shuffle augmentation"),
    Opt("augment_bins", int, 32, "lowest bins shuffled by --augment"),
    Opt("augment_prob", float, 0.5, "row probability for --augment"),
]


def cmd_train(cfg):
    entries = _load_feature_set(cfg["features"], "train")
    rows = np.concatenate([fm.rows for fm, _h, _m in entries]).astype(np.float32)
    feature_hash = entries[0][1]["config_hash"]
    context = int(entries[0][1].get("context_frames", 1))
    codes = sorted({fm.section_code for fm, _h, _m in entries}, key=int)
    if cfg["plain_ae"]:
        section_map = {code: 0 for code in codes}
        num_sections = 1
    else:
        section_map = {code: i for i, code in enumerate(codes)}
        num_sections = len(codes)
    section_ids = np.concatenate([
        np.full(fm.rows.shape[0], section_map[fm.section_code], dtype=np.int64)
        for fm, _h, _m in entries])

    model_cfg = mdl.AegmConfig(
        input_dim=rows.shape[1],
        encoder_layers=tuple(cfg["encoder_layers"]),
        bottleneck_dim=cfg["bottleneck"],
        num_sections=num_sections,
        use_batch_norm=not cfg["no_batch_norm"])
    model = mdl.AegmModel(model_cfg, seed=cfg["seed"], dtype=np.float32)

    tcfg = trn.TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        lr_gae=cfg["lr_gae"], lr_ac=cfg["lr_ac"], seed=cfg["seed"],
        augment=trn.AugmentConfig(cfg["augment_bins"], cfg["augment_prob"])
        if cfg["augment"] else None,
        checkpoint_every=cfg["checkpoint_every"],
        differentiable_weights=cfg["differentiable_weights"])
    log = trn.train(
        rows, section_ids, model, tcfg, out_dir=cfg["out"],
        per_frame_dim=rows.shape[1] // context,
        checkpoint_header={"feature_config_hash": feature_hash,
                           "seed": cfg["seed"], "section_map": section_map})
    final = log[-1]
    ckpt_path = Path(cfg["out"]) / f"ckpt_epoch_{cfg['epochs']}.aegm"
    print(f"trained {cfg['epochs']} epochs; final l_total {final.l_total:.6g} "
          f"(l_rec {final.l_rec:.6g}, l_aux {final.l_aux:.6g})")
    print(f"checkpoint: {ckpt_path}")
    return 0


# --- score --------------------------------------------------------------

SCORE_OPTS = [
    Opt("features", str, required=True, help="feature cache directory"),
    Opt("checkpoint", str, required=True, help="trained model checkpoint"),
    Opt("out", str, required=True, help="score CSV directory"),
    Opt("mode", str, "all", "score modes: gae, ac, ens, or all"),
    Opt("split", str, "test", "which split to score"),
    Opt("norm_grouping", str, "section", "ensemble normalization: section or global"),
    Opt("aux_aggregate", str, "mean_prob", "clip aggregation for the ac score: mean_prob or mean_score"),
]


def _load_model(cfg):
    ckpt = Path(cfg["checkpoint"])
    if not ckpt.is_file():
        raise AegmError(f"checkpoint not found: {ckpt}; train first: "
                        f"aegm train --features {cfg['features']} --out <RUN_DIR>")
    return mdl.load_checkpoint(ckpt)


def cmd_score(cfg):
    model, header = _load_model(cfg)
    entries = _load_feature_set(cfg["features"], cfg["split"])
    feature_hash = entries[0][1]["config_hash"]
    if header.get("feature_config_hash") and header["feature_config_hash"] != feature_hash:
        raise ConfigHashMismatch(
            f"checkpoint was trained on feature config {header['feature_config_hash']} "
            f"but {cfg['features']} holds {feature_hash}")
    section_map = {str(k): int(v) for k, v in header.get("section_map", {}).items()}

    modes = sco.SCORE_MODES if cfg["mode"] == "all" else tuple(cfg["mode"].split(","))
    for mode in modes:
        if mode not in sco.SCORE_MODES:
            raise AegmError(f"unknown score mode {mode!r}")
    if model.classifier is None:
        if cfg["mode"] == "all":
            modes = ("gae",)
        elif set(modes) & {"ac", "ens"}:
            raise AegmError("this checkpoint is a plain AE; only --mode gae is available")

    records = []
    machine = entries[0][2].machine
    for fm, _h, meta in entries:
        decoder = section_map.get(fm.section_code, fm.section_id)
        rec = sco.ScoreRecord(
            clip_id=fm.clip_id, section_id=fm.section_id,
            section_code=fm.section_code, label=meta.label,
            a_rec=sco.score_rec(model, fm.rows, decoder),
            a_aux=sco.score_aux(model, fm.rows, decoder, aggregate=cfg["aux_aggregate"])
            if model.classifier is not None else 0.0)
        records.append(rec)
    if "ens" in modes:
        sco.ensemble(records, grouping=cfg["norm_grouping"])
    paths = sco.write_score_csvs(records, machine, cfg["out"], modes=modes)
    print(f"scored {len(records)} clips -> {len(paths)} csv files under {cfg['out']}")
    return 0


# --- eval ---------------------------------------------------------------

EVAL_OPTS = [
    Opt("scores", str, required=True, help="directory of anomaly_score CSVs"),
    Opt("manifest", str, required=True, help="manifest.csv with ground-truth labels"),
    Opt("out", str, required=True, help="report output directory"),
    Opt("pauc_p", float, 0.1, "false-positive-rate cap for pAUC"),
]


def cmd_eval(cfg):
    scores_dir = Path(cfg["scores"])
    csvs = sorted(scores_dir.glob("anomaly_score_*_section_*_*.csv"))
    if not csvs:
        raise AegmError(
            f"no score CSVs in {scores_dir}; run: aegm score --features <FEATURES> "
            f"--checkpoint <CKPT> --out {scores_dir}")
    labels = {}
    for meta in dat.read_manifest(cfg["manifest"]):
        labels[Path(meta.path).name] = meta
    grouped = {}
    for path in csvs:
        stem_parts = path.stem.split("_")
        # anomaly_score_<machine...>_section_<NN>_<mode>
        mode = stem_parts[-1]
        code = stem_parts[-2]
        machine = "_".join(stem_parts[2:-3])
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            name, _, value = line.rpartition(",")
            if name not in labels:
                raise AegmError(f"{path.name}: clip {name} not present in the manifest")
            meta = labels[name]
            if meta.label not in ("normal", "anomaly"):
                raise AegmError(f"{path.name}: clip {name} has no ground-truth label")
            grouped.setdefault((machine, code, mode), []).append(
                (float(value), meta.label == "anomaly"))
    report = met.build_report(grouped, p=cfg["pauc_p"])
    text = met.format_report(report)
    out_dir = Path(cfg["out"])
    met.write_report_csv(report, out_dir / "report.csv")
    (out_dir / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


# --- export-embeddings --------------------------------------------------

EXPORT_OPTS = [
    Opt("features", str, required=True, help="feature cache directory"),
    Opt("checkpoint", str, required=True, help="trained model checkpoint"),
    Opt("out", str, required=True, help="output directory for embeddings.csv"),
    Opt("split", str, "all", "train, test, or all"),
]


def cmd_export_embeddings(cfg):
    model, header = _load_model(cfg)
    entries = _load_feature_set(cfg["features"], cfg["split"])
    feature_hash = entries[0][1]["config_hash"]
    if header.get("feature_config_hash") and header["feature_config_hash"] != feature_hash:
        raise ConfigHashMismatch(
            f"checkpoint feature config {header['feature_config_hash']} != {feature_hash}")
    k = model.cfg.bottleneck_dim
    m = model.cfg.num_sections
    out_dir = Path(cfg["out"])
    out_path = out_dir / "embeddings.csv"
    with open(out_path, "w", encoding="utf-8") as f:
        e_cols = ",".join(f"e_{i}" for i in range(k))
        z_cols = ("," + ",".join(f"z_{j}" for j in range(m))) if model.classifier is not None else ""
        f.write(f"clip_id,section,label{',' + e_cols}{z_cols}\n")
        for fm, _h, meta in entries:
            z = model.encode(fm.rows)
            logits = model.classifier_logits(z) if model.classifier is not None else None
            for r in range(z.shape[0]):
                e_txt = ",".join(f"{v:.8g}" for v in z[r])
                z_txt = ("," + ",".join(f"{v:.8g}" for v in logits[r])) if logits is not None else ""
                f.write(f"{fm.clip_id},{fm.section_code},{meta.label},{e_txt}{z_txt}\n")
    print(f"wrote {out_path}")
    return 0


# --- wiring ----------------------------------------------------------------

_COMMANDS = [
    ("synth", cmd_synth, SYNTH_OPTS, "generate the synthetic dataset"),
    ("features", cmd_features, FEATURE_OPTS, "extract feature caches from WAVs"),
    ("train", cmd_train, TRAIN_OPTS, "train the model on cached features"),
    ("score", cmd_score, SCORE_OPTS, "compute anomaly-score CSVs"),
    ("eval", cmd_eval, EVAL_OPTS, "compute AUC/pAUC report from score CSVs"),
    ("export-embeddings", cmd_export_embeddings, EXPORT_OPTS,
     "dump bottleneck embeddings and classifier logits"),
]


def build_parser():
    import argparse

    parser = argparse.ArgumentParser(
        prog="aegm",
        description="Anomalous-sound detection with a group-decoder autoencoder")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, opts, help_ in _COMMANDS:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="key=value config file")
        for o in opts:
            flag_name = "--" + o.name.replace("_", "-")
            if o.flag:
                p.add_argument(flag_name, dest=o.name, action="store_const",
                               const=True, default=None, help=o.help)
            else:
                p.add_argument(flag_name, dest=o.name, type=o.type_,
                               default=None, help=o.help)
        p.set_defaults(func=func, opts=opts)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    resolved = _resolve(args, args.opts)
    try:
        with _dir_lock(resolved["out"]):
            _write_resolved(resolved["out"], resolved)
            return args.func(resolved)
    except (AegmError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
