"""Command-line interface.

Exit codes: 0 success, 1 failed check or internal error, 2 usage or
file-format error.  Settings come from built-in defaults, then an optional
``--config`` file of ``key=value`` lines, then command-line flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import audio_io
from .attack import AttackConfig, default_attack, remix_attack
from .errors import ConfigMismatchError, FormatError
from .fingerprint import PeakParams, fingerprint, serialize, to_json
from .frontend import FrontendConfig, features, to_csv, to_pgm
from .losses import LOSS_KINDS, LossParams, finite_diff_check
from .matcher import FingerprintDb, load_db, save_db

log = logging.getLogger("fpevade")


class UsageError(Exception):
    pass


@dataclass
class CliConfig:
    sample_rate: int = audio_io.DEFAULT_SAMPLE_RATE
    fft_size: int = 1024
    hop: int = 256
    hann_width: int = 64
    w1: int = 5
    w2: int = 2
    theta: float = 0.01
    c_ratio: float = 0.05
    alpha: float = 1.0
    tau: float = 0.1
    epsilon: float = 0.05
    iterations: int = 2000
    learning_rate: float = 2e-3
    lam: float = 1.0
    seed: int = 0

    @property
    def frontend(self) -> FrontendConfig:
        return FrontendConfig(self.fft_size, self.hop, self.hann_width)

    @property
    def peaks(self) -> PeakParams:
        return PeakParams(w1=self.w1, theta=self.theta)

    @property
    def loss(self) -> LossParams:
        return LossParams(
            w1=self.w1, w2=self.w2, c_ratio=self.c_ratio, alpha=self.alpha, lam=self.lam
        )

    def attack(self, mode: str, loss: str) -> AttackConfig:
        return AttackConfig(
            epsilon=self.epsilon,
            iterations=self.iterations,
            learning_rate=self.learning_rate,
            loss_params=self.loss,
            mode=mode,
            loss=loss,
            seed=self.seed,
        )


_FIELDS = {f.name: f for f in fields(CliConfig)}
_ALIASES = {"lambda": "lam", "eps": "epsilon"}


def read_config_file(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
        if key not in _FIELDS:
            raise UsageError(f"{path}:{n}: unknown setting {key!r}")
        out[key] = value
    return out


def resolve_config(args: argparse.Namespace) -> CliConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name in _FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    typed = {}
    for name, v in values.items():
        kind = type(_FIELDS[name].default)
        try:
            typed[name] = kind(v)
        except ValueError as exc:
            raise UsageError(f"bad value for {name}: {v!r}") from exc
    cfg = CliConfig(**typed)
    try:  # validate through the owning modules
        cfg.frontend, cfg.peaks, cfg.loss
        AttackConfig(epsilon=cfg.epsilon, iterations=cfg.iterations)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def _settings_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("settings")
    g.add_argument("--config", help="key=value settings file")
    g.add_argument("--sample-rate", dest="sample_rate", type=int)
    g.add_argument("--fft-size", dest="fft_size", type=int)
    g.add_argument("--hop", type=int)
    g.add_argument("--hann-width", dest="hann_width", type=int)
    g.add_argument("--w1", type=int)
    g.add_argument("--w2", type=int)
    g.add_argument("--theta", type=float)
    g.add_argument("--c-ratio", dest="c_ratio", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--tau", type=float)
    g.add_argument("--epsilon", "--eps", dest="epsilon", type=float)
    g.add_argument("--iterations", type=int)
    g.add_argument("--learning-rate", dest="learning_rate", type=float)
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _settings_parser()
    parser = argparse.ArgumentParser(
        prog="fpevade", description="Spectral-peak fingerprinting and evasion attacks."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="fingerprint a WAV file")
    p.add_argument("input")
    p.add_argument("output", help=".afp output path")
    p.add_argument("--json", help="also write a JSON export")

    p = sub.add_parser("ingest", parents=[common], help="build a database from a WAV directory")
    p.add_argument("directory")
    p.add_argument("db")

    p = sub.add_parser("match", parents=[common], help="look up a WAV file in a database")
    p.add_argument("query")
    p.add_argument("db")

    p = sub.add_parser("attack", parents=[common], help="craft an adversarial WAV")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--mode", choices=["default", "remix"], default="default")
    p.add_argument("--loss", choices=["robust", "whitebox"], default="robust")
    p.add_argument("--target", help="target WAV (remix mode)")
    p.add_argument("--report", help="write the attack report JSON here")
    p.add_argument("--db", help="database to match against before and after")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--samples", type=int, default=4096)

    p = sub.add_parser("spectrogram", parents=[common], help="export a feature map")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help=".csv or .pgm")
    return parser


def _load(path, cfg: CliConfig) -> audio_io.AudioSignal:
    return audio_io.load_audio(path, cfg.sample_rate)


def _match_json(db: FingerprintDb, fp, tau: float) -> dict:
    if len(fp) == 0 or len(db) == 0:
        return {"matched": False, "score": 0.0}
    best = db.rank(fp)[0]
    if best.score >= tau:
        return {
            "matched": True,
            "track_id": best.track_id,
            "offset_frames": best.offset_frames,
            "score": best.score,
        }
    return {"matched": False, "score": best.score}


def _open_db(path, cfg: CliConfig) -> FingerprintDb:
    db = load_db(path)
    db.edge_guard = cfg.w1
    return db


def cmd_extract(args, cfg: CliConfig) -> int:
    fp = fingerprint(_load(args.input, cfg), cfg.frontend, cfg.peaks)
    serialize(fp, args.output)
    if args.json:
        to_json(fp, args.json)
    print(len(fp))
    return 0


def cmd_ingest(args, cfg: CliConfig) -> int:
    paths = sorted(Path(args.directory).glob("*.wav"))
    if not paths:
        raise UsageError(f"no .wav files in {args.directory}")

    def work(path):
        return fingerprint(_load(path, cfg), cfg.frontend, cfg.peaks)

    with ThreadPoolExecutor() as pool:
        fps = list(pool.map(work, paths))
    db = FingerprintDb(edge_guard=cfg.w1)
    for path, fp in zip(paths, fps):
        db.ingest(path.stem, fp)
    save_db(db, args.db)
    print(f"ingested {len(db)} tracks into {args.db}")
    return 0


def cmd_match(args, cfg: CliConfig) -> int:
    db = _open_db(args.db, cfg)
    fp = fingerprint(_load(args.query, cfg), cfg.frontend, cfg.peaks)
    print(json.dumps(_match_json(db, fp, cfg.tau)))
    return 0


def cmd_attack(args, cfg: CliConfig) -> int:
    if args.mode == "remix" and not args.target:
        raise UsageError("--mode remix requires --target")
    x = _load(args.input, cfg)
    config = cfg.attack(args.mode, args.loss)
    if args.mode == "remix":
        y = _load(args.target, cfg)
        x_adv, report = remix_attack(x, y, config, cfg.frontend, cfg.peaks)
    else:
        x_adv, report = default_attack(x, config, cfg.frontend, cfg.peaks)
    audio_io.save_audio(x_adv, args.output)
    result = report.to_dict()
    if args.db:
        db = _open_db(args.db, cfg)
        result["match_before"] = _match_json(db, fingerprint(x, cfg.frontend, cfg.peaks), cfg.tau)
        result["match_after"] = _match_json(
            db, fingerprint(x_adv, cfg.frontend, cfg.peaks), cfg.tau
        )
    text = json.dumps(result, indent=2)
    if args.report:
        Path(args.report).write_text(text + "\n")
    print(text)
    return 0


def cmd_gradcheck(args, cfg: CliConfig) -> int:
    rng = np.random.default_rng(cfg.seed)
    worst = dict.fromkeys(LOSS_KINDS, 0.0)
    for trial in range(args.trials):
        x = rng.uniform(-0.5, 0.5, args.samples)
        y = rng.uniform(-0.5, 0.5, args.samples)
        fp_x = fingerprint(x, cfg.frontend, cfg.peaks)
        fp_y = fingerprint(y, cfg.frontend, cfg.peaks)
        for kind in LOSS_KINDS:
            target = fp_y if kind == "remix" else fp_x
            err = finite_diff_check(
                kind, x, target, cfg.frontend, cfg.loss,
                seed=cfg.seed + trial, peak_params=cfg.peaks,
            )
            worst[kind] = max(worst[kind], err)
    ok = True
    for kind, err in worst.items():
        status = "ok" if err < 1e-4 else "FAIL"
        ok &= err < 1e-4
        print(f"{kind:9s} max relative error {err:.3e}  {status}")
    return 0 if ok else 1


def cmd_spectrogram(args, cfg: CliConfig) -> int:
    spec = features(_load(args.input, cfg), cfg.frontend)
    suffix = Path(args.output).suffix.lower()
    if suffix == ".csv":
        to_csv(spec, args.output)
    elif suffix == ".pgm":
        to_pgm(spec, args.output)
    else:
        raise UsageError("spectrogram output must end in .csv or .pgm")
    print(f"{spec.frames} frames x {spec.bins} bins -> {args.output}")
    return 0


COMMANDS = {
    "extract": cmd_extract,
    "ingest": cmd_ingest,
    "match": cmd_match,
    "attack": cmd_attack,
    "gradcheck": cmd_gradcheck,
    "spectrogram": cmd_spectrogram,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, FormatError, ConfigMismatchError, OSError) as exc:
        print(f"fpevade: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report, don't dump a traceback
        log.debug("internal error", exc_info=True)
        print(f"fpevade: internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
