"""Command-line entry point: ``msgtransfer <command> [--config f] [--seed n] [--out dir]``.

Commands write under the output directory and leave a ``run.json`` status
file behind once the config has parsed, whether or not the command
succeeded. Every command is a pure function of (config, seed).
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from msgtransfer import __version__

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

logger = logging.getLogger("msgtransfer")

COMMANDS = ("gen-data", "train", "sample", "transfer", "ablate", "eval")
OPTIONAL_KEYS = {("guidance", "cfg_scale"): float}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


class InputError(RuntimeError):
    """A command's required input is missing or unreadable."""


# config


def default_config() -> dict:
    text = resources.files("msgtransfer").joinpath("default_config.toml").read_text()
    return tomllib.loads(text)


def _kind(v) -> str:
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, (int, float)):
        return "number"
    if isinstance(v, str):
        return "string"
    if isinstance(v, list):
        return "list"
    if isinstance(v, dict):
        return "table"
    return type(v).__name__


def _merge(base: dict, user: dict, path: tuple = ()) -> dict:
    out = copy.deepcopy(base)
    for key, val in user.items():
        kp = (*path, key)
        name = ".".join(kp)
        if key not in base:
            if kp in OPTIONAL_KEYS:
                if _kind(val) != "number":
                    raise ConfigError(f"{name}: expected a number, got {_kind(val)}")
                out[key] = OPTIONAL_KEYS[kp](val)
                continue
            raise ConfigError(f"unknown config key '{name}'")
        want = _kind(base[key])
        if _kind(val) != want:
            raise ConfigError(f"{name}: expected {want}, got {_kind(val)}")
        if want == "table":
            out[key] = _merge(base[key], val, kp)
        elif want == "number" and isinstance(base[key], float):
            out[key] = float(val)
        elif want == "number" and isinstance(val, float):
            raise ConfigError(f"{name}: expected an integer, got {val!r}")
        else:
            out[key] = val
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults overlaid with the TOML file at ``path`` and ``overrides``."""
    cfg = default_config()
    if path is not None:
        try:
            user = tomllib.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config {path} is not valid TOML: {exc}") from exc
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    from msgtransfer.guidance import MODES

    checks = [
        (cfg["seed"] >= 0, "seed", "must be >= 0"),
        (cfg["schedule"]["n_steps"] >= 1, "schedule.n_steps", "must be >= 1"),
        (0 < cfg["schedule"]["beta_min"] < cfg["schedule"]["beta_max"], "schedule.beta_min", "need 0 < beta_min < beta_max"),
        (len(cfg["data"]["counts"]) == 3 and all(isinstance(c, int) and c >= 1 for c in cfg["data"]["counts"]),
         "data.counts", "need three positive integers"),
        (len(cfg["data"]["shape"]) == 4 and cfg["data"]["shape"][3] == 1, "data.shape", "need [frames, height, width, 1]"),
        (cfg["training"]["steps"] >= 1, "training.steps", "must be >= 1"),
        (0 <= cfg["training"]["p_drop"] < 1, "training.p_drop", "must lie in [0, 1)"),
        (cfg["guidance"]["mode"] in MODES, "guidance.mode", f"must be one of {MODES}"),
        (cfg["guidance"]["w_msg"] >= 0, "guidance.w_msg", "must be >= 0"),
        (0 < cfg["transfer"]["strength"] <= 1, "transfer.strength", "must lie in (0, 1]"),
        (0 < cfg["transfer"]["window_ratio"] <= 1, "transfer.window_ratio", "must lie in (0, 1]"),
        (cfg["transfer"]["noise_mode"] in ("stochastic", "deterministic"), "transfer.noise_mode",
         "must be stochastic or deterministic"),
        (cfg["transfer"]["target"] in ("swap", "gaussian_blob", "square"), "transfer.target",
         "must be swap, gaussian_blob or square"),
        (cfg["sample"]["label"] in ("gaussian_blob", "square", "none"), "sample.label", "must be gaussian_blob, square or none"),
        (bool(cfg["ablate"]["strengths"]), "ablate.strengths", "must not be empty"),
        (bool(cfg["ablate"]["window_ratios"]), "ablate.window_ratios", "must not be empty"),
        (bool(cfg["ablate"]["modes"]) and all(m in MODES for m in cfg["ablate"]["modes"]), "ablate.modes",
         f"need a non-empty subset of {MODES}"),
    ]
    for ok, key, msg in checks:
        if not ok:
            raise ConfigError(f"{key}: {msg}")


# shared plumbing


class Run:
    """Output directory, resolved config and the ``run.json`` record."""

    def __init__(self, command: str, cfg: dict, out: Path, config_path=None):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.seed = int(cfg["seed"])
        self.outputs: list[str] = []
        self.record = dict(command=command, version=__version__, seed=self.seed,
                           config_path=None if config_path is None else str(config_path),
                           out=str(out), status="running", summary="", error=None, outputs=self.outputs,
                           config=cfg)

    def path(self, rel) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.out / p

    def add_output(self, p: Path) -> None:
        try:
            self.outputs.append(str(Path(p).relative_to(self.out)))
        except ValueError:
            self.outputs.append(str(p))

    def write(self, status: str, summary: str = "", error: str | None = None) -> None:
        self.record.update(status=status, summary=summary, error=error)
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.out / "run.json", "w") as fh:
            json.dump(self.record, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _schedule(cfg):
    from msgtransfer.schedule import make_schedule

    s = cfg["schedule"]
    return make_schedule(s["beta_min"], s["beta_max"], s["n_steps"])


def _rng(run: Run, purpose: str):
    from msgtransfer.videocore import SeededRng, derive_seed

    return SeededRng(derive_seed(run.seed, purpose))


def _suite(run: Run):
    from msgtransfer.synthdata import load_suite

    manifest = run.path(run.cfg["data"]["dir"]) / "manifest.csv"
    if not manifest.exists():
        raise InputError(f"no suite manifest at {manifest}; run gen-data first")
    return load_suite(manifest)


def _field(run: Run, s):
    from msgtransfer.scorefield import DenoiserNet, LearnedField

    path = run.path(run.cfg["model"]["path"])
    if not path.exists():
        raise InputError(f"no trained model at {path}; run train first")
    return LearnedField(DenoiserNet.load(path), s)


def _transfer_config(cfg: dict, **override):
    from msgtransfer.motionrep import TransferConfig

    g, t = cfg["guidance"], cfg["transfer"]
    kw = dict(strength=t["strength"], window_ratio=t["window_ratio"], w_msg=g["w_msg"], mode=g["mode"],
              cfg_scale=g.get("cfg_scale"), noise_mode=t["noise_mode"], final_denoise=t["final_denoise"],
              seed=cfg["seed"])
    kw.update(override)
    return TransferConfig(**kw)


def _select(rows, ids: list, limit: int) -> list[int]:
    if ids:
        index = {r["id"]: i for i, r in enumerate(rows)}
        missing = [i for i in ids if i not in index]
        if missing:
            raise InputError(f"clip ids not in the manifest: {missing}")
        return [index[i] for i in ids]
    if limit < 1:
        raise ConfigError("transfer.limit: must be >= 1 when no clips are listed")
    # spread picks over the three motion categories
    by_cat: dict[str, list[int]] = {}
    for i, r in enumerate(rows):
        by_cat.setdefault(r["category"], []).append(i)
    picks, k = [], 0
    while len(picks) < min(limit, len(rows)):
        for cat in sorted(by_cat):
            if k < len(by_cat[cat]) and len(picks) < limit:
                picks.append(by_cat[cat][k])
        k += 1
    return sorted(picks)


def _targets(labels: np.ndarray, target: str) -> np.ndarray:
    from msgtransfer.videocore import category_id

    if target == "swap":
        return 1 - labels
    return np.full(len(labels), category_id(target))


def _write_rows(path: Path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        wr.writeheader()
        wr.writerows(rows)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


# commands


def cmd_gen_data(run: Run) -> str:
    """Render the synthetic clip suite and its manifest."""
    from msgtransfer.synthdata import generate_suite

    d = run.cfg["data"]
    manifest = generate_suite(run.path(d["dir"]), tuple(d["counts"]), _rng(run, "data"), tuple(d["shape"]))
    run.add_output(manifest)
    return f"gen-data: wrote {sum(d['counts'])} clips to {manifest.parent}"


def cmd_train(run: Run) -> str:
    """Train the denoiser on the generated suite."""
    from msgtransfer.scorefield import TrainConfig, train_denoiser

    _, clips, labels, _ = _suite(run)
    tr = run.cfg["training"]
    tc = TrainConfig(steps=tr["steps"], batch_size=tr["batch_size"], learning_rate=tr["learning_rate"],
                     clip_norm=tr["clip_norm"], p_drop=tr["p_drop"], hidden=tuple(run.cfg["model"]["hidden"]),
                     seed=run.seed, log_every=tr["log_every"])
    net, curve = train_denoiser(clips, labels, _schedule(run.cfg), tc, _rng(run, "train"))
    path = run.path(run.cfg["model"]["path"])
    path.parent.mkdir(parents=True, exist_ok=True)
    net.save(path)
    run.add_output(path)
    curve_path = path.with_name(path.stem + "_loss.csv")
    _write_rows(curve_path, ["step", "loss"], [dict(step=i, loss=_fmt(v)) for i, v in enumerate(curve)])
    run.add_output(curve_path)
    head, tail = np.mean(curve[:20]), np.mean(curve[-20:])
    return f"train: {tc.steps} steps, loss {head:.2f} -> {tail:.2f}, saved {path}"


def cmd_sample(run: Run) -> str:
    """Generate from pure noise with classifier-free guidance over every step."""
    from msgtransfer.guidance import GuidanceSpec
    from msgtransfer.sampler import SamplerConfig, sample
    from msgtransfer.videocore import category_id, export_frames, save_tensor

    s = _schedule(run.cfg)
    field = _field(run, s)
    sc, g = run.cfg["sample"], run.cfg["guidance"]
    label = None if sc["label"] == "none" else category_id(sc["label"])
    lam = g.get("cfg_scale", 1.0 + g["w_msg"])
    spec = GuidanceSpec("cfg", lam, list(range(s.n_steps, 0, -1))) if label is not None else GuidanceSpec()
    cfg = SamplerConfig(start_step=s.n_steps, noise_mode=run.cfg["transfer"]["noise_mode"],
                        final_denoise=run.cfg["transfer"]["final_denoise"])
    n = sc["n_samples"]
    if n < 1:
        raise ConfigError("sample.n_samples: must be >= 1")
    out = sample(field, spec, cfg, s, label, _rng(run, "sample"), shape=(n, *run.cfg["data"]["shape"]))
    d = run.path(sc["dir"])
    d.mkdir(parents=True, exist_ok=True)
    for i, v in enumerate(out):
        save_tensor(d / f"sample_{i:03d}.msgt", v)
        run.add_output(d / f"sample_{i:03d}.msgt")
        export_frames(d / f"sample_{i:03d}", v)
    return f"sample: wrote {n} clips of {sc['label']} to {d}"


def cmd_transfer(run: Run) -> str:
    """Extract reference motion and regenerate each clip under its target shape."""
    from msgtransfer.motionrep import extract_motion, transfer
    from msgtransfer.videocore import CATEGORIES, export_frames, save_tensor

    rows, clips, labels, _ = _suite(run)
    s = _schedule(run.cfg)
    field = _field(run, s)
    t = run.cfg["transfer"]
    picks = _select(rows, t["clips"], t["limit"])
    refs, ry = clips[picks], labels[picks]
    ty = _targets(ry, t["target"])
    tc = _transfer_config(run.cfg)
    rng = _rng(run, "transfer")
    d = run.path(t["dir"])
    d.mkdir(parents=True, exist_ok=True)
    motion = None
    if tc.mode in ("msg", "usg"):
        motion = extract_motion(refs, ry, field, s, tc, rng.spawn("extract"))
        motion.save(d / "motion.msgt")
        run.add_output(d / "motion.msgt")
    out = transfer(refs, ry, ty, field, s, tc, rng, motion=motion)
    manifest = []
    for i, v in zip(picks, out):
        cid = rows[i]["id"]
        save_tensor(d / f"{cid}.msgt", v)
        export_frames(d / cid, v)
        run.add_output(d / f"{cid}.msgt")
        manifest.append(dict(id=cid, source=rows[i]["shape_kind"], target=CATEGORIES[int(ty[len(manifest)])],
                             clip_path=f"{cid}.msgt"))
    _write_rows(d / "manifest.csv", ["id", "source", "target", "clip_path"], manifest)
    run.add_output(d / "manifest.csv")
    return f"transfer: {len(picks)} clips, mode {tc.mode}, strength {tc.strength}, written to {d}"


def _score_outputs(rows, picks, clips, trajs, outs, targets, clf) -> list[dict]:
    from msgtransfer.metrics import EmptyFrameError, centroid_track, motion_fidelity, temporal_consistency

    res = []
    for i, v, y in zip(picks, outs, targets):
        try:
            mf = motion_fidelity(trajs[i], centroid_track(v))
        except EmptyFrameError:
            mf = 0.0
        res.append(dict(motion_fidelity=mf, temporal_consistency=temporal_consistency(v),
                        target_ok=int(clf.predict(v) == int(y))))
    return res


def cmd_ablate(run: Run) -> str:
    """Strength x window ratio x mode sweep; failed cells are rows with an error status."""
    from msgtransfer.metrics import TemplateClassifier, frechet_gaussian
    from msgtransfer.motionrep import transfer

    rows, clips, labels, trajs = _suite(run)
    s = _schedule(run.cfg)
    field = _field(run, s)
    a = run.cfg["ablate"]
    picks = _select(rows, [], a["limit"])
    refs, ry = clips[picks], labels[picks]
    ty = _targets(ry, run.cfg["transfer"]["target"])
    clf = TemplateClassifier.fit(clips, labels)
    fields = ["strength", "window_ratio", "mode", "clip_id", "category", "motion_fidelity",
              "temporal_consistency", "target_ok", "frechet", "status"]
    out_rows, failed = [], 0
    for strength in a["strengths"]:
        for ratio in a["window_ratios"]:
            for mode in a["modes"]:
                cell = dict(strength=repr(float(strength)), window_ratio=repr(float(ratio)), mode=mode)
                try:
                    tc = _transfer_config(run.cfg, strength=float(strength), window_ratio=float(ratio), mode=mode)
                    out = transfer(refs, ry, ty, field, s, tc, _rng(run, "ablate"))
                    scores = _score_outputs(rows, picks, clips, trajs, out, ty, clf)
                    fd = frechet_gaussian(list(refs), list(out)) if len(picks) >= 2 else None
                    for i, sc in zip(picks, scores):
                        out_rows.append({**cell, "clip_id": rows[i]["id"], "category": rows[i]["category"],
                                         "motion_fidelity": _fmt(sc["motion_fidelity"]),
                                         "temporal_consistency": _fmt(sc["temporal_consistency"]),
                                         "target_ok": sc["target_ok"], "frechet": _fmt(fd), "status": "ok"})
                except Exception as exc:  # a failed cell is data, the sweep goes on
                    logger.warning("ablation cell %s failed: %s", cell, exc)
                    failed += 1
                    msg = f"error: {type(exc).__name__}: {exc}".replace("\n", " ")
                    for i in picks:
                        out_rows.append({**cell, "clip_id": rows[i]["id"], "category": rows[i]["category"],
                                         "motion_fidelity": "", "temporal_consistency": "", "target_ok": "",
                                         "frechet": "", "status": msg})
    path = run.path(a["csv"])
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_rows(path, fields, out_rows)
    run.add_output(path)
    n_cells = len(a["strengths"]) * len(a["window_ratios"]) * len(a["modes"])
    return f"ablate: {n_cells} cells x {len(picks)} clips, {failed} failed, written to {path}"


def cmd_eval(run: Run) -> str:
    """Score transfer outputs against their references."""
    from msgtransfer.metrics import TemplateClassifier, eval_report
    from msgtransfer.videocore import category_id, load_tensor

    rows, clips, labels, trajs = _suite(run)
    e = run.cfg["eval"]
    d = run.path(e["dir"])
    tman = d / "manifest.csv"
    if not tman.exists():
        raise InputError(f"no transfer manifest at {tman}; run transfer first")
    with open(tman, newline="") as fh:
        produced = list(csv.DictReader(fh))
    index = {r["id"]: i for i, r in enumerate(rows)}
    outputs, targets = {}, {}
    for p in produced:
        f = d / p["clip_path"]
        if p["id"] in index and f.exists():
            outputs[p["id"]] = load_tensor(f)
            targets[p["id"]] = category_id(p["target"])
    chosen = [rows[index[p["id"]]] for p in produced if p["id"] in index]
    inputs = {r["id"]: clips[index[r["id"]]] for r in chosen}
    gt = {r["id"]: trajs[index[r["id"]]] for r in chosen}
    path = run.path(e["csv"])
    path.parent.mkdir(parents=True, exist_ok=True)
    report = eval_report(chosen, inputs, outputs, gt, csv_path=path)
    run.add_output(path)
    clf = TemplateClassifier.fit(clips, labels)
    acc = np.mean([clf.predict(v) == targets[k] for k, v in outputs.items()]) if outputs else float("nan")
    run.record["metrics"] = dict(motion_fidelity=report.motion_fidelity,
                                 temporal_consistency=report.temporal_consistency,
                                 frechet=report.frechet_distance, target_accuracy=float(acc),
                                 warnings=report.warnings)
    return (f"eval: {len(outputs)} clips, motion fidelity {report.motion_fidelity:.3f}, "
            f"temporal consistency {report.temporal_consistency:.3f}, frechet {report.frechet_distance:.4f}, "
            f"target accuracy {acc:.2f}")


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "transfer": cmd_transfer,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msgtransfer", description="Mixture of score guidance on toy videos.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML config overlaying the shipped defaults")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=(HANDLERS[name].__doc__ or name).splitlines()[0])
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # global flags may come before the subcommand too
    args = build_parser().parse_args(_hoist(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {}
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
            return 2
        overrides["seed"] = args.seed
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = args.out if args.out is not None else Path(cfg["output"]["dir"])
    cfg["output"]["dir"] = str(out)
    run = Run(args.command, cfg, out, args.config)
    run.write("running")
    try:
        summary = HANDLERS[args.command](run)
    except (ConfigError, InputError) as exc:
        run.write("failed", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    except Exception as exc:
        run.write("failed", error=f"{type(exc).__name__}: {exc}")
        print(f"error: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    run.write("ok", summary)
    print(summary)
    return 0


def _hoist(argv: list[str]) -> list[str]:
    """Move ``--config/--seed/--out`` given before the subcommand after it."""
    flags = {"--config", "--seed", "--out"}
    front, i = [], 0
    while i < len(argv) and argv[i] not in COMMANDS:
        front.append(argv[i])
        i += 1
    if i == len(argv):
        return argv
    moved, keep, j = [], [], 0
    while j < len(front):
        tok = front[j]
        name = tok.split("=", 1)[0]
        if name in flags:
            moved.append(tok)
            if "=" not in tok and j + 1 < len(front):
                moved.append(front[j + 1])
                j += 1
        else:
            keep.append(tok)
        j += 1
    return keep + [argv[i]] + moved + argv[i + 1:]


if __name__ == "__main__":
    sys.exit(main())
