"""Command-line entry point: ``vesseltwin <command> [--config run.json] [--flag value ...]``.

Commands: synth, graph, hemo, label, pretrain, finetune, eval, validate,
export-ply and pipeline (synth -> label -> pretrain -> finetune -> eval).
Exit codes: 0 success, 1 validation or input failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import a3m, config, hemo1d, metrics, twinio, vgraph
from .config import ConfigError, RunConfig
from .geometry import MMHG, DigitalTwin, GeometryError
from .nnet import model as M
from .nnet import train as T

log = logging.getLogger("vesseltwin")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class InputError(RuntimeError):
    pass


# helpers ---------------------------------------------------------------------

_WORKER_STATE: dict = {}


def _init_worker(state: dict) -> None:
    _WORKER_STATE.clear()
    _WORKER_STATE.update(state)


def parallel_map(fn, items, jobs: int, state: dict | None = None) -> list:
    """Ordered map; results do not depend on ``jobs``."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        _init_worker(state or {})
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(state or {},)) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def twin_paths(specs) -> list[Path]:
    """Files as given; directories expand to their sorted twin files."""
    out = []
    for s in specs:
        p = Path(s)
        if p.is_dir():
            out.extend(sorted(p.glob("*.json")))
        else:
            out.append(p)
    return out


def load_twins(specs) -> list[DigitalTwin]:
    paths = twin_paths(specs)
    if not paths:
        raise InputError("no twin files given (use --twins)")
    twins = []
    for p in paths:
        try:
            twins.append(twinio.load_twin(p))
        except (OSError, twinio.TwinFormatError, GeometryError) as exc:
            raise InputError(f"cannot read twin {p}: {exc}") from exc
    return twins


def twin_id(t: DigitalTwin, fallback: str = "twin") -> str:
    return str(t.meta.get("id", fallback))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def out_dir(cfg: RunConfig) -> Path:
    d = Path(cfg.out)
    d.mkdir(parents=True, exist_ok=True)
    config.save(cfg, d / "config.json")
    return d


def _fmt(x) -> str:
    return repr(float(x))


# synth -------------------------------------------------------------------------

def donor_twins(cfg: RunConfig) -> tuple[list[DigitalTwin], list[str]]:
    if cfg.donors:
        paths = twin_paths(cfg.donors)
        if not paths:
            raise InputError(f"no donor twin files found in {cfg.donors}")
        donors = []
        for p in paths:
            try:
                donors.append(twinio.load_twin(p))
            except (OSError, twinio.TwinFormatError, GeometryError) as exc:
                raise InputError(f"cannot read donor {p}: {exc}") from exc
        return donors, [str(p) for p in paths]
    if cfg.donor_phantoms < 1:
        raise InputError("no donors: give --donors or --donor-phantoms >= 1")
    seeds = [cfg.seed + config.PHANTOM_SEED_OFFSET + j for j in range(cfg.donor_phantoms)]
    return [a3m.phantom_twin(s) for s in seeds], [f"phantom:{s}" for s in seeds]


def _synth_one(item: a3m.CorpusItem) -> DigitalTwin:
    donors = _WORKER_STATE["donors"]
    t = a3m.synthesize(donors[item.centerline_donor], donors[item.radius_donor], item.params)
    t.meta["id"] = f"synth-{item.seed}"
    return t


def synth_corpus(cfg: RunConfig, donors, donor_names, count: int, base_seed: int, dest: Path) -> list[DigitalTwin]:
    """Generate, write and index ``count`` twins with seeds ``base_seed + i``."""
    items = a3m.plan_corpus(len(donors), count, base_seed, cfg.target_n, cfg.target_k, cfg.ranges())
    twins = parallel_map(_synth_one, items, cfg.jobs, {"donors": donors})
    tdir = dest / "twins"
    tdir.mkdir(parents=True, exist_ok=True)
    for t in twins:
        twinio.save_twin(t, tdir / f"{twin_id(t)}.json")
    with open(dest / "manifest.jsonl", "w") as fh:
        for it in items:
            rec = {
                "id": f"synth-{it.seed}",
                "seed": it.seed,
                "base_seed": base_seed,
                "centerline_donor": donor_names[it.centerline_donor],
                "radius_donor": donor_names[it.radius_donor],
                "params": it.params.to_dict(),
            }
            fh.write(json.dumps(rec) + "\n")
    return twins


def cmd_synth(cfg: RunConfig) -> int:
    out = out_dir(cfg)
    donors, names = donor_twins(cfg)
    twins = synth_corpus(cfg, donors, names, cfg.count, cfg.seed, out)
    print(f"wrote {len(twins)} twins to {out / 'twins'}")
    return EXIT_OK


# graph -------------------------------------------------------------------------

def cmd_graph(cfg: RunConfig) -> int:
    out = out_dir(cfg)
    gdir = out / "graphs"
    gdir.mkdir(exist_ok=True)
    for t in load_twins(cfg.twins):
        vgraph.save_graph(vgraph.build_graph(t), gdir / f"{twin_id(t)}.json")
    print(f"wrote graphs to {gdir}")
    return EXIT_OK


# hemo --------------------------------------------------------------------------

HEMO_COLUMNS = ["index", "s_cm", "area_cm2", "q", "p", "p_mmhg", "ffr", "segment"]
SUMMARY_COLUMNS = ["id", "status", "delta_p_total", "delta_p_total_mmhg", "min_ffr", "lesion_count",
                   "lesion_segments"]


def mask_runs(mask) -> int:
    m = np.asarray(mask, dtype=int)
    return int(m[0] + np.sum(np.diff(m) == 1)) if len(m) else 0


def hemo_twin(t: DigitalTwin, q: float, p_in: float, c: hemo1d.HemoConstants):
    """(profile rows, summary row) for one twin; failures become a status string."""
    tid = twin_id(t)
    lesions = mask_runs(t.lesion_mask)
    try:
        geom = hemo1d.geometry_1d(t)
        prof = hemo1d.pressure_profile_1d(geom, q, p_in, c)
    except hemo1d.NonPhysiologicalError as exc:
        return [], [tid, f"non-physiological: {exc}", "", "", "", lesions, ""]
    except (GeometryError, ValueError) as exc:
        return [], [tid, f"error: {exc}", "", "", "", lesions, ""]
    kinds = np.empty(len(prof.p), dtype=object)
    for seg in geom.segments:
        kinds[seg.start:seg.end] = seg.kind
    rows = [
        [i, _fmt(prof.s[i]), _fmt(prof.area[i]), _fmt(prof.q[i]), _fmt(prof.p[i]), _fmt(prof.p[i] / MMHG),
         _fmt(prof.ffr[i]), kinds[i]]
        for i in range(len(prof.p))
    ]
    drop = prof.p[0] - prof.p[-1]
    n_les = sum(1 for s in geom.segments if s.kind == hemo1d.LESION)
    return rows, [tid, "ok", _fmt(drop), _fmt(drop / MMHG), _fmt(prof.ffr.min()), lesions, n_les]


def _hemo_one(t):
    s = _WORKER_STATE
    return hemo_twin(t, s["q"], s["p_in"], s["c"])


def cmd_hemo(cfg: RunConfig) -> int:
    out = out_dir(cfg)
    hdir = out / "hemo"
    hdir.mkdir(exist_ok=True)
    twins = load_twins(cfg.twins)
    state = {"q": cfg.q, "p_in": cfg.p_in_mmhg * MMHG, "c": cfg.constants()}
    results = parallel_map(_hemo_one, twins, cfg.jobs, state)
    summary = []
    for t, (rows, srow) in zip(twins, results):
        if rows:
            write_csv(hdir / f"{twin_id(t)}.csv", HEMO_COLUMNS, rows)
        else:
            log.warning("%s: %s", srow[0], srow[1])
        summary.append(srow)
    write_csv(out / "hemo_summary.csv", SUMMARY_COLUMNS, summary)
    bad = sum(1 for r in summary if r[1] != "ok")
    print(f"hemo: {len(summary)} twins, {bad} flagged; summary in {out / 'hemo_summary.csv'}")
    return EXIT_OK


# labels ------------------------------------------------------------------------

def label_flow(cfg: RunConfig, t: DigitalTwin, index: int) -> float:
    key = int(t.meta.get("seed", index))
    rng = np.random.default_rng([cfg.seed, config.LABEL_STREAM, key])
    lo, hi = cfg.label_q
    return float(rng.uniform(lo, hi))


def oracle_label(t: DigitalTwin, q: float, cfg: RunConfig) -> tuple[int, float]:
    """(label, outlet FFR) from the 1D model; a non-physiological collapse counts as an event."""
    try:
        prof = hemo1d.pressure_profile(t, None, q, cfg.p_in_mmhg * MMHG, cfg.constants())
    except hemo1d.NonPhysiologicalError:
        return 1, 0.0
    ffr = float(prof.ffr[-1])
    return int(ffr <= cfg.ffr_threshold), ffr


def make_labels(cfg: RunConfig, twins) -> list[list]:
    rows = []
    for i, t in enumerate(twins):
        q = label_flow(cfg, t, i)
        label, ffr = oracle_label(t, q, cfg)
        rows.append([twin_id(t), label, _fmt(ffr), _fmt(q)])
    return rows


LABEL_COLUMNS = ["id", "label", "ffr_outlet", "q"]


def cmd_label(cfg: RunConfig) -> int:
    out = out_dir(cfg)
    rows = make_labels(cfg, load_twins(cfg.twins))
    write_csv(out / "labels.csv", LABEL_COLUMNS, rows)
    print(f"labels: {sum(r[1] for r in rows)} events in {len(rows)} twins")
    return EXIT_OK


def read_labels(path) -> dict[str, int]:
    rows = read_csv(path)
    try:
        return {r["id"]: int(r["label"]) for r in rows}
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path}: need columns id,label with 0/1 labels") from exc


# pretrain ----------------------------------------------------------------------

def _prepare_one(t):
    return T.prepare_twin(t, _WORKER_STATE["enc"])


def prepare(cfg: RunConfig, twins) -> list[T.PreparedTwin]:
    return parallel_map(_prepare_one, twins, cfg.jobs, {"enc": cfg.encoder()})


def load_encoder(cfg: RunConfig):
    try:
        _, params, classifier = T.load_checkpoint(cfg.checkpoint, cfg.encoder())
    except OSError as exc:
        raise InputError(f"cannot read checkpoint {cfg.checkpoint}: {exc}") from exc
    except (json.JSONDecodeError, KeyError) as exc:
        raise InputError(f"{cfg.checkpoint}: malformed checkpoint: {exc}") from exc
    return params, classifier


def run_pretrain(cfg: RunConfig, twins, out: Path) -> dict:
    enc, lcfg = cfg.encoder(), cfg.loss()
    prepared = prepare(cfg, twins)
    params0 = load_encoder(cfg)[0] if cfg.checkpoint else M.init_params(enc)
    initial = T.evaluate_loss(prepared, params0, enc, lcfg)
    params, records = T.pretrain(prepared, enc, lcfg, cfg.optim(), params0)
    final = T.evaluate_loss(prepared, params, enc, lcfg)
    summary = {"twins": len(prepared), "initial_loss": initial, "final_loss": final,
               "ratio": final / initial if initial > 0 else float("nan"), "steps": len(records)}
    T.save_checkpoint(out / "checkpoint.json", enc, params, extra={"pretrain": summary})
    T.write_log(records, out / "pretrain_log.jsonl")
    (out / "pretrain_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    return summary


def cmd_pretrain(cfg: RunConfig) -> int:
    out = out_dir(cfg)
    s = run_pretrain(cfg, load_twins(cfg.twins), out)
    print(f"pretrain: loss {s['initial_loss']:.6g} -> {s['final_loss']:.6g} (ratio {s['ratio']:.4f})")
    return EXIT_OK


# finetune / eval -------------------------------------------------------------

PRED_COLUMNS = ["id", "label", "score"]


def _labels_for(cfg: RunConfig, twins) -> list[int]:
    if cfg.labels:
        table = read_labels(cfg.labels)
        missing = [twin_id(t) for t in twins if twin_id(t) not in table]
        if missing:
            raise InputError(f"{cfg.labels}: no label for {', '.join(missing[:5])}")
        return [table[twin_id(t)] for t in twins]
    return [r[1] for r in make_labels(cfg, twins)]


def run_finetune(cfg: RunConfig, twins, labels, params, out: Path):
    enc = cfg.encoder()
    prepared = prepare(cfg, twins)
    cp, prob, history = T.finetune(prepared, labels, params, enc, cfg.finetune())
    T.save_checkpoint(out / "classifier.json", enc, params, classifier=cp)
    rows = [[twin_id(t), y, _fmt(p)] for t, y, p in zip(twins, labels, prob)]
    write_csv(out / "finetune_predictions.csv", PRED_COLUMNS, rows)
    T.write_log([{"epoch": i, "bce": h} for i, h in enumerate(history)], out / "finetune_log.jsonl")
    return cp, prob


def cmd_finetune(cfg: RunConfig) -> int:
    if not cfg.checkpoint:
        raise ConfigError("finetune needs --checkpoint")
    out = out_dir(cfg)
    twins = load_twins(cfg.twins)
    labels = _labels_for(cfg, twins)
    params, _ = load_encoder(cfg)
    _, prob = run_finetune(cfg, twins, labels, params, out)
    acc = float(np.mean((prob >= cfg.threshold) == np.asarray(labels)))
    print(f"finetune: {len(twins)} twins, training accuracy {acc:.3f}")
    return EXIT_OK


def write_metrics(cfg: RunConfig, e: metrics.EvalSet, out: Path) -> dict:
    s = metrics.summary(e, threshold=cfg.threshold)
    keys = ["n", "prevalence", "auroc", "auprc", "accuracy", "f1", "tp", "fp", "tn", "fn"]
    write_csv(out / "metrics.csv", keys, [[s[k] for k in keys]])
    if 0 < e.labels.sum() < e.n:
        metrics.write_roc_csv(e, out / "roc.csv")
    if e.labels.sum() > 0:
        metrics.write_pr_csv(e, out / "pr.csv")
    metrics.write_decision_csv(e, out / "decision_curve.csv")
    return s


def read_predictions(path) -> tuple[list[str], metrics.EvalSet]:
    rows = read_csv(path)
    try:
        ids = [r["id"] for r in rows]
        e = metrics.EvalSet([float(r["score"]) for r in rows], [int(r["label"]) for r in rows])
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path}: need columns id,label,score: {exc}") from exc
    return ids, e


def cmd_eval(cfg: RunConfig) -> int:
    out = out_dir(cfg)
    if cfg.predictions:
        _, e = read_predictions(cfg.predictions)
    else:
        if not cfg.checkpoint:
            raise ConfigError("eval needs --predictions or --checkpoint with --twins")
        params, cp = load_encoder(cfg)
        if cp is None:
            raise InputError(f"{cfg.checkpoint}: no classifier in checkpoint (run finetune first)")
        twins = load_twins(cfg.twins)
        labels = _labels_for(cfg, twins)
        prob = T.predict_proba(prepare(cfg, twins), params, cp, cfg.encoder())
        write_csv(out / "predictions.csv", PRED_COLUMNS,
                  [[twin_id(t), y, _fmt(p)] for t, y, p in zip(twins, labels, prob)])
        e = metrics.EvalSet(prob, labels)
    s = write_metrics(cfg, e, out)
    print("eval: " + ", ".join(f"{k}={s[k]:.4g}" for k in ("auroc", "auprc", "accuracy", "f1")))
    return EXIT_OK


# validate / export ---------------------------------------------------------------

def cmd_validate(cfg: RunConfig) -> int:
    paths = twin_paths(cfg.twins)
    if not paths:
        raise ConfigError("validate needs twin files")
    results = parallel_map(twinio.validate_file, paths, cfg.jobs)
    failed = 0
    for p, problems in zip(paths, results):
        if problems:
            failed += 1
            print(f"FAIL {p}: " + "; ".join(problems))
        else:
            print(f"PASS {p}")
    print(f"{len(paths) - failed}/{len(paths)} passed")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_export_ply(cfg: RunConfig, scalar: str = "area") -> int:
    out = out_dir(cfg)
    pdir = out / "ply"
    pdir.mkdir(exist_ok=True)
    for t in load_twins(cfg.twins):
        values = None
        if scalar in ("pressure", "ffr"):
            prof = hemo1d.pressure_profile(t, None, cfg.q, cfg.p_in_mmhg * MMHG, cfg.constants())
            values = prof.p / MMHG if scalar == "pressure" else prof.ffr
        twinio.export_ply(t, pdir / f"{twin_id(t)}.ply", values, "pressure_mmhg" if scalar == "pressure" else scalar)
    print(f"wrote PLY files to {pdir}")
    return EXIT_OK


# pipeline ------------------------------------------------------------------------

def cmd_pipeline(cfg: RunConfig) -> int:
    """synth -> label -> pretrain -> finetune -> eval, all from one config."""
    out = out_dir(cfg)
    donors, names = donor_twins(cfg)
    pre = synth_corpus(cfg, donors, names, cfg.count, cfg.seed, out / "pretrain")
    ft = synth_corpus(cfg, donors, names, cfg.finetune_count, cfg.seed + config.FINETUNE_SEED_OFFSET, out / "finetune")
    ev = synth_corpus(cfg, donors, names, cfg.eval_count, cfg.seed + config.EVAL_SEED_OFFSET, out / "eval")
    ft_rows, ev_rows = make_labels(cfg, ft), make_labels(cfg, ev)
    write_csv(out / "finetune" / "labels.csv", LABEL_COLUMNS, ft_rows)
    write_csv(out / "eval" / "labels.csv", LABEL_COLUMNS, ev_rows)

    summary = run_pretrain(cfg, pre, out)
    _, params, _ = T.load_checkpoint(out / "checkpoint.json")
    cp, _ = run_finetune(cfg, ft, [r[1] for r in ft_rows], params, out)
    ev_labels = [r[1] for r in ev_rows]
    prob = T.predict_proba(prepare(cfg, ev), params, cp, cfg.encoder())
    write_csv(out / "predictions.csv", PRED_COLUMNS, [[r[0], r[1], _fmt(p)] for r, p in zip(ev_rows, prob)])
    s = write_metrics(cfg, metrics.EvalSet(prob, ev_labels), out)
    print(f"pipeline: pretrain loss ratio {summary['ratio']:.4f}; eval " +
          ", ".join(f"{k}={s[k]:.4g}" for k in ("auroc", "auprc", "accuracy", "f1")))
    return EXIT_OK


COMMANDS = {
    "synth": (cmd_synth, "generate synthetic twins from donors"),
    "graph": (cmd_graph, "build vascular graphs"),
    "hemo": (cmd_hemo, "1D pressure/FFR profiles"),
    "label": (cmd_label, "event labels from outlet FFR"),
    "pretrain": (cmd_pretrain, "physics-informed pretraining"),
    "finetune": (cmd_finetune, "train the classifier on a frozen encoder"),
    "eval": (cmd_eval, "classification metrics and curves"),
    "validate": (cmd_validate, "check twin files against all invariants"),
    "export-ply": (cmd_export_ply, "write boundary point clouds as PLY"),
    "pipeline": (cmd_pipeline, "synth, label, pretrain, finetune and eval in one run"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vesseltwin", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        config.add_arguments(p)
        if name in ("validate", "export-ply", "graph", "hemo", "label"):
            p.add_argument("paths", nargs="*", help="twin files or directories (added to --twins)")
        if name == "export-ply":
            p.add_argument("--scalar", choices=("area", "pressure", "ffr"), default="area")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        cfg = config.resolve(args)
        if getattr(args, "paths", None):
            cfg.twins = list(cfg.twins) + list(args.paths)
        fn = COMMANDS[args.command][0]
        return fn(cfg, args.scalar) if args.command == "export-ply" else fn(cfg)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, T.TrainingError, metrics.MetricsError, hemo1d.NonPhysiologicalError, GeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
