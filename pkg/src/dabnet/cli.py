"""Command-line entry point: ``dabnet {train,eval,attack,spectra,selftest}``."""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import attacks as A
from . import data as D
from . import netbuild as NB
from . import robustness as R
from . import spectra as S
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .trainer import evaluate, train

log = logging.getLogger("dabnet")

CHECKPOINT_NAME = "model.ckpt"


def build_graph(cfg):
    m = cfg.model
    downsample = "conv" if m.use_strided_conv else "max"
    shape = (1, 28, 28) if cfg.dataset.name == "mnist" else (3, 32, 32)
    graph = NB.build_toy_cnn(shape, 10, downsample=downsample, gap_head=m.gap_head)
    if m.variant == "antialias":
        return NB.rewrite_antialias(graph, m.kernel_size, m.af, "dab", m.alpha_init)
    if m.variant == "fixed_blur":
        return NB.rewrite_antialias(graph, m.kernel_size, m.af, m.fixed_kernel, m.alpha_init)
    if m.af != "relu":
        # swap activations only
        return NB.LayerGraph(graph.input_shape, graph.num_classes, [
            NB.LayerSpec(m.af, {"alpha_init": m.alpha_init} if m.af == "aa_relu" else {"cap": m.alpha_init})
            if s.kind == "relu" else s for s in graph.layers])
    return graph


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _update_summary(out, section, payload, cfg):
    path = out / "summary.json"
    summary = json.loads(path.read_text()) if path.exists() else {}
    summary["config"] = cfg.to_dict()
    summary[section] = payload
    path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")


def _datasets(cfg, data_dir):
    ds = cfg.dataset
    return D.load_dataset(ds.name, data_dir or ds.dir, ds.train_n, ds.test_n, cfg.seed)


def _checkpoint(args, out):
    path = Path(args.checkpoint) if args.checkpoint else out / CHECKPOINT_NAME
    return NB.load_checkpoint(path)[0]


def cmd_train(cfg, args, out):
    train_set, test_set = _datasets(cfg, args.data_dir)
    graph = build_graph(cfg)
    model = NB.make_model(graph, cfg.seed)
    tlog = train(model, train_set, cfg.train, test_set)
    NB.save_checkpoint(model, out / CHECKPOINT_NAME, seed=cfg.seed, epoch=cfg.train.epochs)
    tlog.write_csv(out / "trainlog.csv")
    _write_csv(out / "sigmas.csv", ["depth_level", "sigma"],
               [[i + 1, s] for i, s in enumerate(model.sigmas())])
    payload = {
        "checkpoint": CHECKPOINT_NAME,
        "epochs": cfg.train.epochs,
        "train_accuracy": evaluate(model, train_set),
        "test_accuracy": evaluate(model, test_set),
        "sigmas": model.sigmas(),
        "alphas": model.alphas(),
    }
    _update_summary(out, "train", payload, cfg)
    return payload


def cmd_eval(cfg, args, out):
    _, test_set = _datasets(cfg, args.data_dir)
    model = _checkpoint(args, out)
    ev = cfg.eval
    payload = {"clean_accuracy": evaluate(model, test_set)}
    rows = []
    for name in ev.protocols:
        if name in R.PROTOCOLS:
            kwargs = {"seed": cfg.seed} if name == "diagonal" else {}
            rep = R.PROTOCOLS[name](model, test_set, **kwargs)
            rows.append([rep.protocol, rep.consistency, rep.clean_accuracy, rep.n_images])
            payload[f"consistency_{name}"] = rep.consistency
    if rows:
        _write_csv(out / "consistency.csv", ["protocol", "consistency", "clean_accuracy", "n_images"], rows)
    if "fp" in ev.protocols:
        fps = []
        images = test_set.images[:ev.fp_images]
        for kind in ev.fp_kinds:
            rep = R.flip_probability(model, R.make_sequences(images, kind, ev.fp_frames), kind)
            fps.append([rep.kind, rep.fp, rep.k, rep.v, rep.flips])
            payload[f"fp_{kind}"] = rep.fp
        _write_csv(out / "fp.csv", ["kind", "fp", "k", "v", "flips"], fps)
    if "ce" in ev.protocols:
        rep = R.corruption_error(model, test_set, ev.corruptions, ev.severities, cfg.seed)
        ce_rows = [[kind, sev, err] for kind, errs in rep.errors.items()
                   for sev, err in zip(ev.severities, errs)]
        _write_csv(out / "ce.csv", ["kind", "severity", "error"], ce_rows)
        payload["mce"] = rep.mce
    _update_summary(out, "eval", payload, cfg)
    return payload


def _attack_runs(cfg):
    """(name, callable(model, images, labels)) per configured attack."""
    runs = []
    for name, opts in sorted(cfg.eval.attacks.items()):
        opts = dict(opts or {})
        if name == "first_order":
            budget = A.AttackBudget(opts.get("budget", A.FO_BUDGET), opts.get("steps", A.FO_STEPS),
                                    opts.get("step_size", A.FO_STEP_SIZE))
            runs.append((name, lambda m, x, y, b=budget: A.attack_first_order(m, x, y, b)))
        elif name == "grid_search":
            radius = int(opts.get("radius", A.GRID_RADIUS))
            runs.append((name, lambda m, x, y, r=radius: A.attack_grid_search(m, x, y, r)))
        elif name == "worst_of_k":
            ks = opts.get("k", [10])
            for k in ks if isinstance(ks, list) else [ks]:
                budget = A.AttackBudget(opts.get("budget", A.WORST_BUDGET), k=int(k),
                                        seed=int(opts.get("seed", cfg.seed)))
                runs.append((f"worst_of_{k}", lambda m, x, y, b=budget: A.attack_worst_of_k(m, x, y, b)))
    return runs


def cmd_attack(cfg, args, out):
    _, test_set = _datasets(cfg, args.data_dir)
    model = _checkpoint(args, out)
    sub = test_set.take(np.arange(min(cfg.eval.attack_images, len(test_set))))
    payload = {"clean_accuracy": evaluate(model, sub), "n_images": len(sub)}
    for name, run in _attack_runs(cfg):
        entries = run(model, sub.images, sub.labels)
        _write_csv(out / f"attack_{name}.csv", ["index", "success", "tx", "ty", "queries", "loss"],
                   [[e.index, int(e.success), e.tx, e.ty, e.queries, e.loss] for e in entries])
        payload[f"post_attack_accuracy_{name}"] = A.post_attack_accuracy(entries)
    _update_summary(out, "attack", payload, cfg)
    return payload


def cmd_spectra(cfg, args, out):
    _, test_set = _datasets(cfg, args.data_dir)
    model = _checkpoint(args, out)
    maps = S.energy_maps(model, test_set.images, cfg.eval.spectra_images)
    ratios = []
    for smap in maps:
        d = smap.depth_level
        S.write_pgm(out / f"spectrum_d{d}.pgm", S.spectrum_image(smap), maxval=65535)
        np.savetxt(out / f"spectrum_d{d}.csv", smap.energy, delimiter=",", fmt="%.17g")
        ratios.append([d, S.hf_ratio(smap), smap.n_samples])
    _write_csv(out / "hf_ratio.csv", ["depth_level", "hf_ratio", "n_images"], ratios)
    gallery = S.kernel_gallery(model)
    for d, _, _, img in gallery:
        S.write_pgm(out / f"kernel_d{d}.pgm", img)
    _write_csv(out / "sigmas.csv", ["depth_level", "sigma"], [[d, s] for d, s, _, _ in gallery])
    payload = {"hf_ratio": {str(d): r for d, r, _ in ratios},
               "sigmas": {str(d): s for d, s, _, _ in gallery}}
    _update_summary(out, "spectra", payload, cfg)
    return payload


def cmd_selftest(cfg, args, out):
    from .selftest import run_all
    results = run_all()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}")
    failed = [name for name, ok, _ in results if not ok]
    if failed:
        raise RuntimeError(f"selftest failed: {', '.join(failed)}")
    return {"passed": len(results)}


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "attack": cmd_attack,
    "spectra": cmd_spectra,
    "selftest": cmd_selftest,
}


def make_parser():
    p = argparse.ArgumentParser(prog="dabnet", description="Anti-aliased CNN experiments.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="experiment JSON; defaults apply when omitted")
    p.add_argument("--data-dir", help="dataset directory (overrides dataset.dir)")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--threads", type=int, default=1, help="batch shards evaluated concurrently")
    p.add_argument("--checkpoint", help="checkpoint to evaluate (default <out>/model.ckpt)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    raw = cfg.to_dict()
    if args.seed is not None:
        raw["seed"] = args.seed
        raw["train"]["seed"] = args.seed
    if args.out:
        raw["output_dir"] = args.out
    if args.data_dir:
        raw["dataset"]["dir"] = args.data_dir
    return parse_config(raw)


def _fail(err_type, message, code, out=None, field=None):
    err = {"error": err_type, "message": message}
    if field is not None:
        err["field"] = field
    text = json.dumps(err, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None and out.is_dir():
        (out / "error.json").write_text(text + "\n")
    return code


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        return _fail("ConfigError", str(exc), 2, field=exc.field)
    except OSError as exc:
        return _fail("OSError", str(exc), 2)
    NB.set_threads(args.threads)
    out = Path(cfg.output_dir)
    try:
        if args.command != "selftest":
            out.mkdir(parents=True, exist_ok=True)
        payload = COMMANDS[args.command](cfg, args, out)
    except (D.DataFormatError, NB.CheckpointError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), 3, out)
    except Exception as exc:  # noqa: BLE001 - reported as JSON, not a traceback
        log.debug("command failed", exc_info=True)
        return _fail(type(exc).__name__, str(exc), 1, out)
    print(json.dumps(payload, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
