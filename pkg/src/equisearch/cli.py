"""Command-line front end: ``equisearch <command> ...``.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 resource cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from . import __version__, dataset_gen, search, tied_mlp, transforms
from ._accel import NUMBA_AVAILABLE, use_backend
from .group_core import DEFAULT_GROUP_CAP, GroupError, GroupTooLargeError
from .orbit_engine import (
    LayerShape,
    OrbitPartition,
    PartitionFormatError,
    build_edge_action,
    orbits_basic,
    orbits_fast,
    refine_merge,
    save_partition,
)

EXIT_OK, EXIT_VERIFY_FAILED, EXIT_CONFIG, EXIT_CAP = 0, 1, 2, 3

GROUP_GRAMMAR = """\
group specs (comma separated where a list is accepted):
  cyc<k>       Z_k acting on each node set of size n by cyclic shift n/k
  flip, swap2  Z_2 reversing each node set (i -> n-1-i)
  rot90        quarter turns of a square image (Z_4)
  hflip, vflip left-right / top-bottom mirror (Z_2)
  htrans<k>    cyclic horizontal shift by k columns
  vtrans<k>    cyclic vertical shift by k rows
  identity     trivial group
  file:<path>  generators from a permutation file (one permutation per line)

exit codes: 0 ok, 1 verification failed, 2 configuration error, 3 group cap exceeded
"""

log = logging.getLogger("equisearch")


class ConfigError(Exception):
    pass


# -- manifests -----------------------------------------------------------------


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path: Path, command: str, config: dict, seed: int | None,
                   inputs: Sequence[str | Path], outputs: Sequence[str | Path]) -> None:
    """One JSON manifest per run; digests cover every input and output file."""
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "inputs": {str(p): sha256_file(p) for p in inputs if p and Path(p).is_file()},
        "outputs": {str(p): sha256_file(p) for p in outputs if p and Path(p).is_file()},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _manifest_path(args, primary: str | Path) -> Path:
    return Path(args.manifest) if args.manifest else Path(f"{primary}.manifest.json")


def _config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func", "manifest", "verbose")}


def _emit(obj: dict, path: str | None = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    print(text)


def _split_specs(text: str) -> list[str]:
    specs = [s.strip() for s in text.split(",") if s.strip()]
    if not specs:
        raise ConfigError("need at least one group spec")
    return specs


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


# -- orbits / bench ------------------------------------------------------------


def _layer_plans(shape: LayerShape, specs: Sequence[str], out_mode: str, cap: int):
    return [tied_mlp.plan_from_spec(s, [shape.n_in, shape.n_out], output=out_mode, cap=cap) for s in specs]


def _run_orbits(shape: LayerShape, specs: Sequence[str], algo: str, out_mode: str, cap: int) -> OrbitPartition:
    plans = _layer_plans(shape, specs, out_mode, cap)
    actions = [build_edge_action(shape, p.boundaries[0], p.boundaries[1]) for p in plans]
    if algo == "fast":
        return orbits_fast(shape, actions)
    if algo == "basic":
        closure = tied_mlp.joint_plan(plans, cap=cap) if len(plans) > 1 else plans[0]
        return orbits_basic(shape, build_edge_action(shape, closure.boundaries[0], closure.boundaries[1]))
    if algo == "merge":
        parts = [orbits_fast(shape, [a]) for a in actions]
        merged = parts[0]
        for p in parts[1:]:
            merged = refine_merge(merged, p)
        return merged
    raise ConfigError(f"unknown algorithm {algo!r}")


def cmd_orbits(args) -> int:
    shape = LayerShape.parse(args.shape)
    part = _run_orbits(shape, _split_specs(args.groups), args.algo, args.out_action, args.cap)
    save_partition(part, args.out, as_json=args.json)
    report = {"shape": str(shape), "groups": args.groups, "algorithm": args.algo,
              "edge_count": part.edge_count, "orbit_count": part.orbit_count}
    if args.count_ops and part.run is not None:
        report["applications"] = part.run.applications
        report["applications_per_edge"] = part.run.applications / part.edge_count
        report["group_orders"] = list(part.run.group_orders)
    _emit(report, args.report)
    write_manifest(_manifest_path(args, args.out), "orbits", _config(args), None, [], [args.out, args.report])
    return EXIT_OK


def cmd_bench(args) -> int:
    shape = LayerShape.parse(args.shape)
    specs = _split_specs(args.groups)
    backends = [b.strip() for b in args.backends.split(",")]
    for b in backends:
        if b not in ("numba", "numpy"):
            raise ConfigError(f"unknown backend {b!r}")
        if b == "numba" and not NUMBA_AVAILABLE:
            raise ConfigError("numba backend requested but numba is not installed")
    rows = []
    for b in backends:
        with use_backend(b):
            for algo in ("fast", "basic"):
                _run_orbits(shape, specs, algo, args.out_action, args.cap)  # warm-up / JIT compile
                for r in range(args.repeats):
                    t0 = time.perf_counter()
                    part = _run_orbits(shape, specs, algo, args.out_action, args.cap)
                    dt = time.perf_counter() - t0
                    apps = part.run.applications
                    rows.append({"backend": b, "algorithm": algo, "repeat": r, "seconds": f"{dt:.6f}",
                                 "applications": apps, "applications_per_edge": apps / part.edge_count,
                                 "orbit_count": part.orbit_count, "edge_count": part.edge_count})
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(out, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            out.close()
    if args.out:
        write_manifest(_manifest_path(args, args.out), "bench", _config(args), None, [], [args.out])
    return EXIT_OK


# -- verify --------------------------------------------------------------------


def cmd_verify(args) -> int:
    net, manifest = tied_mlp.load_checkpoint(args.net)
    widths = list(net.widths)
    # boundary actions recorded by `train` take precedence over the generic defaults
    hyper = manifest.get("hyperparameters") or {}
    hidden = args.hidden_action or hyper.get("hidden_action", "regular")
    output = args.out_action or hyper.get("output_action", "same")
    plans = [tied_mlp.plan_from_spec(s, widths, hidden=hidden, output=output, cap=args.cap)
             for s in _split_specs(args.plan)]
    plan = tied_mlp.joint_plan(plans, cap=args.cap) if len(plans) > 1 else plans[0]
    rep = tied_mlp.check_equivariance(net, plan, tolerance=args.tolerance, probes=args.probes,
                                      exact=args.exact, seed=args.seed)
    out = rep.to_dict()
    out["group_order"] = plan.group.order
    _emit(out, args.report)
    write_manifest(_manifest_path(args, args.report or args.net), "verify", _config(args), args.seed,
                   [args.net], [args.report] if args.report else [])
    return EXIT_OK if rep.passed else EXIT_VERIFY_FAILED


# -- data / train / search -------------------------------------------------------


def _load_data(images: str | None, labels: str | None) -> dataset_gen.LabeledDataset:
    if not images or not labels:
        raise ConfigError("need both an images and a labels IDX file")
    return dataset_gen.read_idx(images, labels)


def cmd_gen_data(args) -> int:
    if args.synthetic:
        grid = transforms.ImageGrid(args.side)
        planted = transforms.resolve(args.planted, grid, cap=args.cap) if args.planted else None
        data = dataset_gen.planted_dataset(args.synthetic, args.side, n_classes=args.classes, group=planted,
                                           noise=args.noise, seed=args.seed)
        inputs = []
    else:
        data = _load_data(args.images, args.labels)
        inputs = [args.images, args.labels]
    if args.subsample:
        data = dataset_gen.subsample(data, args.subsample, args.seed)
    aug = dataset_gen.parse_aug_spec(args.aug, data.grid)
    entries: list = []
    data = dataset_gen.augment(data, aug, args.seed, workers=args.workers, log=entries)
    dataset_gen.write_idx(data, args.out_images, args.out_labels)
    outputs = [args.out_images, args.out_labels]
    if args.log:
        dataset_gen.write_log(entries, aug, args.log)
        outputs.append(args.log)
    write_manifest(_manifest_path(args, args.out_images), "gen-data", _config(args), args.seed, inputs, outputs)
    return EXIT_OK


def cmd_train(args) -> int:
    train_data = _load_data(args.train_images, args.train_labels)
    val_data = _load_data(args.val_images, args.val_labels) if args.val_images else None
    n_classes = args.classes or int(train_data.labels.max()) + 1
    widths = [train_data.side ** 2, *_int_list(args.hidden), n_classes]
    specs = _split_specs(args.groups) if args.groups else []
    plans = [tied_mlp.plan_from_spec(s, widths, hidden="regular", output="trivial", cap=args.cap) for s in specs]
    net = tied_mlp.build_tied_mlp(widths, plans, seed=args.seed)
    cfg = tied_mlp.TrainConfig(lr=args.lr, momentum=args.momentum, batch_size=args.batch_size,
                               epochs=args.epochs, seed=args.seed)
    rep = tied_mlp.train(net, train_data, cfg, val_data)
    hyper = {**asdict(cfg), "widths": widths, "groups": specs, "hidden_action": "regular", "output_action": "trivial"}
    tied_mlp.save_checkpoint(net, args.out, hyperparameters=hyper, seed=args.seed)
    summary = {"train_loss": rep.train_loss, "train_accuracy": rep.train_accuracy,
               "val_accuracy": rep.val_accuracy, "free_parameters": tied_mlp.count_free_parameters(net)}
    _emit(summary, args.report)
    inputs = [args.train_images, args.train_labels, args.val_images, args.val_labels]
    write_manifest(_manifest_path(args, args.out), "train", _config(args), args.seed, inputs, [args.out])
    return EXIT_OK


def _build_oracle(cfg: dict, seed: int, cap: int):
    kind = cfg.get("type", "planted")
    if kind == "planted":
        return search.PlantedOracle(tuple(int(b) for b in cfg["mask"]), cfg.get("acc0", 0.5), cfg.get("step", 0.02))
    if kind == "mlp":
        train_data = _load_data(cfg.get("train_images"), cfg.get("train_labels"))
        val_data = _load_data(cfg.get("val_images"), cfg.get("val_labels"))
        grid = train_data.grid
        menu = [transforms.resolve(s, grid, cap=cap) for s in cfg["groups"]]
        tc = tied_mlp.TrainConfig(lr=cfg.get("lr", 1e-3), momentum=cfg.get("momentum", 0.9),
                                  batch_size=cfg.get("batch_size", 64), epochs=cfg.get("epochs", 4))
        return search.MlpRewardOracle(train_data, val_data, menu, cfg.get("hidden", [400, 400]), tc, seed=seed)
    raise ConfigError(f"unknown oracle type {kind!r}")


def cmd_search(args) -> int:
    cfg = json.loads(Path(args.config).read_text())
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    oracle = _build_oracle(cfg.get("oracle", {}), seed, args.cap)
    scfg = dict(cfg.get("search", {}))
    if "g_size" not in scfg:
        scfg["g_size"] = len(oracle.mask) if isinstance(oracle, search.PlantedOracle) else oracle.g_size
    search_cfg = search.SearchConfig.from_dict(scfg)
    rep = search.run_search(search_cfg, oracle, seed)
    out = args.out or cfg.get("out", "search.jsonl")
    summary = args.summary or cfg.get("summary", str(Path(out).with_suffix(".summary.json")))
    rep.write(out, summary)
    print(json.dumps(rep.summary()["top_states"][:1]))
    write_manifest(_manifest_path(args, out), "search", {**_config(args), "resolved": cfg}, seed,
                   [args.config], [out, summary])
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    p = argparse.ArgumentParser(prog="equisearch", description="Orbit-tied equivariant MLPs and equivariance search.",
                                epilog=GROUP_GRAMMAR, formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_, epilog=GROUP_GRAMMAR, formatter_class=fmt)
        sp.add_argument("--manifest", help="run manifest path (default: <primary output>.manifest.json)")
        sp.add_argument("--cap", type=int, default=DEFAULT_GROUP_CAP, help="largest group order allowed")
        sp.set_defaults(func=func)
        return sp

    sp = add("orbits", cmd_orbits, "compute the edge-orbit partition of one layer")
    sp.add_argument("--shape", required=True, help="layer shape NxM")
    sp.add_argument("--groups", required=True, help="comma-separated group specs")
    sp.add_argument("--algo", choices=("fast", "basic", "merge"), default="fast")
    sp.add_argument("--out", required=True, help="partition file")
    sp.add_argument("--json", action="store_true", help="write the partition as JSON instead of binary")
    sp.add_argument("--count-ops", action="store_true", help="report group-element applications")
    sp.add_argument("--out-action", choices=("same", "trivial", "regular"), default="same",
                    help="how each group acts on the output nodes")
    sp.add_argument("--report", help="also write the JSON report here")

    sp = add("verify", cmd_verify, "check a checkpoint's equivariance to a group")
    sp.add_argument("--net", required=True, help="checkpoint JSON")
    sp.add_argument("--plan", required=True, help="comma-separated group specs (jointly closed)")
    sp.add_argument("--hidden-action", choices=("regular", "same", "trivial"),
                    help="default: as recorded by train, else regular")
    sp.add_argument("--out-action", choices=("same", "trivial", "regular"),
                    help="default: as recorded by train, else same")
    sp.add_argument("--exact", action="store_true", help="exact rational arithmetic")
    sp.add_argument("--tolerance", type=float, default=1e-6)
    sp.add_argument("--probes", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--report")

    sp = add("bench", cmd_bench, "time fast orbits against basic orbits on the closure")
    sp.add_argument("--shape", required=True)
    sp.add_argument("--groups", required=True)
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--backends", default="numba" if NUMBA_AVAILABLE else "numpy",
                    help="comma-separated subset of numba,numpy")
    sp.add_argument("--out-action", choices=("same", "trivial", "regular"), default="same")
    sp.add_argument("--out", help="CSV path (default stdout)")

    sp = add("gen-data", cmd_gen_data, "subsample and augment an IDX dataset, or synthesize one")
    sp.add_argument("--images")
    sp.add_argument("--labels")
    sp.add_argument("--synthetic", type=int, help="generate this many synthetic images instead of reading")
    sp.add_argument("--side", type=int, default=8)
    sp.add_argument("--classes", type=int, default=4)
    sp.add_argument("--noise", type=float, default=0.15)
    sp.add_argument("--planted", help="group the synthetic labels are invariant under")
    sp.add_argument("--subsample", type=int)
    sp.add_argument("--aug", default="identity", help="'+'-joined group specs, or identity")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out-images", required=True)
    sp.add_argument("--out-labels", required=True)
    sp.add_argument("--log", help="per-sample augmentation log (JSONL)")

    sp = add("train", cmd_train, "train one tied MLP and write a checkpoint")
    sp.add_argument("--train-images", required=True)
    sp.add_argument("--train-labels", required=True)
    sp.add_argument("--val-images")
    sp.add_argument("--val-labels")
    sp.add_argument("--hidden", default="400,400", help="hidden widths")
    sp.add_argument("--classes", type=int)
    sp.add_argument("--groups", default="", help="comma-separated group specs to be equivariant to")
    sp.add_argument("--epochs", type=int, default=4)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--momentum", type=float, default=0.9)
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="checkpoint JSON path")
    sp.add_argument("--report")

    sp = add("search", cmd_search, "deep Q-learning search over equivariance configurations")
    sp.add_argument("--config", required=True, help="search config JSON")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="JSONL report (one line per trained model)")
    sp.add_argument("--summary", help="summary JSON")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except GroupTooLargeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (ConfigError, GroupError, PartitionFormatError, dataset_gen.IdxFormatError, ValueError,
            KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
