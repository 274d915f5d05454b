"""Command-line pipeline: model building, quantization, memory planning,
dataset splitting, enrollment, querying, evaluation, and fine-tuning.

Every subcommand is a thin adapter over one library operation.  Exit
codes: 0 success, 1 usage error, 2 data/format error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import arch, finetune, metrics, ptq, reid, store

CONFIG_DEFAULTS = {
    "alpha": 0.35,
    "n_blocks": 7,
    "embed_dim": 128,
    "margin": 0.2,
    "lr": 0.01,
    "epochs": 100,
    "seed": 0,
    "calib_count": 100,
    "top_k": 5,
    "ratio": 0.8,
}
_INT_KEYS = {"n_blocks", "embed_dim", "epochs", "seed", "calib_count", "top_k"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def load_config(path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = int(val) if key in _INT_KEYS else float(val)
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {val!r}") from None
    return values


def _resolve(args, key):
    """Flag value if given, else config-file value, else documented default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if getattr(args, "config", None):
        cfg = getattr(args, "_config_cache", None)
        if cfg is None:
            cfg = load_config(args.config)
            args._config_cache = cfg
        if key in cfg:
            return cfg[key]
    return CONFIG_DEFAULTS[key]


def _spec_from_args(args) -> arch.ModelSpec:
    return arch.build_spec(_resolve(args, "alpha"), _resolve(args, "n_blocks"),
                           _resolve(args, "embed_dim"))


def _threads(args) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


def _manifest_split(path, split):
    rows = [(p, i) for p, i, s in store.load_manifest(path) if s == split]
    if not rows:
        raise store.StoreError(f"{path}: no rows with split {split!r}")
    return rows


# --- subcommands -------------------------------------------------------------

def cmd_build(args):
    spec = _spec_from_args(args)
    print(f"alpha,{spec.alpha}")
    print(f"n_blocks,{spec.n_blocks}")
    print(f"embed_dim,{spec.embed_dim}")
    print(f"layers,{len(spec.layers)}")
    print(f"params,{arch.param_count(spec)}")
    print(f"fp32_bytes,{store.fp32_file_size(spec)}")
    print(f"int8_bytes,{store.int8_file_size(spec)}")


def cmd_export_spec(args):
    spec = _spec_from_args(args)
    print(f"{'kind':<14}{'in':<12}{'out':<12}{'params':>10}{'act_bytes':>11}")
    for layer in spec.layers:
        ins = "x".join(str(d) for d in layer.in_shape)
        outs = "x".join(str(d) for d in layer.out_shape)
        n_out = layer.out_shape[0] * layer.out_shape[1] * layer.out_shape[2]
        print(f"{layer.kind:<14}{ins:<12}{outs:<12}"
              f"{arch.layer_param_count(layer):>10}{n_out:>11}")


def cmd_gen_random_model(args):
    weights = store.generate_random_model(
        _resolve(args, "alpha"), _resolve(args, "n_blocks"),
        _resolve(args, "embed_dim"), _resolve(args, "seed"))
    store.save_model_f32(args.out, weights)
    print(f"wrote,{args.out}")


def cmd_quantize(args):
    weights = store.load_model_f32(args.model)
    rows = _manifest_split(args.manifest, "train")
    paths = sorted(p for p, _ in rows)
    count = min(_resolve(args, "calib_count"), len(paths))
    import random

    picked = random.Random(_resolve(args, "seed")).sample(paths, count)
    images = [store.load_image(p) for p in picked]
    stats = ptq.calibrate(weights, images, threads=_threads(args))
    qmodel = ptq.quantize_model(weights, stats)
    store.save_model_i8(args.out, qmodel)
    print(f"wrote,{args.out}")
    print(f"calibration_images,{count}")
    print(f"fp32_bytes,{store.fp32_file_size(weights.spec)}")
    print(f"int8_bytes,{store.int8_file_size(weights.spec)}")


def cmd_plan_memory(args):
    if args.model:
        model = store.load_model(args.model)
        spec = model.spec
        bpe = 1 if isinstance(model, store.ModelWeightsI8) else 4
    else:
        spec = _spec_from_args(args)
        bpe = 1 if args.dtype == "int8" else 4
    plan = arch.plan_arena(spec, bpe)
    n_in = spec.input_shape[0] * spec.input_shape[1] * spec.input_shape[2]
    print(f"input,{n_in * bpe}")
    for idx, live in plan.per_layer_bytes:
        print(f"layer,{idx},{spec.layers[idx].kind},{live}")
    print(f"peak,{plan.peak_bytes}")
    print(f"flash,{plan.flash_bytes}")
    sram_ok = plan.peak_bytes <= args.sram_budget
    flash_ok = plan.flash_bytes <= args.flash_budget
    print(f"sram_check,{plan.peak_bytes},{args.sram_budget},{'PASS' if sram_ok else 'FAIL'}")
    print(f"flash_check,{plan.flash_bytes},{args.flash_budget},{'PASS' if flash_ok else 'FAIL'}")
    return 0 if (sram_ok and flash_ok) else 2


def cmd_split_dataset(args):
    root = Path(args.root)
    if not root.is_dir():
        raise store.StoreError(f"{root}: not a directory")
    groups = {}
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(str(f) for f in sub.iterdir() if f.is_file())
        if files:
            groups[sub.name] = files
    rows = store.split_dataset(groups, _resolve(args, "ratio"), _resolve(args, "seed"))
    store.save_manifest(args.out, rows)
    ids = {"train": set(), "gallery": set(), "query": set()}
    for _, ident, split in rows:
        ids[split].add(ident)
    print(f"wrote,{args.out}")
    print(f"train_identities,{len(ids['train'])}")
    print(f"eval_identities,{len(ids['gallery'] | ids['query'])}")


def cmd_embed(args):
    model = store.load_model(args.model)
    vec = reid.embed(model, store.load_image(args.image))
    print(",".join(f"{v:.8g}" for v in vec))


def cmd_enroll(args):
    model = store.load_model(args.model)
    rows = _manifest_split(args.manifest, "gallery")
    labeled = [(ident, store.load_image(p)) for p, ident in rows]
    db = reid.enroll(model, labeled, threads=_threads(args))
    store.save_gallery(args.out, db)
    print(f"wrote,{args.out}")
    print(f"records,{len(db.records)}")


def cmd_query(args):
    model = store.load_model(args.model)
    db = store.load_gallery(args.gallery)
    vec = reid.embed(model, store.load_image(args.image))
    for rank, (ident, idx, dist) in enumerate(
            reid.query(db, vec, _resolve(args, "top_k")), start=1):
        print(f"{rank},{ident},{idx},{dist:.6f}")


def cmd_eval(args):
    model = store.load_model(args.model)
    db = store.load_gallery(args.gallery)
    rows = _manifest_split(args.manifest, "query")
    images = [store.load_image(p) for p, _ in rows]
    embs = reid.embed_many(model, images, threads=_threads(args))
    report = metrics.evaluate(db, [(ident, e) for (_, ident), e in zip(rows, embs)])
    print(f"{'queries':<10}{len(rows)}")
    print(f"{'mAP':<10}{report.mAP:.4f}")
    for k in metrics.CMC_RANKS:
        print(f"{f'Top-{k}':<10}{report.cmc[k]:.4f}")
    print("metric,value")
    print(f"mAP,{report.mAP:.4f}")
    for k in metrics.CMC_RANKS:
        print(f"top{k},{report.cmc[k]:.4f}")


def cmd_finetune(args):
    model = store.load_model_f32(args.model)
    rows = _manifest_split(args.manifest, "train")
    shots = finetune.sample_shots(rows, args.shots, _resolve(args, "seed"))
    labeled = [(ident, store.load_image(p)) for ident, p in shots]
    feats = finetune.extract_features(model, (im for _, im in labeled),
                                      threads=_threads(args))
    cfg = finetune.FinetuneConfig(margin=_resolve(args, "margin"),
                                  lr=_resolve(args, "lr"),
                                  epochs=_resolve(args, "epochs"),
                                  seed=_resolve(args, "seed"))
    head = finetune.finetune_head(model, labeled, cfg, features=feats)
    store.save_model_f32(args.out, finetune.apply_head(model, head))
    print(f"wrote,{args.out}")
    print(f"shots,{len(labeled)}")


# --- wiring ------------------------------------------------------------------

def _add_spec_flags(p):
    p.add_argument("--alpha", type=float, help="width multiplier in (0, 1]")
    p.add_argument("--n-blocks", dest="n_blocks", type=int,
                   help="standard bottleneck blocks to keep (1..16)")
    p.add_argument("--embed-dim", dest="embed_dim", type=int, help="embedding size")


def build_parser() -> _Parser:
    top = _Parser(prog="tinyreid", description=__doc__)
    top.add_argument("--config", help="key=value config file; flags take precedence")
    top.add_argument("--threads", type=int, help="worker threads for image batches")
    # the same flags are accepted after the subcommand; SUPPRESS keeps an
    # unset subcommand flag from clobbering a value given before it
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_parser(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add_parser("build", help="summarize a model configuration")
    _add_spec_flags(p)
    p.set_defaults(func=cmd_build)

    p = add_parser("export-spec", help="print the per-layer table")
    _add_spec_flags(p)
    p.set_defaults(func=cmd_export_spec)

    p = add_parser("gen-random-model", help="write a random-weight float model")
    _add_spec_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_random_model)

    p = add_parser("quantize", help="calibrate and convert to int8")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--calib-count", dest="calib_count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantize)

    p = add_parser("plan-memory", help="activation arena and flash planning")
    p.add_argument("--model", help="model file; overrides the spec flags")
    _add_spec_flags(p)
    p.add_argument("--dtype", choices=("int8", "f32"), default="int8")
    p.add_argument("--sram-budget", type=int, default=262144)
    p.add_argument("--flash-budget", type=int, default=983040)
    p.set_defaults(func=cmd_plan_memory)

    p = add_parser("split-dataset", help="identity-disjoint train/gallery/query split")
    p.add_argument("--root", required=True, help="directory of per-identity subdirectories")
    p.add_argument("--ratio", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split_dataset)

    p = add_parser("embed", help="print the embedding of one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_embed)

    p = add_parser("enroll", help="build a gallery from manifest gallery rows")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enroll)

    p = add_parser("query", help="rank gallery records for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.set_defaults(func=cmd_query)

    p = add_parser("eval", help="mAP / CMC over manifest query rows")
    p.add_argument("--model", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_eval)

    p = add_parser("finetune", help="few-shot adaptation of the embedding layer")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--shots", type=int, default=3)
    p.add_argument("--margin", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    return top


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        rc = args.func(args)
        return int(rc or 0)
    except UsageError as e:
        print(f"tinyreid: {e}", file=sys.stderr)
        return 1
    except (store.StoreError, ValueError, OSError) as e:
        print(f"tinyreid: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
