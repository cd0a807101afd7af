"""Command-line pipelines: ingest, embed, diffuse, train, tune, evaluate, recommend.

Every command that produces files also writes a ``manifest.json`` capturing
the resolved configuration, input checksums and package version, enough to
re-run it exactly. Outputs are deterministic for a fixed seed; anything
wall-clock related stays out of primary outputs. Exit codes: 0 success,
1 internal failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, embeddings, search, synthetic
from .corpus import DatasetSplit, interaction_quantile, load_split, merge_corpora, save_split
from .diffusion import diffuse
from .errors import DataError
from .ranking import baseline_pop, baseline_random, evaluate, recommend_topk
from .tower import load_checkpoint, save_checkpoint
from .training import (TrainConfig, ablation_variants, apply_zero_shot,
                       evaluate_per_part, project, train, train_joint)

_THREAD_LIMIT = None  # keeps the threadpoolctl controller alive


def _limit_threads(n: int | None) -> None:
    global _THREAD_LIMIT
    if n is None:
        return
    try:
        from threadpoolctl import threadpool_limits
        _THREAD_LIMIT = threadpool_limits(limits=n)
    except ImportError:
        os.environ.setdefault("OMP_NUM_THREADS", str(n))


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _input_checksums(paths: dict[str, Path]) -> dict:
    out = {}
    for name, path in paths.items():
        path = Path(path)
        if path.is_dir():
            out[name] = {f.name: _sha256(f) for f in sorted(path.iterdir()) if f.is_file()}
        else:
            out[name] = _sha256(path)
    return out


def _write_manifest(out_dir: Path, command: str, config: dict,
                    inputs: dict[str, Path]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "inputs": _input_checksums(inputs),
        "version": __version__,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise DataError(f"{path}: config file must hold a JSON object")
    return raw


def _resolve(flag, file_cfg: dict, key: str, env: str | None = None, default=None):
    """Precedence: command-line flag > environment > config file > default."""
    if flag is not None:
        return flag
    if env is not None and os.environ.get(env):
        return os.environ[env]
    if key in file_cfg:
        return file_cfg[key]
    return default


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--out-dim", type=int, default=None, dest="d_out")
    parser.add_argument("--hidden-dim", type=int, default=None, dest="d_hidden")
    parser.add_argument("--layers", type=int, default=None, dest="n_layers")
    parser.add_argument("--neg", type=int, default=None, dest="neg_samples")
    parser.add_argument("--pos", type=int, default=None, dest="pos_k")
    parser.add_argument("--pos-quantile", type=float, default=None)
    parser.add_argument("--tau", type=float, default=None, dest="temperature")
    parser.add_argument("--batch", type=int, default=None, dest="batch_users")
    parser.add_argument("--patience", type=int, default=None)
    parser.add_argument("--max-epochs", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--tower", choices=("one", "two"), default=None, dest="tower_mode")
    parser.add_argument("--eval-every", type=int, default=None)


def _train_config(args, file_cfg: dict) -> TrainConfig:
    overrides = {}
    for f in fields(TrainConfig):
        flag = getattr(args, f.name, None)
        value = _resolve(flag, file_cfg, f.name)
        if value is not None:
            overrides[f.name] = value
    return replace(TrainConfig(), **overrides)


def _load_datasets(paths: list[str]) -> list[DatasetSplit]:
    return [load_split(p) for p in paths]


def cmd_ingest(args) -> int:
    if args.synthetic:
        if not args.out:
            raise DataError("--synthetic requires --out")
        cfg = synthetic.parse_synthetic_spec(args.synthetic)
        split = synthetic.generate_clustered_split(cfg)
        out = Path(args.out)
        save_split(split, out)
        _write_manifest(out, "ingest", {"synthetic": asdict(cfg)}, {})
        source = out
    else:
        if not args.dataset:
            raise DataError("ingest needs --dataset or --synthetic")
        source = Path(args.dataset)
    split = load_split(source)
    train_m = split.train
    quantiles = {q: interaction_quantile(train_m, q) for q in (0.0, 0.25, 0.5, 0.75, 1.0)}
    print(f"dataset: {split.name}")
    print(f"users: {train_m.n_users}  items: {train_m.n_items}")
    print(f"interactions: train={train_m.n_interactions} "
          f"val={split.val.n_interactions} test={split.test.n_interactions}")
    print(f"dropped (no train history): val={split.dropped_val} test={split.dropped_test}")
    print("train degree quantiles: "
          + "  ".join(f"q{int(q * 100)}={v}" for q, v in quantiles.items()))
    return 0


def cmd_embed(args) -> int:
    file_cfg = _load_config_file(args.config)
    split = load_split(args.dataset)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    resolved: dict = {"dataset": str(args.dataset), "out": str(out_path)}
    if args.mock:
        dim = args.dim or int(file_cfg.get("dim", 64))
        seed = args.seed if args.seed is not None else int(file_cfg.get("seed", 0))
        matrix = embeddings.mock_embed(split.catalog, dim=dim, seed=seed)
        resolved.update({"mock": True, "dim": dim, "seed": seed})
        requests_made = 0
    else:
        endpoint = _resolve(args.endpoint, file_cfg, "endpoint", env=embeddings.ENDPOINT_ENV)
        if not endpoint:
            raise DataError("no embeddings endpoint (use --endpoint or "
                            f"{embeddings.ENDPOINT_ENV})")
        api_key = os.environ.get(embeddings.API_KEY_ENV)
        if not api_key:
            raise DataError(f"no API key in {embeddings.API_KEY_ENV}")
        model = _resolve(args.model, file_cfg, "model", default="text-embedding-3-large")
        cache = embeddings.VectorCache(args.cache) if args.cache else None
        counter = {"requests": 0}

        def post(url: str, payload: dict) -> dict:
            counter["requests"] += 1
            return embeddings._post_json(url, payload, api_key)

        matrix = embeddings.fetch_embeddings(
            split.catalog, endpoint=endpoint, model=model,
            batch_size=args.batch_size, cache=cache, post=post,
            concurrency=args.concurrency)
        requests_made = counter["requests"]
        resolved.update({"mock": False, "model": model, "endpoint": endpoint,
                         "batch_size": args.batch_size, "cache": args.cache})
    embeddings.save_matrix(matrix, out_path, ids=split.maps.item_ids)
    _write_manifest(out_path.parent, "embed", resolved, {"dataset": Path(args.dataset)})
    print(f"wrote {out_path} ({matrix.shape[0]} x {matrix.shape[1]}), "
          f"requests: {requests_made}")
    return 0


def cmd_diffuse(args) -> int:
    split = load_split(args.dataset)
    item_emb = embeddings.load_matrix(args.embeddings)
    if item_emb.shape[0] != split.train.n_items:
        raise DataError(f"embedding rows {item_emb.shape[0]} != items "
                        f"{split.train.n_items}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = diffuse(split.train, item_emb, args.layers)
    embeddings.save_matrix(result.user_final, out / "user_final.tge",
                           ids=split.maps.user_ids)
    embeddings.save_matrix(result.item_final, out / "item_final.tge",
                           ids=split.maps.item_ids)
    _write_manifest(out, "diffuse",
                    {"layers": args.layers, "dataset": split.name},
                    {"dataset": Path(args.dataset), "embeddings": Path(args.embeddings)})
    print(f"wrote {out}/user_final.tge and item_final.tge (layers={args.layers})")
    return 0


def _run_one_training(splits, emb_paths, cfg: TrainConfig, out: Path, inputs):
    item_embs = [embeddings.load_matrix(p) for p in emb_paths]
    if len(splits) == 1:
        params, log, diff = train(splits[0], item_embs[0], cfg)
        sources = [splits[0].name]
        user_out, item_out = project(params, diff.user_final, diff.item_final)
        test_recall = evaluate(splits[0], user_out, item_out, k=cfg.eval_k,
                               part="test", model="textgcn-mlp").recall
    else:
        corpus = merge_corpora(splits)
        params, log, diff = train_joint(corpus, np.vstack(item_embs), cfg)
        sources = [s.name for s in splits]
        user_out, item_out = project(params, diff.user_final, diff.item_final)
        reports = evaluate_per_part(corpus, user_out, item_out, cfg.eval_k,
                                    "test", "textgcn-mlp")
        test_recall = float(np.mean([r.recall for r in reports]))
    # the checkpoint manifest doubles as the run manifest
    meta = {"command": "train", "train_config": asdict(cfg), "sources": sources,
            "best_epoch": log.best_epoch, "best_val_recall": log.best_val_recall,
            "resolved_pos_k": log.resolved_pos_k, "stop_reason": log.stop_reason,
            "test_recall": test_recall,
            "inputs": _input_checksums(inputs), "version": __version__}
    save_checkpoint(params, None, meta, out)
    (out / "log.jsonl").write_text(log.to_jsonl(), encoding="utf-8")
    return params, log, test_recall


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    cfg = _train_config(args, file_cfg)
    splits = _load_datasets(args.dataset)
    if len(args.embeddings) != len(args.dataset):
        raise DataError("need one --embeddings file per --dataset")
    out = Path(args.out)
    inputs = {f"dataset{i}": Path(p) for i, p in enumerate(args.dataset)}
    inputs.update({f"embeddings{i}": Path(p) for i, p in enumerate(args.embeddings)})

    if args.ablation:
        rows = []
        for label, variant_cfg in ablation_variants(cfg):
            vdir = out / label.replace("/", "_")
            _, log, test_recall = _run_one_training(splits, args.embeddings,
                                                    variant_cfg, vdir, inputs)
            rows.append((label, log.best_val_recall, test_recall, log.best_epoch))
        table = "variant\tval_recall\ttest_recall\tbest_epoch\n" + "".join(
            f"{label}\t{val:.6f}\t{test:.6f}\t{epoch}\n"
            for label, val, test, epoch in rows)
        (out / "ablation.tsv").write_text(table, encoding="utf-8")
        print(table, end="")
        _write_manifest(out, "train",
                        {"train_config": asdict(cfg), "ablation": True}, inputs)
    else:
        _, log, test_recall = _run_one_training(splits, args.embeddings, cfg,
                                                out, inputs)
        print(f"best epoch {log.best_epoch}: val recall {log.best_val_recall:.6f} "
              f"test recall {test_recall:.6f} ({log.stop_reason})")
    return 0


def cmd_evaluate(args) -> int:
    split = load_split(args.dataset)
    k = args.k
    if args.model == "random":
        report = baseline_random(split, k=k, seed=args.seed or 0, part=args.part)
    elif args.model == "pop":
        report = baseline_pop(split, k=k, part=args.part)
    elif args.model == "textgcn":
        if args.user_emb and args.item_emb:
            user_out = embeddings.load_matrix(args.user_emb)
            item_out = embeddings.load_matrix(args.item_emb)
            report = evaluate(split, user_out, item_out, k=k, part=args.part,
                              model="textgcn")
        elif args.embeddings:
            layers = args.layers if args.layers is not None else 2
            report = apply_zero_shot(None, split,
                                     embeddings.load_matrix(args.embeddings),
                                     layers, k=k, part=args.part)
        else:
            raise DataError("evaluate --model textgcn needs --embeddings or "
                            "--user-emb/--item-emb")
    elif args.model == "mlp":
        if not (args.checkpoint and args.embeddings):
            raise DataError("evaluate --model mlp needs --checkpoint and --embeddings")
        params, _, meta = load_checkpoint(args.checkpoint)
        layers = args.layers
        if layers is None:
            layers = int(meta.get("train_config", {}).get("n_layers", 2))
        report = apply_zero_shot(params, split,
                                 embeddings.load_matrix(args.embeddings),
                                 layers, k=k, part=args.part)
    else:
        raise DataError(f"unknown model tag {args.model!r}")
    line = report.to_json()
    print(line)
    if args.out:
        out = Path(args.out)
        out.write_text(line + "\n", encoding="utf-8")
        inputs = {"dataset": Path(args.dataset)}
        for name in ("embeddings", "user_emb", "item_emb", "checkpoint"):
            value = getattr(args, name, None)
            if value:
                inputs[name] = Path(value)
        _write_manifest(out.parent, "evaluate",
                        {"model": args.model, "k": k, "part": args.part,
                         "seed": args.seed, "layers": args.layers,
                         "out": str(out)}, inputs)
    return 0


def cmd_tune(args) -> int:
    file_cfg = _load_config_file(args.config)
    cfg = _train_config(args, file_cfg)
    splits = _load_datasets(args.dataset)
    emb = [embeddings.load_matrix(p) for p in args.embeddings]
    if len(emb) != len(splits):
        raise DataError("need one --embeddings file per --dataset")
    store = search.TrialStore(args.records)
    known = {f.name for f in fields(TrainConfig)}

    def runner(overrides: dict) -> float:
        trial_cfg = replace(cfg, **{k: v for k, v in overrides.items() if k in known})
        if len(splits) == 1:
            _, log, _ = train(splits[0], emb[0], trial_cfg)
        else:
            _, log, _ = train_joint(merge_corpora(splits), np.vstack(emb), trial_cfg)
        return log.best_val_recall

    # sweep defaults come from the resolved run config, so flags like
    # --out-dim set the baseline for parameters not currently being swept
    space_values = dict(search.BROAD_VALUES)
    defaults = {"lr": cfg.lr, "d_out": cfg.d_out,
                "neg_samples": cfg.neg_samples, "n_layers": cfg.n_layers}
    if args.space:
        space_spec = json.loads(Path(args.space).read_text(encoding="utf-8"))
        space_values = space_spec.get("values", space_values)
        defaults = space_spec.get("defaults", defaults)

    if args.stage == "broad":
        best, records = search.greedy_stage(
            search.SearchSpace(values=space_values, defaults=defaults), runner, store)
        print(json.dumps({"best_per_parameter": best}, sort_keys=True))
    elif args.stage == "grid":
        if not args.space:
            raise DataError("tune --stage grid needs --space with the narrow grid")
        best, records = search.grid_stage(space_values, defaults, runner, store)
        print(json.dumps({"best_config": best}, sort_keys=True))
    elif args.stage == "pos":
        quantiles = [float(q) for q in (args.quantiles or "0.25,0.5,0.75").split(",")]
        best, records = search.pos_quantile_sweep(defaults, runner,
                                                  quantiles=quantiles, store=store)
        print(json.dumps({"best_config": best}, sort_keys=True))
    else:
        raise DataError(f"unknown tune stage {args.stage!r}")
    out_tsv = Path(args.out) if args.out else Path(args.records) / "summary.tsv"
    out_tsv.write_text(search.summary_tsv(store.records()), encoding="utf-8")
    return 0


def cmd_recommend(args) -> int:
    split = load_split(args.dataset)
    item_emb = embeddings.load_matrix(args.embeddings)
    layers = args.layers if args.layers is not None else 2
    diff = diffuse(split.train, item_emb, layers)
    if args.checkpoint:
        params, _, _ = load_checkpoint(args.checkpoint,
                                       expected_d_in=item_emb.shape[1])
        user_out, item_out = project(params, diff.user_final, diff.item_final)
    else:
        user_out, item_out = diff.user_final, diff.item_final

    lines = []
    for ext in args.users.split(","):
        ext = ext.strip()
        if ext not in split.maps.user_to_dense:
            raise DataError(f"unknown user ID {ext!r}")
        u = split.maps.user_to_dense[ext]
        if split.train.user_degrees[u] == 0:
            raise DataError(f"user {ext!r} has no training history")
        ranking = recommend_topk(user_out[u], item_out,
                                 set(split.train.items_of(u).tolist()), args.k, user=u)
        items = "\t".join(split.maps.item_ids[i] for i in ranking.items)
        lines.append(f"{ext}\t{items}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.write_text(text, encoding="utf-8")
        inputs = {"dataset": Path(args.dataset), "embeddings": Path(args.embeddings)}
        if args.checkpoint:
            inputs["checkpoint"] = Path(args.checkpoint)
        _write_manifest(out.parent, "recommend",
                        {"users": args.users, "k": args.k, "layers": layers,
                         "out": str(out)}, inputs)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textgcn",
        description="Graph-diffused text-embedding recommender pipelines")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap internal thread pools")
    sub = parser.add_subparsers(dest="command", required=True)
    original_add_parser = sub.add_parser

    def add_parser(*args, **kwargs):
        p = original_add_parser(*args, **kwargs)
        p.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                       help="cap internal thread pools")
        return p

    sub.add_parser = add_parser

    p = sub.add_parser("ingest", help="validate a dataset directory or generate one")
    p.add_argument("--dataset", default=None)
    p.add_argument("--synthetic", default=None,
                   help="e.g. clusters:2,users:200,items:100,seed:7")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", help="fetch or mock item-title embeddings")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mock", action="store_true")
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--batch-size", type=int, default=embeddings.DEFAULT_BATCH_SIZE)
    p.add_argument("--cache", default=None)
    p.add_argument("--concurrency", type=int, default=1)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("diffuse", help="compute diffused user/item embeddings")
    p.add_argument("--dataset", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diffuse)

    p = sub.add_parser("train", help="train the contrastive MLP head")
    p.add_argument("--dataset", required=True, nargs="+")
    p.add_argument("--embeddings", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--ablation", action="store_true",
                   help="run the four tower/positives variants")
    p.add_argument("--config", default=None)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a model or baseline on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True,
                   choices=("textgcn", "mlp", "random", "pop"))
    p.add_argument("--embeddings", default=None)
    p.add_argument("--user-emb", default=None)
    p.add_argument("--item-emb", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--part", choices=("val", "test"), default="test")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tune", help="hyperparameter search stages")
    p.add_argument("--dataset", required=True, nargs="+")
    p.add_argument("--embeddings", required=True, nargs="+")
    p.add_argument("--stage", required=True, choices=("broad", "grid", "pos"))
    p.add_argument("--records", required=True)
    p.add_argument("--space", default=None, help="JSON file with values/defaults")
    p.add_argument("--quantiles", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    _add_train_flags(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("recommend", help="top-k items for given user IDs")
    p.add_argument("--dataset", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--users", required=True, help="comma-separated external user IDs")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_recommend)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _limit_threads(args.threads)
    try:
        return args.func(args)
    except (DataError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
