"""Command-line surface: gen-data, make-maps, train, eval, params, verify.

Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 verification
failure. A JSON config file may supply any option; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


def _apply_thread_cap():
    cap = os.environ.get("PHNET_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


_apply_thread_cap()


def _merge_config(args, parser):
    """Overlay config-file values under explicitly passed flags."""
    if not getattr(args, "config", None):
        return args
    with open(args.config) as fh:
        cfg = json.load(fh)
    defaults = {a.dest: a.default for a in parser._actions}
    for key, value in cfg.items():
        key = key.replace("-", "_")
        if not hasattr(args, key):
            raise SystemExit(f"config key {key!r} does not match any option")
        if getattr(args, key) == defaults.get(key):
            setattr(args, key, value)
    return args


def cmd_gen_data(args):
    import numpy as np

    from .data import SyntheticConfig, generate_synthetic

    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        print(f"refusing to write into non-empty {out} (use --force)", file=sys.stderr)
        return 1
    config = SyntheticConfig(
        size=args.size,
        n_samples=args.n_samples,
        fidelity=args.fidelity,
        contrast=args.contrast,
        noise_scale=args.noise,
        distractors=args.distractors,
        class_balance=args.balance,
        seed=args.seed,
    )
    manifest, _ = generate_synthetic(config, out)
    counts = {}
    for r in manifest.records:
        counts[(r.split, r.label)] = counts.get((r.split, r.label), 0) + 1
    print(f"wrote {len(manifest.records)} samples to {out}")
    for (split, label), count in sorted(counts.items()):
        print(f"  {split} class {label}: {count}")
    return 0


def cmd_make_maps(args):
    import numpy as np

    from . import io as phio
    from .data import Manifest, load_corpus
    from .models import AttentionPoolNet
    from .rng import substream
    from .tensor import Tensor
    from .training import TrainConfig

    corpus = Path(args.corpus)
    manifest = Manifest.load(corpus / "manifest.csv")

    if args.policy == "zero_map":
        maps_dir = corpus / "maps"
        maps_dir.mkdir(exist_ok=True)
        for r in manifest.records:
            img = phio.load_image(corpus / r.image)
            zero = np.zeros((1, 1) + img.shape[1:], dtype=np.float32)
            rel = f"maps/{r.id}.pht1"
            phio.save_pht1(corpus / rel, zero)
            r.map = rel
        manifest.save(corpus / "manifest.csv")
        print(f"wrote {len(manifest.records)} zero maps")
        return 0

    # attention_pool policy: train (or load) the producer, then emit maps
    data = load_corpus(manifest, corpus, map_policy="zero_map")
    x_train, y_train, _ = data["train"]
    c_img = x_train.shape[1] - 1
    producer = AttentionPoolNet(c_img, rng=substream(args.seed, "producer-init"))

    if args.producer_checkpoint and not args.train_producer:
        raise SystemExit("loading a producer checkpoint is not implemented; "
                         "pass --train-producer")
    _train_producer(producer, x_train[:, :c_img], y_train, args.epochs, args.seed)

    errors = []
    maps_dir = corpus / "maps"
    maps_dir.mkdir(exist_ok=True)
    for r in manifest.records:
        try:
            img = phio.load_image(corpus / r.image)
        except OSError as exc:
            errors.append(f"{r.id}: {exc}")
            continue
        from .data import preprocess

        x = preprocess(img, target=img.shape[-1]).astype(np.float32)
        maps, _ = producer.attention_map(Tensor(x[None]))
        if args.format == "png":
            rel = f"maps/{r.id}.png"
            phio.save_png_gray(corpus / rel, maps[0])
        else:
            rel = f"maps/{r.id}.pht1"
            phio.save_pht1(corpus / rel, maps[:1].astype(np.float32))
        r.map = rel
    manifest.save(corpus / "manifest.csv")
    if errors:
        for line in errors:
            print(line, file=sys.stderr)
        return 2
    print(f"wrote {len(manifest.records)} attention maps")
    return 0


def _train_producer(producer, images, labels, epochs, seed):
    import numpy as np

    from . import tensor as T
    from .rng import substream
    from .tensor import Tensor
    from .training import Adam

    optimizer = Adam(producer.named_parameters(), lr=1e-3)
    for epoch in range(1, epochs + 1):
        order = substream(seed, "producer-shuffle", epoch).permutation(len(images))
        for start in range(0, len(order), 32):
            idx = order[start : start + 32]
            logits, _ = producer(Tensor(images[idx]))
            loss = T.cross_entropy(logits, labels[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()


def cmd_train(args):
    import numpy as np

    from .data import Manifest, load_corpus
    from .models import ModelSpec, build_model
    from .rng import substream
    from .training import TrainConfig, save_checkpoint, train

    corpus = Path(args.corpus)
    manifest = Manifest.load(corpus / "manifest.csv")
    data = load_corpus(manifest, corpus, map_policy=args.map_policy)
    in_channels = data["train"][0].shape[1]
    spec = ModelSpec(depth=args.depth, n=args.n, in_channels=in_channels,
                     num_classes=args.num_classes)
    model = build_model(spec, rng=substream(args.seed, "init"))
    config = TrainConfig(
        lr=args.lr, weight_decay=args.weight_decay, max_epochs=args.epochs,
        patience=args.patience, batch_size=args.batch_size, seed=args.seed,
        monitor=args.monitor,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(model, data["train"][:2], data["val"][:2], config, out_dir=out)
    save_checkpoint(
        out / "checkpoint.phck", spec, result["best_state"],
        meta={"best_epoch": result["best_epoch"], "best_metric": result["best_metric"],
              "monitor": config.monitor, "map_policy": args.map_policy,
              "seed": args.seed},
    )
    print(f"best {config.monitor} {result['best_metric']:.4f} "
          f"at epoch {result['best_epoch']} -> {out / 'checkpoint.phck'}")
    return 0


def cmd_eval(args):
    from .data import Manifest, load_corpus
    from .metrics import MetricsReport
    from .training import model_from_checkpoint, positive_scores

    corpus = Path(args.corpus)
    manifest = Manifest.load(corpus / "manifest.csv")
    model, spec, meta = model_from_checkpoint(args.checkpoint)
    data = load_corpus(manifest, corpus, map_policy=meta.get("map_policy", args.map_policy))
    inputs, labels, _ = data[args.split]
    scores = positive_scores(model, inputs)
    report = MetricsReport.from_scores(scores, labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.txt", out / "roc.csv")
    print(report.to_text(), end="")
    return 0


def cmd_params(args):
    from .hypercomplex import count_params
    from .models import ModelSpec, build_model

    spec = ModelSpec(depth=args.depth, n=args.n, in_channels=args.in_channels,
                     num_classes=args.num_classes)
    count = count_params(build_model(spec))
    print(f"depth {spec.depth} n={spec.n} in={spec.in_channels}: "
          f"{count} parameters ({count // 10**6}M)")
    return 0


def cmd_verify(args):
    from .verify import run_all

    failures = run_all()
    return 3 if failures else 0


def build_parser():
    parser = argparse.ArgumentParser(prog="phnet")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic lesion corpus")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--n-samples", "--n", dest="n_samples", type=int, default=512)
    p.add_argument("--fidelity", type=float, default=0.9)
    p.add_argument("--contrast", type=float, default=0.5)
    p.add_argument("--noise", type=float, default=0.35)
    p.add_argument("--distractors", type=float, default=3.0)
    p.add_argument("--balance", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data, _parser=p)

    p = sub.add_parser("make-maps", help="emit attention maps for a corpus")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--policy", choices=("attention_pool", "zero_map"),
                   default="attention_pool")
    p.add_argument("--train-producer", action="store_true")
    p.add_argument("--producer-checkpoint")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--format", choices=("pht1", "png"), default="pht1")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_maps, _parser=p)

    p = sub.add_parser("train", help="train a PHResNet on a corpus")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--depth", default="mini")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--num-classes", type=int, default=2)
    p.add_argument("--map-policy", choices=("from_manifest", "zero_map"),
                   default="from_manifest")
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--monitor", choices=("auc", "accuracy"), default="auc")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train, _parser=p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--map-policy", choices=("from_manifest", "zero_map"),
                   default="from_manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval, _parser=p)

    p = sub.add_parser("params", help="parameter accounting for a model spec")
    p.add_argument("--config")
    p.add_argument("--depth", default="18")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--in-channels", type=int, default=None)
    p.add_argument("--num-classes", type=int, default=2)
    p.set_defaults(func=cmd_params, _parser=p)

    p = sub.add_parser("verify", help="run the algebra/gradient/metric self-checks")
    p.add_argument("--config")
    p.set_defaults(func=cmd_verify, _parser=p)

    return parser


def main(argv=None):
    from .errors import ConfigError, InputError, PhnetError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(args, args._parser)
        if args.command == "params" and args.in_channels is None:
            args.in_channels = args.n if args.n > 1 else 2
        return args.func(args)
    except (ConfigError, InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PhnetError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
