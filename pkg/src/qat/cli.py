"""Command-line entry point: synth, train, eval, inspect, ablate."""

from __future__ import annotations

import argparse
import itertools
import sys
from pathlib import Path
from typing import Sequence

import yaml

from .autodiff import load_parameters
from .config import ConfigError, RunConfig, dump_config, from_mapping, load_config
from .data import TASKS, McqaExample, ParseError, ValidationError, dataset_words, gen_synthetic, load_dataset, save_dataset
from .encoders import Vocabulary
from .matching import OMEGA1, WordEmbeddings, load_embeddings, random_embeddings
from .model import ModelConfig, QATModel
from .training import (
    METRIC_FIELDS,
    LossConfig,
    evaluate,
    fit,
    load_checkpoint,
    make_state,
    save_checkpoint,
)

EMBEDDING_SEED = 0
ABLATION_FIELDS = ("kg_encoder", "rpb", "drop_mp", "max_hops", "seed", "train_accuracy", "dev_accuracy")


class CliError(Exception):
    """Reported on stderr; the process exits with ``code``."""

    def __init__(self, msg: str, code: int = 2):
        super().__init__(msg)
        self.code = code


# ---------------------------------------------------------------------------
# shared plumbing, also used by the demos and tests
# ---------------------------------------------------------------------------

def graph_shape(data: Sequence[McqaExample]) -> tuple[int, int]:
    """(num_relations, node_dim) shared by every graph in ``data``."""
    graphs = [c.graph for ex in data for c in ex.choices]
    if not graphs:
        raise CliError("dataset is empty")
    # node-less graphs carry no feature width of their own
    shapes = {(g.num_relations, g.feature_dim) for g in graphs if g.nodes}
    if not shapes:
        shapes = {(graphs[0].num_relations, 0)}
    if len(shapes) > 1:
        raise CliError(f"graphs disagree on (relations, feature dim): {sorted(shapes)}")
    return shapes.pop()


def model_config(cfg: RunConfig, num_relations: int, node_dim: int) -> ModelConfig:
    return ModelConfig(
        num_relations=num_relations,
        node_dim=node_dim,
        d_model=cfg.d_model,
        num_layers=cfg.num_layers,
        num_heads=cfg.num_heads,
        max_hops=cfg.max_hops,
        kg_encoder=cfg.kg_encoder,
        rpb=cfg.rpb,
        rpb_orientation=cfg.rpb_orientation,
        token_cap=cfg.token_cap,
        ffn_mult=cfg.ffn_mult,
    )


def word_embeddings(cfg: RunConfig, words) -> WordEmbeddings:
    """The configured embedding file, or hashed Gaussian vectors for ``words``."""
    if cfg.embeddings:
        return load_embeddings(cfg.embeddings)
    return random_embeddings(words, cfg.embedding_dim, seed=EMBEDDING_SEED)


def build_model(cfg: RunConfig, train: Sequence[McqaExample], extra_words=()) -> QATModel:
    r, dim = graph_shape(train)
    vocab = Vocabulary.from_corpus([ex.question for ex in train] + [c.text for ex in train for c in ex.choices])
    emb = word_embeddings(cfg, dataset_words(train) | set(extra_words))
    return QATModel(model_config(cfg, r, dim), vocab, seed=cfg.seed, embeddings=emb)


def new_state(model: QATModel, cfg: RunConfig):
    return make_state(
        model,
        lr=cfg.lr,
        warmup_steps=cfg.warmup_steps,
        rectify=cfg.rectify,
        loss_cfg=LossConfig(cfg.lam, cfg.sigma),
        drop_rate=cfg.drop_mp if cfg.kg_encoder == "metapath" else 0.0,
        seed=cfg.seed,
    )


def run_training(cfg: RunConfig, train: Sequence[McqaExample], dev: Sequence[McqaExample] = (), log=None):
    """Build, train for ``cfg.epochs``; returns ``(state, train_result, dev_result)``."""
    model = build_model(cfg, train, dataset_words(dev) if dev else ())
    state = new_state(model, cfg)
    prepared = [model.prepare_example(ex) for ex in train]
    fit(state, prepared, cfg.epochs, cfg.batch_size, log=log)
    tr = evaluate(model, prepared)
    dv = evaluate(model, list(dev)) if dev else None
    return state, tr, dv


def restore(checkpoint, data: Sequence[McqaExample] = ()):
    """Load a checkpoint, rebuilding embeddings the same way training did."""
    if not Path(checkpoint).is_file():
        raise CliError(f"checkpoint not found: {checkpoint}")
    _, meta = load_parameters(checkpoint)
    run = from_mapping(meta["run_config"])
    words = set(meta.get("embedding_words", ())) | (dataset_words(data) if data else set())
    state, meta = load_checkpoint(checkpoint, embeddings=word_embeddings(run, words))
    if data:
        r, dim = graph_shape(data)
        mc = state.model.config
        if (r, dim) != (mc.num_relations, mc.node_dim):
            raise CliError(
                f"dataset graphs have {r} relations and feature dim {dim}; "
                f"checkpoint expects {mc.num_relations} and {mc.node_dim}"
            )
    return state, run


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _overrides(args) -> dict:
    out = {}
    for flag, key in (
        ("seed", "seed"),
        ("kg_encoder", "kg_encoder"),
        ("drop_mp", "drop_mp"),
        ("max_hops", "max_hops"),
        ("lam", "lam"),
        ("epochs", "epochs"),
        ("d_model", "d_model"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = v
    if getattr(args, "no_rpb", False):
        out["rpb"] = False
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(key, "--set expects KEY=VALUE")
        out[key] = yaml.safe_load(raw)
    return out


def resolve_config(args) -> RunConfig:
    base = load_config(args.config) if args.config else RunConfig()
    return from_mapping({**base.to_dict(), **_overrides(args)})


def _load(path) -> list[McqaExample]:
    if not Path(path).is_file():
        raise CliError(f"dataset not found: {path}")
    try:
        return load_dataset(path)
    except (ParseError, ValidationError) as e:
        raise CliError(f"{path}: {e}") from e


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    train = _load(args.train)
    dev = _load(args.dev) if args.dev else []
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg, train, dataset_words(dev) if dev else ())
    state = new_state(model, cfg)
    prepared = [model.prepare_example(ex) for ex in train]
    with open(out / "metrics.tsv", "w", encoding="utf-8") as log:
        log.write("\t".join(METRIC_FIELDS) + "\n")
        fit(state, prepared, cfg.epochs, cfg.batch_size, log=log)
    extra = {"run_config": cfg.to_dict()}
    if not cfg.embeddings:
        extra["embedding_words"] = sorted(model.embeddings.vectors)
    save_checkpoint(out / "checkpoint.npz", state, extra)
    model.vocab.save(out / "vocab.txt")
    dump_config(cfg, out / "config.yaml")
    msg = f"trained {state.step} steps"
    if cfg.epochs:
        msg += f"; train accuracy {evaluate(model, prepared).accuracy:.4f}"
    if dev:
        msg += f"; dev accuracy {evaluate(model, dev).accuracy:.4f}"
    print(msg)
    return 0


def cmd_eval(args) -> int:
    data = _load(args.data)
    state, run = restore(args.checkpoint, data)
    if args.d_model is not None and args.d_model != state.model.config.d_model:
        raise CliError(f"d_model mismatch: requested {args.d_model}, checkpoint has {state.model.config.d_model}")
    res = evaluate(state.model, data)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name("predictions.tsv")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("index\tanswer\tprediction\tcorrect\tlogits\n")
        for i, (a, p, lg) in enumerate(zip(res.answers, res.predictions, res.logits)):
            fh.write(f"{i}\t{a}\t{p}\t{int(a == p)}\t{','.join(repr(float(x)) for x in lg)}\n")
    print(f"accuracy\t{res.accuracy!r}\t{sum(a == p for a, p in zip(res.answers, res.predictions))}/{len(data)}")
    return 0


def export_choice(fh, result, b: int, omega, num_layers: int):
    """Tokens, bias cells and every (layer, head) attention map for batch row ``b``."""
    labels = result.labels[b]
    n = len(labels)
    n_lm = int(result.n_lm[b])
    fh.write("# tokens\n")
    for i, lab in enumerate(labels):
        fh.write(f"{i}\t{'LM' if i < n_lm else 'KG'}\t{lab}\n")
    fh.write("# omega_cells\n")
    mask = result.masks[b]
    if mask is not None:
        for (r, c), slot in sorted(mask.cells.items()):
            fh.write(f"{r}\t{c}\t{'omega1' if slot == OMEGA1 else 'omega2'}\n")
    for layer in range(num_layers):
        att = result.attention[layer][b]
        for h in range(att.shape[0]):
            if omega is not None:
                w = f"\tomega1={omega.omega1.data[layer, h]!r}\tomega2={omega.omega2.data[layer, h]!r}"
            else:
                w = ""
            fh.write(f"# attention layer={layer} head={h}{w}\n")
            fh.write("\t" + "\t".join(labels) + "\n")
            for i in range(n):
                fh.write(labels[i] + "\t" + "\t".join(repr(float(x)) for x in att[h, i, :n]) + "\n")


def cmd_inspect(args) -> int:
    data = _load(args.data)
    if not 0 <= args.index < len(data):
        raise CliError(f"example index {args.index} out of range [0, {len(data)})")
    state, _ = restore(args.checkpoint, data)
    model = state.model
    ex = model.prepare_example(data[args.index])
    result = model.forward(ex.choices)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for b in range(len(ex.choices)):
        path = out / f"example{args.index}_choice{b}.tsv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# example={args.index} choice={b} answer={ex.answer} logit={float(result.logits.data[b])!r}\n")
            export_choice(fh, result, b, model.omega, model.config.num_layers)
        print(path)
    return 0


def ablation_grid(encoders=("metapath", "node", "rn"), rpb=(True, False), drop=(True, False)):
    return list(itertools.product(encoders, rpb, drop))


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    train = _load(args.train)
    dev = _load(args.dev) if args.dev else []
    hops = args.hops or [cfg.max_hops]
    seeds = args.seeds or [cfg.seed]
    rows = []
    onoff = {"on": True, "off": False}
    grid = ablation_grid(
        args.encoders or ("metapath", "node", "rn"),
        [onoff[v] for v in args.rpb or ("on", "off")],
        [onoff[v] for v in args.drop or ("on", "off")],
    )
    for enc, rpb, drop in grid:
        for k in hops if enc == "metapath" else hops[:1]:
            for seed in seeds:
                run = cfg.updated(kg_encoder=enc, rpb=rpb, drop_mp=cfg.drop_mp if drop else 0.0, max_hops=k, seed=seed)
                _, tr, dv = run_training(run, train, dev)
                row = (enc, rpb, run.drop_mp, k, seed, tr.accuracy, dv.accuracy if dv else float("nan"))
                rows.append(row)
                print("\t".join(map(str, row)), file=sys.stderr, flush=True)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("\t".join(ABLATION_FIELDS) + "\n")
        for row in rows:
            fh.write("\t".join(repr(x) if isinstance(x, float) else str(x) for x in row) + "\n")
    print(out)
    return 0


def cmd_synth(args) -> int:
    data = gen_synthetic(args.task, args.n, seed=args.seed, num_choices=args.choices)
    save_dataset(args.out, data)
    print(f"wrote {len(data)} {args.task} examples to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML file with run settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--kg-encoder", dest="kg_encoder", choices=["metapath", "node", "rn", "none"])
    p.add_argument("--no-rpb", dest="no_rpb", action="store_true", help="disable the cross-modal bias")
    p.add_argument("--drop-mp", dest="drop_mp", type=float)
    p.add_argument("--max-hops", dest="max_hops", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config field")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint + metrics")
    _config_flags(p)
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and per-question predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="predictions file (default: next to the checkpoint)")
    p.add_argument("--d-model", dest="d_model", type=int, help="fail unless the checkpoint has this width")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="export attention maps and bias cells for one question")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("ablate", help="encoder x bias x drop grid")
    _config_flags(p)
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--encoders", nargs="+", choices=["metapath", "node", "rn"])
    p.add_argument("--rpb", nargs="+", choices=["on", "off"], help="bias settings to try (default both)")
    p.add_argument("--drop", nargs="+", choices=["on", "off"], help="Drop-MP settings to try (default both)")
    p.add_argument("--hops", nargs="+", type=int, help="meta-path lengths to try")
    p.add_argument("--seeds", nargs="+", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--choices", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
