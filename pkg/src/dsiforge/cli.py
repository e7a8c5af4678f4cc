"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 grounding cap
exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import autodiff as ad
from .corpus import export_corpus, import_corpus
from .datagen import builtin_multiwoz_like_config, generate_corpus, load_generator_config
from .errors import ConfigError, GroundingCapError, NumericError
from .metrics import linear_probe, structure_to_dot
from .pipeline import RunConfig, evaluate, predict_states, probe_features, run_suite, train
from .rng import stream


def _cmd_generate(args) -> int:
    if args.config:
        cfg = load_generator_config(args.config)
    else:
        cfg = builtin_multiwoz_like_config()
    if args.seed is not None:
        cfg.seed = args.seed
    corpus = generate_corpus(cfg, args.n)
    export_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} dialogs ({corpus.n_utterances()} utterances) "
          f"to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    artifacts = train(cfg)
    last = artifacts.loss_curves[-1]
    print(f"finished {len(artifacts.loss_curves)} epochs; "
          f"final total loss {last['total']:.4f}")
    print(f"test AMI {artifacts.report.ami:.4f}, "
          f"purity {artifacts.report.purity:.4f}")
    print(f"artifacts in {artifacts.output_dir}")
    return 0


def _cmd_eval(args) -> int:
    corpus = import_corpus(args.corpus)
    report, _ = evaluate(args.checkpoint, corpus)
    text = report.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    print(text)
    return 0


def _cmd_probe(args) -> int:
    corpus = import_corpus(args.corpus)
    features, gold = probe_features(args.checkpoint, corpus)
    shots = [s.strip() for s in args.shots.split(",") if s.strip()]
    results = {}
    for s in shots:
        key = s if s == "full" else int(s)
        results[str(s)] = linear_probe(features, gold, key, args.seed)
    print(json.dumps(results, indent=2, sort_keys=True))
    return 0


def _cmd_export_structure(args) -> int:
    corpus = import_corpus(args.corpus)
    sequences = predict_states(args.checkpoint, corpus)
    from .metrics import induce_structure

    graph = induce_structure(sequences, min_prob=args.min_prob)
    dot = structure_to_dot(graph, args.min_prob)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(dot)
    print(f"wrote {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    failures = _gradcheck(verbose=True)
    if failures:
        print(f"FAILED: {failures} gradient check(s) above tolerance")
        return 3
    print("all gradient checks passed")
    return 0


def _gradcheck(verbose: bool = False) -> int:
    """Finite-difference checks for every primitive op and a tiny model graph."""
    rng = stream(1234, "gradcheck")
    failures = 0

    def check(name, build, tol=1e-4):
        nonlocal failures
        bindings, root = build()
        err = ad.finite_diff_check(root, bindings)
        ok = err < tol
        if not ok:
            failures += 1
        if verbose:
            print(f"  {name:24s} max rel err {err:.3e}  "
                  f"{'ok' if ok else 'FAIL'}")
        return err

    def vec(n=5):
        # keep values away from kinks and the origin
        return rng.uniform(0.2, 0.9, size=n)

    check("add", lambda: _wrap2(ad.add, vec(), vec()))
    check("sub", lambda: _wrap2(ad.sub, vec(), vec()))
    check("mul", lambda: _wrap2(ad.mul, vec(), vec()))
    check("div", lambda: _wrap2(ad.div, vec(), vec() + 0.5))
    check("matmul", lambda: _wrap_matmul(rng))
    check("concat", lambda: _wrap_concat(vec(), vec()))
    check("lookup", lambda: _wrap_lookup(rng))
    check("tanh", lambda: _wrap1(ad.tanh, vec()))
    check("sigmoid", lambda: _wrap1(ad.sigmoid, vec()))
    check("exp", lambda: _wrap1(ad.exp, vec()))
    check("log", lambda: _wrap1(ad.log, vec() + 0.5))
    check("maxs", lambda: _wrap1(lambda x: ad.maxs(x, 0.5 - 1e-2), vec()))
    check("mins", lambda: _wrap1(lambda x: ad.mins(x, 0.5 + 1e-2), vec()))
    check("softmax", lambda: _wrap_softmax(rng))
    check("rsum", lambda: _wrap1(lambda x: ad.rsum(x), vec()))
    check("rmean", lambda: _wrap1(lambda x: ad.rmean(x), vec()))
    check("emax", lambda: _wrap2(ad.emax, vec(), vec() + 1.0))
    check("emin", lambda: _wrap2(ad.emin, vec(), vec() + 1.0))
    check("tiny model", _tiny_model_graph, tol=1e-3)
    return failures


def _wrap1(fn, x):
    p = ad.param("x", x)
    return {"x": x}, ad.rsum(fn(p))


def _wrap2(fn, x, y):
    px, py = ad.param("x", x), ad.param("y", y)
    return {"x": x, "y": y}, ad.rsum(fn(px, py))


def _wrap_matmul(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    pa, pb = ad.param("a", a), ad.param("b", b)
    return {"a": a, "b": b}, ad.rsum(ad.matmul(pa, pb))


def _wrap_concat(x, y):
    px, py = ad.param("x", x), ad.param("y", y)
    both = ad.concat([px, py], axis=0)
    return {"x": x, "y": y}, ad.rsum(ad.mul(both, both))


def _wrap_lookup(rng):
    table = rng.normal(size=(6, 3))
    p = ad.param("t", table)
    out = ad.lookup(p, np.array([0, 2, 2, 5]))
    return {"t": table}, ad.rsum(ad.tanh(out))


def _wrap_softmax(rng):
    x = rng.normal(size=(3, 4))
    p = ad.param("x", x)
    y = ad.softmax(p)
    w = rng.normal(size=(3, 4))
    return {"x": x}, ad.rsum(ad.mul(y, ad.const(w)))


def _tiny_model_graph():
    from .corpus import Vocabulary, DialogCorpus, Dialog, Turn
    from .model import DDVRNN, ModelConfig, encode_dialogs, make_batch
    from .rules import build_observations, ground, parse_ruleset
    from .softlogic import LogicConfig

    corpus = DialogCorpus([
        Dialog("d0", "hotel", "train", [
            Turn(0, ["hello", "there"]), Turn(1, ["i", "need", "a", "room"]),
            Turn(0, ["thanks", "a", "lot"])]),
        Dialog("d1", "taxi", "train", [
            Turn(0, ["i", "need", "a", "taxi"]), Turn(1, ["what", "time", "?"])]),
    ])
    vocab = Vocabulary.build(corpus)
    cfg = ModelConfig(k_states=3, vocab_size=len(vocab), embed_dim=4,
                      encoder_dim=6, dialog_dim=5, decoder_dim=6,
                      bow_hidden_dim=6)
    model = DDVRNN(cfg, seed=99)
    encoded = encode_dialogs(corpus, vocab, cfg)
    batch = make_batch(encoded)
    ruleset = parse_ruleset(
        "1.0: FirstUtt(U) -> State(U, greet) .\n"
        "1.0: PrevUtt(U1, U2) & State(U2, greet) -> State(U1, request) .\n")
    obs = build_observations(corpus, lexicons={"greet": ["hello", "hi"]},
                             class_map={"greet": 0, "request": 1})
    groundings = ground(ruleset, obs)
    row_map = {u: t * 2 + b
               for b, d in enumerate(encoded)
               for t, u in enumerate(d["utt_ids"])}
    graph = model.build_batch_graph(
        batch, groundings=groundings,
        logic_cfg=LogicConfig(relaxation="log"),
        utt_row_map=row_map)
    bindings = {name: model.store[name] for name in model.store.names()}
    return bindings, graph.total


def _cmd_suite(args) -> int:
    base = RunConfig.load(args.config)
    with open(args.axes, "r", encoding="utf-8") as f:
        axes = json.load(f)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    table = run_suite(base, axes, seeds, suite_dir=args.out,
                      workers=args.workers)
    print(json.dumps(table, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsiforge",
        description="dialog structure induction with soft-logic constraints")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic corpus")
    p.add_argument("--config", help="generator config JSON (default: builtin)")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("probe", help="linear probes on frozen features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--shots", default="1,5,10")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_probe)

    p = sub.add_parser("export-structure", help="induced transition graph as DOT")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--min-prob", type=float, default=0.0005)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_export_structure)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("suite", help="run a grid of configurations")
    p.add_argument("--config", required=True)
    p.add_argument("--axes", required=True)
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=_cmd_suite)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except GroundingCapError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
