"""Command-line entry point: every stage reads and writes files so runs compose and reproduce."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .curation import Method, curate, top_k_select, trak_features
from .datamodel import (EmbeddingMatrix, FormatError, GradientMatrix, NotFoundError, NumericError,
                        ParameterError, TargetSet, load_matrix, sample_selected, save_matrix)
from .defenses import DpParams, dp_mean_scores, dp_noisy_max_scores, dp_trak_scores
from .e2e_attacks import (FingerprintPlan, append_fingerprints, copy_fingerprint_candidates,
                          craft_image_fingerprints, image_e2e_scores, oracle_attack_image,
                          selections_from_mask, trak_e2e_attack)
from .evaluation import (image_pipeline, metrics, onion_experiment, rows_to_csv, sweep, trak_size_cell)
from .fixtures import make_image_fixture, make_trak_fixture
from .score_attacks import (AttackScores, combine_scores, least_squares_trak, lira_scores,
                            sparse_trak_attack, voting_image)
from .shadow import OutputKind, build_assignment, load_ensemble, run_shadows, save_ensemble
from .subset_attacks import binary_lira_scores, binary_lira_soft_scores, iterative_voting

ATTACKS = ("lira", "voting", "lstsq", "omp", "iht", "binary-lira", "binary-lira-soft",
           "iterative-voting", "e2e-image", "e2e-trak", "oracle", "combined")
MECHANISMS = ("noisy-max", "dp-mean", "dp-trak")
EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class UsageError(ParameterError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _dump(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def _resolved(args, *skip) -> dict:
    """Config embedded in outputs: every parsed option except plumbing."""
    drop = {"func", "config", *skip}
    return {k: v for k, v in sorted(vars(args).items()) if k not in drop}


def _need(args, *names) -> None:
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


# -- loaders -----------------------------------------------------------------

def _q_path(pool_path) -> Path:
    p = Path(pool_path)
    return p.with_name(p.stem + "_q.curm")


def _load_embeddings(path) -> EmbeddingMatrix:
    return EmbeddingMatrix(load_matrix(path).astype(np.float64))


def _load_gradients(path, with_q: bool = False) -> GradientMatrix:
    data = load_matrix(path).astype(np.float64)
    q = None
    if with_q and _q_path(path).exists():
        q = load_matrix(_q_path(path)).astype(np.float64).ravel()
    return GradientMatrix(data, q)


def _load_pool(args):
    method = Method(args.method)
    if method is Method.IMAGE:
        return _load_embeddings(args.pool), _load_embeddings(args.targets)
    return trak_features(_load_gradients(args.pool, with_q=True), args.lam), _load_gradients(args.targets)


def _target_set(path) -> TargetSet:
    return TargetSet.from_json(Path(path).read_text(encoding="utf-8"))


def _curation(path) -> tuple[np.ndarray, np.ndarray, dict]:
    doc = _read_json(path)
    try:
        scores = np.array(doc["scores"], dtype=np.float64)
        mask = np.zeros(scores.shape[0], dtype=bool)
        mask[np.array(doc["selected"], dtype=np.intp)] = True
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad curation file: {exc}") from exc
    return scores, mask, doc


def _write_curation(args, scores, mask, **extra) -> None:
    _dump(args.out, {"config": _resolved(args), "scores": [float(v) for v in scores],
                     "selected": [int(i) for i in np.flatnonzero(mask)], **extra})


# -- subcommands -------------------------------------------------------------

def cmd_gen(args) -> None:
    _need(args, "seed", "n", "targets", "out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if Method(args.method) is Method.IMAGE:
        _need(args, "d")
        pool, targets = make_image_fixture(args.seed, args.n, args.targets, args.d, args.spread, args.owned_fraction)
    else:
        _need(args, "d")
        pool, targets = make_trak_fixture(args.seed, args.n, args.targets, args.d)
        save_matrix(out / "pool_q.curm", pool.q)
    save_matrix(out / "pool.curm", pool)
    save_matrix(out / "targets.curm", targets)
    chosen = sample_selected(TargetSet.full(targets.n), args.fraction, args.seed)
    (out / "targets.json").write_text(chosen.to_json(config=_resolved(args)) + "\n", encoding="utf-8")


def cmd_curate(args) -> None:
    _need(args, "pool", "targets", "target_set", "k", "out")
    pool, targets = _load_pool(args)
    res = curate(pool, targets, args.method, args.k, _target_set(args.target_set).mask)
    _write_curation(args, res.scores, res.mask, k=args.k, method=res.method.value)


def cmd_defend(args) -> None:
    _need(args, "pool", "targets", "target_set", "k", "epsilon", "seed", "out")
    params = DpParams(args.epsilon, args.delta, args.clip, args.seed)
    selected = _target_set(args.target_set).mask
    if args.mechanism == "dp-trak":
        args.method = Method.TRAK.value
        sys_, targets = _load_pool(args)
        scores = dp_trak_scores(sys_, targets, params, selected)
    else:
        args.method = Method.IMAGE.value
        pool, targets = _load_pool(args)
        fn = dp_noisy_max_scores if args.mechanism == "noisy-max" else dp_mean_scores
        scores = fn(pool, targets, params, selected)
    _write_curation(args, scores, top_k_select(scores, args.k), k=args.k, method=args.method)


def cmd_shadow(args) -> None:
    _need(args, "pool", "targets", "k", "m", "seed", "out")
    pool, targets = _load_pool(args)
    ens = run_shadows(pool, targets, build_assignment(targets.n, args.m, args.seed), args.method, args.k, args.kind)
    save_ensemble(args.out, ens, args.seed, **_resolved(args, "seed"))


def _labels(args):
    return _target_set(args.target_set).mask if args.target_set else None


def cmd_attack(args) -> None:
    _need(args, "name", "out")
    if args.name not in ATTACKS:
        raise UsageError(f"unknown attack {args.name!r}; valid names: {', '.join(ATTACKS)}")
    labels = _labels(args)
    name = args.name
    extra_files = {}
    if name in ("lira", "binary-lira", "binary-lira-soft", "combined"):
        _need(args, "shadows", "curation")
        ens = load_ensemble(args.shadows)
        scores, mask, _ = _curation(args.curation)
        if name == "lira":
            result = lira_scores(ens, scores, labels)
        elif name == "binary-lira":
            result = binary_lira_scores(ens, mask, labels=labels)
        elif name == "binary-lira-soft":
            result = binary_lira_soft_scores(ens, ens.k, mask, args.gamma, labels=labels)
        else:
            _need(args, "pool", "targets")
            voting = voting_image(_load_embeddings(args.pool), _load_embeddings(args.targets), scores)
            result = combine_scores(lira_scores(ens, scores, labels), voting, args.weight)
    elif name in ("voting", "oracle", "iterative-voting", "e2e-image"):
        _need(args, "curation")
        scores, mask, _ = _curation(args.curation)
        if name == "e2e-image":
            _need(args, "plan")
            plan = FingerprintPlan.from_json(Path(args.plan).read_text(encoding="utf-8"))
            result = image_e2e_scores(plan, selections_from_mask(plan, mask), labels)
        else:
            _need(args, "pool", "targets")
            pool, targets = _load_embeddings(args.pool), _load_embeddings(args.targets)
            if name == "voting":
                result = voting_image(pool, targets, scores, labels=labels)
            elif name == "oracle":
                result = oracle_attack_image(pool, targets, scores, labels=labels)
            else:
                trace, result = iterative_voting(pool, targets, mask, int(mask.sum()), labels=labels)
                extra_files[".trace.jsonl"] = trace.to_jsonl(**_resolved(args))
    else:
        _need(args, "pool", "targets", "curation")
        args.method = Method.TRAK.value
        sys_, targets = _load_pool(args)
        scores, mask, _ = _curation(args.curation)
        if name == "lstsq":
            result = least_squares_trak(sys_, targets, scores, labels)
        elif name in ("omp", "iht"):
            _need(args, "sparsity")
            result = sparse_trak_attack(sys_, targets, scores, args.sparsity, name, labels)
        else:
            _need(args, "fingerprints")
            fps = load_matrix(args.fingerprints).astype(np.float64)
            result, plan = trak_e2e_attack(sys_, targets, fps, args.rho, mask, int(mask.sum()),
                                           args.subset_size, args.q_new, labels=labels)
            extra_files[".plan.json"] = plan.to_json(sys_.n, **_resolved(args))
    out = Path(args.out)
    out.write_text(result.to_csv(), encoding="utf-8", newline="")
    _dump(str(out) + ".meta.json", {"attack": result.attack_name, "config": _resolved(args),
                                    "meta": result.meta})
    for suffix, text in extra_files.items():
        Path(str(out) + suffix).write_text(text, encoding="utf-8")


def cmd_e2e(args) -> None:
    _need(args, "pool", "targets", "out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if Method(args.method) is Method.IMAGE:
        plan = craft_image_fingerprints(_load_embeddings(args.pool), _load_embeddings(args.targets),
                                        args.alpha, args.k_nn)
        (out / "plan.json").write_text(plan.to_json(**_resolved(args)) + "\n", encoding="utf-8")
        return
    pool = _load_gradients(args.pool, with_q=True)
    fps = copy_fingerprint_candidates(_load_gradients(args.targets), args.scale)
    augmented = append_fingerprints(pool, fps, args.q_new)
    save_matrix(out / "fingerprints.curm", fps)
    save_matrix(out / "pool.curm", augmented)
    save_matrix(out / "pool_q.curm", augmented.q)
    _dump(out / "e2e.json", {"config": _resolved(args), "first_fingerprint_row": pool.n,
                             "fingerprints": int(fps.shape[0])})


def cmd_eval(args) -> None:
    _need(args, "scores", "out")
    scores, ids = AttackScores.from_csv(Path(args.scores).read_text(encoding="utf-8"))
    if scores.labels is None:
        _need(args, "target_set")
        mask = _target_set(args.target_set).mask
        scores = scores.with_labels(mask[np.asarray(ids, dtype=np.intp)])
    _dump(args.out, {"config": _resolved(args), **metrics(scores)})


def cmd_onion(args) -> None:
    _need(args, "pool", "targets", "k", "seeds", "out")
    pool, targets = _load_embeddings(args.pool), _load_embeddings(args.targets)
    run = image_pipeline(pool, targets, args.k, args.attack, args.m, args.fraction)
    report = onion_experiment(run, targets.n, args.removal_fraction, args.seeds, args.vulnerability)
    Path(args.out).write_text(report.to_json(**_resolved(args)) + "\n", encoding="utf-8")


def cmd_sweep(args) -> None:
    _need(args, "sizes", "seeds", "out")
    cells = [{"n_selected": s, "d_proj": args.d_proj, "n_pool": args.n} for s in args.sizes]
    rows = sweep(cells, trak_size_cell, args.seeds)
    Path(args.out).write_text(rows_to_csv(rows), encoding="utf-8", newline="")
    _dump(str(args.out) + ".meta.json", {"config": _resolved(args),
                                         "per_seed_tpr": [r["per_seed_tpr"] for r in rows]})


# -- parser ------------------------------------------------------------------

def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="curation-mia", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, func, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="JSON file whose keys provide option defaults")
        sp.add_argument("--out")
        sp.set_defaults(func=func)
        return sp

    def io_opts(sp, method=True):
        sp.add_argument("--pool")
        sp.add_argument("--targets")
        sp.add_argument("--target-set", help="targets.json with the private selection")
        if method:
            sp.add_argument("--method", choices=[m.value for m in Method], default="image")
        sp.add_argument("--lam", type=float, help="TRAK ridge (default scales with the Gram trace)")

    sp = command("gen", cmd_gen, "write a synthetic pool and target set")
    sp.add_argument("--method", choices=[m.value for m in Method], default="image")
    sp.add_argument("--n", type=int)
    sp.add_argument("--d", type=int)
    sp.add_argument("--targets", type=int)
    sp.add_argument("--fraction", type=float, default=0.5)
    sp.add_argument("--spread", type=float, default=0.15)
    sp.add_argument("--owned-fraction", type=float, default=1.0)
    sp.add_argument("--seed", type=int)

    sp = command("curate", cmd_curate, "score the pool for the selected targets and keep the top k")
    io_opts(sp)
    sp.add_argument("--k", type=int)

    sp = command("defend", cmd_defend, "differentially private curation")
    io_opts(sp, method=False)
    sp.add_argument("--mechanism", choices=MECHANISMS, default="noisy-max")
    sp.add_argument("--k", type=int)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--delta", type=float, default=1e-5)
    sp.add_argument("--clip", type=float, default=1.0)
    sp.add_argument("--seed", type=int)

    sp = command("shadow", cmd_shadow, "run balanced shadow curations")
    io_opts(sp)
    sp.add_argument("--k", type=int)
    sp.add_argument("--m", type=int)
    sp.add_argument("--kind", choices=[k.value for k in OutputKind], default="scores")
    sp.add_argument("--seed", type=int)

    sp = command("attack", cmd_attack, "membership inference against a curation output")
    io_opts(sp, method=False)
    sp.add_argument("--name", help="one of: " + ", ".join(ATTACKS))
    sp.add_argument("--curation")
    sp.add_argument("--shadows")
    sp.add_argument("--plan")
    sp.add_argument("--fingerprints")
    sp.add_argument("--sparsity", type=int)
    sp.add_argument("--gamma", type=float, default=1.0)
    sp.add_argument("--weight", type=float, default=0.5)
    sp.add_argument("--rho", type=float)
    sp.add_argument("--subset-size", type=int)
    sp.add_argument("--q-new", type=float)

    sp = command("e2e", cmd_e2e, "craft fingerprints for the final-model threat model")
    io_opts(sp)
    sp.add_argument("--alpha", type=float, default=0.5)
    sp.add_argument("--k-nn", type=int, default=50)
    sp.add_argument("--scale", type=float, default=1.0)
    sp.add_argument("--q-new", type=float)

    sp = command("eval", cmd_eval, "ROC metrics for an attack CSV")
    sp.add_argument("--scores")
    sp.add_argument("--target-set")
    sp.add_argument("--roc", action="store_true", help="report AUC and TPR at fixed FPR budgets")

    sp = command("onion", cmd_onion, "remove the most vulnerable targets and re-attack")
    io_opts(sp, method=False)
    sp.add_argument("--k", type=int)
    sp.add_argument("--attack", choices=("lira", "voting"), default="lira")
    sp.add_argument("--m", type=int, default=32)
    sp.add_argument("--fraction", type=float, default=0.5)
    sp.add_argument("--removal-fraction", type=float, default=0.05)
    sp.add_argument("--vulnerability", choices=("success", "mean-score"), default="success")
    sp.add_argument("--seeds", type=_ints)

    sp = command("sweep", cmd_sweep, "TRAK least-squares attack across selected-set sizes")
    sp.add_argument("--sizes", type=_ints, default=[8, 32, 128, 512])
    sp.add_argument("--d-proj", type=int, default=128)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--seeds", type=_ints)
    return p


def _apply_config(parser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        doc = _read_json(args.config)
        if not isinstance(doc, dict):
            raise FormatError("config must be a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(k.replace("-", "_") for k in doc) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in doc.items()})
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if not getattr(args, "func", None):
            raise UsageError("a subcommand is required")
        args.func(args)
    except (NumericError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParameterError, FormatError, NotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
