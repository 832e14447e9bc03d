"""Command-line front end.

Subcommands
-----------
maxconv   approximate (or exact) max-convolution of two CSV inputs
compare   per-index comparison of a method against the exact oracle
bench     median wall-clock times per method and size
viterbi   additive-transition Viterbi decoding from series CSVs or a synthetic model
sample    seeded random vectors and tensors

Exit status is 0 on success, 1 on usage errors, 2 on data errors and 3 when
`compare` refuses a problem larger than the oracle size guard.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import hmm, oracle
from .pnorm import METHODS, TAU, TAU_DIV, default_pstar_max, max_convolve

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_GUARD = 3

# largest result (in cells) the oracle comparison will take on
COMPARE_GUARD = 1 << 20

DISTRIBUTIONS = ("uniform", "beta", "smoothed-uniform")


class DataError(Exception):
    """Malformed or invalid input data."""


class GuardError(Exception):
    """Problem exceeds the oracle size guard."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# I/O


def _tokens(line: str) -> list[str]:
    return [t for t in line.replace(",", " ").split() if t]


def parse_tensor_text(text: str, shape_header: bool = False, name: str = "input") -> np.ndarray:
    """Parse comma or whitespace separated numbers, optionally after a shape line.

    Lines starting with ``#`` and blank lines are skipped. With
    `shape_header` the first remaining line gives the extents and the values
    are read in C order.
    """
    shape = None
    values: list[float] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = _tokens(line)
        if shape_header and shape is None:
            try:
                shape = tuple(int(t) for t in toks)
            except ValueError:
                raise DataError(f"{name}:{lineno}: bad shape header {line!r}") from None
            if not shape or min(shape) < 1:
                raise DataError(f"{name}:{lineno}: shape extents must be positive")
            continue
        for t in toks:
            try:
                v = float(t)
            except ValueError:
                raise DataError(f"{name}:{lineno}: not a number: {t!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{name}:{lineno}: non-finite value {t!r}")
            if v < 0:
                raise DataError(f"{name}:{lineno}: negative value {t!r}")
            values.append(v)
    if shape_header and shape is None:
        raise DataError(f"{name}: missing shape header")
    if not values:
        raise DataError(f"{name}: no values")
    arr = np.asarray(values)
    if shape is not None:
        if int(np.prod(shape)) != arr.size:
            raise DataError(f"{name}: shape {shape} needs {int(np.prod(shape))} values, got {arr.size}")
        arr = arr.reshape(shape)
    return arr


def read_tensor(path, shape_header: bool = False) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    return parse_tensor_text(text, shape_header, name=str(path))


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _emit(out, fmt: str, columns: dict, meta: dict) -> None:
    """Write `columns` (equal-length sequences) plus `meta` as CSV or JSON."""
    if fmt == "json":
        payload = dict(meta)
        payload["columns"] = {k: [_json_scalar(v) for v in col] for k, col in columns.items()}
        out.write(json.dumps(payload, indent=1, sort_keys=True))
        out.write("\n")
        return
    for key in sorted(meta):
        val = meta[key]
        if isinstance(val, (list, tuple)):
            val = " ".join(_fmt(v) for v in val)
        elif isinstance(val, float):
            val = _fmt(val)
        out.write(f"# {key}={val}\n")
    names = list(columns)
    out.write(",".join(names) + "\n")
    cols = [columns[n] for n in names]
    for row in zip(*cols):
        out.write(",".join(_fmt(v) for v in row) + "\n")


def _json_scalar(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    return v if math.isfinite(v) else None


def _open_out(path):
    if path in (None, "-"):
        return _NoClose(sys.stdout)
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror or exc}") from None


class _NoClose:
    def __init__(self, stream):
        self.stream = stream

    def __enter__(self):
        return self.stream

    def __exit__(self, *exc):
        self.stream.flush()
        return False


def _index_columns(shape) -> dict:
    if len(shape) == 1:
        return {"index": list(range(shape[0]))}
    grids = np.unravel_index(np.arange(int(np.prod(shape))), shape)
    return {f"i{d}": g.tolist() for d, g in enumerate(grids)}


def _resolve_pstar_max(value, shape_l, shape_r, tau):
    if value is None:
        return default_pstar_max(shape_l, shape_r, tau)
    return value


def _pstar_max_arg(text: str):
    if text == "auto":
        return None
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None
    if not v >= 1:
        raise argparse.ArgumentTypeError("p*_max must be at least 1")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _tolerance(text: str) -> float:
    v = _positive_float(text)
    if v >= 1:
        raise argparse.ArgumentTypeError(f"tolerance must lie in (0, 1), got {text}")
    return v


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in _tokens(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("values must be positive integers")
    return vals


# ---------------------------------------------------------------------------
# maxconv / compare


def _run_method(L, R, args):
    pmax = _resolve_pstar_max(args.pstar_max, L.shape, R.shape, args.tau)
    return max_convolve(L, R, method=args.method, pstar_max=pmax, tau=args.tau,
                        tau_div=args.tau_div, pstar=args.pstar)


def _diagnostics(res) -> dict:
    meta = {"method": res.method, "shape": list(res.values.shape),
            "n_convolutions": res.n_convolutions,
            "n_exact_evaluations": res.n_exact_evaluations}
    if res.ladder is not None:
        meta["ladder"] = list(res.ladder.values)
    return meta


def _load_pair(args):
    L = read_tensor(args.left, args.shape_header)
    R = read_tensor(args.right, args.shape_header)
    if L.ndim != R.ndim:
        raise DataError(f"rank mismatch: {L.ndim} vs {R.ndim}")
    return L, R


def cmd_maxconv(args) -> int:
    L, R = _load_pair(args)
    res = _run_method(L, R, args)
    cols = _index_columns(res.values.shape)
    cols["value"] = res.values.ravel().tolist()
    cols["pstar"] = res.pstar.ravel().tolist()
    cols["stable"] = res.stable.ravel().tolist()
    with _open_out(args.out) as out:
        _emit(out, args.format, cols, _diagnostics(res))
    return EXIT_OK


def comparison_table(L, R, res) -> tuple[dict, dict]:
    """Per-cell exact/approx/error columns and the summary statistics."""
    exact = oracle.naive_max_convolve(L, R) if L.ndim == 1 else oracle.naive_max_convolve_nd(L, R)
    approx = res.values
    abs_err = np.abs(approx - exact)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel_err = np.where(exact > 0, abs_err / exact, np.where(abs_err > 0, np.inf, 0.0))
    summary = {
        "max_abs_error": float(abs_err.max()),
        "max_rel_error": float(rel_err.max()),
        "mse": float(np.mean(abs_err ** 2)),
    }
    if res.contour is not None:
        top = res.contour.index == res.contour.index.max()
        summary["max_rel_error_top_contour"] = float(rel_err[top].max())
    cols = _index_columns(exact.shape)
    cols["exact"] = exact.ravel().tolist()
    cols["approx"] = approx.ravel().tolist()
    cols["abs_error"] = abs_err.ravel().tolist()
    cols["rel_error"] = rel_err.ravel().tolist()
    cols["pstar"] = res.pstar.ravel().tolist()
    return cols, summary


def cmd_compare(args) -> int:
    L, R = _load_pair(args)
    size = int(np.prod([p + q - 1 for p, q in zip(L.shape, R.shape)]))
    if size > COMPARE_GUARD:
        raise GuardError(f"result has {size} cells, oracle guard is {COMPARE_GUARD}")
    res = _run_method(L, R, args)
    cols, summary = comparison_table(L, R, res)
    meta = _diagnostics(res)
    meta.update(summary)
    with _open_out(args.out) as out:
        _emit(out, args.format, cols, meta)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def loglog_slope(sizes, times) -> float:
    """Least-squares slope of log(time) against log(size)."""
    x = np.log(np.asarray(sizes, dtype=float))
    y = np.log(np.asarray(times, dtype=float))
    if len(x) < 2:
        raise ValueError("need at least two sizes")
    return float(np.polyfit(x, y, 1)[0])


def time_sizes(method: str, sizes, rounds: int, block: int, seed: int, pstar_max=None) -> list[float]:
    """Typical wall-clock seconds per size on fixed seeded length-k pairs.

    Every round visits every size and keeps the fastest of `block`
    back-to-back calls, so caches are warm. The median over rounds then
    discards both slow spells of a shared machine and rare fast outliers.
    """
    problems = []
    for k in sizes:
        rng = np.random.default_rng(seed + k)
        problems.append((rng.uniform(size=k), rng.uniform(size=k)))
    best = np.full((rounds, len(problems)), np.inf)
    for r in range(rounds):
        for i, (L, R) in enumerate(problems):
            for _ in range(block):
                t0 = time.perf_counter()
                max_convolve(L, R, method=method, pstar_max=pstar_max)
                best[r, i] = min(best[r, i], time.perf_counter() - t0)
    return [float(t) for t in np.median(best, axis=0)]


def cmd_bench(args) -> int:
    methods = args.methods or ["naive", "piecewise-affine", "projection-affine"]
    sizes = sorted(args.sizes)
    rows = {"method": [], "k": [], "seconds": []}
    slopes = {}
    for method in methods:
        times = time_sizes(method, sizes, args.reps, args.block, args.seed, args.pstar_max)
        rows["method"] += [method] * len(sizes)
        rows["k"] += sizes
        rows["seconds"] += times
        if len(sizes) >= 2:
            top = slice(-3, None)
            slopes[f"slope_{method}"] = loglog_slope(sizes[top], times[top])
    with _open_out(args.out) as out:
        _emit(out, args.format, rows, {"reps": args.reps, "block": args.block, "seed": args.seed, **slopes})
    return EXIT_OK


# ---------------------------------------------------------------------------
# viterbi


def prepare_viterbi(latent, observed, bins_latent: int, bins_observed: int,
                    train_split: float = 0.8, smoothing: float = 1.0):
    """Bin both series, fit a model on the training prefix, return the rest.

    Returns ``(model, latent_bins, observed_bins, n_train)``. The decoded
    window is everything after the training prefix, or the whole series when
    `train_split` is 1.
    """
    latent = np.asarray(latent, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if latent.shape != observed.shape or latent.ndim != 1:
        raise DataError("latent and observed series must be vectors of equal length")
    if not 0.0 < train_split <= 1.0:
        raise DataError("train split must lie in (0, 1]")
    n = len(latent)
    n_train = int(math.floor(train_split * n))
    if n_train < 2:
        raise DataError("training prefix needs at least two points")
    bl = hmm.discretize(latent, bins_latent)
    bo = hmm.discretize(observed, bins_observed)
    model = hmm.estimate_empirical_model(bl.head(n_train), bo.head(n_train), smoothing)
    return model, bl, bo, n_train


def cmd_viterbi(args) -> int:
    meta: dict = {"method": args.method}
    if args.synthetic is not None:
        model = hmm.synthetic_model(args.bins_latent, args.bins_observed, seed=args.seed)
        truth, data = hmm.sample_hmm(model, args.synthetic, seed=args.seed + 1)
        centers = np.arange(model.n_states, dtype=float)
        meta["synthetic_n"] = args.synthetic
    else:
        if args.latent is None or args.observed is None:
            raise DataError("give --synthetic N, or both --latent and --observed")
        latent = _read_series(args.latent)
        observed = _read_series(args.observed)
        model, bl, bo, n_train = prepare_viterbi(latent, observed, args.bins_latent,
                                                 args.bins_observed, args.train_split)
        test = bo.indices[n_train:] if n_train < len(bo) else bo.indices
        data = np.asarray(test)
        centers = bl.centers
        meta["n_train"] = n_train
    pmax = args.pstar_max if args.pstar_max is not None else hmm_default_pstar_max(model, args.tau)
    path = hmm.viterbi_additive(model, data, maxconv=args.method, pstar_max=pmax)
    meta["n_decoded"] = len(path)
    if args.method != "naive":
        meta["pstar_max"] = pmax
    cols = {"index": list(range(len(path))), "state": path.tolist(),
            "bin_center": [float(centers[s]) for s in path]}
    if args.compare_exact:
        exact = hmm.viterbi_additive(model, data, maxconv="naive")
        stats = hmm.compare_paths(exact, path)
        cols["exact_state"] = exact.tolist()
        meta["agreement"] = stats.agreement
        meta["max_discrepancy"] = stats.max_discrepancy
        meta["mean_abs_discrepancy"] = stats.mean_abs_discrepancy
    with _open_out(args.out) as out:
        _emit(out, args.format, cols, meta)
    return EXIT_OK


def hmm_default_pstar_max(model, tau: float = TAU) -> float:
    """Automatic p*_max for the message-times-kernel convolution."""
    k = model.n_states
    return default_pstar_max((k,), (2 * k - 1,), tau)


def _read_series(path):
    try:
        return hmm.read_series_csv(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None


# ---------------------------------------------------------------------------
# sample


def sample_values(shape, distribution: str, rng, alpha: float = 0.5, beta: float = 0.5,
                  window: int = 16) -> np.ndarray:
    """Seeded nonnegative test data.

    ``smoothed-uniform`` averages uniform noise over a sliding box of
    `window` cells along every axis, giving locally correlated inputs.
    """
    if distribution == "uniform":
        return rng.uniform(size=shape)
    if distribution == "beta":
        if not (alpha > 0 and beta > 0):
            raise ValueError("beta parameters must be positive")
        return rng.beta(alpha, beta, size=shape)
    if distribution == "smoothed-uniform":
        if window < 1:
            raise ValueError("window must be positive")
        x = rng.uniform(size=shape)
        box = np.ones(window) / window
        for axis in range(x.ndim):
            x = np.apply_along_axis(lambda v: np.convolve(v, box, mode="same"), axis, x)
        return x
    raise ValueError(f"unknown distribution {distribution!r}")


def cmd_sample(args) -> int:
    rng = np.random.default_rng(args.seed)
    shape = tuple(args.shape)
    try:
        x = sample_values(shape, args.distribution, rng, args.alpha, args.beta, args.window)
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    with _open_out(args.out) as out:
        if args.format == "json":
            out.write(json.dumps({"shape": list(shape), "values": x.ravel().tolist()}) + "\n")
        else:
            if len(shape) > 1 or args.shape_header:
                out.write(" ".join(str(e) for e in shape) + "\n")
            for v in x.ravel():
                out.write(_fmt(v) + "\n")
    return EXIT_OK


class _UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# parser


def _common(p, method=True):
    if method:
        p.add_argument("--method", choices=METHODS, default="piecewise-affine")
        p.add_argument("--pstar", type=_positive_float, default=8.0,
                       help="p* for the fixed-pstar method")
    p.add_argument("--pstar-max", type=_pstar_max_arg, default=None,
                   help="top of the p* ladder, or 'auto' (default)")
    p.add_argument("--tau", type=_tolerance, default=TAU)
    p.add_argument("--tau-div", type=_tolerance, default=TAU_DIV)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", default="-", help="output path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fastmaxconv", description="Fast numerical max-convolution.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, help_ in (("maxconv", "max-convolve two inputs"),
                        ("compare", "compare a method against the exact oracle")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("left")
        p.add_argument("right")
        p.add_argument("--shape-header", action="store_true",
                       help="first line of each input holds the tensor shape")
        _common(p)

    p = sub.add_parser("bench", help="typical runtimes per method and size")
    p.add_argument("--sizes", type=_int_list, default=[64, 128, 256, 512, 1024, 2048, 4096])
    p.add_argument("--reps", type=int, default=9, help="rounds over all sizes")
    p.add_argument("--block", type=int, default=5, help="back-to-back calls per size and round")
    p.add_argument("--methods", nargs="+", choices=METHODS)
    _common(p, method=False)

    p = sub.add_parser("viterbi", help="additive-transition Viterbi decoding")
    p.add_argument("--latent", help="latent series CSV (training values)")
    p.add_argument("--observed", help="observed series CSV")
    p.add_argument("--synthetic", type=int, metavar="N",
                   help="decode N steps sampled from a seeded synthetic model")
    p.add_argument("--bins-latent", type=int, default=512)
    p.add_argument("--bins-observed", type=int, default=128)
    p.add_argument("--train-split", type=float, default=0.8)
    p.add_argument("--compare-exact", action="store_true",
                   help="also decode with the exact kernel and report agreement")
    _common(p)
    p.set_defaults(method="projection-affine")

    p = sub.add_parser("sample", help="seeded random test data")
    p.add_argument("--shape", type=_int_list, required=True, help="e.g. '1024' or '64 64'")
    p.add_argument("--distribution", choices=DISTRIBUTIONS, default="uniform")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--window", type=int, default=16)
    p.add_argument("--shape-header", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", default="-")
    return parser


COMMANDS = {
    "maxconv": cmd_maxconv,
    "compare": cmd_compare,
    "bench": cmd_bench,
    "viterbi": cmd_viterbi,
    "sample": cmd_sample,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "bins_latent", 2) < 1 or getattr(args, "bins_observed", 2) < 1:
        parser.error("bin counts must be positive")
    if getattr(args, "reps", 1) < 1 or getattr(args, "block", 1) < 1:
        parser.error("--reps and --block must be positive")
    try:
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        parser.error(str(exc))
    except BrokenPipeError:
        # downstream reader (e.g. head) closed early
        sys.stderr.close()
        return EXIT_OK
    except GuardError as exc:
        print(f"fastmaxconv: refused: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (DataError, ValueError, FloatingPointError) as exc:
        print(f"fastmaxconv: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
