"""Command-line entry point: ``tripneighbors <command> [options]``.

Every command that writes results puts them in ``--out`` together with a
``config.json`` echo of all effective parameters and a ``run.log``.
Exit codes: 0 success, 2 configuration error, 3 input error, 1 internal
error.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from . import __version__
from .errors import InvalidValueError, SchemaError, TripPredictionError
from .evaluate import (
    FixedSource,
    NMFConfig,
    RecordsSource,
    SyntheticSource,
    experiment_augment,
    experiment_mixed,
    experiment_nmf_ablation,
    experiment_per_L,
    plot_sweep,
    sweep_neighbors,
    write_results,
    write_summary,
)
from .ingest import export_csv, group_entities, load_dataset, merge_datasets, parse_csv, save_dataset
from .metrics import MetricVariant
from .synth import DEFAULT_BBOX, SynthParams, generate, write_labels

log = logging.getLogger("tripneighbors")

EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_INPUT = 3


class InputError(click.ClickException):
    exit_code = EXIT_INPUT


class ConfigError(click.ClickException):
    exit_code = EXIT_CONFIG


def _int_list(value: str | None) -> list[int]:
    if value is None or value == "":
        return []
    try:
        return [int(v) for v in str(value).replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {value!r}") from None


def guarded(fn):
    """Map library exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (FileNotFoundError, IsADirectoryError, SchemaError) as exc:
            raise InputError(str(exc)) from exc
        except TripPredictionError as exc:
            raise InputError(f"{type(exc).__name__}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        except Exception as exc:  # noqa: BLE001
            log.exception("internal error")
            click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(EXIT_INTERNAL)

    return wrapper


def _prepare_out(out: str, command: str, params: dict) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("tripneighbors")
    for h in list(root.handlers):
        if isinstance(h, logging.FileHandler):
            root.removeHandler(h)
            h.close()
    root.addHandler(handler)
    echo = {"command": command, "version": __version__, "params": params}
    (path / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True, default=str) + "\n")
    return path


# -- shared option groups -------------------------------------------------------------

def synth_options(fn):
    opts = [
        click.option("--seed", type=int, default=None, help="Seed for all randomness (required for synthetic data)."),
        click.option("--n-entities", type=int, default=200, show_default=True, help="Synthetic entities per history length."),
        click.option("--archetypes", "n_archetypes", type=int, default=4, show_default=True),
        click.option("--sigma", "noise_sigma", type=float, default=0.002, show_default=True, help="Trip noise in degrees."),
        click.option("--outlier-rate", type=float, default=0.1, show_default=True),
        click.option("--bbox", type=float, nargs=4, default=DEFAULT_BBOX, show_default=True,
                     help="lon_min lon_max lat_min lat_max"),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def source_options(fn):
    opts = [
        click.option("--dataset", "dataset_path", type=click.Path(), default=None,
                     help="Dataset CSV written by ingest, synth or export."),
        click.option("--records", "records_path", type=click.Path(), default=None,
                     help="Raw validation records CSV, grouped per history length."),
        click.option("--policy", type=click.Choice(["earliest", "exact"]), default="earliest", show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return synth_options(fn)


def run_options(fn):
    opts = [
        click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory."),
        click.option("--k-max", type=int, default=30, show_default=True),
        click.option("--threads", type=int, default=1, show_default=True),
        click.option("--plot", is_flag=True, help="Also write SVG charts."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def nmf_options(fn):
    opts = [
        click.option("--nmf-r", type=int, default=0, show_default=True, help="NMF rank; 0 disables NMF."),
        click.option("--nmf-iters", type=int, default=500, show_default=True),
        click.option("--nmf-tol", type=float, default=1e-6, show_default=True),
        click.option("--error-space", type=click.Choice(["original", "embedding"]), default="original",
                     show_default=True),
        click.option("--nmf-cache", type=click.Path(file_okay=False), default=None),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _synth_params(kw, lengths=None, counts=None) -> SynthParams:
    if kw["seed"] is None:
        raise ConfigError("--seed is required for synthetic data")
    try:
        return SynthParams(
            seed=kw["seed"], L_values=tuple(lengths or (6,)), n_entities=kw["n_entities"], counts=counts,
            n_archetypes=kw["n_archetypes"], bbox=tuple(kw["bbox"]), noise_sigma=kw["noise_sigma"],
            outlier_rate=kw["outlier_rate"],
        )
    except InvalidValueError as exc:
        raise ConfigError(str(exc)) from None


def _source(kw):
    if kw["dataset_path"] and kw["records_path"]:
        raise ConfigError("use only one of --dataset and --records")
    if kw["dataset_path"]:
        return FixedSource(load_dataset(kw["dataset_path"]))
    if kw["records_path"]:
        parsed = parse_csv(kw["records_path"])
        for err in parsed.errors:
            log.warning("line %d skipped: %s", err.line, err.message)
        return RecordsSource(parsed.records, kw["policy"], source=Path(kw["records_path"]).name)
    return SyntheticSource(_synth_params(kw))


def _nmf(kw) -> NMFConfig | None:
    if not kw.get("nmf_r"):
        return None
    if kw["seed"] is None:
        raise ConfigError("--seed is required when NMF is enabled")
    return NMFConfig(r=kw["nmf_r"], max_iters=kw["nmf_iters"], tol=kw["nmf_tol"], seed=kw["seed"],
                     error_space=kw["error_space"], cache_dir=kw["nmf_cache"])


def _write(out: Path, results, plot: bool, name: str = "results"):
    write_results(results, out / f"{name}.csv")
    write_summary(results, out / f"{name}_summary.csv")
    if plot:
        for res in results:
            plot_sweep(res, out / f"{res.experiment_id}.svg")
    for res in results:
        s = res.summary
        click.echo(
            f"{res.experiment_id}: self={s.self_only_mse:.4e} "
            f"nearest={s.nearest_neighbor_mse if s.nearest_neighbor_mse is None else format(s.nearest_neighbor_mse, '.4e')} "
            f"oracle={s.oracle_mse:.4e} (k={s.oracle_k}, gain {100 * s.improvement:.1f}%)"
        )


# -- commands ---------------------------------------------------------------------------

@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Neighbor-based trip prediction experiments."""
    logger = logging.getLogger("tripneighbors")
    logger.setLevel(logging.INFO)
    if not any(isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler)
               for h in logger.handlers):
        stream = logging.StreamHandler()
        stream.setLevel(logging.INFO if verbose else logging.WARNING)
        stream.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
        logger.addHandler(stream)


@main.command()
@click.argument("input_csv", type=click.Path())
@click.option("--L", "L", type=int, required=True, help="History length.")
@click.option("--policy", type=click.Choice(["earliest", "exact"]), default="earliest", show_default=True)
@click.option("--limit", type=int, default=None, help="Seeded subsample of eligible entities.")
@click.option("--seed", type=int, default=None)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@guarded
def ingest(input_csv, L, policy, limit, seed, out):
    """Group raw validation records into a dataset of history length L."""
    if not Path(input_csv).is_file():
        raise InputError(f"no such file: {input_csv}")
    if limit is not None and seed is None:
        raise ConfigError("--seed is required with --limit")
    path = _prepare_out(out, "ingest", dict(input=input_csv, L=L, policy=policy, limit=limit, seed=seed))
    parsed = parse_csv(input_csv)
    ds = group_entities(parsed.records, L, policy, Path(input_csv).name, limit, seed)
    save_dataset(ds, path / "dataset.csv")
    report = dict(ds.meta["report"])
    report["malformed_rows"] = [{"line": e.line, "error": e.message} for e in parsed.errors]
    (path / "ingest_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    click.echo(f"{len(ds)} entities written; {report['excluded']} group(s) excluded, "
               f"{len(parsed.errors)} malformed row(s)")


@main.command()
@synth_options
@click.option("--L", "lengths", default="6", show_default=True, help="Comma-separated history lengths.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@guarded
def synth(out, lengths, **kw):
    """Generate a seeded synthetic population."""
    params = _synth_params(kw, _int_list(lengths))
    path = _prepare_out(out, "synth", params.to_dict())
    ds, labels = generate(params)
    save_dataset(ds, path / "dataset.csv")
    write_labels(labels, path / "labels.csv")
    click.echo(f"{len(ds)} synthetic entities written to {path / 'dataset.csv'}")


@main.command()
@source_options
@run_options
@nmf_options
@click.option("--L", "L", type=int, default=None, help="History length (required unless --dataset is given).")
@click.option("--variant", type=click.Choice(["all2all", "ordered"]), default="all2all", show_default=True)
@guarded
def sweep(out, k_max, threads, plot, L, variant, **kw):
    """Error against number of neighbors for one configuration."""
    path = _prepare_out(out, "sweep", dict(kw, k_max=k_max, threads=threads, L=L, variant=variant))
    src = _source(kw)
    if L is None:
        if not isinstance(src, FixedSource):
            raise ConfigError("--L is required unless --dataset is given")
        ds = src.dataset
    else:
        ds = src(L)
    res = sweep_neighbors(ds, variant, k_max, _nmf(kw), threads=threads, experiment_id=f"sweep-{variant}")
    _write(path, [res], plot)


@main.command("per-l")
@source_options
@run_options
@nmf_options
@click.option("--L", "lengths", default="2,3,4,5,6,7,8,9,10", show_default=True)
@click.option("--variants", default="ordered,all2all", show_default=True)
@guarded
def per_l(out, k_max, threads, plot, lengths, variants, **kw):
    """One sweep per history length and distance variant."""
    variants = [MetricVariant.parse(v) for v in variants.split(",") if v]
    path = _prepare_out(out, "per-l", dict(kw, k_max=k_max, threads=threads, L=lengths,
                                           variants=[v.value for v in variants]))
    results = experiment_per_L(_source(kw), _int_list(lengths), variants, k_max, _nmf(kw), threads)
    _write(path, results, plot)
    with open(path / "per_l_table.csv", "w", encoding="utf-8") as fh:
        fh.write("variant,L,self_only_mse,nearest_mse,oracle_k,oracle_mse\n")
        for r in results:
            s = r.summary
            nn = "" if s.nearest_neighbor_mse is None else f"{s.nearest_neighbor_mse:.12e}"
            fh.write(f"{r.variant},{r.config['L']},{s.self_only_mse:.12e},{nn},{s.oracle_k},{s.oracle_mse:.12e}\n")


@main.command()
@source_options
@run_options
@click.option("--short-L", "short_L", type=int, default=2, show_default=True)
@click.option("--long-L", "long_L", type=int, default=8, show_default=True)
@click.option("--n-long", type=int, default=2000, show_default=True)
@click.option("--counts", default="100,500,1000,2000", show_default=True, help="Short-entity counts.")
@guarded
def augment(out, k_max, threads, plot, short_L, long_L, n_long, counts, **kw):
    """Enrich short-history entities with a pool of long-history entities."""
    counts = _int_list(counts)
    if kw["seed"] is None:
        raise ConfigError("--seed is required for augmentation subsampling")
    path = _prepare_out(out, "augment", dict(kw, k_max=k_max, threads=threads, short_L=short_L,
                                             long_L=long_L, n_long=n_long, counts=counts))
    if kw["dataset_path"] or kw["records_path"]:
        src = _source(kw)
        short, long = src(short_L), src(long_L)
    else:
        params = _synth_params(kw, counts={short_L: max(counts + [1]), long_L: n_long})
        ds, _ = generate(params)
        short, long = ds.filter(length=short_L), ds.filter(length=long_L)
    results = experiment_augment(short, long, counts, k_max, kw["seed"], threads)
    _write(path, results, plot)


@main.command()
@source_options
@run_options
@click.option("--lengths", default="3,4,5,6", show_default=True)
@click.option("--per-length", type=int, default=500, show_default=True)
@guarded
def mixed(out, k_max, threads, plot, lengths, per_length, **kw):
    """One all2all sweep over entities with different history lengths."""
    lengths = _int_list(lengths)
    path = _prepare_out(out, "mixed", dict(kw, k_max=k_max, threads=threads, lengths=lengths,
                                           per_length=per_length))
    counts = {L: per_length for L in lengths}
    if kw["dataset_path"]:
        if kw["seed"] is None:
            raise ConfigError("--seed is required to subsample a dataset")
        ds = load_dataset(kw["dataset_path"])
    elif kw["records_path"]:
        if kw["seed"] is None:
            raise ConfigError("--seed is required to subsample records")
        # exact grouping keeps every ticket group in at most one length class
        src = _source(dict(kw, policy="exact"))
        ds = src(lengths[0])
        for L in lengths[1:]:
            ds = merge_datasets(ds, src(L))
    else:
        ds, _ = generate(_synth_params(kw, counts=counts))
    res = experiment_mixed(ds, counts, k_max, kw["seed"] or 0, threads)
    _write(path, [res], plot)


@main.command("nmf-ablation")
@source_options
@run_options
@click.option("--L", "L", type=int, default=6, show_default=True)
@click.option("--variant", type=click.Choice(["all2all", "ordered"]), default="all2all", show_default=True)
@click.option("--nmf-r", type=int, default=4, show_default=True)
@click.option("--nmf-iters", type=int, default=500, show_default=True)
@click.option("--nmf-tol", type=float, default=1e-6, show_default=True)
@click.option("--error-space", type=click.Choice(["original", "embedding"]), default="original", show_default=True)
@click.option("--nmf-cache", type=click.Path(file_okay=False), default=None)
@guarded
def nmf_ablation(out, k_max, threads, plot, L, variant, **kw):
    """Paired sweeps with and without NMF-embedded trips."""
    if kw["nmf_r"] < 1:
        raise ConfigError("--nmf-r must be >= 1")
    path = _prepare_out(out, "nmf-ablation", dict(kw, k_max=k_max, threads=threads, L=L, variant=variant))
    ds = _source(kw)(L)
    raw, emb = experiment_nmf_ablation(ds, variant, k_max, _nmf(kw), threads)
    _write(path, [raw, emb], False)
    if plot:
        plot_sweep(raw, path / "nmf_ablation.svg", others=[emb])
    (path / "nmf.json").write_text(json.dumps(
        {"iterations": emb.config["nmf_iterations"], "objective": emb.config["nmf_objective"]},
        indent=2, sort_keys=True) + "\n")


@main.command()
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Destination CSV file.")
@click.option("--history-only", is_flag=True, help="Drop test rows and the is-test column.")
@guarded
def export(dataset_path, out, history_only):
    """Re-export a dataset in the validation record schema."""
    if not Path(dataset_path).is_file():
        raise InputError(f"no such file: {dataset_path}")
    ds = load_dataset(dataset_path)
    if not history_only:
        export_csv(ds, out)
    else:
        import csv

        from .ingest import COLUMNS

        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("TicketId",) + COLUMNS)
            for e in ds.entities:
                for t in e.history:
                    w.writerow([e.key.ticket_id, e.key.wday, e.key.dhour, t.yday, *map(repr, t.features)])
    click.echo(f"{len(ds)} entities exported to {out}")


if __name__ == "__main__":
    main()
