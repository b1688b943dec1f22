"""
cascadesplit command line.

    python -m cli gen-data --seed 0
    python -m cli train-teacher
    python -m cli nas-search
    python -m cli attach-exit
    python -m cli train-exits
    python -m cli build-du
    python -m cli sweep
    python -m cli simulate --s1 0.4 --s2 0.6
    python -m cli serve
    python -m cli infer
    python -m cli report

Failures print one line `error category=<category> message=<text>` on
stderr and exit with 2 (usage), 3 (data), 4 (training) or 5 (network).
"""

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from cascade.engine import evaluate, route_sample, sweep, sweep_two_stage
from cascade.policy import (
    CascadePolicy,
    ModelExit,
    ModelServer,
    ReplayExit,
    ReplayServer,
    apply_mode,
    as_samples,
    build_policy,
    standalone_accuracy,
)
from cascade.report import counts_csv_path, load_counts_csv, load_sweep_csv, write_report
from config.run_config import RunConfig, load_run_config
from config.settings import get_config
from core.exceptions import CascadeSplitError, ConfigurationError, DomainError
from core.types import FallbackPolicy, GateDecision, LabeledDataset, LossKind
from dataio.replay import build_replay, load_dataset, load_replay, save_dataset, save_replay
from dataio.splits import split
from dataio.synthetic import SyntheticSpec, gen_synthetic, gen_two_moons
from decision.metrics import evaluate_decision_unit
from decision.unit import build_du_dataset, gate, load_decision_unit, save_decision_unit, train_decision_unit
from morphnas.exits import attach_exit, exit_accuracy, load_two_exit, save_two_exit, train_exits
from morphnas.search import SearchConfig, hill_climb, parameter_count, retrain_from_scratch, save_trace
from nn import functional as F
from nn.model import init_mlp, load_model, save_model
from nn.trainer import TrainConfig, accuracy, train
from service.client import bind_remote, run_cascade_remote
from service.server import ModelHost, ReplayHost, serve_forever
from utils.logger_setup import setup_logging
from utils.prometheus_exporter import start_metrics_server

from cli.artifacts import RunLayout, require, should_write

logger = logging.getLogger(__name__)

SPLITS = ('train', 'validation', 'test')


def _emit(result: dict):
    print(json.dumps(result, indent=2, sort_keys=True))


def _train_config(section, seed: int, epochs: Optional[int] = None) -> TrainConfig:
    return TrainConfig(
        epochs=section.epochs if epochs is None else epochs,
        batch_size=section.batch_size,
        learning_rate=section.learning_rate,
        seed=seed,
    )


def _load_splits(layout: RunLayout):
    return tuple(load_dataset(require(layout.split(part), 'data')) for part in SPLITS)


def _class_count(*datasets: LabeledDataset) -> int:
    return max(d.class_count for d in datasets)


def _all_present(paths: List[Path], force: bool) -> bool:
    if force or not all(p.exists() for p in paths):
        return False
    logger.warning(f"{', '.join(str(p) for p in paths)} exist; skipping (use --force to overwrite)")
    return True


# pipeline steps

def cmd_gen_data(args, cfg: RunConfig, layout: RunLayout) -> int:
    paths = [layout.split(part) for part in SPLITS]
    if _all_present(paths, args.force):
        return 0
    data = cfg.data
    if data.kind == 'moons':
        if len(data.class_counts) != 2 or data.class_counts[0] != data.class_counts[1]:
            raise ConfigurationError("two-moons data needs two equal class counts")
        dataset = gen_two_moons(data.class_counts[0], data.noise, cfg.seed)
    else:
        dataset = gen_synthetic(SyntheticSpec(tuple(data.class_counts), data.input_dim, data.separation, cfg.seed))
    parts = split(dataset, data.fractions, seed=cfg.seed)
    for part, path in zip(parts, paths):
        save_dataset(part, path)
    _emit({part: {'path': str(path), 'samples': len(d)} for part, path, d in zip(SPLITS, paths, parts)})
    return 0


def cmd_train_teacher(args, cfg: RunConfig, layout: RunLayout) -> int:
    path = layout.teacher()
    if not should_write(path, args.force):
        return 0
    train_set, _, test = _load_splits(layout)
    widths = [train_set.input_dim] + list(cfg.teacher.hidden) + [_class_count(train_set, test)]
    teacher, _ = train(init_mlp(widths, cfg.seed), train_set, _train_config(cfg.teacher, cfg.seed))
    save_model(teacher, path)
    _emit({'teacher': str(path), 'architecture': teacher.describe(),
           'parameters': teacher.parameter_count, 'test_accuracy': accuracy(teacher, test)})
    return 0


def cmd_nas_search(args, cfg: RunConfig, layout: RunLayout) -> int:
    path = layout.client()
    if not should_write(path, args.force):
        return 0
    train_set, validation, test = _load_splits(layout)
    loss_kind = LossKind(cfg.search.loss_kind)
    teacher = load_model(require(layout.teacher(), 'teacher')) if loss_kind is LossKind.DISTILLED else None

    widths = [train_set.input_dim] + list(cfg.client.hidden) + [_class_count(train_set, test)]
    seed_model, _ = train(init_mlp(widths, cfg.seed), train_set, _train_config(cfg.client, cfg.seed))
    s = cfg.search
    search_cfg = SearchConfig(
        steps=s.steps,
        candidates=s.candidates,
        epochs_per_candidate=s.epochs_per_candidate,
        temperature=s.temperature,
        teacher=teacher,
        seed=cfg.seed,
        loss_kind=loss_kind,
        batch_size=cfg.client.batch_size,
        learning_rate=cfg.client.learning_rate,
        max_morphs=s.max_morphs,
        max_width=s.max_width,
        max_hidden_layers=s.max_hidden_layers,
        workers=s.workers,
        show_progress=not args.quiet,
    )
    winner, trace = hill_climb(seed_model, train_set, validation, search_cfg)
    if s.retrain_epochs > 0:
        winner = retrain_from_scratch(winner, train_set, _train_config(cfg.client, cfg.seed, s.retrain_epochs))
    save_model(winner, path)
    save_trace(trace, layout.search_trace())
    _emit({
        'client': str(path),
        'seed_architecture': seed_model.describe(),
        'architecture': winner.describe(),
        'parameters': parameter_count(winner),
        'seed_test_accuracy': accuracy(seed_model, test),
        'test_accuracy': accuracy(winner, test),
        'best_so_far': trace.best_so_far,
    })
    return 0


def cmd_attach_exit(args, cfg: RunConfig, layout: RunLayout) -> int:
    path = layout.two_exit(trained=False)
    if not should_write(path, args.force):
        return 0
    client = load_model(require(layout.client(), 'client'))
    two_exit = attach_exit(client, cfg.exits.position, seed=cfg.seed)
    save_two_exit(two_exit, path)
    _emit({'two_exit': str(path), 'position': two_exit.position, 'backbone': client.describe()})
    return 0


def cmd_train_exits(args, cfg: RunConfig, layout: RunLayout) -> int:
    path = layout.two_exit()
    if not should_write(path, args.force):
        return 0
    train_set, _, test = _load_splits(layout)
    two_exit = load_two_exit(require(layout.two_exit(trained=False), 'two-exit-attached'))
    two_exit = train_exits(two_exit, train_set, _train_config(cfg.exits, cfg.seed), cfg.exits.fine_tune_exit2)
    save_two_exit(two_exit, path)
    _emit({'two_exit': str(path), 'exit1_test_accuracy': exit_accuracy(two_exit, 1, test),
           'exit2_test_accuracy': exit_accuracy(two_exit, 2, test)})
    return 0


def _du_samples(two_exit, stage: int, data: LabeledDataset):
    probs = two_exit.exit_probs(stage, data.x)
    return build_du_dataset(probs, F.argmax(probs), data.y)


def cmd_build_du(args, cfg: RunConfig, layout: RunLayout) -> int:
    paths = [layout.decision_unit(1), layout.decision_unit(2)]
    if _all_present(paths, args.force):
        return 0
    _, validation, test = _load_splits(layout)
    two_exit = load_two_exit(require(layout.two_exit(), 'two-exit'))
    d = cfg.decision
    du_cfg = TrainConfig(epochs=d.epochs, batch_size=d.batch_size, learning_rate=d.learning_rate, seed=cfg.seed)

    samples1 = _du_samples(two_exit, 1, validation)
    du1 = train_decision_unit(samples1, du_cfg, d.hidden_width)
    samples2 = _du_samples(two_exit, 2, validation)
    if d.exit2_training == 'surviving':
        certainties = du1.certainty_batch(np.array([s.features.as_array() for s in samples1]))
        samples2 = [
            sample for sample, value in zip(samples2, certainties)
            if gate(float(value), d.surviving_s1) is GateDecision.ESCALATE
        ]
        logger.info(f"exit-2 decision unit trained on {len(samples2)} samples surviving exit 1")
    du2 = train_decision_unit(samples2, du_cfg, d.hidden_width)
    save_decision_unit(du1, paths[0])
    save_decision_unit(du2, paths[1])

    report = {}
    for stage, du in ((1, du1), (2, du2)):
        try:
            result = evaluate_decision_unit(du, _du_samples(two_exit, stage, test))
        except DomainError as e:
            logger.warning(f"decision unit {stage} cannot be scored on the test split: {e}")
            report[f"du{stage}"] = None
            continue
        logger.info(f"decision unit {stage}: {result.summary()}")
        report[f"du{stage}"] = result.to_dict()
    layout.du_report().write_text(json.dumps(report, indent=2), encoding='utf-8')
    _emit({f"du{stage}": None if r is None else {k: r[k] for k in ('accuracy', 'auc', 'sensitivity', 'specificity')}
           for stage, r in ((1, report['du1']), (2, report['du2']))})
    return 0


def _policy(cfg: RunConfig, layout: RunLayout, replay: bool) -> CascadePolicy:
    du1 = load_decision_unit(require(layout.decision_unit(1), 'du'))
    du2 = load_decision_unit(require(layout.decision_unit(2), 'du'))
    if replay:
        predictors = (ReplayExit(1), ReplayExit(2), ReplayServer())
    else:
        two_exit = load_two_exit(require(layout.two_exit(), 'two-exit'))
        teacher = load_model(require(layout.teacher(), 'teacher'))
        predictors = (ModelExit(two_exit, 1), ModelExit(two_exit, 2), ModelServer(teacher))
    c = cfg.cascade
    policy = build_policy(
        *predictors, du1, du2,
        s1=c.s1, s2=c.s2,
        device=c.device,
        communication_cost=c.communication_cost,
        timeout_s=_timeout_s(cfg),
        fallback=FallbackPolicy(c.fallback),
    )
    return apply_mode(policy, c.mode)


def _timeout_s(cfg: RunConfig) -> float:
    timeout_ms = cfg.service.timeout_ms or get_config().service.timeout_ms
    return timeout_ms / 1000.0


def _address(cfg: RunConfig) -> str:
    return cfg.service.address or get_config().service.address


def _cascade_data(args, layout: RunLayout):
    if args.replay:
        return load_replay(args.replay)
    return _load_splits(layout)[2]


def cmd_sweep(args, cfg: RunConfig, layout: RunLayout) -> int:
    out = layout.sweep(two_stage=args.two_stage)
    if not should_write(out, args.force):
        return 0
    policy = _policy(cfg, layout, replay=bool(args.replay))
    data = _cascade_data(args, layout)
    if not args.replay:
        replay_path = layout.replay('test')
        if should_write(replay_path, args.force):
            two_exit = load_two_exit(layout.two_exit())
            save_replay(build_replay(two_exit, load_model(layout.teacher()), data), replay_path)
    if args.two_stage:
        result = sweep_two_stage(policy, cfg.cascade.s2_grid, data, show_progress=not args.quiet)
    else:
        result = sweep(policy, cfg.cascade.s1_grid, cfg.cascade.s2_grid, data, show_progress=not args.quiet)
    result.write_csv(out)
    result.write_counts_csv(counts_csv_path(out))
    frame = result.to_frame()
    best = frame.loc[frame['accuracy'].idxmax()]
    _emit({'sweep': str(out), 'cells': len(frame),
           'best': {'s1': best['s1'], 's2': best['s2'], 'accuracy': best['accuracy'],
                    'offload_frac': best['offload_frac']}})
    return 0


def cmd_simulate(args, cfg: RunConfig, layout: RunLayout) -> int:
    policy = _policy(cfg, layout, replay=bool(args.replay))
    samples = as_samples(_cascade_data(args, layout))
    standalone = {
        'exit1': standalone_accuracy(policy.exit1.predictor, samples),
        'exit2': standalone_accuracy(policy.exit2.predictor, samples),
    }
    if args.remote:
        policy = bind_remote(policy, _address(cfg), _timeout_s(cfg), replay_mode=bool(args.replay))
        tally = run_cascade_remote(policy, samples, show_progress=not args.quiet)
    else:
        standalone['server'] = standalone_accuracy(policy.server.predictor, samples)
        tally = evaluate(policy, samples, show_progress=not args.quiet)
    s1, s2 = policy.sensitivities
    _emit({'s1': s1, 's2': s2, 'mode': cfg.cascade.mode, 'device': cfg.cascade.device,
           **tally.to_dict(), 'standalone_accuracy': standalone})
    return 0


def cmd_serve(args, cfg: RunConfig, layout: RunLayout) -> int:
    if args.replay:
        binding = ReplayHost(load_replay(args.replay), model_id=Path(args.replay).stem)
    else:
        teacher_path = require(layout.teacher(), 'teacher')
        binding = ModelHost(load_model(teacher_path), model_id=teacher_path.stem)
    metrics_port = cfg.service.metrics_port or get_config().service.metrics_port
    if metrics_port:
        start_metrics_server(metrics_port)
    try:
        asyncio.run(serve_forever(binding, _address(cfg), cfg.service.response_delay_ms))
    except KeyboardInterrupt:
        logger.info("Interrupted; shutting down")
    return 0


def cmd_infer(args, cfg: RunConfig, layout: RunLayout) -> int:
    policy = bind_remote(_policy(cfg, layout, replay=bool(args.replay)), _address(cfg), _timeout_s(cfg),
                         replay_mode=bool(args.replay))
    samples = as_samples(_cascade_data(args, layout))
    if args.limit is not None:
        samples = samples[:args.limit]
    for sample in samples:
        outcome = route_sample(policy, sample)
        print(json.dumps({'id': outcome.sample_id, 'label': outcome.label, 'predicted': outcome.predicted,
                          'destination': outcome.destination.value, 'cost': outcome.cost,
                          'certainties': {str(k): v for k, v in outcome.certainties.items()}}))
    return 0


def cmd_report(args, cfg: RunConfig, layout: RunLayout) -> int:
    path = Path(args.sweep) if args.sweep else require(layout.sweep(), 'sweep')
    frame = load_sweep_csv(path)
    counts = load_counts_csv(counts_csv_path(path))
    if not should_write(layout.reports_dir() / f"{path.stem}_long.csv", args.force):
        return 0
    outputs = write_report(frame, counts, layout.reports_dir(), stem=path.stem)
    _emit({'rows': len(frame), **{k: str(v) for k, v in outputs.items()}})
    return 0


COMMANDS = {
    'gen-data': cmd_gen_data,
    'train-teacher': cmd_train_teacher,
    'nas-search': cmd_nas_search,
    'attach-exit': cmd_attach_exit,
    'train-exits': cmd_train_exits,
    'build-du': cmd_build_du,
    'sweep': cmd_sweep,
    'simulate': cmd_simulate,
    'serve': cmd_serve,
    'infer': cmd_infer,
    'report': cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="JSON run configuration")
    common.add_argument('--seed', type=int, help="override the run seed")
    common.add_argument('--run-dir', help="artifact root (default: CASCADESPLIT_RUN_DIR)")
    common.add_argument('--set', action='append', metavar='KEY=VALUE',
                        help="override a config value by dotted path, e.g. cascade.s1=0.3")
    common.add_argument('--force', action='store_true', help="overwrite existing artifacts")
    common.add_argument('--log-level', help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument('--no-log-file', action='store_true', help="log to stderr only")
    common.add_argument('--quiet', action='store_true', help="hide progress bars")

    parser = argparse.ArgumentParser(prog='cascadesplit', description="Split inference with early-exit cascades")
    sub = parser.add_subparsers(dest='command', required=True)
    for name in ('gen-data', 'train-teacher', 'nas-search', 'attach-exit', 'train-exits', 'build-du'):
        sub.add_parser(name, parents=[common])

    for name in ('sweep', 'simulate', 'infer'):
        p = sub.add_parser(name, parents=[common])
        p.add_argument('--replay', help="route a logit replay file instead of the test split")
        p.add_argument('--s1', type=float, help="exit-1 sensitivity")
        p.add_argument('--s2', type=float, help="exit-2 sensitivity")
        p.add_argument('--mode', choices=['normal', 'client-only', 'exit1-only'])
        p.add_argument('--device', help="cost profile, e.g. samsung-s10 or iphone-11")
    sub.choices['sweep'].add_argument('--two-stage', action='store_true', help="disable exit 1")
    sub.choices['simulate'].add_argument('--remote', action='store_true', help="offload over the network")
    sub.choices['infer'].add_argument('--limit', type=int, help="route only the first N samples")

    serve = sub.add_parser('serve', parents=[common])
    serve.add_argument('--replay', help="answer from the server column of a replay file")
    serve.add_argument('--address', help="host:port to listen on")
    serve.add_argument('--metrics-port', type=int, help="expose Prometheus metrics on this port")
    serve.add_argument('--delay-ms', type=float, help="artificial response delay")

    report = sub.add_parser('report', parents=[common])
    report.add_argument('--sweep', help="sweep CSV (default: this run's sweep)")
    return parser


def _overrides(args) -> list:
    overrides: list = list(args.set or [])
    if args.seed is not None:
        overrides.append(('seed', args.seed))
    for flag, key in (('s1', 'cascade.s1'), ('s2', 'cascade.s2'), ('mode', 'cascade.mode'),
                      ('device', 'cascade.device'), ('address', 'service.address'),
                      ('metrics_port', 'service.metrics_port'), ('delay_ms', 'service.response_delay_ms')):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append((key, value))
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, log_to_file=not args.no_log_file)
    try:
        cfg = load_run_config(args.config, _overrides(args))
        layout = RunLayout.create(cfg, Path(args.run_dir) if args.run_dir else None)
        return COMMANDS[args.command](args, cfg, layout)
    except CascadeSplitError as e:
        message = str(e).replace('\n', ' ')
        print(f"error category={e.category} message={message}", file=sys.stderr)
        return e.exit_status
    except Exception as e:
        logger.exception(f"{args.command} failed")
        print(f"error category=internal message={str(e).splitlines()[0] if str(e) else type(e).__name__}",
              file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
