#!/usr/bin/env python
# Command-line entry point: runs one pipeline stage per invocation according to parsed arguments and the run config.

import argparse
import os
import sys
import time
from itertools import chain

from loguru import logger

from arena import aggregate, generate_responses, judge_all, make_tasks, mcqa_eval, write_arena
from choose import choose_gateway
from config import ConfigError, load_config
from corpus import FORMAT_VERSION, read_corpus, read_guidelines, write_corpus, write_guidelines
from decontam import build_index, decontaminate, read_references, report_to_json
from ingest import IngestReport, SourceSpec, ingest_dataset, ingest_guidelines
from panel import human_criterion_deltas, judge_criterion_deltas, panel_validate, read_judge_log, read_panel, \
    write_panel
from profiler import annotate, axis_specs, drift_report, write_drift
from report import Composition
from synthgen import COMPONENTS, review_bundle
from utils import TOOL_VERSION, atomic_write, print_duration, setup_logging, write_json, write_jsonl, \
    write_manifest

STAGES = ('ingest', 'decontam', 'synth', 'profile', 'arena', 'validate-judge', 'report')


def parse_main_args(main_args=None):
    # parses arguments for main() function
    parser = argparse.ArgumentParser(prog='medforge', description='Medical corpus construction and evaluation toolkit.')
    arg = parser.add_argument
    arg('--version', action='version', version=f'medforge {TOOL_VERSION} (corpus format {FORMAT_VERSION})')
    sub = parser.add_subparsers(dest='stage', required=True)

    def stage(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument('--config', '-c', required=True, help='Run config (JSON).')
        p.add_argument('--seed', type=int, help='Overrides the config seed.')
        return p.add_argument

    arg = stage('ingest', 'Normalize source datasets into one corpus.')
    arg('--out', required=True, help='Output corpus path.')
    arg('--source', '--spec', nargs='+', dest='source', help='Only these configured sources.')
    arg('--guidelines-out', help='Guideline documents output. Default: guidelines.jsonl beside --out.')

    arg = stage('decontam', 'Remove records overlapping benchmark prompts.')
    arg('--corpus', required=True, help='Input corpus.')
    arg('--refs', nargs='+', help='Benchmark prompt files (.txt, .json, .jsonl). Overrides decontam.refs.')
    arg('--tau', type=float, help='Alignment threshold. Overrides decontam.tau.')
    arg('--n', type=int, help='N-gram order. Overrides decontam.n.')
    arg('--out', required=True, help='Clean corpus path.')
    arg('--report', help='Report path. Default: decontam_report.json beside --out.')

    arg = stage('synth', 'Generate synthetic records with the teacher model.')
    arg('--component', required=True, choices=sorted(COMPONENTS), help='Generation pipeline.')
    arg('--pool', required=True, help='Seed corpus, or guideline documents for --component guidelines.')
    arg('--out', required=True, help='Output corpus path.')
    arg('--teacher', help='Teacher model name. Overrides endpoints.teacher.model.')
    arg('--target-size', type=int, help='Number of generation jobs. Overrides synth.target_size.')
    arg('--review', help='Review bundle path. Default: <out>.review.md.')

    arg = stage('profile', 'Annotate corpora and report distribution drift.')
    arg('--source', required=True, help='Source corpus.')
    arg('--synthetic', required=True, help='Synthetic corpus.')
    arg('--axes', help='Comma-separated axes. Overrides profile.axes.')
    arg('--no-annotate', action='store_true', help='Use annotations already present on the records.')
    arg('--out', required=True, help='Report directory.')

    arg = stage('arena', 'Pairwise judging of two models, optional MCQA accuracy.')
    arg('--prompts', required=True, help='Prompt corpus (first user turn of each record).')
    arg('--model-a', help='Model A served by the model_under_test endpoint. Default: its configured model.')
    arg('--model-b', required=True, help='Model B served by the model_under_test endpoint.')
    arg('--judge', help='Judge model name. Overrides endpoints.judge.model.')
    arg('--benchmark', help='MCQA benchmark corpus evaluated on model A.')
    arg('--out', required=True, help='Output directory.')

    arg = stage('validate-judge', 'Judge agreement with a human rater panel.')
    arg('--panel', required=True, help='Panel CSV: rater_id,item_id,verdict[,<criterion>_model1,...].')
    arg('--judge-log', required=True, help='Arena verdicts.jsonl.')
    arg('--mode', default='with_ties', choices=['with_ties', 'no_ties'], help='Tie handling.')
    arg('--out', required=True, help='Output directory.')

    arg = stage('report', 'Corpus composition report.')
    arg('--corpus', nargs='+', required=True, help='Corpora to describe together.')
    arg('--tokenizer', default='regex', help='Tokenizer. See tokenizers.py.')
    arg('--out', required=True, help='Output directory.')

    if main_args:
        args = parser.parse_args(main_args)
    else:
        args = parser.parse_args()
    return args


def _abs(path):
    return os.path.abspath(path) if path else None


def config_overrides(args):
    # CLI flags as dotted config keys; None values are ignored
    overrides = {'seed': args.seed}
    if args.stage == 'decontam':
        overrides.update({'decontam.tau': args.tau, 'decontam.n': args.n,
                          'decontam.refs': [_abs(p) for p in args.refs] if args.refs else None})
    elif args.stage == 'synth':
        overrides.update({'endpoints.teacher.model': args.teacher, 'synth.target_size': args.target_size})
    elif args.stage == 'profile':
        overrides['profile.axes'] = args.axes.split(',') if args.axes else None
    elif args.stage == 'arena':
        overrides['endpoints.judge.model'] = args.judge
    return overrides


def out_dir_of(path):
    return os.path.dirname(os.path.abspath(path))


def run_ingest(args, config):
    names = args.source or sorted(config.ingest.sources)
    unknown = sorted(set(names) - set(config.ingest.sources))
    if unknown:
        raise ConfigError('ingest.sources', f'not configured: {unknown}')
    specs = [SourceSpec.from_settings(n, config.ingest.sources[n]) for n in sorted(names)]
    reports, streams, docs = [], [], []
    for spec in specs:
        if spec.schema_name == 'guideline_corpus':
            report = IngestReport(dataset_name=spec.dataset_name)
            docs.extend(ingest_guidelines(spec, config.ingest.tokenizer, report))
        else:
            stream, report = ingest_dataset(spec)
            streams.append(stream)
        reports.append(report)
    out_dir = out_dir_of(args.out)
    outputs = []
    if streams or not docs:
        # reports of these sources fill while the chained stream is written
        write_corpus(chain.from_iterable(streams), args.out)
        outputs.append(args.out)
    if docs:
        guidelines_out = args.guidelines_out or os.path.join(out_dir, 'guidelines.jsonl')
        write_guidelines(docs, guidelines_out)
        outputs.append(guidelines_out)
    report_path = os.path.splitext(args.out)[0] + '.ingest_report.json'
    outputs.append(write_json([r.model_dump() for r in reports], report_path))
    for r in reports:
        print(f'{r.dataset_name}: read {r.read}, emitted {r.emitted}, discarded {r.discarded}')
    return out_dir, [s.input_path for s in specs], outputs, {}


def run_decontam(args, config):
    settings = config.decontam
    if not settings.refs:
        raise ConfigError('decontam.refs', 'no benchmark reference files given')
    index = build_index(read_references(settings.refs), settings.n, settings.tokenizer)
    stream, report = decontaminate(read_corpus(args.corpus), index, settings.tau, settings.workers)
    write_corpus(stream, args.out)
    report_path = args.report or os.path.join(out_dir_of(args.out), 'decontam_report.json')
    write_json(report_to_json(report), report_path)
    print(f'scanned {report.scanned}, clean {report.clean}, flagged_retained {report.flagged_retained}, '
          f'removed {report.removed}')
    return out_dir_of(args.out), [args.corpus] + settings.refs, [args.out, report_path], {}


def run_synth(args, config):
    if config.synth is None:
        raise ConfigError('synth', 'section required for the synth stage')
    gateway, model = choose_gateway(config, 'teacher')
    if args.component == 'guidelines':
        pool = list(read_guidelines(args.pool))
    else:
        pool = list(read_corpus(args.pool))
    run = COMPONENTS[args.component]
    result = run(pool, gateway, model, config.synth, config.seed, config.gateway.max_in_flight)
    write_corpus(result.records, args.out)
    out_dir = out_dir_of(args.out)
    review_path = args.review or os.path.splitext(args.out)[0] + '.review.md'
    with atomic_write(review_path) as f:
        f.write(review_bundle(result.records, config.synth.review_every, result.component) + '\n')
    stats_path = os.path.splitext(args.out)[0] + '.stats.json'
    write_json(result.model_dump(mode='json', exclude={'records'}), stats_path)
    print(f'{result.component}: {result.stats}')
    return out_dir, [args.pool], [args.out, review_path, stats_path], {'gateway': gateway.stats()}


def run_profile(args, config):
    settings = config.profile
    specs = axis_specs(settings.axes, settings.overrides)
    source = list(read_corpus(args.source))
    synthetic = list(read_corpus(args.synthetic))
    outputs, extra = [], {}
    if not args.no_annotate:
        gateway, model = choose_gateway(config, 'annotator')
        unknown = {}
        for name in ('source', 'synthetic'):
            records = source if name == 'source' else synthetic
            stream, counts = annotate(records, gateway, model, specs, config.gateway.max_in_flight,
                                      settings.chunk_size)
            annotated = list(stream)
            path = os.path.join(args.out, f'{name}.annotated.jsonl')
            write_corpus(annotated, path)
            outputs.append(path)
            unknown[name] = dict(counts)
            if name == 'source':
                source = annotated
            else:
                synthetic = annotated
        extra = {'gateway': gateway.stats(), 'unknown': unknown}
    vocabularies = {s.axis: s.vocabulary for s in specs}
    report, distributions = drift_report(source, synthetic, settings.axes, vocabularies)
    report['unknown_replies'] = extra.get('unknown', {})
    outputs += write_drift(report, distributions, args.out)
    for axis, entry in report['axes'].items():
        value = entry.get('jsd', entry.get('w1'))
        print(f'{axis}: {"jsd" if "jsd" in entry else "w1"} {value}')
    return args.out, [args.source, args.synthetic], outputs, extra


def run_arena(args, config):
    settings = config.arena
    records = list(read_corpus(args.prompts))
    mut, default_model = choose_gateway(config, 'model_under_test')
    judge, judge_model = choose_gateway(config, 'judge')
    model_a = args.model_a or default_model
    max_in_flight = config.gateway.max_in_flight
    responses_a = generate_responses(records, mut, model_a, settings.response_temperature, settings.max_tokens,
                                     max_in_flight)
    responses_b = generate_responses(records, mut, args.model_b, settings.response_temperature, settings.max_tokens,
                                     max_in_flight)
    tasks = make_tasks([(r.id, r.first_user) for r in records], responses_a, responses_b, model_a, args.model_b,
                       config.seed)
    date = config.synth.date if config.synth else ''
    pairs = judge_all(tasks, judge, judge_model, settings, max_in_flight, date)
    agg = aggregate(pairs)
    outputs = write_arena(agg, pairs, args.out)
    inputs = [args.prompts]
    if args.benchmark:
        accuracy, log = mcqa_eval(read_corpus(args.benchmark), mut, model_a, 0.0, settings.max_tokens, max_in_flight)
        outputs.append(write_json({'model': model_a, 'accuracy': accuracy, 'n': len(log)},
                                  os.path.join(args.out, 'mcqa.json')))
        log_path = os.path.join(args.out, 'mcqa_log.jsonl')
        write_jsonl(log, log_path)
        outputs.append(log_path)
        inputs.append(args.benchmark)
        print(f'mcqa accuracy {accuracy:.4f}')
    print(f'{model_a} vs {args.model_b}: n {agg.n}, net {agg.net}, adjusted {agg.adjusted}, invalid {agg.invalid_count}')
    return args.out, inputs, outputs, {'gateway': {'model_under_test': mut.stats(), 'judge': judge.stats()}}


def run_validate_judge(args, config):
    ratings, df = read_panel(args.panel)
    judge, rows = read_judge_log(args.judge_log)
    report = panel_validate(ratings, judge, args.mode, config.seed, config.panel.min_items, config.panel.n_boot)
    outputs = write_panel(report, judge_criterion_deltas(rows), human_criterion_deltas(df), args.out)
    print(f'{args.mode}: {report.n_raters_included} raters, human mean {report.human_mean:.3f} '
          f'(std {report.human_std:.3f}), judge {report.judge_kappa}, percentile {report.judge_percentile}, '
          f'z {report.judge_z}')
    return args.out, [args.panel, args.judge_log], outputs, {}


def run_report(args, config):
    records = [r for path in args.corpus for r in read_corpus(path)]
    comp = Composition(records, args.tokenizer)
    outputs = comp.write(args.out)
    s = comp.summary()
    print(f'{s["examples"]} examples, {s["tokens"]} tokens, synthetic share {s["synthetic_example_share"]:.3f}')
    return args.out, args.corpus, outputs, {}


RUNNERS = {
    'ingest': run_ingest,
    'decontam': run_decontam,
    'synth': run_synth,
    'profile': run_profile,
    'arena': run_arena,
    'validate-judge': run_validate_judge,
    'report': run_report,
}


def run_stage(args, config):
    """Runs one stage and writes its manifest. Returns the manifest path.

    Stages writing one corpus file name the manifest after it, so several runs can share a directory.
    """
    out_dir, inputs, outputs, extra = RUNNERS[args.stage](args, config)
    prefix = None
    if args.stage in ('ingest', 'decontam', 'synth'):
        prefix = os.path.splitext(os.path.basename(args.out))[0]
    return write_manifest(out_dir, args.stage, config.config_hash(), config.seed, inputs, outputs, extra, prefix)


def main(main_args=None):
    # Parse args, load config, run the stage. Returns the exit status: 0 ok, 1 stage failure, 2 config error.
    args = parse_main_args(main_args)
    try:
        config = load_config(args.config, config_overrides(args))
    except ConfigError as e:
        print(f'config error: {e}', file=sys.stderr)
        return 2
    setup_logging(config.log_path, config.log_level)
    time_start = time.time()
    with logger.contextualize(stage=args.stage):
        try:
            run_stage(args, config)
        except ConfigError as e:
            print(f'config error: {e}', file=sys.stderr)
            return 2
        except Exception as e:
            logger.bind(outcome='failed').exception(f'{type(e).__name__}: {e}')
            return 1
        print_duration(time_start, f'{args.stage} finished in ')
    return 0


if __name__ == '__main__':
    sys.exit(main())
