from dataclasses import asdict

from django.conf import settings
from django.core.management.base import CommandError

from policy.models import DgpKind
from policy.utils.dgp import DgpSpec
from policy.utils.manifest import RunManifest, Stopwatch, write_json
from policy.utils.runconfig import load_run_config
from policy.utils.sim import format_table, monte_carlo, replications_frame, truth_psi0

from ._base import PolicyCommand


class Command(PolicyCommand):
    help = 'Replicated simulation study: coverage, bias, RMSE and SE/SD of the ATE estimates'

    def add_arguments(self, parser):
        parser.add_argument('--dgp', required=True, choices=DgpKind.values)
        parser.add_argument('--n', type=int, nargs='+', required=True, help='One or more sample sizes')
        parser.add_argument('--reps', type=int, default=1000)
        parser.add_argument('--seed', type=int, default=settings.POLICY.get('DEFAULT_SEED'))
        parser.add_argument('--config', help='Optional JSON with "problem" and "learners" overrides')
        parser.add_argument('--oracle', action='store_true', help='Use the closed-form nuisance functions')
        parser.add_argument('--out', required=True, help='Report JSON path')
        parser.add_argument('--replications', help='Optional CSV of per-replication psi, sigma and scaled width')
        parser.add_argument('--truth-samples', type=int, default=settings.POLICY.get('TRUTH_SAMPLES'))
        parser.add_argument('--truth-method', choices=['montecarlo', 'quadrature'], default='montecarlo')
        self.add_threads_argument(parser)

    def run(self, **options):
        if options['reps'] < 1:
            raise CommandError('reps must be ≥ 1')
        if any(n < 2 for n in options['n']):
            raise CommandError('every --n must be ≥ 2')
        threads = self.check_threads(options['threads'])
        seed = options['seed']

        run_config = load_run_config(options['config'])
        if options['oracle'] and run_config.learners:
            raise CommandError('--oracle cannot be combined with a "learners" config section')
        dgp = DgpSpec(kind=options['dgp'], oracle_nuisances=options['oracle'])
        cfg = dgp.default_problem(**run_config.problem)
        specs = run_config.learners or dgp.default_learners()

        effective = {
            'dgp': str(dgp.kind),
            'oracle_nuisances': dgp.oracle_nuisances,
            'problem': cfg.to_dict(),
            'learners': {target: asdict(spec) for target, spec in specs.items()},
            'n': options['n'],
            'reps': options['reps'],
            'truth_samples': options['truth_samples'],
            'truth_method': options['truth_method'],
        }
        manifest = RunManifest.create('simulate', effective, inputs=[options['config']], seed=seed)

        with Stopwatch(manifest):
            truth = truth_psi0(dgp, cfg, samples=options['truth_samples'], seed=seed, method=options['truth_method'])
            reports = []
            for n in options['n']:
                self.stdout.write(f'Running {options["reps"]} replications at n={n}...')
                reports.append(monte_carlo(dgp, cfg, specs, n, options['reps'], seed, truth, n_jobs=threads))

        write_json(options['out'], {
            **effective,
            'truth': truth.to_dict(),
            'reports': [report.to_dict() for report in reports],
        }, manifest)
        if options['replications']:
            replications_frame(reports).to_csv(options['replications'], index=False, float_format='%.17g')

        for report in reports:
            if report.failures:
                self.warn(f'{len(report.failures)} of {report.reps} replications failed at n={report.n}')
        self.stdout.write(format_table(reports))
        self.stdout.write(self.style.SUCCESS(f'Report written to {options["out"]}'))
