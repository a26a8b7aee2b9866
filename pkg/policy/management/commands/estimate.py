from dataclasses import asdict

from django.core.management.base import CommandError

from policy.exceptions import InfeasibleBudgetError
from policy.utils.data import load_dataset
from policy.utils.manifest import RunManifest, Stopwatch, write_json
from policy.utils.pipeline import PolicyEstimator
from policy.utils.runconfig import load_run_config

from ._base import PolicyCommand


class Command(PolicyCommand):
    help = 'Estimate the budget-constrained optimal rule and its ATE against each reference rule'

    def add_arguments(self, parser):
        parser.add_argument('--data', required=True, help='Comma- or tab-delimited data file')
        parser.add_argument('--config', required=True, help='JSON run config with schema, problem and learners')
        parser.add_argument('--out', required=True, help='Output JSON path')
        parser.add_argument('--strict', action='store_true', help='Fail if any reference cannot be estimated')
        self.add_threads_argument(parser)

    def run(self, **options):
        threads = self.check_threads(options['threads'])
        run_config = load_run_config(options['config'])
        if run_config.schema is None:
            raise CommandError('config: the estimate command needs a "schema" section')

        ds = load_dataset(options['data'], run_config.schema)
        cfg = run_config.problem_config()
        effective = {
            'schema': asdict(run_config.schema),
            'problem': cfg.to_dict(),
            'learners': {target: asdict(spec) for target, spec in run_config.learners.items()},
        }
        manifest = RunManifest.create('estimate', effective, inputs=[options['data'], options['config']], seed=cfg.seed)

        with Stopwatch(manifest):
            try:
                result = PolicyEstimator(cfg, run_config.learners, n_jobs=threads).fit(ds, strict=options['strict'])
            except InfeasibleBudgetError as exc:
                if exc.report is not None:
                    write_json(options['out'], {'problem': cfg.to_dict(), 'validation': exc.report.to_dict(),
                                                'error': str(exc)}, manifest)
                raise

        write_json(options['out'], {'problem': cfg.to_dict(), **result.to_dict()}, manifest)

        for estimate in result.estimates.values():
            lo, hi = estimate.ci_95
            self.stdout.write(f'✓ {estimate.reference}: psi={estimate.psi:.6f}  95% CI [{lo:.6f}, {hi:.6f}]')
        for kind, message in result.errors.items():
            self.warn(f'{kind}: {message}')
        for message in result.validation.messages:
            self.warn(message)
        self.stdout.write(self.style.SUCCESS(f'Results written to {options["out"]}'))
