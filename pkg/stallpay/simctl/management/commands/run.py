from django.core.management.base import BaseCommand, CommandError

from simctl.runner import ScenarioInvalid, ScenarioUnreadable, StepFailed, run_scenario
from simctl.serializers import render_events, render_json


class Command(BaseCommand):
    help = 'Run a scenario file on a fresh ledger and write the event log and the report.'

    def add_arguments(self, parser):
        parser.add_argument('scenario', help='scenario JSON file')
        parser.add_argument('--out', help='events JSONL file (default: stdout)')
        parser.add_argument('--offchain', help='off-chain voucher trace JSONL file')
        parser.add_argument('--report', help='report JSON file (default: stdout)')
        pass

    def handle(self, *args, **options):
        try:
            result = run_scenario(options['scenario'],
                                  out=options['out'],
                                  offchain=options['offchain'],
                                  report=options['report'])
        except ScenarioUnreadable as exc:
            raise CommandError(str(exc), returncode=1)
        except ScenarioInvalid as exc:
            for diagnostic in exc.diagnostics:
                self.stderr.write(diagnostic)
                pass
            raise CommandError(str(exc), returncode=1)
        except StepFailed as exc:
            raise CommandError(str(exc), returncode=2)

        if options['out'] is None:
            self.stdout.write(render_events(result.events).decode('utf-8'), ending='')
            pass
        if options['report'] is None:
            self.stdout.write(render_json(result.report).decode('utf-8'))
            pass
        self.stderr.write(self.style.SUCCESS('{} events, {} voucher messages'.format(len(result.events), len(result.trace))))
        pass

    pass
