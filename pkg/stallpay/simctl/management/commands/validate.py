from django.core.management.base import BaseCommand, CommandError

from simctl.runner import ScenarioUnreadable, validate_scenario


class Command(BaseCommand):
    help = 'Check a scenario file against the schema without running it.'

    def add_arguments(self, parser):
        parser.add_argument('scenario', help='scenario JSON file')
        pass

    def handle(self, *args, **options):
        try:
            diagnostics = validate_scenario(options['scenario'])
        except ScenarioUnreadable as exc:
            raise CommandError(str(exc), returncode=1)
        for diagnostic in diagnostics:
            self.stdout.write(diagnostic)
            pass
        if diagnostics:
            raise CommandError('{} is invalid'.format(options['scenario']), returncode=1)
        self.stdout.write(self.style.SUCCESS('{} is valid'.format(options['scenario'])))
        pass

    pass
