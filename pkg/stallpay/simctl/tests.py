import json
import os
import random
import tempfile
from io import StringIO
from unittest import mock

from django.core.management import call_command
from django.core.management.base import CommandError
from django.db import DatabaseError
from django.test import TestCase

from common.exceptions import InvalidArgument, Overflow, Unauthorized
from ledger.models import EventKind, TRANSFER_KINDS
from payments.models import Channel
from sigchain.signing import sign_voucher
from stallpay.constant import HOUR, MAX_TIME

from .report import fold_balances, fold_occupancy, session_transactions
from .runner import (ScenarioInvalid, ScenarioRunner, ScenarioUnreadable, StepFailed, actor_seed, check_scenario,
                     load_scenario, run_scenario, validate_scenario)
from .serializers import render_events

GOLDEN = os.path.join(os.path.dirname(__file__), 'scenarios', 'golden.json')

GOLDEN_BALANCES = {
    'city': 280,
    'landlord': 1022760,
    'tenant': 982488,
    'driver': 996400,
    'driver2': 498000,
    'finder': 72,
}


def golden():
    with open(GOLDEN, encoding='utf-8') as source:
        return json.load(source)


class ScenarioFileMixin:

    def setUp(self):
        super().setUp()
        self.tmp = tempfile.TemporaryDirectory()
        pass

    def tearDown(self):
        self.tmp.cleanup()
        super().tearDown()
        pass

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def write_scenario(self, data, name='scenario.json'):
        path = self.path(name)
        with open(path, 'w', encoding='utf-8') as sink:
            sink.write(data if isinstance(data, str) else json.dumps(data))
            pass
        return path

    def read(self, name):
        with open(self.path(name), 'rb') as source:
            return source.read()

    pass


class ActorSeedTests(TestCase):

    def test_stable_and_in_range(self):
        self.assertEqual(actor_seed(42, 'driver'), actor_seed(42, 'driver'))
        self.assertNotEqual(actor_seed(42, 'driver'), actor_seed(43, 'driver'))
        self.assertNotEqual(actor_seed(42, 'driver'), actor_seed(42, 'driver2'))
        self.assertLess(actor_seed(42, 'driver'), 2**63)
        pass

    pass


class ValidateTests(ScenarioFileMixin, TestCase):

    def test_golden_is_valid(self):
        self.assertEqual(validate_scenario(GOLDEN), [])
        pass

    def test_undeclared_actor(self):
        data = golden()
        data['steps'][3]['actor'] = 'mallory'
        diagnostics = validate_scenario(self.write_scenario(data))
        self.assertEqual(diagnostics, ["step 3: undeclared actor 'mallory'"])
        pass

    def test_undeclared_actor_argument(self):
        data = golden()
        data['steps'][7]['args']['account'] = 'nobody'
        self.assertEqual(validate_scenario(self.write_scenario(data)), ["step 7: account names undeclared actor 'nobody'"])
        pass

    def test_version(self):
        data = golden()
        data['version'] = 2
        self.assertEqual(validate_scenario(self.write_scenario(data)), ['version: unsupported version 2'])
        pass

    def test_steps_out_of_order(self):
        data = golden()
        data['steps'][2]['at'] = 10
        self.assertEqual(validate_scenario(self.write_scenario(data)), ['step 2: at 10 is before the previous step at 60'])
        pass

    def test_bad_arguments(self):
        data = golden()
        data['steps'][0]['args']['tax_rate'] = 10001
        data['steps'][1]['args']['request'] = 'lot:1'
        data['steps'][4]['args']['color'] = 'red'
        diagnostics = validate_scenario(self.write_scenario(data))
        self.assertEqual(len(diagnostics), 3)
        self.assertTrue(diagnostics[0].startswith('step 0.args.tax_rate: '))
        self.assertTrue(diagnostics[1].startswith('step 1.args.request: '))
        self.assertEqual(diagnostics[2], 'step 4.args: unknown arguments: color')
        pass

    def test_unknown_action(self):
        data = golden()
        data['steps'][0]['action'] = 'mint'
        self.assertEqual(validate_scenario(self.write_scenario(data)), ["step 0.action: unknown action 'mint'"])
        pass

    def test_genesis(self):
        data = golden()
        data['genesis'][1]['role'] = 'administrator'
        data['genesis'].append(dict(data['genesis'][2]))
        diagnostics = validate_scenario(self.write_scenario(data))
        self.assertEqual(diagnostics, ['duplicate actors: tenant', 'exactly one administrator is required, found 2'])
        pass

    def test_policy_needs_one_form(self):
        data = golden()
        data['steps'][2]['args']['rates'] = [1] * 168
        self.assertEqual(len(validate_scenario(self.write_scenario(data))), 1)
        pass

    def test_hour_offset_range(self):
        data = golden()
        data['steps'][4]['args']['hour_offset'] = 168
        diagnostics = validate_scenario(self.write_scenario(data))
        self.assertEqual(len(diagnostics), 1)
        self.assertTrue(diagnostics[0].startswith('step 4.args.hour_offset: '))
        data['steps'][4]['args']['hour_offset'] = 167
        self.assertEqual(validate_scenario(self.write_scenario(data, 'last_hour.json')), [])
        pass

    def test_unreadable(self):
        with self.assertRaises(ScenarioUnreadable):
            validate_scenario(self.path('missing.json'))
        with self.assertRaises(ScenarioUnreadable):
            load_scenario(self.write_scenario('{"version": 1,'))
        pass

    def test_defaults(self):
        scenario = check_scenario({'version': 1, 'genesis': [{'actor': 'city', 'role': 'administrator'}]})
        self.assertEqual((scenario['seed'], scenario['grace'], scenario['steps']), (0, 86400, []))
        self.assertEqual(scenario['genesis'][0]['balance'], 0)
        pass

    pass


class GoldenRunTests(ScenarioFileMixin, TestCase):

    def setUp(self):
        super().setUp()
        self.result = run_scenario(GOLDEN)
        self.report = self.result.report
        pass

    def test_balances(self):
        self.assertEqual(self.report['balances'], GOLDEN_BALANCES)
        self.assertEqual(self.result.ledger.snapshot().by_label(), GOLDEN_BALANCES)
        self.assertEqual(self.report['genesis_total'], 3500000)
        self.assertEqual(self.report['escrow'], 0)
        self.assertTrue(self.report['conserved'])
        pass

    def test_sessions(self):
        channels = self.report['channels']
        self.assertEqual(channels['channel:1'], {'provider': 'tenant:1', 'car': 'car:1', 'locked': 5000, 'outcome': 'settled',
                                                 'claimed': 3600, 'tax': 180, 'service': 72, 'landlord': 360,
                                                 'operator': 2988, 'refund': 1400})
        self.assertEqual(channels['channel:2'], {'provider': 'lot:1', 'car': 'car:2', 'locked': 3000, 'outcome': 'settled',
                                                 'claimed': 2000, 'tax': 100, 'service': 0, 'landlord': 0,
                                                 'operator': 1900, 'refund': 1000})
        self.assertEqual((channels['channel:3']['outcome'], channels['channel:3']['refund']), ('refunded', 1000))
        pass

    def test_totals(self):
        totals = self.report['totals']
        self.assertEqual(totals['claimed'], totals['tax'] + totals['service'] + totals['landlord'] + totals['operator'])
        self.assertEqual(totals['claimed'], 5600)
        self.assertEqual(totals['refund'], 3400)
        self.assertEqual((totals['rent'], totals['penalties'], totals['transfers']), (20000, 500, 0))
        self.assertEqual(self.report['violations'], {'OCCUPANCY_MISMATCH': 1, 'OCCUPANCY_VIOLATION': 1})
        pass

    def test_occupancy(self):
        self.assertEqual(self.report['lots'], {'lot:1': {'stalls': 10, 'reserved': 0, 'occupied': 2, 'free': 8}})
        self.assertEqual(self.report['free_stalls'], len(self.result.ledger.system.lookup('lot:1').free_stalls()))
        pass

    def test_report_folds_from_events(self):
        genesis = {account.address: account.initial_balance for account in self.result.ledger.accounts.all()}
        balances, escrows = fold_balances(genesis, self.result.events)
        self.assertEqual(balances, {account.address: account.balance for account in self.result.ledger.accounts.all()})
        self.assertEqual(escrows, {})
        pass

    def test_two_ledger_transactions_per_session(self):
        channels = Channel.objects.filter(system=self.result.ledger.system)
        self.assertEqual(channels.count(), 3)
        for channel in channels:
            kinds = [event.kind for event in session_transactions(self.result.events, channel.channel_id)]
            self.assertEqual(kinds, [EventKind.ESCROW_LOCK, EventKind.ESCROW_RELEASE])
            pass
        pass

    def test_vouchers_stay_off_the_ledger(self):
        self.assertFalse([event for event in self.result.events if event.kind.startswith('VOUCHER')])
        self.assertEqual([entry['kind'] for entry in self.result.trace], ['VOUCHER_EMITTED', 'VOUCHER_ACCEPTED'] * 4)
        self.assertEqual([entry['cumulative'] for entry in self.result.trace if entry['channel'] == 'channel:1'],
                         [1200, 1200, 2400, 2400, 3600, 3600])
        # Two moves per session plus two rent payments.
        moves = [event for event in self.result.events if event.kind in TRANSFER_KINDS]
        self.assertEqual(len(moves), 8)
        pass

    def test_entities(self):
        system = self.result.ledger.system
        self.assertEqual(system.lookup('car:1').history, ['channel:1'])
        self.assertEqual(system.lookup('car:2').history, ['channel:2', 'channel:3'])
        self.assertEqual(system.lookup('landlord_contract:1').tax_rate, 400)
        self.assertEqual(system.lookup('renting_contract:1').status, 'terminated')
        self.assertEqual(system.lookup('lot:1').free_stalls(), [1, 2, 3, 4, 5, 6, 8, 9])
        pass

    def test_replay_is_byte_identical(self):
        first = run_scenario(GOLDEN, out=self.path('a.jsonl'), offchain=self.path('a.trace'), report=self.path('a.json'))
        second = run_scenario(GOLDEN, out=self.path('b.jsonl'), offchain=self.path('b.trace'), report=self.path('b.json'))
        self.assertNotEqual(first.ledger.pk, second.ledger.pk)
        for suffix in ('jsonl', 'trace', 'json'):
            self.assertEqual(self.read('a.' + suffix), self.read('b.' + suffix))
            pass
        self.assertEqual(self.read('a.jsonl'), render_events(self.result.events))
        lines = self.read('a.jsonl').decode('utf-8').splitlines()
        self.assertEqual([json.loads(line)['index'] for line in lines], list(range(len(self.result.events))))
        pass

    pass


class RunnerTests(ScenarioFileMixin, TestCase):

    def failing(self):
        data = golden()
        # The landlord tries to approve its own registration.
        data['steps'][1]['actor'] = 'landlord'
        return data

    def test_empty_run(self):
        data = golden()
        data['steps'] = []
        result = run_scenario(self.write_scenario(data))
        self.assertEqual(result.events, [])
        self.assertEqual(result.report['balances']['landlord'], 1000000)
        self.assertEqual((result.report['time'], result.report['event_count']), (0, 0))
        self.assertTrue(result.report['conserved'])
        pass

    def test_halts_on_the_first_failure(self):
        path = self.write_scenario(self.failing())
        with self.assertRaises(StepFailed) as caught:
            run_scenario(path, out=self.path('events.jsonl'), report=self.path('report.json'))
        self.assertEqual(caught.exception.index, 1)
        self.assertIsInstance(caught.exception.error, Unauthorized)
        # The registration request made it to the log before the failure.
        self.assertEqual(len(self.read('events.jsonl').splitlines()), 1)
        self.assertTrue(json.loads(self.read('report.json'))['conserved'])
        pass

    def test_keep_going(self):
        scenario = check_scenario(self.failing())
        runner = ScenarioRunner(scenario, halt_on_error=False).run()
        result = runner.result()
        self.assertEqual([failure.index for failure in result.failures][0], 1)
        self.assertGreater(len(result.failures), 1)
        self.assertTrue(result.report['conserved'])
        pass

    def test_invalid(self):
        data = golden()
        data['version'] = 3
        with self.assertRaises(ScenarioInvalid) as caught:
            run_scenario(self.write_scenario(data))
        self.assertEqual(caught.exception.diagnostics, ['version: unsupported version 3'])
        pass

    def test_voucher_roles(self):
        data = golden()
        data['steps'][15]['actor'] = 'tenant'
        scenario = check_scenario(data)
        with self.assertRaises(StepFailed) as caught:
            ScenarioRunner(scenario).run()
        self.assertEqual(caught.exception.step['action'], 'emit_voucher')
        self.assertIsInstance(caught.exception.error, Unauthorized)
        pass

    def test_occupancy_with_open_sessions(self):
        data = golden()
        data['steps'] = data['steps'][:15]
        result = ScenarioRunner(check_scenario(data)).run().result()
        self.assertEqual(result.report['lots'], {'lot:1': {'stalls': 10, 'reserved': 2, 'occupied': 2, 'free': 7}})
        self.assertEqual(fold_occupancy(result.events), result.report['lots'])
        system = result.ledger.system
        free = system.lookup('lot:1').free_stalls() + system.lookup('tenant:1').free_stalls()
        self.assertEqual(result.report['free_stalls'], len(free))
        pass

    def test_times_past_the_last_time_point(self):
        cases = (
            # (edited step, argument, value, failing step, error)
            (10, 'until', MAX_TIME, 10, InvalidArgument),
            (5, 'period', MAX_TIME, 6, Overflow),
            (29, 'changes', {'valid_until': 2**70}, 29, InvalidArgument),
        )
        for edited, name, value, index, error in cases:
            data = golden()
            data['steps'][edited]['args'][name] = value
            path = self.write_scenario(data, 'step{}.json'.format(index))
            with self.assertRaises(StepFailed) as caught:
                run_scenario(path, report=self.path('report{}.json'.format(index)))
            self.assertEqual(caught.exception.index, index)
            self.assertIsInstance(caught.exception.error, error)
            self.assertTrue(json.loads(self.read('report{}.json'.format(index)))['conserved'])
            pass
        pass

    def test_storage_failure_names_the_step(self):
        path = self.write_scenario(golden())
        with mock.patch.object(ScenarioRunner, 'do_register_car', side_effect=DatabaseError('disk I/O error')):
            with self.assertRaises(StepFailed) as caught:
                run_scenario(path, out=self.path('events.jsonl'), report=self.path('report.json'))
            pass
        self.assertEqual(caught.exception.index, 8)
        self.assertIsInstance(caught.exception.error, DatabaseError)
        self.assertIn('step 8 (register_car by driver)', str(caught.exception))
        lines = self.read('events.jsonl').splitlines()
        self.assertEqual(json.loads(lines[-1])['kind'], EventKind.SP_REGISTERED)
        self.assertTrue(json.loads(self.read('report.json'))['conserved'])
        pass

    def test_keep_going_past_storage_failures(self):
        scenario = check_scenario(golden())
        with mock.patch.object(ScenarioRunner, 'do_observe_occupancy', side_effect=OverflowError('too large')):
            result = ScenarioRunner(scenario, halt_on_error=False).run().result()
            pass
        self.assertEqual([failure.index for failure in result.failures], [12, 13, 14])
        self.assertTrue(all(isinstance(failure.error, OverflowError) for failure in result.failures))
        self.assertEqual(result.report['balances'], GOLDEN_BALANCES)
        self.assertEqual(result.report['lots']['lot:1']['free'], 10)
        pass

    def test_explicit_voucher(self):
        data = golden()
        data['steps'] = data['steps'][:11]
        result = ScenarioRunner(check_scenario(data)).run().result()
        channel = result.ledger.system.lookup('channel:1')
        voucher = sign_voucher(channel.payer.keys, channel.id_bytes, 4000).hex()

        data['steps'].append({'at': 20000, 'actor': 'tenant', 'action': 'settle_channel',
                              'args': {'channel': 'channel:1', 'voucher': voucher}})
        result = ScenarioRunner(check_scenario(data)).run().result()
        self.assertEqual(result.report['channels']['channel:1']['claimed'], 4000)
        pass

    pass


class CommandTests(ScenarioFileMixin, TestCase):

    def call(self, *args, **options):
        stdout, stderr = StringIO(), StringIO()
        call_command(*args, stdout=stdout, stderr=stderr, **options)
        return stdout.getvalue(), stderr.getvalue()

    def test_validate(self):
        stdout, _ = self.call('validate', GOLDEN)
        self.assertIn('is valid', stdout)
        pass

    def test_validate_invalid(self):
        data = golden()
        data['steps'][3]['actor'] = 'mallory'
        stdout = StringIO()
        with self.assertRaises(CommandError) as caught:
            call_command('validate', self.write_scenario(data), stdout=stdout)
        self.assertEqual(caught.exception.returncode, 1)
        self.assertIn("step 3: undeclared actor 'mallory'", stdout.getvalue())
        with self.assertRaises(CommandError) as caught:
            call_command('validate', self.path('missing.json'))
        self.assertEqual(caught.exception.returncode, 1)
        pass

    def test_run_to_files(self):
        stdout, stderr = self.call('run', GOLDEN, out=self.path('events.jsonl'), offchain=self.path('trace.jsonl'), report=self.path('report.json'))
        self.assertEqual(stdout, '')
        self.assertIn('events', stderr)
        self.assertEqual(json.loads(self.read('report.json'))['balances'], GOLDEN_BALANCES)
        self.assertEqual(len(self.read('trace.jsonl').splitlines()), 8)
        pass

    def test_run_to_stdout(self):
        stdout, _ = self.call('run', GOLDEN)
        lines = stdout.splitlines()
        self.assertEqual(json.loads(lines[-1])['balances'], GOLDEN_BALANCES)
        self.assertEqual(json.loads(lines[0])['kind'], EventKind.REQUEST)
        pass

    def test_storage_failure_exit_code(self):
        with mock.patch.object(ScenarioRunner, 'do_settle_channel', side_effect=DatabaseError('database is locked')):
            with self.assertRaises(CommandError) as caught:
                self.call('run', GOLDEN, out=self.path('events.jsonl'), report=self.path('report.json'))
            pass
        self.assertEqual(caught.exception.returncode, 2)
        self.assertIn('step 21 (settle_channel by landlord)', str(caught.exception))
        self.assertTrue(json.loads(self.read('report.json'))['conserved'])
        pass

    def test_exit_codes(self):
        data = golden()
        data['steps'][1]['actor'] = 'landlord'
        with self.assertRaises(CommandError) as caught:
            self.call('run', self.write_scenario(data), report=self.path('report.json'))
        self.assertEqual(caught.exception.returncode, 2)

        data['version'] = 7
        with self.assertRaises(CommandError) as caught:
            self.call('run', self.write_scenario(data, 'bad.json'))
        self.assertEqual(caught.exception.returncode, 1)
        with self.assertRaises(CommandError) as caught:
            self.call('run', self.write_scenario('not json', 'garbage.json'))
        self.assertEqual(caught.exception.returncode, 1)
        pass

    pass


class RandomScenarioTests(TestCase):
    """Arbitrary step sequences: steps may fail, funds may never leak."""

    ACTORS = ('city', 'landlord', 'tenant', 'driver', 'driver2', 'finder')

    def random_step(self, rng, at):
        ref = lambda kind, n=3: '{}:{}'.format(kind, rng.randint(1, n))
        provider = lambda: rng.choice([ref('lot', 2), ref('tenant', 2)])
        choices = [
            ('transfer', lambda: {'to': rng.choice(self.ACTORS), 'amount': rng.randint(0, 3000)}),
            ('request_landlord_registration', lambda: {'tax_rate': rng.randint(0, 2000)}),
            ('decide_registration', lambda: {'request': ref('request'), 'approve': rng.random() < 0.8}),
            ('register_car', lambda: {'plate': rng.choice(['A1', 'B2', 'C3'])}),
            ('define_policy', lambda: {'rate': rng.randint(0, 2000)}),
            ('create_parking_lot', lambda: {'landlord_contract': ref('landlord_contract', 2), 'stalls': rng.randint(1, 5), 'policy': ref('policy', 2)}),
            ('request_tenancy', lambda: {'lot': ref('lot', 2), 'stalls': rng.sample(range(5), rng.randint(1, 2)),
                                         'rent_fee': rng.randint(0, 5000), 'period': rng.randint(1, 48) * HOUR,
                                         'landlord_share': rng.randint(0, 3000), 'penalty_rate': rng.randint(0, 1000)}),
            ('approve_tenancy', lambda: {'request': ref('tenancy_request')}),
            ('pay_rent', lambda: {'contract': ref('renting_contract', 2)}),
            ('terminate_tenancy', lambda: {'contract': ref('renting_contract', 2)}),
            ('register_service_provider', lambda: {'provider': provider(), 'account': 'finder', 'share': rng.randint(0, 3000)}),
            ('observe_occupancy', lambda: {'lot': ref('lot', 2), 'stall': rng.randint(0, 5), 'plate': rng.choice([None, 'A1', 'B2'])}),
            ('start_parking', lambda: {'car': ref('car'), 'provider': provider(), 'stall': rng.randint(0, 5),
                                       'until': at + rng.randint(1, 5) * HOUR, 'deposit': rng.randint(0, 12000)}),
            ('emit_voucher', lambda: {'channel': ref('channel', 4)}),
            ('accept_voucher', lambda: {'channel': ref('channel', 4)}),
            ('settle_channel', lambda: {'channel': ref('channel', 4)}),
            ('timeout_refund', lambda: {'channel': ref('channel', 4)}),
            ('propose_amendment', lambda: {'contract': ref('landlord_contract', 2), 'changes': {'tax_rate': rng.randint(0, 2000)}}),
            ('resolve_amendment', lambda: {'amendment': ref('amendment', 2), 'accept': rng.random() < 0.5}),
        ]
        action, args = rng.choice(choices)
        return {'at': at, 'actor': rng.choice(self.ACTORS), 'action': action, 'args': args()}

    def random_scenario(self, seed):
        rng = random.Random(seed)
        data = golden()
        data['seed'] = seed
        data['grace'] = rng.choice([0, HOUR, 86400])
        # A working prefix, then noise.
        steps = data['steps'][:12]
        at = steps[-1]['at']
        for _ in range(rng.randint(10, 40)):
            at += rng.choice([0, 60, 1800, HOUR, 86400])
            steps.append(self.random_step(rng, at))
            pass
        data['steps'] = steps
        return data

    def test_funds_are_conserved(self):
        for seed in range(100):
            scenario = check_scenario(self.random_scenario(seed))

            def check(index, step, snapshot, seed=seed):
                self.assertTrue(snapshot.conserved, 'seed {} step {}'.format(seed, index))
                self.assertTrue(all(entry.balance >= 0 for entry in snapshot.balances))
                pass

            result = ScenarioRunner(scenario, halt_on_error=False, on_step=check).run().result()
            self.assertTrue(result.report['conserved'])
            self.assertEqual(result.report['balances'], result.ledger.snapshot().by_label())
            for channel in Channel.objects.filter(system=result.ledger.system).exclude(status=Channel.Status.OPEN):
                self.assertEqual(len(session_transactions(result.events, channel.channel_id)), 2)
                pass
            pass
        pass

    pass
