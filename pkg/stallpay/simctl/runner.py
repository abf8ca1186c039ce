"""
Scenario runner.

A scenario is executed against a fresh Ledger: genesis accounts are minted,
the parking system is deployed by the administrator, then every step moves
the clock to its `at` and calls one engine operation as its actor. Voucher
traffic stays in memory and in the off-chain trace.
"""
import hashlib
import json
from dataclasses import dataclass, field
from typing import List

from django.core.management import call_command
from django.db import DatabaseError, connection, transaction

from common.exceptions import EngineError, NotFound, Unauthorized
from ledger.models import Ledger
from payments.models import PricingPolicy
from payments.offchain import OffchainSession
from providers.models import ParkingLot
from registry.models import ParkingSystem
from stlog import logger

from .report import build_report
from .serializers import ScenarioSerializer, flatten_errors, render_events, render_json, render_jsonl


class ScenarioUnreadable(Exception):
    pass


class ScenarioInvalid(Exception):

    def __init__(self, diagnostics):
        super().__init__('scenario is invalid: {} problem(s)'.format(len(diagnostics)))
        self.diagnostics = diagnostics
        pass

    pass


class StepFailed(Exception):
    """
    An error at one step of a scenario. Besides engine errors this carries
    storage failures, so the step index is always reported.
    """

    def __init__(self, index, step, error):
        super().__init__('step {} ({} by {}): {}'.format(index, step['action'], step['actor'], error))
        self.index = index
        self.step = step
        self.error = error
        pass

    pass


def actor_seed(scenario_seed, actor):
    digest = hashlib.sha256('{}:{}'.format(scenario_seed, actor).encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'big') & (2**63 - 1)


def ensure_schema():
    # A fresh in-memory database has no tables until the first run.
    if Ledger._meta.db_table not in connection.introspection.table_names():
        call_command('migrate', run_syncdb=True, verbosity=0, interactive=False)
        pass
    pass


def load_scenario(path):
    try:
        with open(path, encoding='utf-8') as source:
            return json.load(source)
    except (OSError, UnicodeDecodeError) as exc:
        raise ScenarioUnreadable('cannot read {}: {}'.format(path, exc))
    except json.JSONDecodeError as exc:
        raise ScenarioUnreadable('{} is not JSON: {}'.format(path, exc))


def check_scenario(data):
    """Validated scenario data, or ScenarioInvalid with the diagnostics."""
    serializer = ScenarioSerializer(data=data)
    if not serializer.is_valid():
        raise ScenarioInvalid(flatten_errors(serializer.errors))
    return serializer.validated_data


def validate_scenario(path):
    """Schema and referential diagnostics of a scenario file. An empty list means valid."""
    try:
        check_scenario(load_scenario(path))
    except ScenarioInvalid as exc:
        return exc.diagnostics
    return []


@dataclass
class SessionPair:
    """Both ends of one channel's off-chain exchange."""
    payer: OffchainSession
    payee: OffchainSession
    in_flight: object = None

    def close(self):
        self.payer.close()
        self.payee.close()
        pass

    pass


@dataclass
class RunResult:
    ledger: Ledger
    events: list
    trace: list
    report: dict
    failures: List[StepFailed] = field(default_factory=list)
    pass


class ScenarioRunner:
    """
    Executes validated scenario data.

    With `halt_on_error` the first failing step raises StepFailed; otherwise
    the step is rolled back, recorded in `failures`, and the run goes on.
    `on_step(index, step, snapshot)` is called after every step.
    """

    def __init__(self, scenario, halt_on_error=True, on_step=None):
        self.scenario = scenario
        self.halt_on_error = halt_on_error
        self.on_step = on_step
        self.ledger = None
        self.system = None
        self.sessions = {}
        self.trace = []
        self.failures = []
        pass

    def setup(self):
        ensure_schema()
        scenario = self.scenario
        self.ledger = Ledger.objects.create(name='scenario-{}'.format(scenario['seed']),
                                            seed=scenario['seed'],
                                            grace=scenario['grace'])
        administrator = None
        for entry in scenario['genesis']:
            account = self.ledger.create_account(actor_seed(scenario['seed'], entry['actor']),
                                                 entry['balance'],
                                                 label=entry['actor'])
            if entry['role'] == 'administrator':
                administrator = account
                pass
            pass
        self.system = ParkingSystem.deploy(self.ledger, administrator)
        self.ledger.close_genesis()
        logger.info("scenario {}: {} actors, {} steps".format(scenario['seed'], len(scenario['genesis']), len(scenario['steps'])))
        pass

    def run(self):
        self.setup()
        for index, step in enumerate(self.scenario['steps']):
            self.ledger.set_time(step['at'])
            try:
                with transaction.atomic():
                    self.execute(index, step)
            except (EngineError, DatabaseError, OverflowError) as exc:
                failure = StepFailed(index, step, exc)
                if isinstance(exc, EngineError):
                    logger.warning(str(failure))
                else:
                    logger.error(str(failure))
                    pass
                if self.halt_on_error:
                    raise failure
                self.failures.append(failure)
                pass
            if self.on_step is not None:
                self.on_step(index, step, self.ledger.snapshot())
                pass
            pass
        return self

    def result(self):
        events = self.ledger.events_since(0)
        return RunResult(ledger=self.ledger,
                         events=events,
                         trace=list(self.trace),
                         report=build_report(self.ledger, events),
                         failures=list(self.failures))

    #
    # Steps
    #
    def execute(self, index, step):
        logger.info("step {} at {}: {} by {}".format(index, step['at'], step['action'], step['actor']))
        handler = getattr(self, 'do_{}'.format(step['action']))
        return handler(self.ledger.account(step['actor']), step['at'], index, **step['args'])

    def lookup(self, ref, kind=None):
        return self.system.lookup(ref, kind)

    def provider(self, ref):
        return self.lookup(ref)

    def session(self, channel_ref):
        try:
            return self.sessions[channel_ref]
        except KeyError:
            raise NotFound('no off-chain session for {}'.format(channel_ref))

    def log_voucher(self, kind, at, index, channel_ref, voucher, **extra):
        self.trace.append(dict(at=at,
                               step=index,
                               kind=kind,
                               channel=channel_ref,
                               cumulative=voucher.cumulative,
                               voucher=voucher.hex(),
                               **extra))
        pass

    def do_transfer(self, actor, at, index, to, amount):
        return self.ledger.transfer(actor, self.ledger.account(to), amount)

    def do_request_landlord_registration(self, actor, at, index, **terms):
        return self.system.request_landlord_registration(actor, **terms)

    def do_decide_registration(self, actor, at, index, request, approve):
        return self.system.decide_registration(actor, self.lookup(request, 'request'), approve)

    def do_revoke_landlord_contract(self, actor, at, index, contract):
        return self.system.revoke_landlord_contract(actor, self.lookup(contract, 'landlord_contract'))

    def do_register_car(self, actor, at, index, plate):
        return self.system.register_car(actor, plate)

    def do_propose_amendment(self, actor, at, index, contract, changes):
        return self.system.propose_amendment(actor, self.lookup(contract), changes)

    def do_resolve_amendment(self, actor, at, index, amendment, accept):
        return self.system.resolve_amendment(actor, self.lookup(amendment, 'amendment'), accept)

    def do_define_policy(self, actor, at, index, hour_offset=0, rates=None, rate=None):
        return PricingPolicy.define_policy(self.system, actor, rates if rates is not None else rate, hour_offset)

    def do_create_parking_lot(self, actor, at, index, landlord_contract, stalls, policy, location=''):
        return ParkingLot.create_parking_lot(self.system,
                                             actor,
                                             self.lookup(landlord_contract, 'landlord_contract'),
                                             stalls,
                                             self.lookup(policy, 'policy'),
                                             location=location)

    def do_request_tenancy(self, actor, at, index, lot, stalls, rent_fee, period, landlord_share=0, penalty_rate=0, policy=None):
        return self.lookup(lot, 'lot').request_tenancy(actor,
                                                       stalls,
                                                       rent_fee,
                                                       period,
                                                       landlord_share=landlord_share,
                                                       penalty_rate=penalty_rate,
                                                       policy=self.lookup(policy, 'policy') if policy else None)

    def do_approve_tenancy(self, actor, at, index, request):
        request = self.lookup(request, 'tenancy_request')
        return request.lot.approve_tenancy(actor, request)

    def do_reject_tenancy(self, actor, at, index, request):
        request = self.lookup(request, 'tenancy_request')
        return request.lot.reject_tenancy(actor, request)

    def do_pay_rent(self, actor, at, index, contract):
        return self.lookup(contract, 'renting_contract').pay_rent(actor)

    def do_terminate_tenancy(self, actor, at, index, contract):
        return self.lookup(contract, 'renting_contract').terminate(actor)

    def do_set_payment_policy(self, actor, at, index, provider, policy):
        return self.provider(provider).set_payment_policy(actor, self.lookup(policy, 'policy'))

    def do_register_service_provider(self, actor, at, index, provider, account, share):
        return self.provider(provider).register_service_provider(actor, self.ledger.account(account), share)

    def do_observe_occupancy(self, actor, at, index, lot, stall, plate=None):
        return self.lookup(lot, 'lot').observe_occupancy(stall, plate)

    def do_start_parking(self, actor, at, index, car, provider, stall, until, deposit, sp=None):
        channel = self.provider(provider).start_parking(actor,
                                                        self.lookup(car, 'car'),
                                                        stall,
                                                        until,
                                                        deposit,
                                                        self.lookup(sp, 'sp') if sp else None)
        self.sessions[channel.ref] = SessionPair(payer=OffchainSession.for_channel(channel),
                                                 payee=OffchainSession.for_channel(channel, with_keys=False))
        return channel

    def do_emit_voucher(self, actor, at, index, channel):
        row = self.lookup(channel, 'channel')
        if actor.pk != row.payer_id:
            raise Unauthorized('{} is not the payer of {}'.format(actor, channel))
        pair = self.session(channel)
        voucher = pair.payer.next_voucher(at)
        pair.in_flight = voucher
        self.log_voucher('VOUCHER_EMITTED', at, index, channel, voucher)
        return voucher

    def do_accept_voucher(self, actor, at, index, channel, voucher=None):
        row = self.lookup(channel, 'channel')
        if actor.pk != row.payee.owner_id:
            raise Unauthorized('{} is not the payee of {}'.format(actor, channel))
        pair = self.session(channel)
        voucher = voucher if voucher is not None else pair.in_flight
        if voucher is None:
            raise NotFound('no voucher in flight on {}'.format(channel))
        accepted = pair.payee.accept_voucher(voucher)
        self.log_voucher('VOUCHER_ACCEPTED' if accepted else 'VOUCHER_REJECTED', at, index, channel, voucher)
        return accepted

    def do_settle_channel(self, actor, at, index, channel, voucher=None):
        row = self.lookup(channel, 'channel')
        pair = self.sessions.get(channel)
        if voucher is None and pair is not None:
            voucher = pair.payee.last_voucher
            pass
        breakdown = row.settle(actor, voucher)
        if pair is not None:
            pair.close()
            pass
        return breakdown

    def do_timeout_refund(self, actor, at, index, channel):
        refunded = self.lookup(channel, 'channel').timeout_refund(actor)
        if channel in self.sessions:
            self.sessions[channel].close()
            pass
        return refunded

    pass


def write_artifact(path, content):
    with open(path, 'wb') as sink:
        sink.write(content)
        pass
    pass


def run_scenario(path, out=None, offchain=None, report=None):
    """
    Load, validate and run a scenario file, writing the event log, the
    off-chain trace and the report where asked.

    Raises ScenarioUnreadable, ScenarioInvalid or StepFailed. The artifacts
    of the steps that ran are written before StepFailed propagates.
    """
    scenario = check_scenario(load_scenario(path))
    runner = ScenarioRunner(scenario)
    failure = None
    try:
        runner.run()
    except StepFailed as exc:
        failure = exc
        pass
    result = runner.result()
    artifacts = ((out, render_events(result.events)),
                 (offchain, render_jsonl(result.trace)),
                 (report, render_json(result.report) + b'\n'))
    for target, content in artifacts:
        if target is not None:
            write_artifact(target, content)
            pass
        pass
    if failure is not None:
        raise failure
    return result

