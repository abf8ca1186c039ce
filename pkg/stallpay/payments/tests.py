import random

from django.test import SimpleTestCase, TestCase
from hypothesis import given, settings, strategies as st

from common.exceptions import Conflict, InsufficientFunds, InvalidArgument, InvalidState, NotFound, Unauthorized
from common.testing import World
from common.utils import ceil_div
from ledger.models import TRANSFER_KINDS, Event, EventKind
from registry.models import Car
from sigchain.signing import KeyPair, Voucher, sign_voucher
from stallpay.constant import HOUR, MAX_TIME, WEEK, WEEK_HOURS

from .models import Channel, PricingPolicy, derive_channel_id
from .offchain import OffchainSession, accept_voucher, next_voucher
from .policy import PaymentPolicy, WeekHourPolicy, rate_at, total_price
from .settlement import split_claim

rates = st.lists(st.integers(min_value=0, max_value=10**6), min_size=WEEK_HOURS, max_size=WEEK_HOURS)
time_points = st.integers(min_value=0, max_value=10 * WEEK)


def per_second_price(policy, start, end):
    """Per-second sum of rates with one ceiling at the end."""
    grid = policy.rates
    offset = policy.hour_offset
    return ceil_div(sum(grid[(s // HOUR + offset) % WEEK_HOURS] for s in range(start, end)), HOUR)


def per_slot_price(policy, start, end):
    """The same sum taken one hour slot at a time: rate * seconds spent in each slot."""
    grid = policy.rates
    offset = policy.hour_offset
    accrued = 0
    for slot in range(start // HOUR, ceil_div(end, HOUR)):
        seconds = min(end, (slot + 1) * HOUR) - max(start, slot * HOUR)
        accrued += grid[(slot + offset) % WEEK_HOURS] * seconds
        pass
    return ceil_div(accrued, HOUR)


class PolicyTests(SimpleTestCase):

    def test_uniform_rate(self):
        policy = WeekHourPolicy.uniform(1000)
        self.assertIsInstance(policy, PaymentPolicy)
        for t in (0, 1, HOUR * 37 + 5, 3 * WEEK):
            self.assertEqual(rate_at(policy, t), 1000)
            pass
        pass

    def test_grid_indexing(self):
        grid = [0] * WEEK_HOURS
        grid[0] = 7
        policy = WeekHourPolicy(tuple(grid))
        self.assertEqual(policy.rate_at(0), 7)
        self.assertEqual(policy.rate_at(HOUR - 1), 7)
        self.assertEqual(policy.rate_at(HOUR), 0)
        self.assertEqual(policy.rate_at(WEEK), 7)
        self.assertEqual(WeekHourPolicy(tuple(grid), hour_offset=1).rate_at(WEEK - HOUR), 7)
        pass

    def test_grid_validation(self):
        with self.assertRaises(InvalidArgument):
            WeekHourPolicy((1,) * (WEEK_HOURS - 1))
        with self.assertRaises(InvalidArgument):
            WeekHourPolicy((-1,) + (0,) * (WEEK_HOURS - 1))
        with self.assertRaises(InvalidArgument):
            WeekHourPolicy((1.5,) * WEEK_HOURS)
        for offset in (-1, WEEK_HOURS, 2**70, True):
            with self.assertRaises(InvalidArgument):
                WeekHourPolicy((1,) * WEEK_HOURS, hour_offset=offset)
            pass
        self.assertEqual(WeekHourPolicy((1,) * WEEK_HOURS, hour_offset=WEEK_HOURS - 1).hour_offset, WEEK_HOURS - 1)
        self.assertEqual(len(WeekHourPolicy.uniform(3).to_json()), WEEK_HOURS)
        pass

    def test_total_price_examples(self):
        policy = WeekHourPolicy.uniform(1000)
        self.assertEqual(total_price(policy, 500, 500), 0)
        self.assertEqual(total_price(policy, 0, 2 * HOUR), 2000)
        self.assertEqual(total_price(policy, 3600, 14400), 3000)
        # A single second is still charged.
        self.assertEqual(total_price(policy, 0, 1), 1)
        with self.assertRaises(InvalidArgument):
            total_price(policy, 10, 9)
        pass

    def test_slot_boundary(self):
        grid = [0] * WEEK_HOURS
        grid[0], grid[1] = 1000, 2000
        policy = WeekHourPolicy(tuple(grid))
        self.assertEqual(policy.total_price(0, HOUR + HOUR // 2), 2000)
        self.assertEqual(policy.total_price(0, HOUR + HOUR // 2), per_second_price(policy, 0, HOUR + HOUR // 2))
        pass

    def test_whole_weeks(self):
        policy = WeekHourPolicy(tuple(range(WEEK_HOURS)))
        self.assertEqual(policy.total_price(123, 123 + 2 * WEEK), 2 * sum(range(WEEK_HOURS)))
        pass

    def test_slot_oracle_agrees_with_per_second_sum(self):
        rng = random.Random(2)
        for _ in range(200):
            policy = WeekHourPolicy(tuple(rng.randint(0, 5000) for _ in range(WEEK_HOURS)),
                                    hour_offset=rng.randint(0, WEEK_HOURS - 1))
            start = rng.randint(0, 3 * WEEK)
            end = start + rng.randint(0, 3 * HOUR)
            self.assertEqual(per_slot_price(policy, start, end), per_second_price(policy, start, end), (start, end))
            pass
        pass

    def test_matches_slot_oracle_up_to_a_week(self):
        rng = random.Random(1)
        for _ in range(1000):
            policy = WeekHourPolicy(tuple(rng.randint(0, 5000) for _ in range(WEEK_HOURS)),
                                    hour_offset=rng.randint(0, WEEK_HOURS - 1))
            start = rng.randint(0, 3 * WEEK)
            end = start + rng.randint(0, WEEK)
            self.assertEqual(policy.total_price(start, end), per_slot_price(policy, start, end), (start, end))
            pass
        pass

    @settings(max_examples=200, deadline=None)
    @given(rates, time_points, st.integers(min_value=0, max_value=2 * WEEK))
    def test_weekly_periodicity(self, grid, start, duration):
        policy = WeekHourPolicy(tuple(grid))
        self.assertEqual(policy.total_price(start, start + duration),
                         policy.total_price(start + WEEK, start + WEEK + duration))
        pass

    @settings(max_examples=200, deadline=None)
    @given(rates, time_points, st.integers(min_value=0, max_value=WEEK), st.integers(min_value=0, max_value=WEEK))
    def test_near_additivity(self, grid, a, first, second):
        policy = WeekHourPolicy(tuple(grid))
        b, c = a + first, a + first + second
        whole = policy.total_price(a, c)
        self.assertIn(policy.total_price(a, b) + policy.total_price(b, c), (whole, whole + 1))
        pass

    pass


class SettlementTests(SimpleTestCase):

    def test_tenant_stall_example(self):
        breakdown = split_claim(5000, 3000, tax_rate=500, service_share=200, landlord_share=1000)
        self.assertEqual((breakdown.tax, breakdown.service, breakdown.landlord, breakdown.operator, breakdown.refund),
                         (150, 60, 300, 2490, 2000))
        self.assertEqual(breakdown.locked, 5000)
        pass

    def test_zero_claim(self):
        breakdown = split_claim(5000, 0, 500, 200, 1000)
        self.assertEqual(breakdown.as_dict(), {'claimed': 0, 'tax': 0, 'service': 0, 'landlord': 0, 'operator': 0, 'refund': 5000})
        pass

    def test_rejects_bad_input(self):
        with self.assertRaises(InvalidArgument):
            split_claim(100, 101)
        with self.assertRaises(InvalidArgument):
            split_claim(100, 50, tax_rate=5000, service_share=4000, landlord_share=1001)
        with self.assertRaises(InvalidArgument):
            split_claim(100, 50, tax_rate=10001)
        pass

    def test_identities_hold_for_random_cases(self):
        rng = random.Random(2)
        for _ in range(10000):
            locked = rng.choice([rng.randint(0, 10**4), rng.randint(0, 10**12), rng.randint(0, 2**62)])
            claimed = rng.randint(0, locked)
            tax = rng.randint(0, 10000)
            service = rng.randint(0, 10000 - tax)
            landlord = rng.randint(0, 10000 - tax - service)
            breakdown = split_claim(locked, claimed, tax, service, landlord)
            self.assertEqual(breakdown.tax, claimed * tax // 10000)
            self.assertEqual(breakdown.service, claimed * service // 10000)
            self.assertEqual(breakdown.landlord, claimed * landlord // 10000)
            self.assertEqual(breakdown.tax + breakdown.service + breakdown.landlord + breakdown.operator, claimed)
            self.assertEqual(breakdown.claimed + breakdown.refund, locked)
            self.assertGreaterEqual(breakdown.operator, 0)
            pass
        pass

    pass


def make_session(locked=5000, park_until=3 * HOUR, rate=1000, seed=21, channel_id=b'\x01' * 32):
    keys = KeyPair.from_seed(seed)
    session = OffchainSession(channel_id=channel_id,
                              payer_public=keys.public,
                              locked=locked,
                              opened_at=0,
                              park_until=park_until,
                              policy=WeekHourPolicy.uniform(rate),
                              payer_keys=keys)
    return session, keys


class OffchainSessionTests(SimpleTestCase):

    def test_emission_follows_the_price(self):
        session, _ = make_session()
        self.assertEqual(next_voucher(session, 0).cumulative, 0)
        self.assertEqual(next_voucher(session, HOUR + HOUR // 2).cumulative, 1500)
        self.assertEqual(next_voucher(session, 3 * HOUR).cumulative, 3000)
        self.assertEqual(next_voucher(session, 10 * HOUR).cumulative, 3000)
        self.assertEqual(session.last_emitted, 3000)
        pass

    def test_emission_is_capped_by_locked(self):
        session, _ = make_session(locked=1000)
        self.assertEqual(session.next_voucher(3 * HOUR).cumulative, 1000)
        pass

    def test_emission_preconditions(self):
        session, _ = make_session()
        session.opened_at = 100
        with self.assertRaises(InvalidArgument):
            session.next_voucher(99)
        session.close()
        with self.assertRaises(InvalidState):
            session.next_voucher(200)
        pass

    def test_acceptance_is_strictly_increasing(self):
        session, keys = make_session()
        first = session.next_voucher(HOUR)
        self.assertTrue(accept_voucher(session, first))
        self.assertFalse(accept_voucher(session, first))
        second = session.next_voucher(2 * HOUR)
        self.assertTrue(session.accept_voucher(second))
        self.assertFalse(session.accept_voucher(first))
        self.assertEqual(session.last_accepted, 2000)
        self.assertEqual(session.last_voucher, second)
        pass

    def test_over_locked_voucher_is_rejected(self):
        session, keys = make_session()
        self.assertFalse(session.accept_voucher(sign_voucher(keys, session.channel_id, 5001)))
        self.assertTrue(session.accept_voucher(sign_voucher(keys, session.channel_id, 5000)))
        pass

    def test_zero_voucher_is_not_progress(self):
        session, _ = make_session()
        self.assertFalse(session.accept_voucher(session.next_voucher(0)))
        pass

    pass


class AdversarialVoucherTests(SimpleTestCase):

    def test_no_invalid_voucher_is_ever_accepted(self):
        rng = random.Random(3)
        session, keys = make_session(locked=10**6, park_until=WEEK)
        payee_side = OffchainSession(channel_id=session.channel_id,
                                     payer_public=session.payer_public,
                                     locked=session.locked,
                                     opened_at=0,
                                     park_until=WEEK,
                                     policy=session.policy)
        foreign = KeyPair.from_seed(99)
        other_channel = b'\x02' * 32
        genuine = []
        best = 0
        for _ in range(10000):
            attack = rng.randrange(7)
            if attack == 0 or not genuine:
                voucher = sign_voucher(keys, session.channel_id, min(best + rng.randint(1, 50), session.locked))
                genuine.append(voucher)
            elif attack == 1:
                # replay
                voucher = rng.choice(genuine)
            elif attack == 2:
                wire = bytearray(rng.choice(genuine).to_wire())
                wire[rng.randrange(len(wire))] ^= 1 << rng.randrange(8)
                voucher = Voucher.from_wire(bytes(wire))
            elif attack == 3:
                voucher = sign_voucher(keys, session.channel_id, rng.randint(0, best))
            elif attack == 4:
                voucher = sign_voucher(keys, other_channel, best + rng.randint(1, 50))
            elif attack == 5:
                voucher = sign_voucher(foreign, session.channel_id, best + rng.randint(1, 50))
            else:
                voucher = sign_voucher(keys, session.channel_id, session.locked + rng.randint(1, 50))
                pass

            should_accept = (voucher in genuine and
                             voucher.channel_id == session.channel_id and
                             best < voucher.cumulative <= session.locked)
            accepted = payee_side.accept_voucher(voucher)
            self.assertEqual(accepted, should_accept, attack)
            if accepted:
                best = voucher.cumulative
                pass
            self.assertLessEqual(payee_side.last_accepted, best)
            pass
        self.assertEqual(payee_side.last_voucher.cumulative, best)
        pass

    pass


class ChannelTests(TestCase):

    def setUp(self):
        self.world = World()
        self.lot = self.world.lot(stalls=10, tax_rate=500, rate=1000)
        self.renting = self.world.tenancy(self.lot, stalls=(0, 1), landlord_share=1000)
        self.tenant = self.renting.tenant_provider
        self.sp = self.tenant.register_service_provider(self.world.tenant, self.world.finder, 200)
        self.car = self.world.car('A123BC')
        self.world.at(HOUR)
        pass

    def park(self, stall=0, until=4 * HOUR, deposit=5000, car=None, provider=None, sp=None, owner=None):
        car = car or self.car
        provider = provider or self.tenant
        return provider.start_parking(owner or car.owner, car, stall, until, deposit, sp)

    def voucher(self, channel, amount, keys=None):
        return sign_voucher(keys or self.world.driver.keys, channel.id_bytes, amount)

    def test_open(self):
        before = self.world.balance(self.world.driver)
        channel = self.park(sp=self.sp)
        self.assertEqual(channel.status, Channel.Status.OPEN)
        self.assertEqual((channel.locked, channel.quoted), (5000, 3000))
        self.assertEqual(channel.expiry, 4 * HOUR + self.world.ledger.grace)
        self.assertEqual(self.world.balance(self.world.driver), before - 5000)
        self.assertEqual(Car.objects.get(pk=self.car.pk).parked, (self.tenant.ref, 0, channel.ref))
        event = self.world.ledger.events_since(0)[-1]
        self.assertEqual(event.kind, EventKind.ESCROW_LOCK)
        self.assertEqual(event.payload['escrow'], channel.channel_id)
        pass

    def test_channel_id_is_derived(self):
        index = self.world.ledger.events.count()
        channel = self.park()
        self.assertEqual(channel.id_bytes, derive_channel_id(self.world.driver.address, self.tenant.ref, HOUR, index))
        pass

    def test_deposit_boundary(self):
        with self.assertRaises(InsufficientFunds):
            self.park(deposit=2999)
        channel = self.park(deposit=3000)
        self.assertEqual(channel.locked, 3000)
        pass

    def test_open_preconditions(self):
        self.park()
        with self.assertRaises(Conflict):
            self.park(stall=1)
        other = self.world.car('K777OT', owner=self.world.driver2)
        with self.assertRaises(Conflict):
            self.park(car=other)
        with self.assertRaises(Conflict):
            self.park(car=other, provider=self.lot, stall=1)
        with self.assertRaises(InvalidArgument):
            self.park(car=other, stall=1, until=HOUR)
        with self.assertRaises(Unauthorized):
            self.park(car=other, stall=1, owner=self.world.driver)
        with self.assertRaises(NotFound):
            self.park(car=other, provider=self.lot, stall=10)
        self.assertEqual(self.park(car=other, stall=1).stall.number, 1)
        pass

    def test_settle_distributes_the_claim(self):
        channel = self.park(sp=self.sp)
        balances = {name: self.world.balance(getattr(self.world, name)) for name in ('admin', 'finder', 'landlord', 'tenant', 'driver')}
        self.world.at(4 * HOUR)
        breakdown = channel.settle(self.world.tenant, self.voucher(channel, 3000))
        self.assertEqual((breakdown.tax, breakdown.service, breakdown.landlord, breakdown.operator, breakdown.refund),
                         (150, 60, 300, 2490, 2000))
        gained = {name: self.world.balance(getattr(self.world, name)) - before for name, before in balances.items()}
        self.assertEqual(gained, {'admin': 150, 'finder': 60, 'landlord': 300, 'tenant': 2490, 'driver': 2000})
        self.assertEqual(Channel.objects.get(pk=channel.pk).status, Channel.Status.SETTLED)
        car = Car.objects.get(pk=self.car.pk)
        self.assertIsNone(car.parked)
        self.assertEqual(car.history, [channel.ref])
        self.assertTrue(self.world.ledger.snapshot().conserved)
        pass

    def test_lot_session_pays_no_landlord_share(self):
        channel = self.park(provider=self.lot, stall=5)
        breakdown = channel.settle(self.world.landlord, self.voucher(channel, 2000))
        self.assertEqual((breakdown.tax, breakdown.landlord, breakdown.operator), (100, 0, 1900))
        pass

    def test_exactly_two_transactions_per_session(self):
        channel = self.park(sp=self.sp)
        session = OffchainSession.for_channel(channel)
        payee = OffchainSession.for_channel(channel, with_keys=False)
        for t in (2 * HOUR, 3 * HOUR, 4 * HOUR):
            self.assertTrue(payee.accept_voucher(session.next_voucher(t)))
            pass
        channel.settle(self.world.tenant, payee.last_voucher)
        kinds = list(Event.objects.filter(channel=channel.channel_id, kind__in=TRANSFER_KINDS).values_list('kind', flat=True))
        self.assertEqual(kinds, [EventKind.ESCROW_LOCK, EventKind.ESCROW_RELEASE])
        pass

    def test_settle_without_voucher_refunds_everything(self):
        channel = self.park()
        before = self.world.balance(self.world.driver)
        breakdown = channel.settle(self.world.tenant)
        self.assertEqual(breakdown.claimed, 0)
        self.assertEqual(self.world.balance(self.world.driver), before + 5000)
        pass

    def test_settle_preconditions(self):
        channel = self.park()
        with self.assertRaises(Unauthorized):
            channel.settle(self.world.driver, self.voucher(channel, 100))
        with self.assertRaises(InvalidArgument):
            channel.settle(self.world.tenant, self.voucher(channel, 100, keys=self.world.stranger.keys))
        with self.assertRaises(InvalidArgument):
            channel.settle(self.world.tenant, sign_voucher(self.world.driver.keys, b'\x00' * 32, 100))
        with self.assertRaises(InvalidArgument):
            channel.settle(self.world.tenant, self.voucher(channel, 5001))
        channel.settle(self.world.tenant, self.voucher(channel, 100))
        with self.assertRaises(InvalidState):
            channel.settle(self.world.tenant, self.voucher(channel, 200))
        pass

    def test_timeout_refund(self):
        channel = self.park()
        before = self.world.balance(self.world.driver)
        self.world.at(channel.expiry - 1)
        with self.assertRaises(InvalidState):
            channel.timeout_refund(self.world.driver)
        self.world.at(channel.expiry)
        with self.assertRaises(Unauthorized):
            channel.timeout_refund(self.world.tenant)
        self.assertEqual(channel.timeout_refund(self.world.driver), 5000)
        self.assertEqual(self.world.balance(self.world.driver), before + 5000)
        self.assertEqual(Channel.objects.get(pk=channel.pk).status, Channel.Status.REFUNDED)
        self.assertIsNone(Car.objects.get(pk=self.car.pk).parked)
        with self.assertRaises(InvalidState):
            channel.timeout_refund(self.world.driver)
        pass

    def test_refund_after_settlement_fails(self):
        channel = self.park()
        channel.settle(self.world.tenant, self.voucher(channel, 10))
        self.world.at(channel.expiry)
        with self.assertRaises(InvalidState):
            channel.timeout_refund(self.world.driver)
        pass

    def test_policy_is_captured_at_open(self):
        channel = self.park()
        dearer = PricingPolicy.define_policy(self.world.system, self.world.tenant, 2000)
        self.tenant.set_payment_policy(self.world.tenant, dearer)
        self.assertEqual(Channel.objects.get(pk=channel.pk).policy, WeekHourPolicy.uniform(1000))
        session = OffchainSession.for_channel(Channel.objects.get(pk=channel.pk))
        self.assertEqual(session.next_voucher(4 * HOUR).cumulative, 3000)

        other = self.world.car('K777OT', owner=self.world.driver2)
        with self.assertRaises(InsufficientFunds):
            self.park(car=other, stall=1, deposit=5000)
        self.assertEqual(self.park(car=other, stall=1, deposit=6000).quoted, 6000)
        pass

    def test_stranger_cannot_swap_policy(self):
        policy = PricingPolicy.define_policy(self.world.system, self.world.stranger, 1)
        with self.assertRaises(Unauthorized):
            self.tenant.set_payment_policy(self.world.stranger, policy)
        pass

    def test_amendment_applies_to_later_settlements(self):
        contract = self.lot.landlord_contract
        first = self.park(provider=self.lot, stall=5)
        second_car = self.world.car('K777OT', owner=self.world.driver2)
        second = self.park(provider=self.lot, stall=6, car=second_car)
        self.assertEqual(first.settle(self.world.landlord, self.voucher(first, 2000)).tax, 100)

        amendment = self.world.system.propose_amendment(self.world.landlord, contract, {'tax_rate': 400})
        self.world.system.resolve_amendment(self.world.admin, amendment, True)
        voucher = sign_voucher(self.world.driver2.keys, second.id_bytes, 2000)
        self.assertEqual(Channel.objects.get(pk=second.pk).settle(self.world.landlord, voucher).tax, 80)
        pass

    def test_settled_payee_never_exceeds_best_voucher(self):
        rng = random.Random(4)
        channel = self.park(deposit=10000, until=10 * HOUR)
        payee = OffchainSession.for_channel(channel, with_keys=False)
        forged = KeyPair.from_seed(1234)
        for _ in range(300):
            amount = rng.randint(0, 12000)
            keys = self.world.driver.keys if rng.random() < 0.5 else forged
            payee.accept_voucher(sign_voucher(keys, channel.id_bytes, amount))
            pass
        before = self.world.balance(self.world.driver)
        breakdown = channel.settle(self.world.tenant, payee.last_voucher)
        self.assertEqual(breakdown.claimed, payee.last_accepted)
        self.assertLessEqual(breakdown.claimed, 10000)
        self.assertEqual(self.world.balance(self.world.driver) - before, 10000 - payee.last_accepted)
        pass

    def test_expiry_must_fit_in_time(self):
        free = self.world.lot(stalls=2, rate=0, contract=self.lot.landlord_contract)
        last = MAX_TIME - self.world.ledger.grace
        for until in (MAX_TIME, last + 1):
            with self.assertRaises(InvalidArgument):
                self.park(provider=free, until=until, deposit=0)
            pass
        self.assertFalse(Channel.objects.filter(payee=free).exists())
        channel = self.park(provider=free, until=last, deposit=0)
        self.assertEqual(Channel.objects.get(pk=channel.pk).expiry, MAX_TIME)
        pass

    def test_channel_ids_repeat_across_systems(self):
        first = self.park()
        other = World()
        lot = other.lot(stalls=10, tax_rate=500, rate=1000)
        tenant = other.tenancy(lot, stalls=(0, 1), landlord_share=1000).tenant_provider
        tenant.register_service_provider(other.tenant, other.finder, 200)
        car = other.car('A123BC')
        other.at(HOUR)
        second = tenant.start_parking(other.driver, car, 0, 4 * HOUR, 5000)
        self.assertEqual(second.channel_id, first.channel_id)
        self.assertNotEqual(second.system_id, first.system_id)
        self.assertEqual(Channel.objects.filter(channel_id=first.channel_id).count(), 2)
        pass

    pass


class PricingPolicyTests(TestCase):

    def test_define_policy(self):
        world = World()
        policy = PricingPolicy.define_policy(world.system, world.landlord, 1000)
        self.assertEqual(policy.ref, 'policy:1')
        self.assertEqual(policy.as_policy(), WeekHourPolicy.uniform(1000))
        grid = list(range(WEEK_HOURS))
        self.assertEqual(PricingPolicy.define_policy(world.system, world.tenant, grid).rates, grid)
        event = world.ledger.events_since(0)[-1]
        self.assertEqual(event.kind, EventKind.POLICY_DEFINED)
        with self.assertRaises(InvalidArgument):
            PricingPolicy.define_policy(world.system, world.landlord, [1, 2, 3])
        with self.assertRaises(InvalidArgument):
            PricingPolicy.define_policy(world.system, world.landlord, grid, hour_offset=WEEK_HOURS)
        self.assertEqual(PricingPolicy.objects.filter(system=world.system).count(), 2)
        pass

    pass
