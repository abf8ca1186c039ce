import random

from django.test import SimpleTestCase, TestCase
from hypothesis import given, strategies as st

from common.exceptions import Conflict, InsufficientFunds, InvalidArgument, InvalidState, NotFound, Overflow, Unauthorized
from common.testing import World
from ledger.models import EventKind
from payments.models import Channel
from sigchain.signing import sign_voucher
from stallpay.constant import BASIS_POINTS, HOUR, MAX_STALLS, MAX_TIME, WEEK

from .models import ParkingLot, Provider, RentingContract, Stall, TenancyRequest, check_renting_terms, rent_due


class RentDueTests(SimpleTestCase):

    def test_examples(self):
        # 10000 per week, 5% per late period, due at WEEK.
        self.assertEqual(rent_due(10000, 500, WEEK, WEEK, WEEK), (10000, 0, 0))
        self.assertEqual(rent_due(10000, 500, WEEK, WEEK, 10), (10000, 0, 0))
        self.assertEqual(rent_due(10000, 500, WEEK, WEEK, 2 * WEEK - 1), (10000, 0, 0))
        self.assertEqual(rent_due(10000, 500, WEEK, WEEK, 2 * WEEK), (10000, 500, 1))
        self.assertEqual(rent_due(10000, 500, WEEK, WEEK, 3 * WEEK), (10000, 1000, 2))
        self.assertEqual(rent_due(10000, 0, WEEK, WEEK, 30 * WEEK), (10000, 0, 29))
        pass

    @given(st.integers(0, 10**12), st.integers(0, BASIS_POINTS), st.integers(0, 10**9),
           st.integers(1, 10**7), st.integers(0, 10**10))
    def test_closed_form(self, fee, rate, next_due, period, now):
        rent, penalty, late = rent_due(fee, rate, next_due, period, now)
        self.assertEqual(rent, fee)
        self.assertEqual(late, max(0, now - next_due) // period)
        self.assertEqual(penalty, fee * rate * late // BASIS_POINTS)
        self.assertGreaterEqual(penalty, 0)
        pass

    def test_terms(self):
        self.assertEqual(check_renting_terms([3, 1, 2], 1, 1, 0, 0), [1, 2, 3])
        for bad in ([], [1, 1], ['1'], [True]):
            with self.assertRaises(InvalidArgument):
                check_renting_terms(bad, 1, 1, 0, 0)
                pass
            pass
        with self.assertRaises(InvalidArgument):
            check_renting_terms([1], 1, 0, 0, 0)
        with self.assertRaises(InvalidArgument):
            check_renting_terms([1], 1, 1, 10001, 0)
        with self.assertRaises(InvalidArgument):
            check_renting_terms([1], 1, MAX_TIME + 1, 0, 0)
        self.assertEqual(check_renting_terms([1], 1, MAX_TIME, 0, 0), [1])
        pass

    pass


class ParkingLotTests(TestCase):

    def setUp(self):
        self.world = World()
        pass

    def test_create(self):
        lot = self.world.lot(stalls=10)
        self.assertEqual((lot.ref, lot.kind, lot.owner), ('lot:1', Provider.Kind.LOT, self.world.landlord))
        self.assertEqual(list(lot.stalls.values_list('number', flat=True)), list(range(10)))
        self.assertEqual(set(Stall.objects.values_list('controller', flat=True)), {lot.pk})
        self.assertEqual(lot.free_stalls(), list(range(10)))
        event = self.world.ledger.events_since(0)[-1]
        self.assertEqual((event.kind, event.payload['stalls']), (EventKind.LOT_CREATED, 10))
        pass

    def test_stall_count(self):
        contract = self.world.landlord_contract()
        policy = self.world.policy()
        for stalls in (0, -1, MAX_STALLS + 1):
            with self.assertRaises(InvalidArgument):
                ParkingLot.create_parking_lot(self.world.system, self.world.landlord, contract, stalls, policy)
                pass
            pass
        pass

    def test_lookup_returns_the_lot(self):
        lot = self.world.lot()
        provider = Provider.objects.get(pk=lot.pk)
        self.assertIsInstance(provider.concrete(), ParkingLot)
        self.assertEqual(provider.lot, lot)
        self.assertIsNone(provider.renting)
        self.assertEqual(provider.landlord_share(), 0)
        pass

    def test_set_payment_policy(self):
        lot = self.world.lot(rate=1000)
        policy = self.world.policy(rate=2000)
        self.assertTrue(lot.set_payment_policy(self.world.landlord, policy))
        car = self.world.car()
        channel = lot.start_parking(self.world.driver, car, 0, HOUR, 5000)
        self.assertEqual(channel.quoted, 2000)
        pass

    pass


class TenancyTests(TestCase):

    def setUp(self):
        self.world = World()
        self.lot = self.world.lot(stalls=10)
        pass

    def test_approve(self):
        self.world.at(100)
        request = self.lot.request_tenancy(self.world.tenant, [1, 0], 10000, WEEK, landlord_share=1000, penalty_rate=500)
        self.assertEqual((request.stall_numbers, request.status), ([0, 1], TenancyRequest.Status.PENDING))
        renting = self.lot.approve_tenancy(self.world.landlord, request)
        self.assertEqual((renting.ref, renting.next_due, renting.status), ('renting_contract:1', 100 + WEEK, RentingContract.Status.ACTIVE))
        tenant = renting.tenant_provider
        self.assertEqual((tenant.ref, tenant.owner, tenant.policy), ('tenant:1', self.world.tenant, self.lot.policy))
        self.assertEqual(tenant.free_stalls(), [0, 1])
        self.assertEqual(self.lot.free_stalls(), list(range(2, 10)))
        self.assertEqual(tenant.lot, self.lot)
        self.assertEqual(tenant.landlord_share(), 1000)
        self.assertEqual(tenant.tax_rate(), 500)
        pass

    def test_tenant_policy(self):
        policy = self.world.policy(rate=3000, owner=self.world.tenant)
        renting = self.world.tenancy(self.lot, policy=policy)
        self.assertEqual(renting.tenant_provider.policy, policy)
        pass

    def test_first_due_date_must_fit_in_time(self):
        self.world.at(100)
        with self.assertRaises(InvalidArgument):
            self.lot.request_tenancy(self.world.tenant, [0], 10000, 2**70)
        request = self.lot.request_tenancy(self.world.tenant, [0], 10000, MAX_TIME - 99)
        with self.assertRaises(Overflow):
            self.lot.approve_tenancy(self.world.landlord, request)
        self.assertEqual(TenancyRequest.objects.get(pk=request.pk).status, TenancyRequest.Status.PENDING)
        self.assertFalse(RentingContract.objects.filter(lot=self.lot).exists())
        self.assertEqual(self.lot.free_stalls(), list(range(10)))
        pass

    def test_bad_subsets(self):
        self.world.tenancy(self.lot, stalls=(0, 1))
        with self.assertRaises(Conflict):
            self.lot.request_tenancy(self.world.tenant, [1, 2], 1000, WEEK)
        with self.assertRaises(NotFound):
            self.lot.request_tenancy(self.world.tenant, [99], 1000, WEEK)
        with self.assertRaises(InvalidArgument):
            self.lot.request_tenancy(self.world.tenant, [3, 3], 1000, WEEK)
        with self.assertRaises(InvalidArgument):
            self.lot.request_tenancy(self.world.tenant, [], 1000, WEEK)
        pass

    def test_landlord_share_over_budget(self):
        with self.assertRaises(InvalidArgument):
            self.lot.request_tenancy(self.world.tenant, [0], 1000, WEEK, landlord_share=9600)
        pass

    def test_only_the_lot_owner_decides(self):
        request = self.lot.request_tenancy(self.world.tenant, [0], 1000, WEEK)
        with self.assertRaises(Unauthorized):
            self.lot.approve_tenancy(self.world.tenant, request)
        with self.assertRaises(Unauthorized):
            self.lot.reject_tenancy(self.world.tenant, request)
        pass

    def test_stale_request(self):
        first = self.lot.request_tenancy(self.world.tenant, [0, 1], 1000, WEEK)
        second = self.lot.request_tenancy(self.world.stranger, [1, 2], 1000, WEEK)
        self.lot.approve_tenancy(self.world.landlord, first)
        with self.assertRaises(Conflict):
            self.lot.approve_tenancy(self.world.landlord, second)
        self.assertEqual(TenancyRequest.objects.get(pk=second.pk).status, TenancyRequest.Status.PENDING)
        pass

    def test_reject(self):
        request = self.lot.request_tenancy(self.world.tenant, [0], 1000, WEEK)
        self.lot.reject_tenancy(self.world.landlord, request)
        self.assertEqual(request.status, TenancyRequest.Status.REJECTED)
        with self.assertRaises(InvalidState):
            self.lot.approve_tenancy(self.world.landlord, request)
        self.assertEqual(self.lot.free_stalls(), list(range(10)))
        pass

    def test_session_blocks_tenancy(self):
        self.lot.start_parking(self.world.driver, self.world.car(), 4, HOUR, 5000)
        with self.assertRaises(Conflict):
            self.lot.request_tenancy(self.world.tenant, [4], 1000, WEEK)
        pass

    def test_lot_cannot_use_rented_stalls(self):
        self.world.tenancy(self.lot, stalls=(0, 1))
        with self.assertRaises(Conflict):
            self.lot.start_parking(self.world.driver, self.world.car(), 0, HOUR, 5000)
        pass

    def test_stall_control_stays_a_partition(self):
        rng = random.Random(11)
        for _ in range(40):
            active = list(self.lot.active_rentals())
            if active and rng.random() < 0.4:
                renting = rng.choice(active)
                renting.terminate(rng.choice([self.world.landlord, self.world.tenant]))
            else:
                numbers = rng.sample(range(10), rng.randint(1, 3))
                try:
                    request = self.lot.request_tenancy(self.world.tenant, numbers, 100, WEEK)
                except Conflict:
                    continue
                self.lot.approve_tenancy(self.world.landlord, request)
                pass

            seen = set()
            for renting in self.lot.active_rentals():
                stalls = set(renting.stall_numbers)
                self.assertFalse(stalls & seen)
                seen |= stalls
                controlled = set(renting.tenant_provider.controlled_stalls.values_list('number', flat=True))
                self.assertEqual(controlled, stalls)
                pass
            self.assertEqual(set(self.lot.controlled_stalls.values_list('number', flat=True)), set(range(10)) - seen)
            pass
        pass

    pass


class RentTests(TestCase):

    def setUp(self):
        self.world = World()
        self.lot = self.world.lot()
        self.renting = self.world.tenancy(self.lot, rent_fee=10000, period=WEEK, penalty_rate=500)
        pass

    def test_on_time(self):
        self.world.at(WEEK)
        payment = self.renting.pay_rent(self.world.tenant)
        self.assertEqual((payment.rent, payment.penalty, payment.late_periods, payment.total), (10000, 0, 0, 10000))
        self.assertEqual(payment.next_due, 2 * WEEK)
        self.assertEqual(self.world.balance(self.world.tenant), 1000000 - 10000)
        self.assertEqual(self.world.balance(self.world.landlord), 1000000 + 10000)
        event = self.world.ledger.events_since(payment.event_index)[0]
        self.assertEqual(event.kind, EventKind.TRANSFER)
        self.assertEqual((event.payload['contract'], event.payload['rent'], event.payload['penalty']), (self.renting.ref, 10000, 0))
        pass

    def test_early(self):
        payment = self.renting.pay_rent(self.world.tenant)
        self.assertEqual((payment.total, payment.next_due), (10000, 2 * WEEK))
        pass

    def test_late(self):
        self.world.at(2 * WEEK - 1)
        self.assertEqual(self.renting.pay_rent(self.world.tenant).total, 10000)
        self.world.at(3 * WEEK)
        self.assertEqual(self.renting.pay_rent(self.world.tenant).total, 10500)
        pass

    def test_next_due_date_must_fit_in_time(self):
        renting = self.world.tenancy(self.lot, stalls=(5,), period=MAX_TIME // 2 + 1)
        self.assertEqual(renting.next_due, MAX_TIME // 2 + 1)
        before = self.world.balance(self.world.tenant)
        with self.assertRaises(Overflow):
            renting.pay_rent(self.world.tenant)
        self.assertEqual(RentingContract.objects.get(pk=renting.pk).next_due, MAX_TIME // 2 + 1)
        self.assertEqual(self.world.balance(self.world.tenant), before)
        pass

    def test_two_periods_late(self):
        self.world.at(3 * WEEK)
        payment = self.renting.pay_rent(self.world.tenant)
        self.assertEqual((payment.penalty, payment.late_periods, payment.total), (1000, 2, 11000))
        self.assertEqual(RentingContract.objects.get(pk=self.renting.pk).next_due, 2 * WEEK)
        pass

    def test_insufficient_funds(self):
        renting = self.world.tenancy(self.lot, stalls=(5,), rent_fee=2000000)
        with self.assertRaises(InsufficientFunds):
            renting.pay_rent(self.world.tenant)
        self.assertEqual(RentingContract.objects.get(pk=renting.pk).next_due, WEEK)
        pass

    def test_only_the_tenant_pays(self):
        with self.assertRaises(Unauthorized):
            self.renting.pay_rent(self.world.landlord)
        pass

    def test_terminated(self):
        self.renting.terminate(self.world.tenant)
        with self.assertRaises(InvalidState):
            self.renting.pay_rent(self.world.tenant)
        pass

    def test_random_schedule(self):
        rng = random.Random(3)
        now = 0
        for _ in range(20):
            now += rng.randint(0, 3 * WEEK)
            self.world.at(now)
            renting = RentingContract.objects.get(pk=self.renting.pk)
            expected = rent_due(10000, 500, renting.next_due, WEEK, now)
            before = self.world.balance(self.world.landlord)
            payment = renting.pay_rent(self.world.tenant)
            self.assertEqual((payment.rent, payment.penalty, payment.late_periods), expected)
            self.assertEqual(self.world.balance(self.world.landlord) - before, payment.total)
            self.assertEqual(payment.next_due, renting.next_due)
            pass
        self.assertTrue(self.world.ledger.snapshot().conserved)
        pass

    pass


class ServiceProviderTests(TestCase):

    def setUp(self):
        self.world = World()
        self.lot = self.world.lot(tax_rate=500)
        self.tenant = self.world.tenancy(self.lot, landlord_share=1000).tenant_provider
        pass

    def test_register(self):
        sp = self.tenant.register_service_provider(self.world.tenant, self.world.finder, 200)
        self.assertEqual((sp.ref, sp.share, sp.account), ('sp:1', 200, self.world.finder))
        with self.assertRaises(Conflict):
            self.tenant.register_service_provider(self.world.tenant, self.world.finder, 100)
        pass

    def test_share_budget(self):
        with self.assertRaises(InvalidArgument):
            self.tenant.register_service_provider(self.world.tenant, self.world.finder, 9000)
        with self.assertRaises(InvalidArgument):
            self.tenant.register_service_provider(self.world.tenant, self.world.finder, 10001)
        # The lot's own budget has no landlord share.
        self.lot.register_service_provider(self.world.landlord, self.world.finder, 9500)
        pass

    def test_zero_share_earns_nothing(self):
        sp = self.tenant.register_service_provider(self.world.tenant, self.world.finder, 0)
        car = self.world.car()
        channel = self.tenant.start_parking(self.world.driver, car, 0, HOUR, 5000, service_provider=sp)
        breakdown = channel.settle(self.world.tenant, sign_voucher(self.world.driver.keys, channel.id_bytes, 1000))
        self.assertEqual(breakdown.service, 0)
        self.assertEqual(self.world.balance(self.world.finder), 0)
        pass

    def test_foreign_service_provider(self):
        sp = self.lot.register_service_provider(self.world.landlord, self.world.finder, 100)
        with self.assertRaises(NotFound):
            self.tenant.start_parking(self.world.driver, self.world.car(), 0, HOUR, 5000, service_provider=sp)
        pass

    pass


class OccupancyTests(TestCase):

    def setUp(self):
        self.world = World()
        self.lot = self.world.lot()
        self.car = self.world.car('A123BC')
        pass

    def test_empty_stall(self):
        self.assertEqual(self.lot.observe_occupancy(3).kind, EventKind.OCCUPANCY_OK)
        pass

    def test_car_without_session(self):
        event = self.lot.observe_occupancy(3, 'A123BC')
        self.assertEqual(event.kind, EventKind.OCCUPANCY_VIOLATION)
        self.assertEqual((event.payload['plate'], event.payload['expected']), ('A123BC', None))
        self.assertEqual(self.lot.stalls.get(number=3).occupied_by, 'A123BC')
        self.assertNotIn(3, self.lot.free_stalls())
        pass

    def test_session_stall(self):
        channel = self.lot.start_parking(self.world.driver, self.car, 3, HOUR, 5000)
        event = self.lot.observe_occupancy(3, 'A123BC')
        self.assertEqual(event.kind, EventKind.OCCUPANCY_OK)
        self.assertEqual(event.payload['channel_ref'], channel.ref)
        self.assertEqual(self.lot.observe_occupancy(3, 'X999XX').kind, EventKind.OCCUPANCY_MISMATCH)
        event = self.lot.observe_occupancy(3)
        self.assertEqual((event.kind, event.payload['expected']), (EventKind.OCCUPANCY_MISMATCH, 'A123BC'))
        pass

    def test_unknown_stall(self):
        with self.assertRaises(NotFound):
            self.lot.observe_occupancy(10, 'A123BC')
        pass

    pass


class StartParkingTests(TestCase):

    def setUp(self):
        self.world = World()
        self.lot = self.world.lot(rate=1000)
        self.car = self.world.car()
        pass

    def test_three_hours(self):
        channel = self.lot.start_parking(self.world.driver, self.car, 3, 3 * HOUR, 5000)
        self.assertEqual((channel.quoted, channel.locked, channel.status), (3000, 5000, Channel.Status.OPEN))
        self.assertEqual(self.world.balance(self.world.driver), 1000000 - 5000)
        self.assertEqual(self.world.ledger.escrow_total(), 5000)
        self.assertEqual(self.car.parked, ('lot:1', 3, channel.ref))
        self.assertNotIn(3, self.lot.free_stalls())
        pass

    def test_deposit_below_price(self):
        with self.assertRaises(InsufficientFunds):
            self.lot.start_parking(self.world.driver, self.car, 3, 3 * HOUR, 2999)
        self.assertEqual(self.world.balance(self.world.driver), 1000000)
        self.assertIsNone(self.car.parked)
        pass

    def test_one_session_per_car(self):
        self.lot.start_parking(self.world.driver, self.car, 3, 3 * HOUR, 5000)
        with self.assertRaises(Conflict):
            self.lot.start_parking(self.world.driver, self.car, 4, 3 * HOUR, 5000)
        pass

    def test_one_session_per_stall(self):
        self.lot.start_parking(self.world.driver, self.car, 3, 3 * HOUR, 5000)
        other = self.world.car('K777OT', owner=self.world.driver2)
        with self.assertRaises(Conflict):
            self.lot.start_parking(self.world.driver2, other, 3, 3 * HOUR, 5000)
        pass

    def test_bad_arguments(self):
        self.world.at(100)
        with self.assertRaises(InvalidArgument):
            self.lot.start_parking(self.world.driver, self.car, 3, 100, 5000)
        with self.assertRaises(NotFound):
            self.lot.start_parking(self.world.driver, self.car, 10, 3 * HOUR, 5000)
        with self.assertRaises(Unauthorized):
            self.lot.start_parking(self.world.driver2, self.car, 3, 3 * HOUR, 5000)
        pass

    def test_deposit_above_balance(self):
        with self.assertRaises(InsufficientFunds):
            self.lot.start_parking(self.world.driver, self.car, 3, 3 * HOUR, 2000000)
        pass

    pass


class TerminateTests(TestCase):

    def setUp(self):
        self.world = World()
        self.lot = self.world.lot()
        self.renting = self.world.tenancy(self.lot, stalls=(0, 1))
        self.tenant = self.renting.tenant_provider
        pass

    def test_open_session_blocks_termination(self):
        car = self.world.car()
        channel = self.tenant.start_parking(self.world.driver, car, 0, HOUR, 5000)
        with self.assertRaises(Conflict):
            self.renting.terminate(self.world.landlord)
        channel.settle(self.world.tenant)
        self.renting.terminate(self.world.landlord)
        self.assertEqual(self.renting.status, RentingContract.Status.TERMINATED)
        pass

    def test_stalls_return_to_the_lot(self):
        self.renting.terminate(self.world.tenant)
        self.assertEqual(self.lot.free_stalls(), list(range(10)))
        self.assertEqual(self.tenant.free_stalls(), [])
        event = self.world.ledger.events_since(0)[-1]
        self.assertEqual((event.kind, event.payload['stalls']), (EventKind.TENANCY_TERMINATED, [0, 1]))
        self.lot.start_parking(self.world.driver, self.world.car(), 0, HOUR, 5000)
        pass

    def test_terminated_tenant_is_closed(self):
        self.renting.terminate(self.world.tenant)
        with self.assertRaises(InvalidState):
            self.renting.terminate(self.world.landlord)
        tenant = Provider.objects.get(pk=self.tenant.pk).concrete()
        with self.assertRaises(InvalidState):
            tenant.start_parking(self.world.driver, self.world.car(), 0, HOUR, 5000)
        pass

    def test_stalls_can_be_rented_again(self):
        self.renting.terminate(self.world.landlord)
        renting = self.world.tenancy(self.lot, stalls=(1, 2))
        self.assertEqual(renting.tenant_provider.ref, 'tenant:2')
        pass

    pass
