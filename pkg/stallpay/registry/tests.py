from django.test import TestCase

from common.exceptions import Conflict, InvalidArgument, InvalidState, NotFound, Unauthorized
from common.testing import World
from ledger.models import EventKind
from payments.models import PricingPolicy
from providers.models import ParkingLot
from sigchain.signing import sign_voucher
from stallpay.constant import HOUR, MAX_TIME

from .models import Amendment, LandlordContract, ParkingSystem, RegistrationRequest

ROLES = ('admin', 'landlord', 'tenant', 'driver', 'driver2', 'finder', 'stranger')


class DeployTests(TestCase):

    def test_one_system_per_ledger(self):
        world = World()
        self.assertEqual(world.system.administrator, world.admin)
        self.assertEqual(world.ledger.events.count(), 0)
        with self.assertRaises(Conflict):
            ParkingSystem.deploy(world.ledger, world.landlord)
        pass

    pass


class RegistrationTests(TestCase):

    def setUp(self):
        self.world = World()
        self.system = self.world.system
        pass

    def test_approve(self):
        request = self.system.request_landlord_registration(self.world.landlord, 500, 'lot A', 0, 1000)
        self.assertEqual((request.ref, request.status), ('request:1', RegistrationRequest.Status.PENDING))
        contract = self.system.decide_registration(self.world.admin, request, True)
        self.assertEqual((contract.tax_rate, contract.land_info, contract.valid_from, contract.valid_until), (500, 'lot A', 0, 1000))
        self.assertEqual(contract.landlord, self.world.landlord)
        self.assertEqual(contract.status, LandlordContract.Status.ACTIVE)
        self.assertEqual(RegistrationRequest.objects.get(pk=request.pk).status, RegistrationRequest.Status.APPROVED)
        pass

    def test_open_ended_terms(self):
        request = self.system.request_landlord_registration(self.world.landlord, 500)
        self.assertEqual(request.valid_until, MAX_TIME)
        pass

    def test_reject(self):
        request = self.system.request_landlord_registration(self.world.landlord, 500)
        self.assertIsNone(self.system.decide_registration(self.world.admin, request, False))
        self.assertEqual(request.status, RegistrationRequest.Status.REJECTED)
        self.assertFalse(LandlordContract.objects.exists())
        pass

    def test_only_the_administrator_decides(self):
        request = self.system.request_landlord_registration(self.world.landlord, 500)
        with self.assertRaises(Unauthorized):
            self.system.decide_registration(self.world.landlord, request, True)
        pass

    def test_decisions_are_terminal(self):
        request = self.system.request_landlord_registration(self.world.landlord, 500)
        self.system.decide_registration(self.world.admin, request, True)
        with self.assertRaises(InvalidState):
            self.system.decide_registration(self.world.admin, request, True)
        pass

    def test_invalid_terms(self):
        with self.assertRaises(InvalidArgument):
            self.system.request_landlord_registration(self.world.landlord, 10001)
        with self.assertRaises(InvalidArgument):
            self.system.request_landlord_registration(self.world.landlord, 500, '', 10, 10)
        for valid_until in (MAX_TIME + 1, 2**70):
            with self.assertRaises(InvalidArgument):
                self.system.request_landlord_registration(self.world.landlord, 500, '', 0, valid_until)
            pass
        with self.assertRaises(InvalidArgument):
            self.system.request_landlord_registration(self.world.landlord, 500, '', 2**70, 2**71)
        self.assertFalse(RegistrationRequest.objects.filter(system=self.system).exists())
        pass

    def test_one_pending_request_per_landlord(self):
        self.system.request_landlord_registration(self.world.landlord, 500)
        with self.assertRaises(Conflict):
            self.system.request_landlord_registration(self.world.landlord, 400)
        pass

    def test_lazy_expiry(self):
        contract = self.world.landlord_contract(valid_until=100)
        self.world.at(100)
        policy = self.world.policy()
        with self.assertRaises(InvalidState):
            ParkingLot.create_parking_lot(self.system, self.world.landlord, contract, 3, policy)
        contract = LandlordContract.objects.get(pk=contract.pk)
        self.assertEqual(contract.status, LandlordContract.Status.ACTIVE)
        self.assertFalse(contract.is_active(self.world.ledger.now()))
        self.assertEqual(LandlordContract.objects.get(pk=contract.pk).status, LandlordContract.Status.EXPIRED)
        pass

    def test_contract_not_yet_in_force(self):
        contract = self.world.landlord_contract(valid_from=1000)
        with self.assertRaises(InvalidState):
            ParkingLot.create_parking_lot(self.system, self.world.landlord, contract, 3, self.world.policy())
        self.world.at(1000)
        self.assertEqual(ParkingLot.create_parking_lot(self.system, self.world.landlord, contract, 3, self.world.policy()).ref, 'lot:1')
        pass

    def test_revocation_stops_new_sessions(self):
        lot = self.world.lot()
        car = self.world.car()
        with self.assertRaises(Unauthorized):
            self.system.revoke_landlord_contract(self.world.landlord, lot.landlord_contract)
        self.system.revoke_landlord_contract(self.world.admin, lot.landlord_contract)
        with self.assertRaises(InvalidState):
            lot.start_parking(self.world.driver, car, 0, HOUR, 5000)
        with self.assertRaises(InvalidState):
            self.system.revoke_landlord_contract(self.world.admin, lot.landlord_contract)
        pass

    pass


class CarTests(TestCase):

    def setUp(self):
        self.world = World()
        pass

    def test_register(self):
        car = self.world.system.register_car(self.world.driver, 'AB123')
        self.assertEqual(car.ref, 'car:1')
        self.assertIsNone(car.parked)
        self.assertEqual((car.history, car.rating), ([], 0))
        event = self.world.ledger.events_since(0)[-1]
        self.assertEqual((event.kind, event.payload['plate']), (EventKind.CAR_REGISTERED, 'AB123'))
        pass

    def test_duplicate_plate(self):
        self.world.system.register_car(self.world.driver, 'AB123')
        with self.assertRaises(Conflict):
            self.world.system.register_car(self.world.driver2, 'AB123')
        # Plates are case-sensitive.
        self.world.system.register_car(self.world.driver2, 'ab123')
        pass

    def test_empty_plate(self):
        with self.assertRaises(InvalidArgument):
            self.world.system.register_car(self.world.driver, '')
        pass

    pass


class AmendmentTests(TestCase):

    def setUp(self):
        self.world = World()
        self.system = self.world.system
        self.contract = self.world.landlord_contract(tax_rate=500)
        pass

    def propose(self, changes=None, party=None):
        return self.system.propose_amendment(party or self.world.landlord, self.contract, changes or {'tax_rate': 400})

    def test_accept(self):
        amendment = self.propose()
        self.assertEqual((amendment.ref, amendment.status), ('amendment:1', Amendment.Status.PROPOSED))
        self.assertEqual(LandlordContract.objects.get(pk=self.contract.pk).tax_rate, 500)
        contract = self.system.resolve_amendment(self.world.admin, amendment, True)
        self.assertEqual(contract.tax_rate, 400)
        self.assertEqual(LandlordContract.objects.get(pk=self.contract.pk).tax_rate, 400)
        pass

    def test_either_party_proposes(self):
        amendment = self.propose({'land_info': 'lot B'}, party=self.world.admin)
        self.system.resolve_amendment(self.world.landlord, amendment, True)
        self.assertEqual(LandlordContract.objects.get(pk=self.contract.pk).land_info, 'lot B')
        pass

    def test_reject_leaves_contract_unchanged(self):
        amendment = self.propose()
        self.assertIsNone(self.system.resolve_amendment(self.world.admin, amendment, False))
        self.assertEqual(LandlordContract.objects.get(pk=self.contract.pk).tax_rate, 500)
        pass

    def test_stranger_cannot_propose(self):
        with self.assertRaises(Unauthorized):
            self.propose(party=self.world.driver)
        pass

    def test_expired_contract(self):
        contract = self.world.landlord_contract(landlord=self.world.stranger, valid_until=50)
        self.world.at(50)
        with self.assertRaises(InvalidState):
            self.system.propose_amendment(self.world.stranger, contract, {'tax_rate': 1})
        pass

    def test_proposer_cannot_accept(self):
        amendment = self.propose()
        with self.assertRaises(Unauthorized):
            self.system.resolve_amendment(self.world.landlord, amendment, True)
        pass

    def test_resolution_is_terminal(self):
        amendment = self.propose()
        self.system.resolve_amendment(self.world.admin, amendment, True)
        with self.assertRaises(InvalidState):
            self.system.resolve_amendment(self.world.admin, amendment, True)
        pass

    def test_bad_changes(self):
        with self.assertRaises(InvalidArgument):
            self.propose({'landlord': 'me'})
        with self.assertRaises(InvalidArgument):
            self.propose({'tax_rate': 20000})
        with self.assertRaises(InvalidArgument):
            self.propose({'valid_until': 0})
        with self.assertRaises(InvalidArgument):
            self.propose({'valid_until': 2**70})
        self.assertFalse(Amendment.objects.filter(system=self.system).exists())
        pass

    def test_valid_until_up_to_the_last_time_point(self):
        amendment = self.propose({'valid_until': MAX_TIME})
        contract = self.system.resolve_amendment(self.world.admin, amendment, True)
        self.assertEqual(LandlordContract.objects.get(pk=contract.pk).valid_until, MAX_TIME)
        pass

    def test_share_budget_is_rechecked_on_acceptance(self):
        lot = self.world.lot(contract=self.contract)
        renting = self.world.tenancy(lot, landlord_share=1000)
        renting.tenant_provider.register_service_provider(self.world.tenant, self.world.finder, 8000)
        amendment = self.propose({'tax_rate': 1500})
        with self.assertRaises(InvalidArgument):
            self.system.resolve_amendment(self.world.admin, amendment, True)
        self.assertEqual(Amendment.objects.get(pk=amendment.pk).status, Amendment.Status.PROPOSED)
        self.assertEqual(LandlordContract.objects.get(pk=self.contract.pk).tax_rate, 500)
        pass

    def test_renting_contract_amendment(self):
        lot = self.world.lot(contract=self.contract)
        renting = self.world.tenancy(lot, rent_fee=10000)
        amendment = self.system.propose_amendment(self.world.tenant, renting, {'rent_fee': 8000})
        with self.assertRaises(Unauthorized):
            self.system.resolve_amendment(self.world.admin, amendment, True)
        contract = self.system.resolve_amendment(self.world.landlord, amendment, True)
        self.assertEqual(contract.rent_fee, 8000)
        with self.assertRaises(InvalidArgument):
            self.system.propose_amendment(self.world.tenant, renting, {'stall_numbers': [5]})
        with self.assertRaises(InvalidArgument):
            self.system.propose_amendment(self.world.landlord, renting, {'period': MAX_TIME + 1})
        pass

    pass


class LookupTests(TestCase):

    def test_lookup_by_ref(self):
        world = World()
        lot = world.lot()
        car = world.car()
        self.assertEqual(world.system.lookup('lot:1'), lot)
        self.assertEqual(world.system.lookup('car:1', 'car'), car)
        self.assertEqual(world.system.lookup('landlord_contract:1'), lot.landlord_contract)
        with self.assertRaises(NotFound):
            world.system.lookup('car:1', 'lot')
        with self.assertRaises(NotFound):
            world.system.lookup('car:2')
        with self.assertRaises(NotFound):
            world.system.lookup('garbage')
        pass

    pass


class GovernanceTests(TestCase):
    """Every gated operation, called by every role that is not allowed to."""

    def setUp(self):
        world = self.world = World()
        self.lot = world.lot()
        self.renting = world.tenancy(self.lot, stalls=(0, 1))
        self.tenant = self.renting.tenant_provider
        self.pending_tenancy = self.lot.request_tenancy(world.tenant, [2, 3], 1000, HOUR)
        self.registration = world.system.request_landlord_registration(world.stranger, 500)
        self.amendment = world.system.propose_amendment(world.landlord, self.lot.landlord_contract, {'tax_rate': 400})
        self.car = world.car()
        self.channel = self.tenant.start_parking(world.driver, self.car, 0, HOUR, 5000)
        self.other_car = world.car('K777OT', owner=world.driver2)
        self.policy = PricingPolicy.define_policy(world.system, world.stranger, 1)
        pass

    def operations(self):
        world = self.world
        voucher = sign_voucher(world.driver.keys, self.channel.id_bytes, 100)
        return {
            'decide_registration': (('admin',), lambda caller: world.system.decide_registration(caller, self.registration, True)),
            'revoke_landlord_contract': (('admin',), lambda caller: world.system.revoke_landlord_contract(caller, self.lot.landlord_contract)),
            'create_parking_lot': (('landlord',), lambda caller: ParkingLot.create_parking_lot(world.system, caller, self.lot.landlord_contract, 2, self.policy)),
            'approve_tenancy': (('landlord',), lambda caller: self.lot.approve_tenancy(caller, self.pending_tenancy)),
            'reject_tenancy': (('landlord',), lambda caller: self.lot.reject_tenancy(caller, self.pending_tenancy)),
            'set_payment_policy': (('landlord',), lambda caller: self.lot.set_payment_policy(caller, self.policy)),
            'register_service_provider': (('landlord',), lambda caller: self.lot.register_service_provider(caller, world.finder, 10)),
            'propose_amendment': (('landlord', 'admin'), lambda caller: world.system.propose_amendment(caller, self.lot.landlord_contract, {'tax_rate': 300})),
            'resolve_amendment': (('admin',), lambda caller: world.system.resolve_amendment(caller, self.amendment, True)),
            'pay_rent': (('tenant',), lambda caller: self.renting.pay_rent(caller)),
            'terminate_tenancy': (('landlord', 'tenant'), lambda caller: self.renting.terminate(caller)),
            'start_parking': (('driver2',), lambda caller: self.lot.start_parking(caller, self.other_car, 5, HOUR, 5000)),
            'settle_channel': (('tenant',), lambda caller: self.channel.settle(caller, voucher)),
            'timeout_refund': (('driver',), lambda caller: self.channel.timeout_refund(caller)),
        }

    def test_wrong_roles_are_rejected(self):
        events = self.world.ledger.events.count()
        for name, (allowed, call) in self.operations().items():
            for role in ROLES:
                if role in allowed:
                    continue
                with self.subTest(operation=name, role=role):
                    with self.assertRaises(Unauthorized):
                        call(getattr(self.world, role))
                        pass
                    pass
                pass
            pass
        self.assertEqual(self.world.ledger.events.count(), events)
        pass

    def test_unapproved_landlord_cannot_create_lots(self):
        policy = self.world.policy(owner=self.world.stranger)
        self.world.system.decide_registration(self.world.admin, self.registration, False)
        with self.assertRaises(Unauthorized):
            ParkingLot.create_parking_lot(self.world.system, self.world.stranger, self.lot.landlord_contract, 2, policy)
        pass

    pass
