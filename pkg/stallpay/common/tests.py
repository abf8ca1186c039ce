from django.test import SimpleTestCase, TestCase

from ledger.models import Ledger
from registry.models import Car, ParkingSystem
from stallpay.constant import HOUR, MAX_FUNDS, WEEK

from .exceptions import Conflict, EngineError, InvalidArgument, Overflow, Unauthorized
from .utils import (bp_share, ceil_div, check_basis_points, check_funds, checked_add, create_ref,
                    get_hour_range, get_week_hour)


class ArithmeticTests(SimpleTestCase):

    def test_ceil_div(self):
        self.assertEqual(ceil_div(0, HOUR), 0)
        self.assertEqual(ceil_div(1, HOUR), 1)
        self.assertEqual(ceil_div(HOUR, HOUR), 1)
        self.assertEqual(ceil_div(HOUR + 1, HOUR), 2)
        pass

    def test_bp_share_floors(self):
        self.assertEqual(bp_share(3000, 500), 150)
        self.assertEqual(bp_share(999, 1), 0)
        self.assertEqual(bp_share(10001, 10000), 10001)
        pass

    def test_basis_points_range(self):
        self.assertEqual(check_basis_points(0), 0)
        self.assertEqual(check_basis_points(10000), 10000)
        for bad in (-1, 10001, 1.5, True, '5'):
            with self.assertRaises(InvalidArgument):
                check_basis_points(bad)
                pass
            pass
        pass

    def test_funds_bounds(self):
        self.assertEqual(check_funds(MAX_FUNDS), MAX_FUNDS)
        with self.assertRaises(Overflow):
            check_funds(MAX_FUNDS + 1)
        with self.assertRaises(InvalidArgument):
            check_funds(-1)
        with self.assertRaises(Overflow):
            checked_add(MAX_FUNDS, 1)
        pass

    def test_week_hour(self):
        self.assertEqual(get_week_hour(0), 0)
        self.assertEqual(get_week_hour(HOUR - 1), 0)
        self.assertEqual(get_week_hour(HOUR), 1)
        self.assertEqual(get_week_hour(WEEK), 0)
        self.assertEqual(get_week_hour(0, hour_offset=5), 5)
        self.assertEqual(get_hour_range(HOUR + 10), (HOUR, 2 * HOUR))
        pass

    def test_error_codes(self):
        self.assertEqual(str(Conflict('duplicate plate AB123')), 'conflict: duplicate plate AB123')
        error = InvalidArgument('bad', field='tax_rate')
        self.assertIsInstance(error, EngineError)
        self.assertEqual(error.params, {'field': 'tax_rate'})
        from django.core.exceptions import PermissionDenied
        self.assertIsInstance(Unauthorized('no'), PermissionDenied)
        pass

    pass


class CreateRefTests(TestCase):

    def test_refs_count_per_system(self):
        ledger = Ledger.objects.create()
        owner = ledger.create_account(1, label='owner')
        system = ParkingSystem.deploy(ledger, owner)
        first = system.register_car(owner, 'A1')
        second = system.register_car(owner, 'A2')
        self.assertEqual((first.ref, second.ref), ('car:1', 'car:2'))
        self.assertEqual(create_ref(Car.objects.filter(system=system), 'car'), 'car:3')
        pass

    def test_taken_ref_is_skipped(self):
        ledger = Ledger.objects.create()
        owner = ledger.create_account(1, label='owner')
        system = ParkingSystem.deploy(ledger, owner)
        Car.objects.create(system=system, owner=owner, plate='X', ref='car:1')
        Car.objects.create(system=system, owner=owner, plate='Y', ref='car:3')
        self.assertEqual(create_ref(Car.objects.filter(system=system), 'car'), 'car:4')
        pass

    pass
