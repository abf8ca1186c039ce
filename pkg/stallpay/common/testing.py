"""Shared fixture for database-backed tests: one ledger with a cast of accounts."""
from ledger.models import Ledger
from payments.models import PricingPolicy
from providers.models import ParkingLot
from registry.models import ParkingSystem
from stallpay.constant import GRACE_PERIOD, WEEK


class World:
    CAST = (
        ('admin', 0),
        ('landlord', 1000000),
        ('tenant', 1000000),
        ('driver', 1000000),
        ('driver2', 1000000),
        ('finder', 0),
        ('stranger', 1000000),
    )

    def __init__(self, grace=GRACE_PERIOD):
        self.ledger = Ledger.objects.create(name='world', grace=grace)
        for seed, (label, balance) in enumerate(self.CAST, start=1):
            setattr(self, label, self.ledger.create_account(seed, balance, label=label))
            pass
        self.system = ParkingSystem.deploy(self.ledger, self.admin)
        pass

    def at(self, t):
        return self.ledger.set_time(t)

    def balance(self, account):
        return self.ledger.balance(account)

    def landlord_contract(self, tax_rate=500, landlord=None, valid_from=0, valid_until=None):
        request = self.system.request_landlord_registration(landlord or self.landlord, tax_rate, 'lot A', valid_from, valid_until)
        return self.system.decide_registration(self.admin, request, True)

    def policy(self, rate=1000, owner=None):
        return PricingPolicy.define_policy(self.system, owner or self.landlord, rate)

    def lot(self, stalls=10, tax_rate=500, rate=1000, contract=None):
        contract = contract or self.landlord_contract(tax_rate)
        return ParkingLot.create_parking_lot(self.system, self.landlord, contract, stalls, self.policy(rate))

    def tenancy(self, lot, stalls=(0, 1), rent_fee=10000, period=WEEK, landlord_share=1000, penalty_rate=500, policy=None):
        request = lot.request_tenancy(self.tenant, list(stalls), rent_fee, period,
                                      landlord_share=landlord_share,
                                      penalty_rate=penalty_rate,
                                      policy=policy)
        return lot.approve_tenancy(self.landlord, request)

    def car(self, plate='A123BC', owner=None):
        return self.system.register_car(owner or self.driver, plate)

    pass
