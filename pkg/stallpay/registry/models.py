from django.apps import apps
from django.core.exceptions import ObjectDoesNotExist
from django.db import models, transaction
from django.db.models.signals import pre_save
from django.utils.translation import gettext_lazy as _

from common.exceptions import Conflict, InvalidArgument, InvalidState, NotFound, Unauthorized
from common.utils import check_basis_points, pre_save_ref_receiver, same_account
from ledger.models import Account, EventKind, Ledger
from stallpay.constant import MAX_TIME
from stlog import logger


def check_terms(tax_rate, land_info, valid_from, valid_until):
    check_basis_points(tax_rate, 'tax rate')
    for name, value in (('valid_from', valid_from), ('valid_until', valid_until)):
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise InvalidArgument('{} must be a time point, got {!r}'.format(name, value))
        if value > MAX_TIME:
            raise InvalidArgument('{} {} is past the last time point {}'.format(name, value, MAX_TIME))
        pass
    if valid_from >= valid_until:
        raise InvalidArgument('invalid terms: valid_from {} must precede valid_until {}'.format(valid_from, valid_until))
    if not isinstance(land_info, str):
        raise InvalidArgument('land_info must be a string')
    pass


class ParkingSystem(models.Model):
    """
    The first contract deployed: the administrator's registry of landlords,
    lots and cars. There is one per ledger.
    """
    ledger = models.OneToOneField(Ledger, on_delete=models.CASCADE, related_name='system')
    administrator = models.ForeignKey(Account, on_delete=models.PROTECT, related_name='+')

    class Meta:
        ordering = ("id",)
        verbose_name = _("Parking system")
        pass

    def __str__(self):
        return 'parking system of {}'.format(self.ledger)

    @classmethod
    def deploy(cls, ledger, administrator):
        administrator = ledger.account(administrator)
        if cls.objects.filter(ledger=ledger).exists():
            raise Conflict('the parking system is already deployed')
        system = cls.objects.create(ledger=ledger, administrator=administrator)
        # Keep the caller's ledger instance behind the relation.
        system.ledger = ledger
        logger.debug("parking system deployed by {}".format(administrator))
        return system

    def is_administrator(self, caller):
        return caller is not None and caller.pk == self.administrator_id

    def require_administrator(self, caller):
        if not self.is_administrator(caller):
            raise Unauthorized('{} is not the administrator'.format(caller))
        pass

    def account(self, address):
        return self.ledger.account(address)

    def ref_querysets(self):
        model = apps.get_model
        return {
            RegistrationRequest.REF_PREFIX: self.registration_requests.all(),
            LandlordContract.REF_PREFIX: self.landlord_contracts.all(),
            Car.REF_PREFIX: self.cars.all(),
            Amendment.REF_PREFIX: self.amendments.all(),
            'lot': model('providers', 'ParkingLot').objects.filter(system=self),
            'tenant': model('providers', 'Tenant').objects.filter(system=self),
            'tenancy_request': model('providers', 'TenancyRequest').objects.filter(lot__system=self),
            'renting_contract': model('providers', 'RentingContract').objects.filter(lot__system=self),
            'sp': model('providers', 'ServiceProvider').objects.filter(provider__system=self),
            'policy': self.policies.all(),
            'channel': self.channels.all(),
        }

    def lookup(self, ref, kind=None):
        """The row behind a `<kind>:<n>` ref, optionally insisting on its kind."""
        prefix = ref.rsplit(':', 1)[0] if isinstance(ref, str) and ':' in ref else None
        if kind is not None and prefix != kind:
            raise NotFound('{!r} is not a {} ref'.format(ref, kind))
        queryset = self.ref_querysets().get(prefix)
        if queryset is None:
            raise NotFound('unknown ref {!r}'.format(ref))
        try:
            return queryset.get(ref=ref)
        except ObjectDoesNotExist:
            raise NotFound('unknown {} {}'.format(prefix, ref))

    #
    # Landlord registration
    #
    @transaction.atomic
    def request_landlord_registration(self, landlord, tax_rate, land_info='', valid_from=0, valid_until=None):
        landlord = self.account(landlord)
        if valid_until is None:
            valid_until = MAX_TIME
            pass
        check_terms(tax_rate, land_info, valid_from, valid_until)
        if self.registration_requests.filter(requester=landlord, status=RegistrationRequest.Status.PENDING).exists():
            raise Conflict('{} already has a pending registration request'.format(landlord))
        request = RegistrationRequest.objects.create(system=self,
                                                     requester=landlord,
                                                     tax_rate=tax_rate,
                                                     land_info=land_info,
                                                     valid_from=valid_from,
                                                     valid_until=valid_until)
        self.ledger.append_event(EventKind.REQUEST,
                                 request=request.ref,
                                 landlord=landlord.address,
                                 tax_rate=tax_rate,
                                 land_info=land_info,
                                 valid_from=valid_from,
                                 valid_until=valid_until)
        return request

    @transaction.atomic
    def decide_registration(self, caller, request, approve):
        caller = self.account(caller)
        self.require_administrator(caller)
        if request.system_id != self.pk:
            raise NotFound('unknown request {}'.format(request.ref))
        if request.status != RegistrationRequest.Status.PENDING:
            raise InvalidState('request {} is already {}'.format(request.ref, request.status))

        contract = None
        if approve:
            request.status = RegistrationRequest.Status.APPROVED
            contract = LandlordContract.objects.create(system=self,
                                                       request=request,
                                                       landlord=request.requester,
                                                       tax_rate=request.tax_rate,
                                                       land_info=request.land_info,
                                                       valid_from=request.valid_from,
                                                       valid_until=request.valid_until)
        else:
            request.status = RegistrationRequest.Status.REJECTED
            pass
        request.save(update_fields=['status'])
        self.ledger.append_event(EventKind.REGISTRATION_DECIDED,
                                 request=request.ref,
                                 approved=bool(approve),
                                 contract=contract.ref if contract else None)
        return contract

    @transaction.atomic
    def revoke_landlord_contract(self, caller, contract):
        caller = self.account(caller)
        self.require_administrator(caller)
        if not contract.is_active(self.ledger.now()):
            raise InvalidState('contract {} is {}'.format(contract.ref, contract.status))
        contract.status = LandlordContract.Status.REVOKED
        contract.save(update_fields=['status'])
        self.ledger.append_event(EventKind.CONTRACT_REVOKED, contract=contract.ref)
        return contract

    #
    # Cars
    #
    @transaction.atomic
    def register_car(self, owner, plate):
        owner = self.account(owner)
        if not isinstance(plate, str) or plate == '':
            raise InvalidArgument('empty plate')
        if self.cars.filter(plate=plate).exists():
            raise Conflict('duplicate plate {}'.format(plate))
        car = Car.objects.create(system=self, owner=owner, plate=plate)
        self.ledger.append_event(EventKind.CAR_REGISTERED, car=car.ref, plate=plate, owner=owner.address)
        return car

    #
    # Amendments of landlord contracts and renting contracts
    #
    @transaction.atomic
    def propose_amendment(self, party, contract, changes):
        party = self.account(party)
        if not any(same_account(party, p) for p in contract.parties()):
            raise Unauthorized('{} is not a party of {}'.format(party, contract.ref))
        if not contract.is_active(self.ledger.now()):
            raise InvalidState('contract {} is not active'.format(contract.ref))
        changes = contract.clean_changes(changes)

        amendment = Amendment(system=self, proposer=party, changes=changes)
        amendment.contract = contract
        amendment.save()
        self.ledger.append_event(EventKind.AMENDMENT_PROPOSED,
                                 amendment=amendment.ref,
                                 contract=contract.ref,
                                 proposer=party.address,
                                 changes=changes)
        return amendment

    @transaction.atomic
    def resolve_amendment(self, counterparty, amendment, accept):
        counterparty = self.account(counterparty)
        contract = amendment.contract
        if amendment.status != Amendment.Status.PROPOSED:
            raise InvalidState('amendment {} is already {}'.format(amendment.ref, amendment.status))
        if same_account(counterparty, amendment.proposer):
            raise Unauthorized('the proposer cannot resolve its own amendment {}'.format(amendment.ref))
        if not any(same_account(counterparty, p) for p in contract.parties()):
            raise Unauthorized('{} is not a party of {}'.format(counterparty, contract.ref))
        if not contract.is_active(self.ledger.now()):
            raise InvalidState('contract {} is not active'.format(contract.ref))

        if accept:
            contract.apply_changes(amendment.changes)
            amendment.status = Amendment.Status.ACCEPTED
        else:
            amendment.status = Amendment.Status.REJECTED
            pass
        amendment.save(update_fields=['status'])
        self.ledger.append_event(EventKind.AMENDMENT_RESOLVED,
                                 amendment=amendment.ref,
                                 contract=contract.ref,
                                 accepted=bool(accept))
        logger.debug("amendment {} on {}: {}".format(amendment.ref, contract.ref, amendment.status))
        return contract if accept else None

    pass


class RegistrationRequest(models.Model):
    class Status(models.TextChoices):
        PENDING  = 'pending', _('Pending')
        APPROVED = 'approved', _('Approved')
        REJECTED = 'rejected', _('Rejected')
        pass

    REF_PREFIX = 'request'

    system = models.ForeignKey(ParkingSystem, on_delete=models.CASCADE, related_name='registration_requests')
    ref = models.CharField(max_length=40)
    requester = models.ForeignKey(Account, on_delete=models.CASCADE, related_name='+')
    tax_rate = models.PositiveIntegerField()
    land_info = models.CharField(max_length=200, blank=True, default='')
    valid_from = models.PositiveBigIntegerField()
    valid_until = models.PositiveBigIntegerField()
    status = models.CharField(max_length=10, choices=Status.choices, default=Status.PENDING)

    class Meta:
        ordering = ("id",)
        unique_together = ('system', 'ref')
        pass

    def __str__(self):
        return self.ref

    def ref_queryset(self):
        return RegistrationRequest.objects.filter(system=self.system)

    pass


class LandlordContract(models.Model):
    """Administrator <-> landlord contract: the tax the landlord pays and the land it covers."""

    class Status(models.TextChoices):
        ACTIVE  = 'active', _('Active')
        EXPIRED = 'expired', _('Expired')
        REVOKED = 'revoked', _('Revoked')
        pass

    REF_PREFIX = 'landlord_contract'
    AMENDABLE = ('tax_rate', 'land_info', 'valid_until')

    system = models.ForeignKey(ParkingSystem, on_delete=models.CASCADE, related_name='landlord_contracts')
    ref = models.CharField(max_length=40)
    request = models.OneToOneField(RegistrationRequest, on_delete=models.SET_NULL, null=True, blank=True)
    landlord = models.ForeignKey(Account, on_delete=models.CASCADE, related_name='landlord_contracts')
    tax_rate = models.PositiveIntegerField()
    land_info = models.CharField(max_length=200, blank=True, default='')
    valid_from = models.PositiveBigIntegerField()
    valid_until = models.PositiveBigIntegerField()
    status = models.CharField(max_length=10, choices=Status.choices, default=Status.ACTIVE)

    class Meta:
        ordering = ("id",)
        unique_together = ('system', 'ref')
        pass

    def __str__(self):
        return self.ref

    def ref_queryset(self):
        return LandlordContract.objects.filter(system=self.system)

    def parties(self):
        return (self.landlord, self.system.administrator)

    def refresh_status(self, now):
        # Expiry is noticed lazily, whenever the contract is consulted.
        if self.status == self.Status.ACTIVE and now >= self.valid_until:
            self.status = self.Status.EXPIRED
            self.save(update_fields=['status'])
            logger.debug("landlord contract {} expired at {}".format(self.ref, now))
            pass
        return self.status

    def is_active(self, now):
        return self.refresh_status(now) == self.Status.ACTIVE

    def in_force(self, now):
        return self.is_active(now) and self.valid_from <= now

    def clean_changes(self, changes):
        if not isinstance(changes, dict) or not changes:
            raise InvalidArgument('an amendment needs at least one change')
        unknown = sorted(set(changes) - set(self.AMENDABLE))
        if unknown:
            raise InvalidArgument('fields {} of {} cannot be amended'.format(', '.join(unknown), self.ref))
        check_terms(changes.get('tax_rate', self.tax_rate),
                    changes.get('land_info', self.land_info),
                    self.valid_from,
                    changes.get('valid_until', self.valid_until))
        return {key: changes[key] for key in sorted(changes)}

    def apply_changes(self, changes):
        changes = self.clean_changes(changes)
        for field, value in changes.items():
            setattr(self, field, value)
            pass
        if 'tax_rate' in changes:
            ParkingLot = apps.get_model('providers', 'ParkingLot')
            for lot in ParkingLot.objects.filter(landlord_contract=self):
                lot.check_share_budget(tax_rate=self.tax_rate)
                pass
            pass
        self.save(update_fields=list(changes))
        pass

    pass


class Car(models.Model):
    REF_PREFIX = 'car'

    system = models.ForeignKey(ParkingSystem, on_delete=models.CASCADE, related_name='cars')
    ref = models.CharField(max_length=40)
    plate = models.CharField(max_length=40)
    owner = models.ForeignKey(Account, on_delete=models.CASCADE, related_name='cars')
    # Stored, never updated by any operation.
    rating = models.IntegerField(default=0)
    channel = models.ForeignKey('payments.Channel', on_delete=models.SET_NULL, null=True, blank=True, related_name='+')
    history = models.JSONField(default=list)

    class Meta:
        ordering = ("id",)
        unique_together = (('system', 'ref'), ('system', 'plate'))
        pass

    def __str__(self):
        return self.plate

    def ref_queryset(self):
        return Car.objects.filter(system=self.system)

    @property
    def parked(self):
        """(provider ref, stall number, channel ref) while a channel is open, else None."""
        if self.channel_id is None:
            return None
        return (self.channel.payee.ref, self.channel.stall.number, self.channel.ref)

    pass


class Amendment(models.Model):
    class Status(models.TextChoices):
        PROPOSED = 'proposed', _('Proposed')
        ACCEPTED = 'accepted', _('Accepted')
        REJECTED = 'rejected', _('Rejected')
        pass

    REF_PREFIX = 'amendment'

    system = models.ForeignKey(ParkingSystem, on_delete=models.CASCADE, related_name='amendments')
    ref = models.CharField(max_length=40)
    landlord_contract = models.ForeignKey(LandlordContract, on_delete=models.CASCADE, null=True, blank=True, related_name='amendments')
    renting_contract = models.ForeignKey('providers.RentingContract', on_delete=models.CASCADE, null=True, blank=True, related_name='amendments')
    proposer = models.ForeignKey(Account, on_delete=models.CASCADE, related_name='+')
    changes = models.JSONField(default=dict)
    status = models.CharField(max_length=10, choices=Status.choices, default=Status.PROPOSED)

    class Meta:
        ordering = ("id",)
        unique_together = ('system', 'ref')
        pass

    def __str__(self):
        return self.ref

    def ref_queryset(self):
        return Amendment.objects.filter(system=self.system)

    @property
    def contract(self):
        return self.landlord_contract if self.landlord_contract_id else self.renting_contract

    @contract.setter
    def contract(self, contract):
        if isinstance(contract, LandlordContract):
            self.landlord_contract = contract
        else:
            self.renting_contract = contract
            pass
        pass

    pass


for model in [RegistrationRequest, LandlordContract, Car, Amendment]:
    pre_save.connect(pre_save_ref_receiver, sender=model)
