from dataclasses import dataclass

from django.apps import apps
from django.db import models, transaction
from django.db.models.signals import pre_save
from django.utils.translation import gettext_lazy as _

from common.exceptions import Conflict, InvalidArgument, InvalidState, NotFound, Overflow, Unauthorized
from common.utils import check_basis_points, check_funds, pre_save_ref_receiver, same_account
from ledger.models import Account, EventKind
from stallpay.constant import BASIS_POINTS, MAX_STALLS, MAX_TIME
from stlog import logger


def check_renting_terms(stall_numbers, rent_fee, period, landlord_share, penalty_rate):
    if not isinstance(stall_numbers, (list, tuple, set, frozenset)) or not stall_numbers:
        raise InvalidArgument('a renting contract needs a non-empty stall subset')
    for number in stall_numbers:
        if isinstance(number, bool) or not isinstance(number, int):
            raise InvalidArgument('stall ids are integers, got {!r}'.format(number))
        pass
    if len(set(stall_numbers)) != len(stall_numbers):
        raise InvalidArgument('stall subset lists a stall twice')
    check_funds(rent_fee, 'rent fee')
    if isinstance(period, bool) or not isinstance(period, int) or period <= 0:
        raise InvalidArgument('rent period must be a positive number of seconds, got {!r}'.format(period))
    if period > MAX_TIME:
        raise InvalidArgument('rent period {} is longer than {} seconds'.format(period, MAX_TIME))
    check_basis_points(landlord_share, 'landlord share')
    check_basis_points(penalty_rate, 'penalty rate')
    return sorted(stall_numbers)


def rent_due(rent_fee, penalty_rate, next_due, period, now):
    """(rent, penalty, late periods) for a payment made at `now`."""
    late_periods = (now - next_due) // period if now > next_due else 0
    penalty = rent_fee * penalty_rate * late_periods // BASIS_POINTS
    return rent_fee, penalty, late_periods


@dataclass(frozen=True)
class PaymentRecord:
    contract: str
    rent: int
    penalty: int
    late_periods: int
    next_due: int
    event_index: int

    @property
    def total(self):
        return self.rent + self.penalty

    pass


class Provider(models.Model):
    """
    What lots and tenants have in common: stalls under control, a payment
    policy, service providers and the parking process itself.
    """

    class Kind(models.TextChoices):
        LOT    = 'lot', _('Parking lot')
        TENANT = 'tenant', _('Tenant')
        pass

    system = models.ForeignKey('registry.ParkingSystem', on_delete=models.CASCADE, related_name='providers')
    ref = models.CharField(max_length=40)
    kind = models.CharField(max_length=10, choices=Kind.choices)
    owner = models.ForeignKey(Account, on_delete=models.CASCADE, related_name='providers')
    policy = models.ForeignKey('payments.PricingPolicy', on_delete=models.PROTECT, related_name='+')

    class Meta:
        ordering = ("id",)
        unique_together = ('system', 'ref')
        pass

    def __str__(self):
        return self.ref

    def concrete(self):
        if isinstance(self, (ParkingLot, Tenant)):
            return self
        return self.parkinglot if self.kind == self.Kind.LOT else self.tenant

    @property
    def lot(self):
        provider = self.concrete()
        if provider.kind == self.Kind.LOT:
            return provider
        return provider.renting_contract.lot

    @property
    def renting(self):
        provider = self.concrete()
        return provider.renting_contract if provider.kind == self.Kind.TENANT else None

    @property
    def ledger(self):
        return self.system.ledger

    def tax_rate(self):
        return self.lot.landlord_contract.tax_rate

    def landlord_share(self):
        # The lot's own income only owes tax.
        renting = self.renting
        return renting.landlord_share if renting is not None else 0

    def is_open(self, now):
        if not self.lot.landlord_contract.in_force(now):
            return False
        renting = self.renting
        return renting is None or renting.status == RentingContract.Status.ACTIVE

    def require_owner(self, caller):
        if caller is None or caller.pk != self.owner_id:
            raise Unauthorized('{} does not own {}'.format(caller, self.ref))
        pass

    def open_channels(self):
        Channel = apps.get_model('payments', 'Channel')
        return Channel.objects.filter(payee=self, status=Channel.Status.OPEN)

    def free_stalls(self):
        return list(self.controlled_stalls.filter(reserved=False, occupied_by='').order_by('number').values_list('number', flat=True))

    def check_share_budget(self, tax_rate=None, landlord_share=None, extra_share=0):
        tax_rate = self.tax_rate() if tax_rate is None else tax_rate
        landlord_share = self.landlord_share() if landlord_share is None else landlord_share
        shares = list(self.service_providers.values_list('share', flat=True)) + [extra_share]
        total = tax_rate + landlord_share + max(shares)
        if total > BASIS_POINTS:
            raise InvalidArgument('tax {} + landlord share {} + service share {} exceeds {} basis points on {}'.format(
                tax_rate, landlord_share, max(shares), BASIS_POINTS, self.ref))
        pass

    @transaction.atomic
    def set_payment_policy(self, caller, policy):
        caller = self.ledger.account(caller)
        self.require_owner(caller)
        if policy.system_id != self.system_id:
            raise NotFound('unknown policy {}'.format(policy.ref))
        self.policy = policy
        self.save(update_fields=['policy'])
        self.ledger.append_event(EventKind.POLICY_SET, provider=self.ref, policy=policy.ref)
        return True

    @transaction.atomic
    def register_service_provider(self, caller, account, share):
        caller = self.ledger.account(caller)
        account = self.ledger.account(account)
        self.require_owner(caller)
        check_basis_points(share, 'service share')
        if self.service_providers.filter(account=account).exists():
            raise Conflict('{} already works with {}'.format(account, self.ref))
        self.concrete().check_share_budget(extra_share=share)
        service_provider = ServiceProvider.objects.create(provider=self, account=account, share=share)
        self.ledger.append_event(EventKind.SP_REGISTERED,
                                 provider=self.ref,
                                 service_provider=service_provider.ref,
                                 account=account.address,
                                 share=share)
        return service_provider

    def start_parking(self, caller, car, stall_number, until, deposit, service_provider=None):
        Channel = apps.get_model('payments', 'Channel')
        return Channel.open(caller, car, self, stall_number, until, deposit, service_provider)

    pass


class ParkingLot(Provider):
    REF_PREFIX = 'lot'

    landlord_contract = models.ForeignKey('registry.LandlordContract', on_delete=models.PROTECT, related_name='lots')
    # Stored, never updated by any operation.
    rating = models.IntegerField(default=0)
    location = models.CharField(max_length=200, blank=True, default='')

    class Meta:
        verbose_name = _("Parking lot")
        pass

    def ref_queryset(self):
        return ParkingLot.objects.filter(system=self.system)

    @classmethod
    @transaction.atomic
    def create_parking_lot(cls, system, landlord, landlord_contract, stalls, policy, location=''):
        ledger = system.ledger
        landlord = ledger.account(landlord)
        if landlord_contract.system_id != system.pk or not same_account(landlord_contract.landlord, landlord):
            raise Unauthorized('{} is not the landlord of {}'.format(landlord, landlord_contract.ref))
        if not landlord_contract.in_force(ledger.now()):
            raise InvalidState('landlord contract {} is not active'.format(landlord_contract.ref))
        if isinstance(stalls, bool) or not isinstance(stalls, int) or stalls <= 0:
            raise InvalidArgument('a parking lot needs at least one stall')
        if stalls > MAX_STALLS:
            raise InvalidArgument('a parking lot holds at most {} stalls'.format(MAX_STALLS))
        if policy.system_id != system.pk:
            raise NotFound('unknown policy {}'.format(policy.ref))

        lot = cls.objects.create(system=system,
                                 kind=Provider.Kind.LOT,
                                 owner=landlord,
                                 policy=policy,
                                 landlord_contract=landlord_contract,
                                 location=location)
        Stall.objects.bulk_create([Stall(lot=lot, number=number, controller=lot) for number in range(stalls)])
        ledger.append_event(EventKind.LOT_CREATED,
                            lot=lot.ref,
                            landlord=landlord.address,
                            landlord_contract=landlord_contract.ref,
                            stalls=stalls,
                            policy=policy.ref,
                            location=location)
        logger.debug("lot {} with {} stalls under {}".format(lot.ref, stalls, landlord_contract.ref))
        return lot

    def active_rentals(self):
        return self.renting_contracts.filter(status=RentingContract.Status.ACTIVE)

    def rented_stalls(self):
        rented = set()
        for numbers in self.active_rentals().values_list('stall_numbers', flat=True):
            rented.update(numbers)
            pass
        return rented

    def _check_subset(self, stall_numbers):
        known = set(self.stalls.values_list('number', flat=True))
        unknown = sorted(set(stall_numbers) - known)
        if unknown:
            raise NotFound('unknown stalls {} in {}'.format(unknown, self.ref))
        overlap = sorted(set(stall_numbers) & self.rented_stalls())
        if overlap:
            raise Conflict('stalls {} overlap an active tenancy in {}'.format(overlap, self.ref))
        Channel = apps.get_model('payments', 'Channel')
        busy = Channel.objects.filter(stall__lot=self, stall__number__in=stall_numbers, status=Channel.Status.OPEN)
        if busy.exists():
            raise Conflict('stalls {} have open sessions'.format(sorted(busy.values_list('stall__number', flat=True))))
        pass

    def check_share_budget(self, tax_rate=None, landlord_share=None, extra_share=0):
        super().check_share_budget(tax_rate=tax_rate, landlord_share=landlord_share, extra_share=extra_share)
        for renting in self.active_rentals():
            renting.tenant_provider.check_share_budget(tax_rate=tax_rate)
            pass
        pass

    @transaction.atomic
    def request_tenancy(self, tenant, stall_numbers, rent_fee, period, landlord_share=0, penalty_rate=0, policy=None):
        tenant = self.ledger.account(tenant)
        stall_numbers = check_renting_terms(stall_numbers, rent_fee, period, landlord_share, penalty_rate)
        if not self.landlord_contract.is_active(self.ledger.now()):
            raise InvalidState('lot {} is not active'.format(self.ref))
        if self.tax_rate() + landlord_share > BASIS_POINTS:
            raise InvalidArgument('tax {} + landlord share {} exceeds {} basis points'.format(self.tax_rate(), landlord_share, BASIS_POINTS))
        if policy is not None and policy.system_id != self.system_id:
            raise NotFound('unknown policy {}'.format(policy.ref))
        self._check_subset(stall_numbers)

        request = TenancyRequest.objects.create(lot=self,
                                                tenant=tenant,
                                                stall_numbers=stall_numbers,
                                                rent_fee=rent_fee,
                                                period=period,
                                                landlord_share=landlord_share,
                                                penalty_rate=penalty_rate,
                                                policy=policy)
        self.ledger.append_event(EventKind.TENANCY_REQUESTED,
                                 request=request.ref,
                                 lot=self.ref,
                                 tenant=tenant.address,
                                 stalls=stall_numbers,
                                 rent_fee=rent_fee,
                                 period=period,
                                 landlord_share=landlord_share,
                                 penalty_rate=penalty_rate)
        return request

    def _pending(self, request):
        if request.lot_id != self.pk:
            raise NotFound('unknown tenancy request {}'.format(request.ref))
        if request.status != TenancyRequest.Status.PENDING:
            raise InvalidState('tenancy request {} is already {}'.format(request.ref, request.status))
        pass

    @transaction.atomic
    def approve_tenancy(self, landlord, request):
        landlord = self.ledger.account(landlord)
        self.require_owner(landlord)
        self._pending(request)
        try:
            self._check_subset(request.stall_numbers)
        except Conflict as exc:
            raise Conflict('stale tenancy request {}: {}'.format(request.ref, exc.message))

        now = self.ledger.now()
        if now > MAX_TIME - request.period:
            raise Overflow('first rent of {} would fall due after {}'.format(request.ref, MAX_TIME))
        renting = RentingContract.objects.create(lot=self,
                                                 request=request,
                                                 tenant=request.tenant,
                                                 stall_numbers=request.stall_numbers,
                                                 rent_fee=request.rent_fee,
                                                 period=request.period,
                                                 landlord_share=request.landlord_share,
                                                 penalty_rate=request.penalty_rate,
                                                 next_due=now + request.period)
        provider = Tenant.objects.create(system=self.system,
                                         kind=Provider.Kind.TENANT,
                                         owner=request.tenant,
                                         policy=request.policy or self.policy,
                                         renting_contract=renting)
        self.stalls.filter(number__in=request.stall_numbers).update(controller=provider)
        request.status = TenancyRequest.Status.APPROVED
        request.save(update_fields=['status'])
        self.ledger.append_event(EventKind.TENANCY_DECIDED,
                                 request=request.ref,
                                 approved=True,
                                 contract=renting.ref,
                                 tenant_provider=provider.ref,
                                 next_due=renting.next_due)
        return renting

    @transaction.atomic
    def reject_tenancy(self, landlord, request):
        landlord = self.ledger.account(landlord)
        self.require_owner(landlord)
        self._pending(request)
        request.status = TenancyRequest.Status.REJECTED
        request.save(update_fields=['status'])
        self.ledger.append_event(EventKind.TENANCY_DECIDED, request=request.ref, approved=False, contract=None)
        return request

    @transaction.atomic
    def observe_occupancy(self, stall_number, plate=None):
        """Record what the lot's camera sees on one stall and flag disagreement with sessions."""
        try:
            stall = self.stalls.get(number=stall_number)
        except Stall.DoesNotExist:
            raise NotFound('unknown stall {} in {}'.format(stall_number, self.ref))
        plate = plate or ''
        channel = stall.open_channel()
        expected = channel.car.plate if channel is not None else None

        if channel is None:
            kind = EventKind.OCCUPANCY_VIOLATION if plate else EventKind.OCCUPANCY_OK
        elif plate == expected:
            kind = EventKind.OCCUPANCY_OK
        else:
            kind = EventKind.OCCUPANCY_MISMATCH
            pass
        stall.occupied_by = plate
        stall.save(update_fields=['occupied_by'])
        if kind != EventKind.OCCUPANCY_OK:
            logger.info("lot {} stall {}: {} (seen {!r}, expected {!r})".format(self.ref, stall_number, kind, plate, expected))
            pass
        return self.ledger.append_event(kind,
                                        lot=self.ref,
                                        stall=stall_number,
                                        plate=plate or None,
                                        expected=expected,
                                        channel_ref=channel.ref if channel is not None else None)

    pass


class Stall(models.Model):
    lot = models.ForeignKey(ParkingLot, on_delete=models.CASCADE, related_name='stalls')
    number = models.PositiveIntegerField()
    controller = models.ForeignKey(Provider, on_delete=models.CASCADE, related_name='controlled_stalls')
    occupied_by = models.CharField(max_length=40, blank=True, default='')
    # Set while a session holds the stall.
    reserved = models.BooleanField(default=False)

    class Meta:
        ordering = ("lot", "number")
        unique_together = ('lot', 'number')
        pass

    def __str__(self):
        return '{}#{}'.format(self.lot.ref, self.number)

    def open_channel(self):
        Channel = apps.get_model('payments', 'Channel')
        return Channel.objects.filter(stall=self, status=Channel.Status.OPEN).first()

    pass


class ServiceProvider(models.Model):
    """A third party listing a provider's stalls, paid a share of each session it brings."""
    REF_PREFIX = 'sp'

    provider = models.ForeignKey(Provider, on_delete=models.CASCADE, related_name='service_providers')
    ref = models.CharField(max_length=40)
    account = models.ForeignKey(Account, on_delete=models.CASCADE, related_name='+')
    share = models.PositiveIntegerField(default=0)

    class Meta:
        ordering = ("id",)
        pass

    def __str__(self):
        return self.ref

    def ref_queryset(self):
        return ServiceProvider.objects.filter(provider__system=self.provider.system)

    pass


class TenancyRequest(models.Model):
    class Status(models.TextChoices):
        PENDING  = 'pending', _('Pending')
        APPROVED = 'approved', _('Approved')
        REJECTED = 'rejected', _('Rejected')
        pass

    REF_PREFIX = 'tenancy_request'

    lot = models.ForeignKey(ParkingLot, on_delete=models.CASCADE, related_name='tenancy_requests')
    ref = models.CharField(max_length=40)
    tenant = models.ForeignKey(Account, on_delete=models.CASCADE, related_name='+')
    stall_numbers = models.JSONField(default=list)
    rent_fee = models.PositiveBigIntegerField()
    period = models.PositiveBigIntegerField()
    landlord_share = models.PositiveIntegerField(default=0)
    penalty_rate = models.PositiveIntegerField(default=0)
    policy = models.ForeignKey('payments.PricingPolicy', on_delete=models.PROTECT, null=True, blank=True, related_name='+')
    status = models.CharField(max_length=10, choices=Status.choices, default=Status.PENDING)

    class Meta:
        ordering = ("id",)
        pass

    def __str__(self):
        return self.ref

    def ref_queryset(self):
        return TenancyRequest.objects.filter(lot__system=self.lot.system)

    pass


class RentingContract(models.Model):
    """Landlord <-> tenant terms over a subset of a lot's stalls."""

    class Status(models.TextChoices):
        ACTIVE     = 'active', _('Active')
        TERMINATED = 'terminated', _('Terminated')
        pass

    REF_PREFIX = 'renting_contract'
    AMENDABLE = ('rent_fee', 'period', 'landlord_share', 'penalty_rate')

    lot = models.ForeignKey(ParkingLot, on_delete=models.CASCADE, related_name='renting_contracts')
    ref = models.CharField(max_length=40)
    request = models.OneToOneField(TenancyRequest, on_delete=models.SET_NULL, null=True, blank=True)
    tenant = models.ForeignKey(Account, on_delete=models.CASCADE, related_name='renting_contracts')
    stall_numbers = models.JSONField(default=list)
    rent_fee = models.PositiveBigIntegerField()
    period = models.PositiveBigIntegerField()
    landlord_share = models.PositiveIntegerField(default=0)
    penalty_rate = models.PositiveIntegerField(default=0)
    next_due = models.PositiveBigIntegerField()
    status = models.CharField(max_length=10, choices=Status.choices, default=Status.ACTIVE)

    class Meta:
        ordering = ("id",)
        pass

    def __str__(self):
        return self.ref

    def ref_queryset(self):
        return RentingContract.objects.filter(lot__system=self.lot.system)

    @property
    def system(self):
        return self.lot.system

    @property
    def ledger(self):
        return self.lot.system.ledger

    def parties(self):
        return (self.lot.owner, self.tenant)

    def is_active(self, now=None):
        return self.status == self.Status.ACTIVE

    def amount_due(self, now):
        return rent_due(self.rent_fee, self.penalty_rate, self.next_due, self.period, now)

    @transaction.atomic
    def pay_rent(self, tenant):
        ledger = self.ledger
        tenant = ledger.account(tenant)
        if not same_account(tenant, self.tenant):
            raise Unauthorized('{} is not the tenant of {}'.format(tenant, self.ref))
        if self.status != self.Status.ACTIVE:
            raise InvalidState('renting contract {} is terminated'.format(self.ref))
        if self.next_due > MAX_TIME - self.period:
            raise Overflow('next rent of {} would fall due after {}'.format(self.ref, MAX_TIME))
        rent, penalty, late_periods = self.amount_due(ledger.now())
        event = ledger.transfer(tenant, self.lot.owner, rent + penalty,
                                contract=self.ref,
                                rent=rent,
                                penalty=penalty,
                                late_periods=late_periods)
        self.next_due += self.period
        self.save(update_fields=['next_due'])
        logger.debug("rent {} + penalty {} paid on {}, next due {}".format(rent, penalty, self.ref, self.next_due))
        return PaymentRecord(contract=self.ref,
                             rent=rent,
                             penalty=penalty,
                             late_periods=late_periods,
                             next_due=self.next_due,
                             event_index=event.index)

    @transaction.atomic
    def terminate(self, party):
        ledger = self.ledger
        party = ledger.account(party)
        if not any(same_account(party, p) for p in self.parties()):
            raise Unauthorized('{} is not a party of {}'.format(party, self.ref))
        if self.status != self.Status.ACTIVE:
            raise InvalidState('renting contract {} is already terminated'.format(self.ref))
        provider = self.tenant_provider
        if provider.open_channels().exists():
            raise Conflict('tenant {} still has open sessions'.format(provider.ref))
        self.lot.stalls.filter(number__in=self.stall_numbers).update(controller=self.lot)
        self.status = self.Status.TERMINATED
        self.save(update_fields=['status'])
        ledger.append_event(EventKind.TENANCY_TERMINATED,
                            contract=self.ref,
                            tenant_provider=provider.ref,
                            stalls=self.stall_numbers)
        return self

    def clean_changes(self, changes):
        if not isinstance(changes, dict) or not changes:
            raise InvalidArgument('an amendment needs at least one change')
        unknown = sorted(set(changes) - set(self.AMENDABLE))
        if unknown:
            raise InvalidArgument('fields {} of {} cannot be amended'.format(', '.join(unknown), self.ref))
        check_renting_terms(self.stall_numbers,
                            changes.get('rent_fee', self.rent_fee),
                            changes.get('period', self.period),
                            changes.get('landlord_share', self.landlord_share),
                            changes.get('penalty_rate', self.penalty_rate))
        return {key: changes[key] for key in sorted(changes)}

    def apply_changes(self, changes):
        changes = self.clean_changes(changes)
        if 'landlord_share' in changes:
            self.tenant_provider.check_share_budget(landlord_share=changes['landlord_share'])
            pass
        for field, value in changes.items():
            setattr(self, field, value)
            pass
        self.save(update_fields=list(changes))
        pass

    pass


class Tenant(Provider):
    REF_PREFIX = 'tenant'

    renting_contract = models.OneToOneField(RentingContract, on_delete=models.CASCADE, related_name='tenant_provider')

    class Meta:
        verbose_name = _("Tenant")
        pass

    def ref_queryset(self):
        return Tenant.objects.filter(system=self.system)

    pass


for model in [ParkingLot, Tenant, ServiceProvider, TenancyRequest, RentingContract]:
    pre_save.connect(pre_save_ref_receiver, sender=model)
