import hashlib

from django.db import models, transaction
from django.db.models.signals import pre_save
from django.utils.translation import gettext_lazy as _

from common.exceptions import Conflict, InsufficientFunds, InvalidArgument, InvalidState, NotFound, Unauthorized
from common.utils import check_funds, pre_save_ref_receiver, same_account
from ledger.models import Account, EventKind
from sigchain.signing import verify_voucher
from stallpay.constant import MAX_TIME
from stlog import logger

from .policy import WeekHourPolicy
from .settlement import split_claim


def derive_channel_id(payer_address, payee_ref, opened_at, event_index):
    """sha256(payer address || payee ref || opened_at || event index)"""
    digest = hashlib.sha256()
    digest.update(bytes.fromhex(payer_address))
    digest.update(payee_ref.encode('utf-8'))
    digest.update(opened_at.to_bytes(8, 'big'))
    digest.update(event_index.to_bytes(8, 'big'))
    return digest.digest()


class PricingPolicy(models.Model):
    """A provider's week-hour rate grid. Grids never change once defined."""
    REF_PREFIX = 'policy'

    system = models.ForeignKey('registry.ParkingSystem', on_delete=models.CASCADE, related_name='policies')
    ref = models.CharField(max_length=40)
    owner = models.ForeignKey(Account, on_delete=models.CASCADE, related_name='policies')
    rates = models.JSONField(default=list)
    hour_offset = models.IntegerField(default=0)

    class Meta:
        ordering = ("id",)
        unique_together = ('system', 'ref')
        verbose_name = _("Payment policy")
        verbose_name_plural = _("Payment policies")
        pass

    def __str__(self):
        return self.ref

    def ref_queryset(self):
        return PricingPolicy.objects.filter(system=self.system)

    def as_policy(self):
        return WeekHourPolicy(rates=tuple(self.rates), hour_offset=self.hour_offset)

    @classmethod
    @transaction.atomic
    def define_policy(cls, system, owner, rates, hour_offset=0):
        owner = system.account(owner)
        if isinstance(rates, int) and not isinstance(rates, bool):
            policy = WeekHourPolicy.uniform(rates)
        else:
            policy = WeekHourPolicy(rates=tuple(rates or ()), hour_offset=hour_offset)
            pass
        row = cls.objects.create(system=system, owner=owner, rates=policy.to_json(), hour_offset=policy.hour_offset)
        system.ledger.append_event(EventKind.POLICY_DEFINED,
                                   policy=row.ref,
                                   owner=owner.address,
                                   rates=row.rates,
                                   hour_offset=row.hour_offset)
        return row

    pass


class Channel(models.Model):
    """
    One parking session's escrow. A channel is opened with one ESCROW_LOCK and
    closed with one ESCROW_RELEASE, either a settlement or a timeout refund.
    Vouchers travel off the ledger in between.
    """

    class Status(models.TextChoices):
        OPEN     = 'open', _('Open')
        SETTLED  = 'settled', _('Settled')
        REFUNDED = 'refunded', _('Refunded')
        pass

    REF_PREFIX = 'channel'

    system = models.ForeignKey('registry.ParkingSystem', on_delete=models.CASCADE, related_name='channels')
    ref = models.CharField(max_length=40)
    channel_id = models.CharField(max_length=64)
    car = models.ForeignKey('registry.Car', on_delete=models.CASCADE, related_name='sessions')
    payer = models.ForeignKey(Account, on_delete=models.CASCADE, related_name='channels')
    payee = models.ForeignKey('providers.Provider', on_delete=models.CASCADE, related_name='channels')
    stall = models.ForeignKey('providers.Stall', on_delete=models.CASCADE, related_name='channels')
    service_provider = models.ForeignKey('providers.ServiceProvider', on_delete=models.SET_NULL, null=True, blank=True, related_name='channels')
    locked = models.PositiveBigIntegerField()
    quoted = models.PositiveBigIntegerField(default=0)
    opened_at = models.PositiveBigIntegerField()
    park_until = models.PositiveBigIntegerField()
    expiry = models.PositiveBigIntegerField()
    # Captured from the payee's policy when the channel opens.
    rates = models.JSONField(default=list)
    hour_offset = models.IntegerField(default=0)
    status = models.CharField(max_length=10, choices=Status.choices, default=Status.OPEN)
    claimed = models.PositiveBigIntegerField(null=True, blank=True)

    class Meta:
        ordering = ("id",)
        unique_together = (('system', 'ref'), ('system', 'channel_id'))
        pass

    def __str__(self):
        return self.ref

    def ref_queryset(self):
        return Channel.objects.filter(system=self.system)

    @property
    def id_bytes(self):
        return bytes.fromhex(self.channel_id)

    @property
    def policy(self):
        return WeekHourPolicy(rates=tuple(self.rates), hour_offset=self.hour_offset)

    @property
    def ledger(self):
        return self.system.ledger

    @property
    def is_open(self):
        return self.status == self.Status.OPEN

    @classmethod
    @transaction.atomic
    def open(cls, caller, car, provider, stall_number, until, deposit, service_provider=None):
        system = provider.system
        ledger = system.ledger
        now = ledger.now()
        caller = ledger.account(caller)
        provider = provider.concrete()

        if car.system_id != system.pk:
            raise NotFound('unknown car {}'.format(car.ref))
        if not same_account(caller, car.owner):
            raise Unauthorized('{} does not own car {}'.format(caller, car.plate))
        if car.channel_id is not None:
            raise Conflict('car {} is already parked'.format(car.plate))
        if not provider.is_open(now):
            raise InvalidState('{} does not accept sessions now'.format(provider.ref))
        try:
            stall = provider.lot.stalls.get(number=stall_number)
        except models.ObjectDoesNotExist:
            raise NotFound('unknown stall {} in {}'.format(stall_number, provider.lot.ref))
        if stall.controller_id != provider.pk:
            raise Conflict('stall {} is foreign to {}'.format(stall_number, provider.ref))
        if stall.reserved or cls.objects.filter(stall=stall, status=cls.Status.OPEN).exists():
            raise Conflict('stall {} is busy'.format(stall_number))
        if isinstance(until, bool) or not isinstance(until, int) or until <= now:
            raise InvalidArgument('parking must end after now ({}), got {!r}'.format(now, until))
        if until > MAX_TIME - ledger.grace:
            raise InvalidArgument('parking must end by {}, got {}'.format(MAX_TIME - ledger.grace, until))
        check_funds(deposit, 'deposit')
        if service_provider is not None and service_provider.provider_id != provider.pk:
            raise NotFound('{} does not work with {}'.format(service_provider.ref, provider.ref))

        policy = provider.policy.as_policy()
        quoted = policy.total_price(now, until)
        if deposit < quoted:
            raise InsufficientFunds('insufficient deposit {} for a price of {}'.format(deposit, quoted))

        channel_id = derive_channel_id(caller.address, provider.ref, now, ledger.events.count()).hex()
        channel = cls.objects.create(system=system,
                                     channel_id=channel_id,
                                     car=car,
                                     payer=caller,
                                     payee=provider,
                                     stall=stall,
                                     service_provider=service_provider,
                                     locked=deposit,
                                     quoted=quoted,
                                     opened_at=now,
                                     park_until=until,
                                     expiry=until + ledger.grace,
                                     rates=policy.to_json(),
                                     hour_offset=policy.hour_offset)
        ledger.lock_funds(caller, deposit, channel_id,
                          channel_ref=channel.ref,
                          car=car.ref,
                          provider=provider.ref,
                          stall=stall.number,
                          park_until=until,
                          quoted=quoted,
                          service_provider=service_provider.ref if service_provider else None)
        car.channel = channel
        car.save(update_fields=['channel'])
        stall.reserved = True
        stall.save(update_fields=['reserved'])
        logger.debug("channel {} opened: {} on {}#{} until {}, {} locked".format(
            channel.ref, car.plate, provider.ref, stall.number, until, deposit))
        return channel

    def _close(self, status, claimed):
        self.status = status
        self.claimed = claimed
        self.save(update_fields=['status', 'claimed'])
        car = self.car
        car.channel = None
        car.history = list(car.history) + [self.ref]
        car.save(update_fields=['channel', 'history'])
        stall = self.stall
        stall.reserved = False
        stall.save(update_fields=['reserved'])
        pass

    @transaction.atomic
    def settle(self, caller, voucher=None):
        """
        Pay the escrow out against the payer's last voucher. Without a voucher
        the claim is zero and the payer gets everything back.
        """
        ledger = self.ledger
        caller = ledger.account(caller)
        payee = self.payee.concrete()
        if not same_account(caller, payee.owner):
            raise Unauthorized('{} is not the payee of {}'.format(caller, self.ref))
        if not self.is_open:
            raise InvalidState('channel {} is already {}'.format(self.ref, self.status))

        claimed = 0
        if voucher is not None:
            if voucher.channel_id != self.id_bytes or not verify_voucher(self.payer.public, voucher):
                raise InvalidArgument('invalid voucher for {}'.format(self.ref))
            if voucher.cumulative > self.locked:
                raise InvalidArgument('voucher for {} exceeds the locked {}'.format(voucher.cumulative, self.locked))
            claimed = voucher.cumulative
            pass

        service_provider = self.service_provider
        breakdown = split_claim(self.locked,
                                claimed,
                                tax_rate=payee.tax_rate(),
                                service_share=service_provider.share if service_provider else 0,
                                landlord_share=payee.landlord_share())
        payouts = [(self.system.administrator, breakdown.tax)]
        if service_provider is not None:
            payouts.append((service_provider.account, breakdown.service))
            pass
        if payee.renting is not None:
            payouts.append((payee.lot.owner, breakdown.landlord))
            pass
        payouts.append((payee.owner, breakdown.operator))
        payouts.append((self.payer, breakdown.refund))

        ledger.release_funds(self.channel_id, payouts,
                             channel_ref=self.ref,
                             outcome=self.Status.SETTLED.value,
                             provider=payee.ref,
                             car=self.car.ref,
                             **breakdown.as_dict())
        self._close(self.Status.SETTLED, claimed)
        logger.debug("channel {} settled: {}".format(self.ref, breakdown))
        return breakdown

    @transaction.atomic
    def timeout_refund(self, caller):
        ledger = self.ledger
        caller = ledger.account(caller)
        if not same_account(caller, self.payer):
            raise Unauthorized('{} is not the payer of {}'.format(caller, self.ref))
        if not self.is_open:
            raise InvalidState('channel {} is not open'.format(self.ref))
        now = ledger.now()
        if now < self.expiry:
            raise InvalidState('too early: channel {} expires at {}, now {}'.format(self.ref, self.expiry, now))
        ledger.release_funds(self.channel_id, [(self.payer, self.locked)],
                             channel_ref=self.ref,
                             outcome=self.Status.REFUNDED.value,
                             provider=self.payee.ref,
                             car=self.car.ref,
                             refund=self.locked)
        self._close(self.Status.REFUNDED, 0)
        return self.locked

    pass


for model in [PricingPolicy, Channel]:
    pre_save.connect(pre_save_ref_receiver, sender=model)
