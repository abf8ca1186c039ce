from django.db import models, transaction
from django.db.models import F, Sum
from django.utils.translation import gettext_lazy as _

from common.exceptions import Conflict, InsufficientFunds, InvalidArgument, InvalidState, NotFound
from common.utils import check_funds, checked_add
from sigchain.signing import KeyPair
from stallpay.constant import GRACE_PERIOD, MAX_TIME
from stlog import logger

from .records import AccountBalance, EventRecord, LedgerSnapshot


class EventKind(models.TextChoices):
    TRANSFER = 'TRANSFER', _('Transfer')
    ESCROW_LOCK = 'ESCROW_LOCK', _('Escrow lock')
    ESCROW_RELEASE = 'ESCROW_RELEASE', _('Escrow release')

    REQUEST = 'REQUEST', _('Landlord registration request')
    REGISTRATION_DECIDED = 'REGISTRATION_DECIDED', _('Landlord registration decided')
    CONTRACT_REVOKED = 'CONTRACT_REVOKED', _('Landlord contract revoked')
    CAR_REGISTERED = 'CAR_REGISTERED', _('Car registered')
    AMENDMENT_PROPOSED = 'AMENDMENT_PROPOSED', _('Amendment proposed')
    AMENDMENT_RESOLVED = 'AMENDMENT_RESOLVED', _('Amendment resolved')

    POLICY_DEFINED = 'POLICY_DEFINED', _('Payment policy defined')
    LOT_CREATED = 'LOT_CREATED', _('Parking lot created')
    TENANCY_REQUESTED = 'TENANCY_REQUESTED', _('Tenancy requested')
    TENANCY_DECIDED = 'TENANCY_DECIDED', _('Tenancy decided')
    TENANCY_TERMINATED = 'TENANCY_TERMINATED', _('Tenancy terminated')
    POLICY_SET = 'POLICY_SET', _('Payment policy set')
    SP_REGISTERED = 'SP_REGISTERED', _('Service provider registered')

    OCCUPANCY_OK = 'OCCUPANCY_OK', _('Occupancy as expected')
    OCCUPANCY_VIOLATION = 'OCCUPANCY_VIOLATION', _('Car on a stall without a session')
    OCCUPANCY_MISMATCH = 'OCCUPANCY_MISMATCH', _('Session stall not holding its car')
    pass


# Kinds that move funds. A completed parking session contributes exactly two of them.
TRANSFER_KINDS = frozenset([EventKind.TRANSFER, EventKind.ESCROW_LOCK, EventKind.ESCROW_RELEASE])

VIOLATION_KINDS = frozenset([EventKind.OCCUPANCY_VIOLATION, EventKind.OCCUPANCY_MISMATCH])

OCCUPANCY_KINDS = VIOLATION_KINDS | {EventKind.OCCUPANCY_OK}


def sorted_payload(payload):
    return {key: payload[key] for key in sorted(payload)}


class Ledger(models.Model):
    """
    One simulation: accounts, funds, the simulated clock and the append-only event log.

    Every other contract writes through `append_event`, `transfer`,
    `lock_funds` and `release_funds`. Reads of the clock and of balances go to
    the database, so stale instances reached through foreign keys stay correct.
    """
    name = models.CharField(max_length=100, default='simulation')
    seed = models.BigIntegerField(default=0)
    clock = models.PositiveBigIntegerField(default=0)
    grace = models.PositiveBigIntegerField(default=GRACE_PERIOD)
    genesis_closed = models.BooleanField(default=False)
    genesis_total = models.PositiveBigIntegerField(default=0)

    class Meta:
        ordering = ("id",)
        verbose_name = _("Ledger")
        verbose_name_plural = _("Ledgers")
        pass

    def __str__(self):
        return '{} @{}'.format(self.name, self.clock)

    #
    # Accounts
    #
    @transaction.atomic
    def create_account(self, seed, initial_balance=0, label=''):
        check_funds(initial_balance, 'initial balance')
        self.refresh_from_db(fields=['genesis_closed', 'genesis_total'])
        if initial_balance > 0 and self.genesis_closed:
            raise InvalidState('minting after genesis is not allowed', seed=seed)
        if self.accounts.filter(seed=seed).exists():
            raise Conflict('duplicate seed {}'.format(seed), seed=seed)
        try:
            keys = KeyPair.from_seed(seed)
        except ValueError as exc:
            raise InvalidArgument(str(exc), seed=seed)

        account = Account.objects.create(ledger=self,
                                         seed=seed,
                                         label=label,
                                         address=keys.address.hex(),
                                         public_key=keys.public.hex(),
                                         initial_balance=initial_balance,
                                         balance=initial_balance)
        self.genesis_total = checked_add(self.genesis_total, initial_balance)
        self.save(update_fields=['genesis_total'])
        logger.debug("ledger {}: account {} ({}) created with {}".format(self.pk, account.address[:16], label, initial_balance))
        return account

    def account(self, address):
        """Resolve an Account row from an Account, an address hex string or a label."""
        if isinstance(address, Account):
            if address.ledger_id != self.pk:
                raise NotFound('account {} belongs to another ledger'.format(address.address))
            return address
        try:
            return self.accounts.get(models.Q(address=address) | models.Q(label=address))
        except Account.DoesNotExist:
            raise NotFound('unknown address {}'.format(address))

    def balance(self, address):
        return self.accounts.values_list('balance', flat=True).get(pk=self.account(address).pk)

    def close_genesis(self):
        if not self.genesis_closed:
            Ledger.objects.filter(pk=self.pk).update(genesis_closed=True)
            self.genesis_closed = True
            pass
        pass

    #
    # Time
    #
    def now(self):
        self.refresh_from_db(fields=['clock'])
        return self.clock

    @transaction.atomic
    def advance_time(self, delta):
        if isinstance(delta, bool) or not isinstance(delta, int) or delta < 0:
            raise InvalidArgument('time only moves forward, got delta {}'.format(delta))
        now = self.now()
        if now + delta > MAX_TIME:
            raise InvalidArgument('clock would pass the largest time point')
        self.clock = now + delta
        self.save(update_fields=['clock'])
        self.close_genesis()
        return self.clock

    def set_time(self, at):
        now = self.now()
        if at < now:
            raise InvalidArgument('cannot move the clock back from {} to {}'.format(now, at))
        return self.advance_time(at - now)

    #
    # Event log
    #
    @transaction.atomic
    def append_event(self, kind, channel='', **payload):
        self.close_genesis()
        event = Event.objects.create(ledger=self,
                                     index=self.events.count(),
                                     time=self.now(),
                                     kind=kind,
                                     channel=channel,
                                     payload=sorted_payload(payload))
        logger.debug("ledger {}: event #{} {}".format(self.pk, event.index, kind))
        return event.as_record()

    def events_since(self, index=0):
        return [event.as_record() for event in self.events.filter(index__gte=index).order_by('index')]

    #
    # Funds
    #
    def _debit(self, account, amount):
        account = Account.objects.select_for_update().get(pk=account.pk)
        if account.balance < amount:
            raise InsufficientFunds('{} holds {}, needs {}'.format(account.label or account.address, account.balance, amount))
        Account.objects.filter(pk=account.pk).update(balance=F('balance') - amount)
        pass

    def _credit(self, account, amount):
        account = Account.objects.select_for_update().get(pk=account.pk)
        checked_add(account.balance, amount)
        Account.objects.filter(pk=account.pk).update(balance=F('balance') + amount)
        pass

    @transaction.atomic
    def transfer(self, sender, receiver, amount, channel='', **tags):
        """Move `amount` between two accounts and log one TRANSFER event."""
        check_funds(amount)
        sender = self.account(sender)
        receiver = self.account(receiver)
        self._debit(sender, amount)
        self._credit(receiver, amount)
        return self.append_event(EventKind.TRANSFER,
                                 channel=channel,
                                 sender=sender.address,
                                 receiver=receiver.address,
                                 amount=amount,
                                 **tags)

    @transaction.atomic
    def lock_funds(self, payer, amount, key, **tags):
        """Move funds from the payer into a fresh escrow named `key`."""
        check_funds(amount)
        payer = self.account(payer)
        if self.escrows.filter(key=key).exists():
            raise Conflict('escrow {} already exists'.format(key))
        self._debit(payer, amount)
        Escrow.objects.create(ledger=self, key=key, payer=payer, amount=amount)
        return self.append_event(EventKind.ESCROW_LOCK,
                                 channel=key,
                                 payer=payer.address,
                                 amount=amount,
                                 escrow=key,
                                 **tags)

    @transaction.atomic
    def release_funds(self, key, payouts, **tags):
        """
        Pay an open escrow out in one transaction.

        `payouts` is a list of (account, amount); the amounts must add up to the
        escrowed amount exactly.
        """
        try:
            escrow = self.escrows.select_for_update().get(key=key)
        except Escrow.DoesNotExist:
            raise NotFound('unknown escrow {}'.format(key))
        if escrow.released:
            raise InvalidState('escrow {} was already released'.format(key))

        resolved = [(self.account(account), check_funds(amount)) for account, amount in payouts]
        total = sum(amount for _, amount in resolved)
        if total != escrow.amount:
            raise InvalidArgument('payouts add up to {}, escrow holds {}'.format(total, escrow.amount))
        for account, amount in resolved:
            self._credit(account, amount)
            pass
        escrow.released = True
        escrow.save(update_fields=['released'])
        return self.append_event(EventKind.ESCROW_RELEASE,
                                 channel=key,
                                 escrow=key,
                                 payouts=[[account.address, amount] for account, amount in resolved],
                                 **tags)

    def escrow_total(self):
        return self.escrows.filter(released=False).aggregate(total=Sum('amount'))['total'] or 0

    def snapshot(self):
        self.refresh_from_db(fields=['clock', 'genesis_total'])
        balances = tuple(AccountBalance(address=address, label=label, balance=balance)
                         for address, label, balance in self.accounts.order_by('id').values_list('address', 'label', 'balance'))
        escrows = tuple(self.escrows.filter(released=False).order_by('id').values_list('key', 'amount'))
        return LedgerSnapshot(time=self.clock,
                              balances=balances,
                              escrows=escrows,
                              event_count=self.events.count(),
                              genesis_total=self.genesis_total)

    pass


class Account(models.Model):
    ledger = models.ForeignKey(Ledger, on_delete=models.CASCADE, related_name='accounts')
    seed = models.PositiveBigIntegerField()
    label = models.CharField(max_length=100, blank=True, default='')
    address = models.CharField(max_length=64)
    public_key = models.CharField(max_length=64)
    balance = models.PositiveBigIntegerField(default=0)
    initial_balance = models.PositiveBigIntegerField(default=0)

    class Meta:
        ordering = ("id",)
        unique_together = (('ledger', 'seed'), ('ledger', 'address'))
        pass

    def __str__(self):
        return self.label or self.address[:16]

    @property
    def keys(self):
        return KeyPair.from_seed(self.seed)

    @property
    def public(self):
        return bytes.fromhex(self.public_key)

    pass


class Event(models.Model):
    ledger = models.ForeignKey(Ledger, on_delete=models.CASCADE, related_name='events')
    index = models.PositiveIntegerField()
    time = models.PositiveBigIntegerField()
    kind = models.CharField(max_length=32, choices=EventKind.choices)
    # Channel id of escrow traffic, used to count a session's transactions.
    channel = models.CharField(max_length=64, blank=True, default='', db_index=True)
    payload = models.JSONField(default=dict)

    class Meta:
        ordering = ("index",)
        constraints = [
            models.UniqueConstraint(fields=['ledger', 'index'], name='Contiguous event index')
        ]
        pass

    def __str__(self):
        return '#{} {}'.format(self.index, self.kind)

    def as_record(self):
        return EventRecord(index=self.index, time=self.time, kind=self.kind, payload=self.payload)

    pass


class Escrow(models.Model):
    ledger = models.ForeignKey(Ledger, on_delete=models.CASCADE, related_name='escrows')
    key = models.CharField(max_length=64)
    payer = models.ForeignKey(Account, on_delete=models.CASCADE, related_name='escrows')
    amount = models.PositiveBigIntegerField()
    released = models.BooleanField(default=False)

    class Meta:
        ordering = ("id",)
        unique_together = (('ledger', 'key'),)
        pass

    pass
