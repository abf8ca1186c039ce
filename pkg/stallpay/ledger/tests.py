import random

from django.test import TestCase
from hypothesis import given, settings, strategies as st
from hypothesis.extra.django import TestCase as HypothesisTestCase

from common.exceptions import Conflict, InsufficientFunds, InvalidArgument, InvalidState, NotFound, Overflow
from stallpay.constant import MAX_FUNDS

from .models import Event, EventKind, Ledger


class AccountTests(TestCase):

    def setUp(self):
        self.ledger = Ledger.objects.create()
        pass

    def test_create_account(self):
        account = self.ledger.create_account(1, 500, label='alice')
        self.assertEqual(self.ledger.balance(account), 500)
        self.assertEqual(self.ledger.balance('alice'), 500)
        self.assertEqual(self.ledger.balance(account.address), 500)
        self.assertEqual(len(account.address), 64)
        self.assertEqual(self.ledger.events.count(), 0)
        pass

    def test_duplicate_seed(self):
        self.ledger.create_account(1)
        with self.assertRaises(Conflict):
            self.ledger.create_account(1)
        pass

    def test_no_minting_after_genesis(self):
        self.ledger.create_account(1, 100)
        self.ledger.advance_time(10)
        with self.assertRaises(InvalidState):
            self.ledger.create_account(2, 100)
        # Empty accounts may still join.
        self.ledger.create_account(2, 0)
        pass

    def test_unknown_address(self):
        with self.assertRaises(NotFound):
            self.ledger.balance('ff' * 32)
        other = Ledger.objects.create()
        stranger = other.create_account(1)
        with self.assertRaises(NotFound):
            self.ledger.account(stranger)
        pass

    def test_genesis_overflow(self):
        self.ledger.create_account(1, MAX_FUNDS)
        with self.assertRaises(Overflow):
            self.ledger.create_account(2, 1)
        pass

    pass


class TimeTests(TestCase):

    def setUp(self):
        self.ledger = Ledger.objects.create()
        pass

    def test_advance(self):
        self.assertEqual(self.ledger.advance_time(3600), 3600)
        self.assertEqual(self.ledger.advance_time(0), 3600)
        self.assertEqual(self.ledger.now(), 3600)
        pass

    def test_time_only_moves_forward(self):
        self.ledger.set_time(100)
        with self.assertRaises(InvalidArgument):
            self.ledger.advance_time(-1)
        with self.assertRaises(InvalidArgument):
            self.ledger.set_time(99)
        self.assertEqual(self.ledger.set_time(100), 100)
        pass

    def test_stale_instance_reads_current_clock(self):
        stale = Ledger.objects.get(pk=self.ledger.pk)
        self.ledger.advance_time(50)
        self.assertEqual(stale.now(), 50)
        pass

    pass


class TransferTests(TestCase):

    def setUp(self):
        self.ledger = Ledger.objects.create()
        self.alice = self.ledger.create_account(1, 100, label='alice')
        self.bob = self.ledger.create_account(2, 0, label='bob')
        pass

    def test_transfer(self):
        event = self.ledger.transfer(self.alice, self.bob, 40)
        self.assertEqual(event.kind, EventKind.TRANSFER)
        self.assertEqual(event.payload['amount'], 40)
        self.assertEqual(event.payload['sender'], self.alice.address)
        self.assertEqual((self.ledger.balance('alice'), self.ledger.balance('bob')), (60, 40))
        pass

    def test_insufficient_funds_leaves_no_trace(self):
        with self.assertRaises(InsufficientFunds):
            self.ledger.transfer(self.alice, self.bob, 101)
        self.assertEqual(self.ledger.balance('alice'), 100)
        self.assertEqual(self.ledger.events.count(), 0)
        pass

    def test_zero_and_negative_amounts(self):
        self.ledger.transfer(self.alice, self.bob, 0)
        with self.assertRaises(InvalidArgument):
            self.ledger.transfer(self.alice, self.bob, -1)
        pass

    def test_event_indices_are_contiguous(self):
        for amount in (1, 2, 3):
            self.ledger.transfer(self.alice, self.bob, amount)
            pass
        self.ledger.append_event(EventKind.CAR_REGISTERED, car='car:1')
        self.assertEqual([e.index for e in self.ledger.events_since(0)], [0, 1, 2, 3])
        self.assertEqual([e.index for e in self.ledger.events_since(2)], [2, 3])
        pass

    def test_payload_keys_are_sorted(self):
        self.ledger.append_event(EventKind.CAR_REGISTERED, plate='X', car='car:1', owner='o')
        self.assertEqual(list(Event.objects.get().payload), ['car', 'owner', 'plate'])
        pass

    def test_records_are_read_only(self):
        record = self.ledger.transfer(self.alice, self.bob, 1)
        with self.assertRaises(TypeError):
            record.payload['amount'] = 2
        pass

    pass


class EscrowTests(TestCase):

    def setUp(self):
        self.ledger = Ledger.objects.create()
        self.payer = self.ledger.create_account(1, 1000, label='payer')
        self.payee = self.ledger.create_account(2, 0, label='payee')
        pass

    def test_lock_and_release(self):
        lock = self.ledger.lock_funds(self.payer, 600, 'ab' * 32)
        self.assertEqual(lock.kind, EventKind.ESCROW_LOCK)
        self.assertEqual(self.ledger.escrow_total(), 600)
        self.assertTrue(self.ledger.snapshot().conserved)

        release = self.ledger.release_funds('ab' * 32, [(self.payee, 400), (self.payer, 200)])
        self.assertEqual(release.payload['payouts'], [[self.payee.address, 400], [self.payer.address, 200]])
        self.assertEqual(self.ledger.escrow_total(), 0)
        self.assertEqual(self.ledger.balance('payer'), 600)
        self.assertEqual(Event.objects.filter(channel='ab' * 32).count(), 2)
        pass

    def test_release_must_match_escrow(self):
        self.ledger.lock_funds(self.payer, 600, 'k')
        with self.assertRaises(InvalidArgument):
            self.ledger.release_funds('k', [(self.payee, 599)])
        self.ledger.release_funds('k', [(self.payee, 600)])
        with self.assertRaises(InvalidState):
            self.ledger.release_funds('k', [(self.payee, 600)])
        with self.assertRaises(NotFound):
            self.ledger.release_funds('missing', [])
        pass

    def test_duplicate_key(self):
        self.ledger.lock_funds(self.payer, 1, 'k')
        with self.assertRaises(Conflict):
            self.ledger.lock_funds(self.payer, 1, 'k')
        pass

    def test_snapshot(self):
        self.ledger.lock_funds(self.payer, 250, 'k')
        snapshot = self.ledger.snapshot()
        self.assertEqual(snapshot.genesis_total, 1000)
        self.assertEqual(snapshot.balance_of('payer'), 750)
        self.assertEqual(snapshot.escrows, (('k', 250),))
        self.assertEqual(snapshot.by_label(), {'payer': 750, 'payee': 0})
        self.assertEqual(snapshot.event_count, 1)
        pass

    pass


class ConservationTests(HypothesisTestCase):

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 400)), max_size=25))
    def test_funds_are_conserved(self, moves):
        ledger = Ledger.objects.create()
        accounts = [ledger.create_account(seed, 250) for seed in range(4)]
        for sender, receiver, amount in moves:
            try:
                ledger.transfer(accounts[sender], accounts[receiver], amount)
            except InsufficientFunds:
                pass
            snapshot = ledger.snapshot()
            self.assertTrue(snapshot.conserved)
            self.assertTrue(all(entry.balance >= 0 for entry in snapshot.balances))
            pass
        pass

    def test_random_escrow_traffic(self):
        rng = random.Random(5)
        ledger = Ledger.objects.create()
        accounts = [ledger.create_account(seed, 1000) for seed in range(3)]
        open_keys = {}
        for step in range(200):
            if open_keys and rng.random() < 0.5:
                key, amount = open_keys.popitem()
                cut = rng.randint(0, amount)
                ledger.release_funds(key, [(rng.choice(accounts), cut), (rng.choice(accounts), amount - cut)])
            else:
                payer = rng.choice(accounts)
                amount = rng.randint(0, ledger.balance(payer))
                ledger.lock_funds(payer, amount, 'k{}'.format(step))
                open_keys['k{}'.format(step)] = amount
                pass
            self.assertTrue(ledger.snapshot().conserved)
            pass
        pass

    pass
